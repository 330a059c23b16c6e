/* tslint:disable */
/* eslint-disable */

/**
 * Number of examples `label_distribution` accepts.
 */
export function example_count(): number;

/**
 * Beam infilling of "New York Times" with `k` masks (1 to 3), plus the
 * deduplicated instances generation keeps for `m`.
 */
export function infill(k: number, beam_width: number, m: number): string;

/**
 * Label distribution of one fixture example under the name-initialized
 * matrix: the typing prompt's top tokens, their word-to-type columns and
 * the resulting label probabilities.
 */
export function label_distribution(alpha: number, example: number): string;

/**
 * Per-epoch losses and dev accuracy of a fixture run.
 */
export function training_curve(lambda_new: number, epochs: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly example_count: () => number;
    readonly infill: (a: number, b: number, c: number) => [number, number, number, number];
    readonly label_distribution: (a: number, b: number) => [number, number, number, number];
    readonly training_curve: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
