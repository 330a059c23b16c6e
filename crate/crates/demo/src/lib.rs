//! Browser demo over the synthetic fixtures. Every export returns a JSON
//! string; errors come back as plain strings.

use std::collections::HashSet;
use std::sync::OnceLock;

use fet_core::backend::{SyntheticOracle, TokenProvider};
use fet_core::fixture::{newspaper, typing_fixture, NewspaperFixture, TypingFixture};
use fet_core::generator::{fill_masks, generate_instances};
use fet_core::interpreter::CorrelationMatrix;
use fet_core::prompts::TemplateSpec;
use fet_core::trainer::{sample_few_shot, train, typing_distribution, Hyperparams, MScope, TrainOptions};
use serde_json::json;
use wasm_bindgen::prelude::*;

const SEED: u64 = 13;
const TOP_TOKENS: usize = 5;

fn typing() -> &'static TypingFixture {
    static FX: OnceLock<TypingFixture> = OnceLock::new();
    FX.get_or_init(typing_fixture)
}

fn nyt() -> &'static NewspaperFixture {
    static FX: OnceLock<NewspaperFixture> = OnceLock::new();
    FX.get_or_init(newspaper)
}

fn spec(oracle: &SyntheticOracle) -> TemplateSpec {
    TemplateSpec::default().with_mask_token(oracle.vocab().mask_token())
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Number of examples `label_distribution` accepts.
#[wasm_bindgen]
pub fn example_count() -> usize {
    typing().corpus.len()
}

/// Label distribution of one fixture example under the name-initialized
/// matrix: the typing prompt's top tokens, their word-to-type columns and
/// the resulting label probabilities.
#[wasm_bindgen]
pub fn label_distribution(alpha: f64, example: usize) -> Result<String, String> {
    let fx = typing();
    let ex = fx.corpus.get(example).ok_or_else(|| format!("example must be below {}", fx.corpus.len()))?;
    let u = CorrelationMatrix::init(&fx.hierarchy, &fx.oracle, alpha).map_err(err)?;
    let vocab = fx.oracle.vocab();
    let d = typing_distribution(&fx.oracle, &spec(&fx.oracle), ex).map_err(err)?;

    let mut order: Vec<usize> = (0..d.len()).filter(|&w| d[w] > 0.0 && !vocab.is_special(w)).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let tokens: Vec<_> = order
        .iter()
        .take(TOP_TOKENS)
        .map(|&w| json!({ "token": vocab.token(w), "prob": d[w], "types": u.word_to_type(w) }))
        .collect();

    let q = u.map_to_labels(&d);
    let labels: Vec<String> = u.labels().iter().map(|l| l.to_string()).collect();
    Ok(json!({
        "text": ex.text,
        "mention": ex.mention(),
        "gold": ex.label.to_string(),
        "predicted": labels[u.predict_index(&d)],
        "labels": labels,
        "probs": q,
        "tokens": tokens,
    })
    .to_string())
}

/// Beam infilling of "New York Times" with `k` masks (1 to 3), plus the
/// deduplicated instances generation keeps for `m`.
#[wasm_bindgen]
pub fn infill(k: usize, beam_width: usize, m: usize) -> Result<String, String> {
    if !(1..=3).contains(&k) {
        return Err("k must be 1, 2 or 3".into());
    }
    if beam_width == 0 || m == 0 {
        return Err("beam width and m must be at least 1".into());
    }
    let fx = nyt();
    let spec = spec(&fx.oracle);
    let prompt = spec.render_generation(&fx.example.text, fx.example.mention(), fx.type_word, k).map_err(err)?;
    let vocab = fx.oracle.vocab();
    let candidates: Vec<_> = fill_masks(&fx.oracle, &prompt, beam_width)
        .map_err(err)?
        .iter()
        .map(|c| {
            json!({
                "surface": vocab.detokenize(&c.token_ids),
                "tokens": c.token_ids.iter().map(|&t| vocab.token(t)).collect::<Vec<_>>(),
                "step_probs": c.per_step_prob,
                "score": c.score,
            })
        })
        .collect();
    let kept = generate_instances(&fx.oracle, &spec, &fx.example, fx.type_word, m, beam_width, &HashSet::new())
        .map_err(err)?;
    Ok(json!({
        "prompt": prompt.text,
        "candidates": candidates,
        "generated": kept.iter().map(|g| json!({ "surface": g.surface, "score": g.score, "k": g.k })).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Per-epoch losses and dev accuracy of a fixture run.
#[wasm_bindgen]
pub fn training_curve(lambda_new: f64, epochs: usize) -> Result<String, String> {
    let fx = typing();
    let hyperparams = Hyperparams { lambda_new, epochs, lr: 0.2, ..Hyperparams::default() };
    let (train_set, dev_set) = sample_few_shot(&fx.corpus, hyperparams.shots, SEED).map_err(err)?;
    let opts = TrainOptions {
        hyperparams,
        spec: TemplateSpec::default(),
        seed: SEED,
        m_scope: MScope::Mention,
        regen_every: 1,
        checkpoint: None,
    };
    let out = train(&fx.oracle, &fx.hierarchy, &train_set, &dev_set, &opts, None, &mut |_| {}).map_err(err)?;
    let sample: Vec<_> = out
        .pool
        .iter()
        .take(8)
        .map(|a| json!({ "source": a.instance.source_id, "surface": a.instance.surface, "score": a.instance.score }))
        .collect();
    Ok(json!({ "log": out.log, "pool_size": out.pool.len(), "pool_sample": sample }).to_string())
}
