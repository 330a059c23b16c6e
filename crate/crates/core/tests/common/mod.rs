//! Test oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use fet_core::backend::wire::{
    ErrorResponse, MaskProbsRequest, MaskProbsResponse, TokenizeRequest, TokenizeResponse, VocabResponse,
};
use fet_core::backend::{DistSpec, Filled, OracleBuilder, RenderedPrompt, SyntheticOracle, TokenId, TokenProvider};
use fet_core::generator::Candidate;
use fet_core::hierarchy::LabelHierarchy;
use fet_core::interpreter::{
    loss_and_grad, loss_value, Batch, CorrelationMatrix, LabeledExample, LossWeights, SoftExample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// In-process inference service

/// How the test server misbehaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// `mask_probs` answers with this status once `after` calls succeeded.
    StatusAfter {
        status: u16,
        after: usize,
    },
    /// `mask_probs` returns one distribution too few.
    WrongCount,
}

pub struct TestServer {
    pub url: String,
    server: Arc<tiny_http::Server>,
    worker: Option<JoinHandle<()>>,
    pub mask_calls: Arc<AtomicUsize>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_response<T: serde::Serialize>(status: u16, body: &T) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    tiny_http::Response::from_data(serde_json::to_vec(body).expect("serializable"))
        .with_status_code(status)
        .with_header(header)
}

fn error(status: u16, msg: impl Into<String>) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    json_response(status, &ErrorResponse { error: msg.into() })
}

/// Serves `oracle` over the wire protocol on an ephemeral port.
pub fn serve(oracle: SyntheticOracle, fault: Fault) -> TestServer {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind test server"));
    let url = format!("http://{}", server.server_addr().to_ip().expect("tcp listener"));
    let mask_calls = Arc::new(AtomicUsize::new(0));
    let (srv, calls) = (server.clone(), mask_calls.clone());
    let worker = std::thread::spawn(move || {
        for mut req in srv.incoming_requests() {
            let mut body = String::new();
            let _ = req.as_reader().read_to_string(&mut body);
            let resp = handle(&oracle, fault, &calls, req.method(), req.url(), &body);
            let _ = req.respond(resp);
        }
    });
    TestServer { url, server, worker: Some(worker), mask_calls }
}

fn handle(
    oracle: &SyntheticOracle,
    fault: Fault,
    calls: &AtomicUsize,
    method: &tiny_http::Method,
    url: &str,
    body: &str,
) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    use tiny_http::Method;
    let vocab = oracle.vocab();
    match (method, url) {
        (Method::Get, "/v1/vocab") => {
            let spec = vocab.spec();
            json_response(
                200,
                &VocabResponse { tokens: spec.tokens, mask_token: spec.mask_token, special_ids: spec.special_ids },
            )
        }
        (Method::Post, "/v1/tokenize") => match serde_json::from_str::<TokenizeRequest>(body) {
            Ok(r) => match oracle.tokenize(&r.text) {
                Ok(ids) => json_response(200, &TokenizeResponse { ids }),
                Err(e) => error(400, e.message),
            },
            Err(e) => error(400, e.to_string()),
        },
        (Method::Post, "/v1/mask_probs") => {
            let n = calls.fetch_add(1, Ordering::SeqCst);
            if let Fault::StatusAfter { status, after } = fault {
                if n >= after {
                    return error(status, "injected failure");
                }
            }
            let req: MaskProbsRequest = match serde_json::from_str(body) {
                Ok(r) => r,
                Err(e) => return error(400, e.to_string()),
            };
            let filled = match req.filled() {
                Ok(f) => f,
                Err(e) => return error(400, e),
            };
            let prompt = RenderedPrompt::new(req.text, vocab.mask_token());
            match oracle.mask_distributions(&prompt, &filled) {
                Ok(d) => {
                    let mut distributions: Vec<Vec<f64>> = d.into_iter().map(|d| d.into_inner()).collect();
                    if fault == Fault::WrongCount {
                        distributions.pop();
                    }
                    json_response(200, &MaskProbsResponse { distributions })
                }
                Err(e) => error(400, e.message),
            }
        }
        _ => error(404, format!("no route {url}")),
    }
}

// ---------------------------------------------------------------------------
// Provider conformance

/// Prompts the suite exercises, each with at least one mask.
pub fn conformance_oracle() -> (SyntheticOracle, Vec<String>) {
    let tokens = ["[MASK]", "[SEP]", "Paris", "is", "a", "city", "capital", "river", "##s", "P", "##a", "##r", "##i"];
    let mut b = OracleBuilder::new(tokens, "[MASK]", &["[SEP]"]);
    let one = "Paris is a [MASK] .";
    let two = "Paris is a [MASK] [MASK] .";
    b.entry_with(one, 0, &[], DistSpec::peaks([("city", 0.6), ("capital", 0.3)]));
    b.entry_with(two, 0, &[], DistSpec::peaks([("capital", 0.5), ("river", 0.2)]));
    b.entry_with(two, 1, &[], DistSpec::peaks([("city", 0.7)]));
    b.entry_with(two, 1, &[(0, "capital")], DistSpec::peaks([("city", 0.9)]));
    let oracle = b.build().expect("conformance oracle");
    (oracle, vec![one.to_string(), two.to_string()])
}

/// The behavioural contract every provider must meet. Returns the first
/// violation.
pub fn check_provider(p: &dyn TokenProvider, prompts: &[String]) -> Result<(), String> {
    let v1 = p.vocab().clone();
    let v2 = p.vocab().clone();
    if v1 != v2 {
        return Err("vocab changed between calls".into());
    }
    if v1.id(v1.mask_token()) != Some(v1.mask_id()) {
        return Err("mask token not resolvable".into());
    }
    if !v1.is_special(v1.mask_id()) {
        return Err("mask token not special".into());
    }
    if !p.tokenize("").map_err(|e| e.to_string())?.is_empty() {
        return Err("empty text tokenized to something".into());
    }
    for word in ["Paris", "city"] {
        let ids = p.tokenize(word).map_err(|e| e.to_string())?;
        if ids.len() != 1 || p.detokenize(&ids) != word {
            return Err(format!("{word} did not round-trip as one token: {ids:?}"));
        }
    }
    let ids = p.tokenize("Paris is a city").map_err(|e| e.to_string())?;
    if p.detokenize(&ids) != "Paris is a city" {
        return Err(format!("sentence did not round-trip: {:?}", p.detokenize(&ids)));
    }
    for text in prompts {
        let prompt = RenderedPrompt::new(text.clone(), v1.mask_token());
        let a = p.mask_distributions(&prompt, &Filled::new()).map_err(|e| e.to_string())?;
        if a.len() != prompt.mask_count() {
            return Err(format!("{} distributions for {} masks", a.len(), prompt.mask_count()));
        }
        for d in &a {
            if d.len() != v1.len() {
                return Err("distribution length differs from vocabulary size".into());
            }
            let s: f64 = d.probs().iter().sum();
            if (s - 1.0).abs() > 1e-4 || d.probs().iter().any(|x| *x < 0.0) {
                return Err(format!("distribution not normalized: sum {s}"));
            }
        }
        let b = p.mask_distributions(&prompt, &Filled::new()).map_err(|e| e.to_string())?;
        let bits = |ds: &[fet_core::backend::TokenDistribution]| -> Vec<u64> {
            ds.iter().flat_map(|d| d.probs().iter().map(|x| x.to_bits())).collect()
        };
        if bits(&a) != bits(&b) {
            return Err("repeated query gave different bytes".into());
        }
        if prompt.mask_count() > 1 {
            let filled: Filled = [(0, 3)].into_iter().collect();
            let c = p.mask_distributions(&prompt, &filled).map_err(|e| e.to_string())?;
            if c.len() != prompt.mask_count() - 1 {
                return Err("filled mask still answered".into());
            }
        }
        let bad: Filled = [(prompt.mask_count(), 2)].into_iter().collect();
        match p.mask_distributions(&prompt, &bad) {
            Err(e) if !e.retryable => {}
            other => return Err(format!("out-of-range fill accepted: {other:?}")),
        }
        let many = p.mask_distributions_many(&[(prompt.clone(), Filled::new()), (prompt.clone(), Filled::new())]);
        for r in many {
            let r = r.map_err(|e| e.to_string())?;
            if bits(&r) != bits(&a) {
                return Err("batched query differs from single query".into());
            }
        }
    }
    let none = RenderedPrompt::new("no masks here".into(), v1.mask_token());
    match p.mask_distributions(&none, &Filled::new()) {
        Err(e) if !e.retryable => Ok(()),
        other => Err(format!("mask-free prompt accepted: {other:?}")),
    }
}

// ---------------------------------------------------------------------------
// Exhaustive decoding

/// Random oracle over `n` ordinary tokens (plus `[MASK]`) whose table
/// covers every conditional of a `k`-mask prompt, with distinct random
/// probabilities.
pub fn random_fill_oracle(seed: u64, n: usize, k: usize) -> (SyntheticOracle, RenderedPrompt) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = vec!["[MASK]".to_string()];
    tokens.extend((0..n).map(|i| format!("t{i}")));
    let text = format!("q {} .", vec!["[MASK]"; k].join(" "));
    let mut b = OracleBuilder::new(&tokens, "[MASK]", &[]);
    let mut prefixes: Vec<Vec<TokenId>> = vec![vec![]];
    for step in 0..k {
        let mut next = Vec::new();
        for prefix in &prefixes {
            let mut raw: Vec<f64> = (0..=n).map(|_| rng.random_range(0.01..1.0)).collect();
            raw[0] = 0.0;
            // Occasionally a token gets no mass at all.
            if n > 2 && rng.random_bool(0.2) {
                raw[rng.random_range(1..=n)] = 0.0;
            }
            let z: f64 = raw.iter().sum();
            let dense: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let filled: Filled = prefix.iter().copied().enumerate().collect();
            b.entry(&text, step, &filled, DistSpec::Dense(dense));
            for t in 1..=n {
                let mut p = prefix.clone();
                p.push(t);
                next.push(p);
            }
        }
        prefixes = next;
    }
    (b.build().expect("random oracle"), RenderedPrompt::new(text, "[MASK]"))
}

/// Every full fill, scored left to right, best first with ties by ids.
pub fn brute_force(p: &dyn TokenProvider, prompt: &RenderedPrompt) -> Vec<(Vec<TokenId>, f64)> {
    let vocab = p.vocab();
    let k = prompt.mask_count();
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<TokenId>, f64)> = vec![(vec![], 0.0)];
    while let Some((ids, score)) = stack.pop() {
        if ids.len() == k {
            out.push((ids, score));
            continue;
        }
        let filled: Filled = ids.iter().copied().enumerate().collect();
        let d = p.mask_distributions(prompt, &filled).expect("oracle answers")[0].clone();
        let probs = d.without_specials(vocab);
        for (t, &pt) in probs.iter().enumerate() {
            if pt > 0.0 {
                let mut next = ids.clone();
                next.push(t);
                stack.push((next, score + pt.ln()));
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn same_as_brute_force(cands: &[Candidate], brute: &[(Vec<TokenId>, f64)]) -> Result<(), String> {
    if cands.len() != brute.len() {
        return Err(format!("{} candidates vs {} enumerated", cands.len(), brute.len()));
    }
    for (i, (c, (ids, s))) in cands.iter().zip(brute).enumerate() {
        if &c.token_ids != ids || (c.score - s).abs() > 1e-12 {
            return Err(format!("rank {i}: beam {:?} {} vs brute {:?} {}", c.token_ids, c.score, ids, s));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Finite differences

pub struct GradCase {
    pub h: LabelHierarchy,
    pub u: CorrelationMatrix,
    pub labeled: Vec<(Vec<f64>, usize)>,
    pub augmented: Vec<(Vec<f64>, Vec<f64>)>,
    pub weights: LossWeights,
}

const HIERARCHIES: [&[&str]; 4] =
    [&["/a", "/b"], &["/a", "/a/b", "/a/c"], &["/a", "/a/b", "/a/c", "/d"], &["/a", "/a/b", "/a/b/c", "/a/d", "/e"]];

fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(3) + 1e-3).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / z).collect()
}

/// A random problem with `|Y| ≤ 5` and `|V| ≤ 12`.
pub fn random_grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = LabelHierarchy::from_strs(HIERARCHIES[rng.random_range(0..HIERARCHIES.len())].iter().copied())
        .expect("valid hierarchy");
    let l = h.len();
    let v = rng.random_range(2..=12);
    let data: Vec<f64> = (0..l * v).map(|_| rng.random_range(-2.0..2.0)).collect();
    let u = CorrelationMatrix::from_parts(h.labels().to_vec(), v, data).expect("shape");
    let labeled = (0..rng.random_range(1..=4)).map(|_| (random_dist(&mut rng, v), rng.random_range(0..l))).collect();
    let augmented =
        (0..rng.random_range(0..=3)).map(|_| (random_dist(&mut rng, v), random_dist(&mut rng, l))).collect();
    let weights = LossWeights {
        lambda: rng.random_range(0.0..2.0),
        lambda_new: rng.random_range(0.0..2.0),
        beta: rng.random_range(0.0..=1.0),
    };
    GradCase { h, u, labeled, augmented, weights }
}

impl GradCase {
    pub fn batch(&self) -> Batch<'_> {
        Batch {
            labeled: self.labeled.iter().map(|(d, g)| LabeledExample { token_probs: d, gold: *g }).collect(),
            augmented: self.augmented.iter().map(|(d, t)| SoftExample { token_probs: d, target: t }).collect(),
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)` over every entry, using central
/// differences with step `step`.
pub fn max_relative_error(case: &GradCase, step: f64, floor: f64) -> f64 {
    let batch = case.batch();
    let (_, grad) = loss_and_grad(&case.u, &batch, &case.h, &case.weights);
    let mut worst: f64 = 0.0;
    let mut u = case.u.clone();
    for i in 0..grad.len() {
        let x = u.as_slice()[i];
        u.as_mut_slice()[i] = x + step;
        let up = loss_value(&u, &batch, &case.h, &case.weights);
        u.as_mut_slice()[i] = x - step;
        let down = loss_value(&u, &batch, &case.h, &case.weights);
        u.as_mut_slice()[i] = x;
        let numeric = (up - down) / (2.0 * step);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

// ---------------------------------------------------------------------------
// Helpers

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
