//! Batch objective and its analytic gradient with respect to every matrix
//! entry.
//!
//! With `P[y,w] = softmax_y(U[:,w])` and `q = P·d` for a token distribution
//! `d`, any loss `L(q)` with `G_y = ∂L/∂q_y` back-propagates as
//!
//! ```text
//! ∂L/∂U[y,w] = d_w · P[y,w] · (G_y − Σ_y' G_y' P[y',w])
//! ```
//!
//! The cosine regularizers use `∂cos(a,b)/∂a = b/(|a||b|) − cos·a/|a|²`.

use super::{kl_loss, map_with, total_loss, CorrelationMatrix, PROB_FLOOR};
use crate::hierarchy::LabelHierarchy;

/// A few-shot example: its typing-mask distribution and gold label index.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub token_probs: &'a [f64],
    pub gold: usize,
}

/// A generated instance with a soft target over labels.
#[derive(Debug, Clone, Copy)]
pub struct SoftExample<'a> {
    pub token_probs: &'a [f64],
    pub target: &'a [f64],
}

/// One optimizer step's worth of data. Cross-entropy is averaged over the
/// labeled examples; the KL term sums over generated instances and is
/// divided by the same count, so it is "per source example" like the
/// cross-entropy.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub labeled: Vec<LabeledExample<'a>>,
    pub augmented: Vec<SoftExample<'a>>,
}

impl Batch<'_> {
    fn norm(&self) -> f64 {
        self.labeled.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub lambda_new: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub inc: f64,
    pub exc: f64,
    pub new: f64,
}

/// Total loss only; used by finite-difference checks.
pub fn loss_value(u: &CorrelationMatrix, batch: &Batch, h: &LabelHierarchy, w: &LossWeights) -> f64 {
    let parts = components(u, batch, h, w, None);
    total_loss(&parts, w)
}

/// Loss components and `∂total/∂U`, laid out like the matrix.
pub fn loss_and_grad(
    u: &CorrelationMatrix,
    batch: &Batch,
    h: &LabelHierarchy,
    w: &LossWeights,
) -> (LossBreakdown, Vec<f64>) {
    let mut grad = vec![0.0; u.as_slice().len()];
    let parts = components(u, batch, h, w, Some(&mut grad));
    (parts, grad)
}

fn components(
    u: &CorrelationMatrix,
    batch: &Batch,
    h: &LabelHierarchy,
    w: &LossWeights,
    mut grad: Option<&mut Vec<f64>>,
) -> LossBreakdown {
    let (l, v) = (u.n_labels(), u.vocab_size());
    let p = u.column_softmax();
    let norm = batch.norm();
    let mut parts = LossBreakdown::default();

    let mut dq = vec![0.0; l];
    for ex in &batch.labeled {
        let q = map_with(&p, l, ex.token_probs);
        let qg = q[ex.gold];
        parts.ce += -qg.max(PROB_FLOOR).ln() / norm;
        if let Some(g) = grad.as_deref_mut() {
            dq.fill(0.0);
            if qg > PROB_FLOOR {
                dq[ex.gold] = -1.0 / (qg * norm);
            }
            backprop_mixture(&p, l, v, ex.token_probs, &dq, g);
        }
    }

    let new_weight = w.beta * w.lambda_new;
    for ex in &batch.augmented {
        let q = map_with(&p, l, ex.token_probs);
        parts.new += kl_loss(ex.target, &q) / norm;
        if new_weight != 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                for y in 0..l {
                    dq[y] = if ex.target[y] > 0.0 && q[y] > PROB_FLOOR {
                        -new_weight * ex.target[y] / (q[y] * norm)
                    } else {
                        0.0
                    };
                }
                backprop_mixture(&p, l, v, ex.token_probs, &dq, g);
            }
        }
    }

    for (c, par) in h.parent_edges() {
        let (cos, da, db) = cosine_grad(u.row(c), u.row(par));
        parts.inc += 1.0 - cos;
        if w.lambda != 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                axpy(&mut g[c * v..(c + 1) * v], -w.lambda, &da);
                axpy(&mut g[par * v..(par + 1) * v], -w.lambda, &db);
            }
        }
    }
    for (a, b) in h.sibling_pairs() {
        let (cos, da, db) = cosine_grad(u.row(a), u.row(b));
        parts.exc += cos;
        if w.lambda != 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                axpy(&mut g[a * v..(a + 1) * v], w.lambda, &da);
                axpy(&mut g[b * v..(b + 1) * v], w.lambda, &db);
            }
        }
    }
    parts
}

/// Adds `∂L/∂U` for `q = P·d` given `dq = ∂L/∂q` (already weighted).
fn backprop_mixture(p: &[f64], l: usize, v: usize, d: &[f64], dq: &[f64], grad: &mut [f64]) {
    for wi in 0..v {
        let dw = d[wi];
        if dw == 0.0 {
            continue;
        }
        let s: f64 = (0..l).map(|y| dq[y] * p[y * v + wi]).sum();
        for y in 0..l {
            let pyw = p[y * v + wi];
            grad[y * v + wi] += dw * pyw * (dq[y] - s);
        }
    }
}

/// Cosine and its gradients with respect to both arguments. Zero-norm rows
/// give cosine 0 and zero gradients.
fn cosine_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let cos = super::cosine(a, b);
    let da = a.iter().zip(b).map(|(x, y)| y / (na * nb) - cos * x / (na * na)).collect();
    let db = a.iter().zip(b).map(|(x, y)| x / (na * nb) - cos * y / (nb * nb)).collect();
    (cos, da, db)
}

fn axpy(dst: &mut [f64], alpha: f64, x: &[f64]) {
    dst.iter_mut().zip(x).for_each(|(d, v)| *d += alpha * v);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::LabelPath;
    use approx::assert_abs_diff_eq;

    /// Hand derivation: one example, one-hot on token `w`, two labels. Then
    /// `q = softmax(U[:,w])` and `∂(−ln q_g)/∂U[y,w] = q_y − [y = g]`; all
    /// other columns get zero.
    #[test]
    fn one_hot_cross_entropy_matches_hand_gradient() {
        let h = LabelHierarchy::from_strs(["/a", "/b"]).unwrap();
        let u = CorrelationMatrix::from_parts(h.labels().to_vec(), 3, vec![0.1, 0.3, -0.5, 0.7, -0.2, 0.4]).unwrap();
        let d = [0.0, 1.0, 0.0];
        let batch = Batch { labeled: vec![LabeledExample { token_probs: &d, gold: 0 }], augmented: vec![] };
        let w = LossWeights { lambda: 0.0, lambda_new: 0.0, beta: 0.0 };
        let (parts, g) = loss_and_grad(&u, &batch, &h, &w);
        // softmax([0.3, -0.2]): q0 = 1 / (1 + e^-0.5)
        let q0: f64 = 0.622_459_331_201_854_6;
        assert_abs_diff_eq!(parts.ce, -q0.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], q0 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[3 + 1], 1.0 - q0, epsilon = 1e-12);
        for i in [0, 2, 3, 5] {
            assert_eq!(g[i], 0.0);
        }
    }

    #[test]
    fn zero_weight_terms_contribute_nothing() {
        let h = LabelHierarchy::from_strs(["/a", "/a/b", "/a/c"]).unwrap();
        let u = CorrelationMatrix::from_parts(h.labels().to_vec(), 2, vec![0.3, 0.1, -0.4, 0.9, 0.2, 0.2]).unwrap();
        let d = [0.4, 0.6];
        let t = [0.2, 0.5, 0.3];
        let batch = Batch { labeled: vec![], augmented: vec![SoftExample { token_probs: &d, target: &t }] };
        let (parts, g) = loss_and_grad(&u, &batch, &h, &LossWeights { lambda: 0.0, lambda_new: 1.0, beta: 0.0 });
        assert!(parts.new > 0.0 && parts.inc > 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_step_on_inclusive_loss_decreases_it() {
        let h = LabelHierarchy::from_strs(["/p", "/p/c"]).unwrap();
        let labels: Vec<LabelPath> = h.labels().to_vec();
        let mut u = CorrelationMatrix::from_parts(labels, 3, vec![1.0, 0.2, -0.3, -0.5, 0.8, 0.1]).unwrap();
        let w = LossWeights { lambda: 1.0, lambda_new: 0.0, beta: 0.0 };
        let before = super::super::inclusive_loss(&u, &h);
        let (_, g) = loss_and_grad(&u, &Batch::default(), &h, &w);
        u.as_mut_slice().iter_mut().zip(&g).for_each(|(x, d)| *x -= 0.05 * d);
        assert!(super::super::inclusive_loss(&u, &h) < before);
    }
}
