//! Training objectives. Each returns the loss together with exact gradients
//! with respect to the (already normalized) embeddings it was given.

use serde::{Deserialize, Serialize};

use crate::encoder::dot;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoNceConfig {
    /// Logit multiplier (inverse temperature).
    pub scale: f64,
    /// Also score positives against anchors and average the two directions.
    pub symmetric: bool,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self {
            scale: 20.0,
            symmetric: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_extras: Vec<Vec<f64>>,
}

fn check_rows(name: &'static str, rows: &[Vec<f64>], dim: usize) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Dimension(format!(
                "{name}[{i}] has {} entries, expected {dim}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
    }
    Ok(())
}

/// Row-wise softmax cross-entropy of `logits` against the diagonal. Returns
/// the summed loss and `d(sum loss)/d logits`.
fn diagonal_xent(logits: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (i, row) in logits.iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += max + sum.ln() - row[i];
        let mut g: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        g[i] -= 1.0;
        grads.push(g);
    }
    (total, grads)
}

/// In-batch InfoNCE. Candidates for anchor `i` are all positives followed by
/// the shared `extras`; the correct candidate is positive `i`.
pub fn info_nce(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    extras: &[Vec<f64>],
    cfg: &InfoNceConfig,
) -> Result<InfoNceOutput> {
    let b = anchors.len();
    if b == 0 {
        return Err(Error::Dimension("info_nce needs at least one anchor".into()));
    }
    if positives.len() != b {
        return Err(Error::Dimension(format!(
            "{b} anchors but {} positives",
            positives.len()
        )));
    }
    if !(cfg.scale.is_finite() && cfg.scale > 0.0) {
        return Err(Error::Config("info_nce scale must be positive".into()));
    }
    let d = anchors[0].len();
    check_rows("anchors", anchors, d)?;
    check_rows("positives", positives, d)?;
    check_rows("extra negatives", extras, d)?;

    let s = cfg.scale;
    let candidates: Vec<&Vec<f64>> = positives.iter().chain(extras).collect();
    let logits: Vec<Vec<f64>> = anchors
        .iter()
        .map(|a| candidates.iter().map(|c| s * dot(a, c)).collect())
        .collect();
    let (forward_sum, g_fwd) = diagonal_xent(&logits);

    let mut grad_anchors = vec![vec![0.0; d]; b];
    let mut grad_candidates = vec![vec![0.0; d]; candidates.len()];

    let weight = if cfg.symmetric { 0.5 } else { 1.0 } / b as f64;
    for i in 0..b {
        for (j, c) in candidates.iter().enumerate() {
            let g = weight * s * g_fwd[i][j];
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                grad_anchors[i][k] += g * c[k];
                grad_candidates[j][k] += g * anchors[i][k];
            }
        }
    }
    let mut loss = forward_sum / b as f64;

    if cfg.symmetric {
        let logits_t: Vec<Vec<f64>> = positives
            .iter()
            .map(|p| anchors.iter().map(|a| s * dot(p, a)).collect())
            .collect();
        let (backward_sum, g_bwd) = diagonal_xent(&logits_t);
        for i in 0..b {
            for j in 0..b {
                let g = weight * s * g_bwd[i][j];
                if g == 0.0 {
                    continue;
                }
                for k in 0..d {
                    grad_candidates[i][k] += g * anchors[j][k];
                    grad_anchors[j][k] += g * positives[i][k];
                }
            }
        }
        loss = 0.5 * (loss + backward_sum / b as f64);
    }

    let grad_extras = grad_candidates.split_off(b);
    Ok(InfoNceOutput {
        loss,
        grad_anchors,
        grad_positives: grad_candidates,
        grad_extras,
    })
}

fn check_pairs(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} rows vs {} rows", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Dimension("empty input".into()));
    }
    let d = a[0].len();
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != d || y.len() != d {
            return Err(Error::Dimension(format!("row {i} does not have {d} entries")));
        }
    }
    Ok(d)
}

/// Mean squared error over every scalar entry.
pub fn mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let d = check_pairs(pred, target)?;
    let n = (pred.len() * d) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            p.iter()
                .zip(t)
                .map(|(pv, tv)| {
                    let diff = pv - tv;
                    loss += diff * diff;
                    2.0 * diff / n
                })
                .collect()
        })
        .collect();
    Ok((loss / n, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosineRegression {
    pub loss: f64,
    pub grad_u: Vec<Vec<f64>>,
    pub grad_v: Vec<Vec<f64>>,
}

/// Mean over pairs of `(u . v - gold)^2`, gold in `[0, 1]`.
pub fn cosine_regression(u: &[Vec<f64>], v: &[Vec<f64>], gold: &[f64]) -> Result<CosineRegression> {
    check_pairs(u, v)?;
    if gold.len() != u.len() {
        return Err(Error::Dimension(format!(
            "{} pairs but {} gold scores",
            u.len(),
            gold.len()
        )));
    }
    if let Some(g) = gold.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::Validation(format!("gold score {g} outside [0, 1]")));
    }
    let n = u.len() as f64;
    let mut loss = 0.0;
    let mut grad_u = Vec::with_capacity(u.len());
    let mut grad_v = Vec::with_capacity(u.len());
    for ((a, b), g) in u.iter().zip(v).zip(gold) {
        let diff = dot(a, b) - g;
        loss += diff * diff;
        let c = 2.0 * diff / n;
        grad_u.push(b.iter().map(|x| c * x).collect());
        grad_v.push(a.iter().map(|x| c * x).collect());
    }
    Ok(CosineRegression {
        loss: loss / n,
        grad_u,
        grad_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_batch_gives_log_batch_size() {
        let row = {
            let mut r = vec![0.0; 8];
            r[2] = 1.0;
            r
        };
        let a = vec![row.clone(); 128];
        let out = info_nce(&a, &a, &[], &InfoNceConfig::default()).unwrap();
        assert!((out.loss - 128f64.ln()).abs() < 1e-9);
        assert!((out.loss - 4.85203).abs() < 1e-5);
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let a = vec![vec![0.6, 0.8]];
        let out = info_nce(&a, &a, &[], &InfoNceConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn two_orthogonal_pairs() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let cfg = InfoNceConfig {
            scale: 1.0,
            symmetric: false,
        };
        let out = info_nce(&a, &a, &[], &cfg).unwrap();
        assert!((out.loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((out.loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn info_nce_rejects_bad_input() {
        let cfg = InfoNceConfig::default();
        assert!(info_nce(&[], &[], &[], &cfg).is_err());
        assert!(info_nce(&[vec![1.0, 0.0]], &[vec![1.0]], &[], &cfg).is_err());
        assert!(info_nce(&[vec![f64::NAN]], &[vec![1.0]], &[], &cfg).is_err());
        assert!(info_nce(&[vec![1.0]], &[vec![1.0], vec![1.0]], &[], &cfg).is_err());
    }

    #[test]
    fn mse_examples() {
        let (l, g) = mse(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g, vec![vec![1.0, 0.0]]);
        let (l, g) = mse(&[vec![0.3, 0.2]], &[vec![0.3, 0.2]]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g[0].iter().all(|v| *v == 0.0));
        assert!(mse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cosine_regression_examples() {
        let u = vec![vec![0.6, 0.8]];
        assert_eq!(cosine_regression(&u, &u, &[1.0]).unwrap().loss, 0.0);
        let out = cosine_regression(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]], &[0.0]).unwrap();
        assert_eq!(out.loss, 0.0);
        let v = vec![vec![1.0, 0.0]];
        let out = cosine_regression(&v, &v, &[0.0]).unwrap();
        assert_eq!(out.loss, 1.0);
        assert_eq!(out.grad_u, vec![vec![2.0, 0.0]]);
        assert!(cosine_regression(&v, &v, &[1.5]).is_err());
    }
}
