use crate::encoder::{Gradient, Params};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Linear warmup to `base_lr` over `w = max(1, round(warmup_fraction * total))`
/// steps, then linear decay towards zero at `total_steps`.
pub fn warmup_linear(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    debug_assert!(total_steps >= 1 && step < total_steps);
    let warmup = ((warmup_fraction * total_steps as f64).round() as usize).max(1);
    if step < warmup {
        base_lr * (step + 1) as f64 / warmup as f64
    } else {
        base_lr * (total_steps - step) as f64 / (total_steps - warmup) as f64
    }
}

/// AdamW with decoupled weight decay. Bias vectors are not decayed.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub weight_decay: f64,
    /// First and second moments, one vector per parameter tensor.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &Params, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|(t, _)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut Params, grad: &Gradient, lr: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        if lr < 0.0 || !lr.is_finite() {
            return Err(Error::Precondition(format!(
                "learning rate {lr} is not a finite non-negative value"
            )));
        }
        let tensors = params.tensors_mut();
        if tensors.len() != self.m.len() || grad.head.is_some() != (tensors.len() == 7) {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let decay = self.weight_decay;

        let step_one = |theta: &mut f64, m: &mut f64, v: &mut f64, g: f64, is_bias: bool| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            let wd = if is_bias { 0.0 } else { decay * *theta };
            *theta -= lr * (m_hat / (v_hat.sqrt() + EPSILON) + wd);
        };

        let dense: Vec<&[f64]> = {
            let mut d: Vec<&[f64]> = vec![&grad.w1, &grad.b1, &grad.w2, &grad.b2];
            if let Some(h) = &grad.head {
                d.push(&h.weight);
                d.push(&h.bias);
            }
            d
        };

        for (ti, (theta, is_bias)) in tensors.into_iter().enumerate() {
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            if ti == 0 {
                // sparse token table: rows without a gradient see g = 0
                let row_len = if grad.token_rows.is_empty() {
                    1
                } else {
                    grad.token_rows.values().next().map_or(1, Vec::len)
                };
                let mut rows = grad.token_rows.iter().peekable();
                for (row, chunk) in theta.chunks_mut(row_len).enumerate() {
                    let g_row = match rows.peek() {
                        Some((r, g)) if **r == row => {
                            let g = *g;
                            rows.next();
                            Some(g)
                        }
                        _ => None,
                    };
                    let base = row * row_len;
                    for (k, th) in chunk.iter_mut().enumerate() {
                        let g = g_row.map_or(0.0, |g| g[k]);
                        step_one(th, &mut m[base + k], &mut v[base + k], g, is_bias);
                    }
                }
            } else {
                let g = dense[ti - 1];
                if g.len() != theta.len() {
                    return Err(Error::Dimension("gradient shape does not match parameters".into()));
                }
                for k in 0..theta.len() {
                    step_one(&mut theta[k], &mut m[k], &mut v[k], g[k], is_bias);
                }
            }
        }
        Ok(())
    }
}
