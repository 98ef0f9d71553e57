use crate::error::{Error, Result};

/// Values whose range is below this (relative to their magnitude) are treated
/// as constant; correlation is undefined for them.
const CONSTANT_TOLERANCE: f64 = 1e-12;

fn check_spread(name: &str, xs: &[f64]) -> Result<()> {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let magnitude = lo.abs().max(hi.abs()).max(1.0);
    if hi - lo <= CONSTANT_TOLERANCE * magnitude {
        return Err(Error::Degenerate(format!("{name} has zero variance")));
    }
    Ok(())
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Precondition("correlation needs at least 2 values".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    check_spread("first argument", xs)?;
    check_spread("second argument", ys)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_inputs(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the positions they occupy.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_inputs(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}
