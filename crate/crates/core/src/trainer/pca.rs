use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Linear map from `D`-dim vectors to their top-`k` principal coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `D`, by descending variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

/// Fits a PCA from the SVD of the column-centered data matrix. Each component
/// is sign-normalized so that its largest-magnitude entry is positive.
pub fn pca_fit(rows: &[Vec<f64>], k: usize) -> Result<PcaModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Precondition(format!("PCA needs at least 2 rows, got {n}")));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("PCA rows have differing lengths".into()));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::Precondition(format!(
            "k = {k} outside 1..={} for {n} rows of dimension {d}",
            (n - 1).min(d)
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input"));
    }

    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let scale = rows.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if centered.norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("PCA input has zero variance".into()));
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut row: Vec<f64> = v_t.row(idx).iter().copied().collect();
        let pivot = row
            .iter()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best },
            )
            .0;
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(row);
        explained_variance.push(sigma[idx] * sigma[idx] / (n - 1) as f64);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `components . (x - mean)`
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "PCA expects {} entries, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((ci, xi), mi)| ci * (xi - mi))
                    .sum()
            })
            .collect())
    }

    /// `mean + components^T . y`
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, yi) in self.components.iter().zip(y) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += yi * ci;
            }
        }
        out
    }
}
