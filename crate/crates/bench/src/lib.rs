//! Inputs shared by the benchmarks.

use ontoembed::rng;
use rand::Rng;

/// Clinical-sounding phrases of a few words each.
pub fn phrases(n: usize, seed: u64) -> Vec<String> {
    const WORDS: &[&str] = &[
        "acute", "chronic", "fever", "ulcer", "renal", "cough", "pain", "syndrome", "lesion", "hepatic", "cardiac",
        "disorder", "of", "the", "with", "and",
    ];
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let len = r.gen_range(2..8);
            (0..len)
                .map(|_| WORDS[r.gen_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// `n` random unit vectors of dimension `d`.
pub fn unit_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}
