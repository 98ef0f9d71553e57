//! Shared helpers for integration tests: random instance generators,
//! finite-difference checks and brute-force reference implementations.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use ontoembed::encoder::{backward, forward, init_params, EncoderConfig, Gradient, Head, HeadGrad, Params};
use ontoembed::eval::Embedder;
use ontoembed::losses::{cosine_regression, info_nce, mse, InfoNceConfig};
use ontoembed::ontology::{Concept, KnowledgeGraph};
use ontoembed::rng;
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn demo_dir() -> PathBuf {
    fixtures_dir().join("demo")
}

pub fn rng(seed: u64) -> rng::Rng {
    rng::seeded(seed)
}

pub fn random_vec(r: &mut rng::Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()
}

pub fn random_unit(r: &mut rng::Rng, d: usize) -> Vec<f64> {
    loop {
        let v = random_vec(r, d);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn tiny_config(seed: u64) -> EncoderConfig {
    EncoderConfig {
        vocab_buckets: 16,
        embed_dim: 5,
        hidden_dim: 6,
        output_dim: 4,
        hash_seed: seed,
        init_seed: seed,
        init_scale: 0.5,
    }
}

/// Parameters with every entry (biases included) drawn uniformly.
pub fn random_params(config: &EncoderConfig, r: &mut rng::Rng) -> Params {
    let mut p = init_params(config);
    for (t, _) in p.tensors_mut() {
        for x in t.iter_mut() {
            *x = r.gen_range(-0.8..0.8);
        }
    }
    p
}

const WORDS: &[&str] = &[
    "fever", "acute", "ulcer", "peptic", "renal", "cough", "chronic", "pain", "flu", "rash",
];

pub fn random_text(r: &mut rng::Rng) -> String {
    let n = r.gen_range(1..=5);
    (0..n)
        .map(|_| WORDS[r.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest entry-wise relative error, with an absolute floor for entries that
/// are zero on both sides.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            let diff = (a - n).abs();
            if diff < 1e-9 {
                0.0
            } else {
                diff / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Finite-difference check of the encoder (and a projection head) against
/// the analytic backward pass. Returns the largest relative error.
pub fn encoder_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let config = tiny_config(seed);
    let mut params = random_params(&config, &mut r);
    let with_head = seed % 2 == 1;
    let k = 3;
    if with_head {
        let mut head = Head::init(config.output_dim, k, 0.5, seed);
        head.bias = random_vec(&mut r, k);
        params.head = Some(head);
    }
    let text = random_text(&mut r);
    let g = random_vec(&mut r, if with_head { k } else { config.output_dim });

    let objective = |flat: &[f64]| -> f64 {
        let p = Params::unflatten(&config, flat).unwrap();
        let out = forward(&p, &config, &text).output;
        let y = match &p.head {
            Some(h) => h.forward(&out),
            None => out,
        };
        y.iter().zip(&g).map(|(a, b)| a * b).sum()
    };

    let fwd = forward(&params, &config, &text);
    let mut grad = Gradient::zeros_like(&config, &params);
    let dout = match &params.head {
        Some(h) => {
            let mut hg = HeadGrad {
                weight: vec![0.0; h.weight.len()],
                bias: vec![0.0; k],
            };
            let d = h.backward(&fwd.output, &g, &mut hg);
            grad.head = Some(hg);
            d
        }
        None => g.clone(),
    };
    backward(&params, &config, &fwd, &dout, &mut grad);
    let analytic = grad.to_flat(&config);
    let numeric = central_diff(objective, &params.flatten(), FD_STEP);
    max_rel_err(&analytic, &numeric)
}

fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn rows(flat: &[f64], d: usize) -> Vec<Vec<f64>> {
    flat.chunks(d).map(<[f64]>::to_vec).collect()
}

pub fn info_nce_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let b = r.gen_range(1..=6);
    let m = r.gen_range(0..=3);
    let d = r.gen_range(2..=6);
    let cfg = InfoNceConfig {
        scale: r.gen_range(1.0..20.0),
        symmetric: r.gen_bool(0.5),
    };
    let a: Vec<Vec<f64>> = (0..b).map(|_| random_unit(&mut r, d)).collect();
    let p: Vec<Vec<f64>> = (0..b).map(|_| random_unit(&mut r, d)).collect();
    let e: Vec<Vec<f64>> = (0..m).map(|_| random_unit(&mut r, d)).collect();
    let out = info_nce(&a, &p, &e, &cfg).unwrap();
    let (na, np) = (b * d, b * d);
    let x: Vec<f64> = [flat(&a), flat(&p), flat(&e)].concat();
    let f = |x: &[f64]| {
        info_nce(
            &rows(&x[..na], d),
            &rows(&x[na..na + np], d),
            &rows(&x[na + np..], d),
            &cfg,
        )
        .unwrap()
        .loss
    };
    let analytic = [
        flat(&out.grad_anchors),
        flat(&out.grad_positives),
        flat(&out.grad_extras),
    ]
    .concat();
    max_rel_err(&analytic, &central_diff(f, &x, FD_STEP))
}

pub fn mse_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.gen_range(1..=5);
    let d = r.gen_range(1..=64);
    let pred: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d)).collect();
    let target: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d)).collect();
    let (_, g) = mse(&pred, &target).unwrap();
    let f = |x: &[f64]| mse(&rows(x, d), &target).unwrap().0;
    max_rel_err(&flat(&g), &central_diff(f, &flat(&pred), FD_STEP))
}

pub fn cosine_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.gen_range(1..=5);
    let d = r.gen_range(2..=8);
    let u: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut r, d)).collect();
    let v: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut r, d)).collect();
    let gold: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..=1.0)).collect();
    let out = cosine_regression(&u, &v, &gold).unwrap();
    let x = [flat(&u), flat(&v)].concat();
    let f = |x: &[f64]| {
        cosine_regression(&rows(&x[..n * d], d), &rows(&x[n * d..], d), &gold)
            .unwrap()
            .loss
    };
    let analytic = [flat(&out.grad_u), flat(&out.grad_v)].concat();
    max_rel_err(&analytic, &central_diff(f, &x, FD_STEP))
}

// ---- brute-force metric oracles ----

/// Pearson via all pairwise differences, independent of the usual
/// mean-centred formula.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks by counting smaller and equal elements.
pub fn ranks_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            let less = x.iter().filter(|v| *v < xi).count() as f64;
            let equal = x.iter().filter(|v| *v == xi).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&ranks_oracle(x), &ranks_oracle(y))
}

/// Random sample, half of the time drawn from a few integers to force ties.
pub fn random_sample(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    if r.gen_bool(0.5) {
        (0..n).map(|_| r.gen_range(0..4) as f64).collect()
    } else {
        random_vec(r, n)
    }
}

pub fn has_spread(x: &[f64]) -> bool {
    x.iter().any(|v| *v != x[0])
}

/// Embedder backed by a lookup table (unknown texts map to the zero vector).
pub struct TableEmbedder {
    pub table: HashMap<String, Vec<f64>>,
    pub dim: usize,
}

impl Embedder for TableEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        self.table.get(text).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }

    fn digest(&self) -> String {
        "table".into()
    }
}

pub fn concept(id: &str, names: &[&str], parents: &[&str]) -> Concept {
    Concept {
        id: id.into(),
        names: names.iter().map(|s| s.to_string()).collect(),
        semantic_type: "T".into(),
        parents: parents.iter().map(|s| s.to_string()).collect(),
        relations: vec![],
        definitions: vec![],
    }
}

/// A random linking instance: graph, planted embeddings, mentions with gold ids.
pub struct NelInstance {
    pub kg: KnowledgeGraph,
    pub model: TableEmbedder,
    pub mentions: Vec<(String, String)>,
}

pub fn random_nel_instance(r: &mut rng::Rng) -> NelInstance {
    let n_concepts = r.gen_range(2..=7);
    let d = r.gen_range(2..=4);
    let mut table = HashMap::new();
    let mut concepts = Vec::new();
    let mut synonym_vecs = Vec::new();
    for c in 0..n_concepts {
        let n_syn = r.gen_range(1..=3);
        let names: Vec<String> = (0..n_syn).map(|s| format!("c{c}s{s}")).collect();
        for n in &names {
            // coarse grid so that exact ties occur
            let v: Vec<f64> = (0..d).map(|_| r.gen_range(-2..=2) as f64 / 2.0).collect();
            synonym_vecs.push(v.clone());
            table.insert(n.clone(), v);
        }
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        concepts.push(concept(&format!("K{c:02}"), &refs, &[]));
    }
    let n_mentions = r.gen_range(1..=10);
    let mut mentions = Vec::new();
    for m in 0..n_mentions {
        let text = format!("m{m}");
        let v = if r.gen_bool(0.3) {
            synonym_vecs[r.gen_range(0..synonym_vecs.len())].clone()
        } else {
            (0..d).map(|_| r.gen_range(-2..=2) as f64 / 2.0).collect()
        };
        table.insert(text.clone(), v);
        mentions.push((text, format!("K{:02}", r.gen_range(0..n_concepts))));
    }
    NelInstance {
        kg: KnowledgeGraph::from_concepts(concepts).unwrap(),
        model: TableEmbedder { table, dim: d },
        mentions,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top-k accuracy by exhaustive scoring: a concept outranks the gold one if
/// its best synonym score is higher, or equal with a smaller id.
pub fn topk_oracle(inst: &NelInstance, k: usize) -> f64 {
    let mut hits = 0;
    for (mention, gold) in &inst.mentions {
        let q = inst.model.embed(mention);
        let score = |c: &Concept| {
            c.names
                .iter()
                .map(|n| dot(&q, &inst.model.embed(n)))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let gold_c = inst.kg.concept(gold).unwrap();
        let gs = score(gold_c);
        let ahead = inst
            .kg
            .concepts()
            .filter(|c| c.id != *gold)
            .filter(|c| {
                let s = score(c);
                s > gs || (s == gs && c.id < *gold)
            })
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    hits as f64 / inst.mentions.len() as f64
}

pub fn nli_oracle(model: &TableEmbedder, rows: &[(String, String, String)]) -> f64 {
    let wins = rows
        .iter()
        .filter(|(a, e, c)| {
            let va = model.embed(a);
            dot(&va, &model.embed(e)) > dot(&va, &model.embed(c))
        })
        .count();
    wins as f64 / rows.len() as f64
}

// ---- PCA reference ----

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as rows), sorted by descending value.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (divisor N - 1).
pub fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| x.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}
