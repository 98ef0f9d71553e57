//! Embedding-bag text encoder with exact analytic gradients.
//!
//! ```text
//! tokens  = tokenize(text)
//! pooled  = mean(token_table[t] for t in tokens)      (zero if no tokens)
//! hidden  = tanh(pooled . w1 + b1)
//! z       = hidden . w2 + b2
//! output  = z / max(|z|, 1e-8)
//! ```
//!
//! Matrices are stored row-major: `w1` is `embed_dim x hidden_dim`, `w2` is
//! `hidden_dim x output_dim`, and the optional projection head is
//! `output_dim x target_dim`.

mod checkpoint;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Phase, FORMAT_VERSION, MAGIC};

/// Lower bound on `|z|` in the output normalization.
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_buckets: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub hash_seed: u64,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_buckets: 32768,
            embed_dim: 64,
            hidden_dim: 128,
            output_dim: 128,
            hash_seed: 0,
            init_seed: 0,
            init_scale: 0.05,
        }
    }
}

impl EncoderConfig {
    pub const KEYS: &'static [&'static str] = &[
        "vocab_buckets",
        "embed_dim",
        "hidden_dim",
        "output_dim",
        "hash_seed",
        "init_seed",
        "init_scale",
    ];

    /// Overrides fields from `kv`; keys match the field names.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.check_known(Self::KEYS)?;
        kv.apply("vocab_buckets", &mut self.vocab_buckets)?;
        kv.apply("embed_dim", &mut self.embed_dim)?;
        kv.apply("hidden_dim", &mut self.hidden_dim)?;
        kv.apply("output_dim", &mut self.output_dim)?;
        kv.apply("hash_seed", &mut self.hash_seed)?;
        kv.apply("init_seed", &mut self.init_seed)?;
        kv.apply("init_scale", &mut self.init_scale)?;
        self.validate()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("vocab_buckets", self.vocab_buckets.to_string());
        kv.set("embed_dim", self.embed_dim.to_string());
        kv.set("hidden_dim", self.hidden_dim.to_string());
        kv.set("output_dim", self.output_dim.to_string());
        kv.set("hash_seed", self.hash_seed.to_string());
        kv.set("init_seed", self.init_seed.to_string());
        kv.set("init_scale", self.init_scale.to_string());
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_buckets", self.vocab_buckets),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Two encoders can be weight-averaged iff everything but the init seed matches.
    pub fn soup_compatible(&self, other: &EncoderConfig) -> bool {
        self.vocab_buckets == other.vocab_buckets
            && self.embed_dim == other.embed_dim
            && self.hidden_dim == other.hidden_dim
            && self.output_dim == other.output_dim
            && self.hash_seed == other.hash_seed
            && self.init_scale.to_bits() == other.init_scale.to_bits()
    }

    /// Number of encoder parameters (head excluded).
    pub fn param_count(&self) -> usize {
        self.vocab_buckets * self.embed_dim
            + self.embed_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.output_dim
            + self.output_dim
    }

    pub fn head_param_count(&self, target_dim: usize) -> usize {
        self.output_dim * target_dim + target_dim
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded token hash: FNV-1a over the token's UTF-8 bytes starting from
/// `FNV_OFFSET ^ seed`, followed by the SplitMix64 finalizer.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// Lowercases, splits on runs of non-alphanumeric characters and hashes each
/// token into `[0, vocab_buckets)`.
pub fn tokenize(config: &EncoderConfig, text: &str) -> Vec<usize> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| (token_hash(t, config.hash_seed) % config.vocab_buckets as u64) as usize)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub target_dim: usize,
    /// `output_dim x target_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Head {
    pub fn init(output_dim: usize, target_dim: usize, scale: f64, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        Self {
            target_dim,
            weight: uniform(&mut r, output_dim * target_dim, scale),
            bias: vec![0.0; target_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let k = self.target_dim;
        let mut y = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * k..(i + 1) * k];
            for (yj, wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        y
    }

    /// Accumulates head gradients for upstream `dy` and returns `d/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut HeadGrad) -> Vec<f64> {
        let k = self.target_dim;
        let mut dx = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * k..(i + 1) * k];
            let grow = &mut grad.weight[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                grow[j] += xi * dy[j];
                acc += row[j] * dy[j];
            }
            dx[i] = acc;
        }
        for (b, d) in grad.bias.iter_mut().zip(dy) {
            *b += d;
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    /// `vocab_buckets x embed_dim`, row-major.
    pub token_table: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub head: Option<Head>,
}

fn uniform(r: &mut rng::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * r.gen::<f64>() - 1.0)).collect()
}

/// Draws weights i.i.d. uniform in `[-init_scale, init_scale]` (token table,
/// then `w1`, then `w2`); biases start at zero.
pub fn init_params(config: &EncoderConfig) -> Params {
    let mut r = rng::seeded(config.init_seed);
    let s = config.init_scale;
    let token_table = uniform(&mut r, config.vocab_buckets * config.embed_dim, s);
    let w1 = uniform(&mut r, config.embed_dim * config.hidden_dim, s);
    let w2 = uniform(&mut r, config.hidden_dim * config.output_dim, s);
    Params {
        token_table,
        w1,
        b1: vec![0.0; config.hidden_dim],
        w2,
        b2: vec![0.0; config.output_dim],
        head: None,
    }
}

impl Params {
    pub fn without_head(&self) -> Params {
        Params {
            head: None,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.token_table.len()
            + self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.head.as_ref().map_or(0, |h| h.weight.len() + h.bias.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }

    /// Tensors in canonical order with a flag marking bias vectors.
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        let mut out: Vec<(&[f64], bool)> = vec![
            (&self.token_table, false),
            (&self.w1, false),
            (&self.b1, true),
            (&self.w2, false),
            (&self.b2, true),
        ];
        if let Some(h) = &self.head {
            out.push((&h.weight, false));
            out.push((&h.bias, true));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = vec![
            (&mut self.token_table, false),
            (&mut self.w1, false),
            (&mut self.b1, true),
            (&mut self.w2, false),
            (&mut self.b2, true),
        ];
        if let Some(h) = &mut self.head {
            out.push((&mut h.weight, false));
            out.push((&mut h.bias, true));
        }
        out
    }

    /// Canonical flattening: token table, w1, b1, w2, b2, then head weight and bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for (t, _) in self.tensors() {
            v.extend_from_slice(t);
        }
        v
    }

    /// Inverse of [`Params::flatten`]. Any values beyond the encoder block are
    /// read as a projection head whose target dimension is inferred from the length.
    pub fn unflatten(config: &EncoderConfig, values: &[f64]) -> Result<Params> {
        let base = config.param_count();
        let extra = values
            .len()
            .checked_sub(base)
            .ok_or_else(|| Error::Dimension(format!("expected at least {base} parameters, got {}", values.len())))?;
        let per_target = config.output_dim + 1;
        if extra % per_target != 0 {
            return Err(Error::Dimension(format!(
                "{} parameters do not match encoder ({base}) plus a whole projection head",
                values.len()
            )));
        }
        let target_dim = extra / per_target;
        let mut rest = values;
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let token_table = take(config.vocab_buckets * config.embed_dim);
        let w1 = take(config.embed_dim * config.hidden_dim);
        let b1 = take(config.hidden_dim);
        let w2 = take(config.hidden_dim * config.output_dim);
        let b2 = take(config.output_dim);
        let head = (target_dim > 0).then(|| Head {
            target_dim,
            weight: take(config.output_dim * target_dim),
            bias: take(target_dim),
        });
        Ok(Params {
            token_table,
            w1,
            b1,
            w2,
            b2,
            head,
        })
    }

    pub(crate) fn check_shape(&self, config: &EncoderConfig) -> Result<()> {
        let ok = self.token_table.len() == config.vocab_buckets * config.embed_dim
            && self.w1.len() == config.embed_dim * config.hidden_dim
            && self.b1.len() == config.hidden_dim
            && self.w2.len() == config.hidden_dim * config.output_dim
            && self.b2.len() == config.output_dim
            && self
                .head
                .as_ref()
                .is_none_or(|h| h.weight.len() == config.output_dim * h.target_dim && h.bias.len() == h.target_dim);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("parameter shapes do not match encoder config".into()))
        }
    }
}

/// Unit-norm encoder output (the zero vector for texts without tokens and zero biases).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub tokens: Vec<usize>,
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub z: Vec<f64>,
    pub z_norm: f64,
    pub output: Vec<f64>,
}

pub fn forward(params: &Params, config: &EncoderConfig, text: &str) -> Forward {
    let e = config.embed_dim;
    let h = config.hidden_dim;
    let tokens = tokenize(config, text);
    let mut pooled = vec![0.0; e];
    if !tokens.is_empty() {
        for &t in &tokens {
            let row = &params.token_table[t * e..(t + 1) * e];
            for (p, r) in pooled.iter_mut().zip(row) {
                *p += r;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        for p in &mut pooled {
            *p *= inv;
        }
    }

    let mut hidden = params.b1.clone();
    for (i, &pi) in pooled.iter().enumerate() {
        let row = &params.w1[i * h..(i + 1) * h];
        for (hj, w) in hidden.iter_mut().zip(row) {
            *hj += pi * w;
        }
    }
    for v in &mut hidden {
        *v = v.tanh();
    }

    let o = config.output_dim;
    let mut z = params.b2.clone();
    for (i, &hi) in hidden.iter().enumerate() {
        let row = &params.w2[i * o..(i + 1) * o];
        for (zj, w) in z.iter_mut().zip(row) {
            *zj += hi * w;
        }
    }
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = z_norm.max(NORM_FLOOR);
    let output = z.iter().map(|v| v / denom).collect();
    Forward {
        tokens,
        pooled,
        hidden,
        z,
        z_norm,
        output,
    }
}

pub fn encode(params: &Params, config: &EncoderConfig, text: &str) -> Embedding {
    Embedding(forward(params, config, text).output)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with the shape of [`Params`]. Token-table rows are stored sparsely:
/// rows absent from `token_rows` have an exactly zero gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub token_rows: BTreeMap<usize, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub head: Option<HeadGrad>,
}

impl Gradient {
    pub fn zeros(config: &EncoderConfig, head_dim: Option<usize>) -> Self {
        Self {
            token_rows: BTreeMap::new(),
            w1: vec![0.0; config.embed_dim * config.hidden_dim],
            b1: vec![0.0; config.hidden_dim],
            w2: vec![0.0; config.hidden_dim * config.output_dim],
            b2: vec![0.0; config.output_dim],
            head: head_dim.map(|k| HeadGrad {
                weight: vec![0.0; config.output_dim * k],
                bias: vec![0.0; k],
            }),
        }
    }

    pub fn zeros_like(config: &EncoderConfig, params: &Params) -> Self {
        Self::zeros(config, params.head.as_ref().map(|h| h.target_dim))
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.token_rows.values_mut() {
            row.iter_mut().for_each(|v| *v *= factor);
        }
        for t in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            t.iter_mut().for_each(|v| *v *= factor);
        }
        if let Some(h) = &mut self.head {
            h.weight.iter_mut().for_each(|v| *v *= factor);
            h.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        let dense = [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .all(|t| t.iter().all(|v| v.is_finite()));
        let rows = self.token_rows.values().all(|r| r.iter().all(|v| v.is_finite()));
        let head = self
            .head
            .as_ref()
            .is_none_or(|h| h.weight.iter().chain(&h.bias).all(|v| v.is_finite()));
        dense && rows && head
    }

    /// Dense gradient in [`Params::flatten`] order.
    pub fn to_flat(&self, config: &EncoderConfig) -> Vec<f64> {
        let e = config.embed_dim;
        let mut table = vec![0.0; config.vocab_buckets * e];
        for (&row, g) in &self.token_rows {
            table[row * e..(row + 1) * e].copy_from_slice(g);
        }
        let mut v = table;
        for t in [&self.w1, &self.b1, &self.w2, &self.b2] {
            v.extend_from_slice(t);
        }
        if let Some(h) = &self.head {
            v.extend_from_slice(&h.weight);
            v.extend_from_slice(&h.bias);
        }
        v
    }
}

/// Accumulates into `grad` the gradient of `output . output_grad` for one
/// forward pass.
pub fn backward(params: &Params, config: &EncoderConfig, fwd: &Forward, output_grad: &[f64], grad: &mut Gradient) {
    let e = config.embed_dim;
    let h = config.hidden_dim;
    let o = config.output_dim;

    // through output = z / max(|z|, floor)
    let dz: Vec<f64> = if fwd.z_norm > NORM_FLOOR {
        let proj = dot(&fwd.output, output_grad);
        output_grad
            .iter()
            .zip(&fwd.output)
            .map(|(g, y)| (g - y * proj) / fwd.z_norm)
            .collect()
    } else {
        output_grad.iter().map(|g| g / NORM_FLOOR).collect()
    };

    for (b, d) in grad.b2.iter_mut().zip(&dz) {
        *b += d;
    }
    let mut dhidden = vec![0.0; h];
    for (i, dh) in dhidden.iter_mut().enumerate() {
        let hi = fwd.hidden[i];
        let row = &params.w2[i * o..(i + 1) * o];
        let grow = &mut grad.w2[i * o..(i + 1) * o];
        let mut acc = 0.0;
        for j in 0..o {
            grow[j] += hi * dz[j];
            acc += row[j] * dz[j];
        }
        *dh = acc;
    }

    let dpre: Vec<f64> = dhidden
        .iter()
        .zip(&fwd.hidden)
        .map(|(d, hv)| d * (1.0 - hv * hv))
        .collect();
    for (b, d) in grad.b1.iter_mut().zip(&dpre) {
        *b += d;
    }
    let mut dpooled = vec![0.0; e];
    for (i, dp) in dpooled.iter_mut().enumerate() {
        let pi = fwd.pooled[i];
        let row = &params.w1[i * h..(i + 1) * h];
        let grow = &mut grad.w1[i * h..(i + 1) * h];
        let mut acc = 0.0;
        for j in 0..h {
            grow[j] += pi * dpre[j];
            acc += row[j] * dpre[j];
        }
        *dp = acc;
    }

    if !fwd.tokens.is_empty() {
        let inv = 1.0 / fwd.tokens.len() as f64;
        for &t in &fwd.tokens {
            let row = grad.token_rows.entry(t).or_insert_with(|| vec![0.0; e]);
            for (r, d) in row.iter_mut().zip(&dpooled) {
                *r += d * inv;
            }
        }
    }
}

/// Gradient of `encode(text) . output_grad` with respect to every encoder parameter.
pub fn encode_backward(params: &Params, config: &EncoderConfig, text: &str, output_grad: &[f64]) -> Result<Gradient> {
    if output_grad.len() != config.output_dim {
        return Err(Error::Dimension(format!(
            "output gradient has {} entries, encoder outputs {}",
            output_grad.len(),
            config.output_dim
        )));
    }
    if output_grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("output gradient"));
    }
    let fwd = forward(params, config, text);
    let mut grad = Gradient::zeros_like(config, params);
    backward(params, config, &fwd, output_grad, &mut grad);
    Ok(grad)
}
