//! Benchmarks: STS (Pearson), BCR (Spearman), entity linking (top-k accuracy)
//! and NLI triplet accuracy.
//!
//! Evaluations never mutate the model or graph. Rows are processed in file
//! order so every report is bit-deterministic.

mod datasets;
mod metrics;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::{dot, Checkpoint};
use crate::error::{Error, Result};
use crate::ontology::KnowledgeGraph;

pub use datasets::{NelDataset, NelRow, NliDataset, NliRow, PairDataset, PairRow};
pub use metrics::{average_ranks, pearson, spearman};

/// Anything that maps text to a fixed-length vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> Vec<f64>;

    /// Stable identity of the model weights.
    fn digest(&self) -> String;
}

impl Embedder for Checkpoint {
    fn embed(&self, text: &str) -> Vec<f64> {
        self.encode(text).into_vec()
    }

    fn digest(&self) -> String {
        Checkpoint::digest(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub model_digest: String,
    pub data_digest: String,
}

impl EvalReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn cosine_scores(model: &dyn Embedder, dataset: &PairDataset) -> Vec<f64> {
    dataset
        .rows
        .iter()
        .map(|r| dot(&model.embed(&r.text_a), &model.embed(&r.text_b)))
        .collect()
}

fn correlation_report(
    model: &dyn Embedder,
    dataset: &PairDataset,
    metric: &str,
    f: fn(&[f64], &[f64]) -> Result<f64>,
) -> Result<EvalReport> {
    if dataset.rows.len() < 2 {
        return Err(Error::Precondition(format!("{} has fewer than 2 rows", dataset.name)));
    }
    let predicted = cosine_scores(model, dataset);
    let gold = dataset.gold();
    let value = f(&predicted, &gold).map_err(|e| match e {
        Error::Degenerate(msg) if msg.starts_with("first") => {
            Error::Degenerate(format!("model gives constant similarity on {}", dataset.name))
        }
        Error::Degenerate(_) => Error::Validation(format!("{} has constant gold scores", dataset.name)),
        other => other,
    })?;
    Ok(EvalReport {
        benchmark: dataset.name.clone(),
        metric: metric.to_string(),
        value,
        n: dataset.rows.len(),
        model_digest: model.digest(),
        data_digest: dataset.digest(),
    })
}

/// Pearson correlation between pair cosines and gold scores.
pub fn eval_sts(model: &dyn Embedder, dataset: &PairDataset) -> Result<EvalReport> {
    correlation_report(model, dataset, "pearson", pearson)
}

/// Spearman correlation between pair cosines and gold relatedness.
pub fn eval_bcr(model: &dyn Embedder, dataset: &PairDataset) -> Result<EvalReport> {
    correlation_report(model, dataset, "spearman", spearman)
}

/// How similarities to a concept's synonyms combine into one concept score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynonymPooling {
    #[default]
    Max,
    Mean,
}

/// Exact nearest-neighbour index over every name of every concept.
pub struct NelIndex {
    pub entries: Vec<(Vec<f64>, String)>,
}

impl NelIndex {
    pub fn build(model: &dyn Embedder, kg: &KnowledgeGraph) -> Result<Self> {
        if kg.is_empty() {
            return Err(Error::Precondition("cannot index an empty knowledge graph".into()));
        }
        let entries = kg
            .concepts()
            .flat_map(|c| c.names.iter().map(move |n| (n, &c.id)))
            .map(|(name, id)| (model.embed(name), id.clone()))
            .collect();
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concepts ranked by pooled cosine, best first; ties go to the smaller id.
    pub fn rank(&self, query: &[f64], pooling: SynonymPooling) -> Vec<(String, f64)> {
        let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for (emb, id) in &self.entries {
            let s = dot(query, emb);
            let slot = acc.entry(id.as_str()).or_insert(match pooling {
                SynonymPooling::Max => (f64::NEG_INFINITY, 0),
                SynonymPooling::Mean => (0.0, 0),
            });
            match pooling {
                SynonymPooling::Max => slot.0 = slot.0.max(s),
                SynonymPooling::Mean => slot.0 += s,
            }
            slot.1 += 1;
        }
        let mut ranked: Vec<(String, f64)> = acc
            .into_iter()
            .map(|(id, (s, n))| {
                let score = match pooling {
                    SynonymPooling::Max => s,
                    SynonymPooling::Mean => s / n as f64,
                };
                (id.to_string(), score)
            })
            .collect();
        // BTreeMap order is ascending id; a stable sort keeps it among ties.
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
        ranked
    }
}

/// Top-k linking accuracy, one report per entry of `k_list`.
pub fn eval_nel(
    model: &dyn Embedder,
    kg: &KnowledgeGraph,
    dataset: &NelDataset,
    k_list: &[usize],
    pooling: SynonymPooling,
) -> Result<Vec<EvalReport>> {
    if let Some(r) = dataset.rows.iter().find(|r| kg.get(&r.concept_id).is_none()) {
        return Err(Error::UnknownConcept(r.concept_id.clone()));
    }
    if dataset.rows.is_empty() {
        return Err(Error::Precondition(format!("{} has no rows", dataset.name)));
    }
    if k_list.contains(&0) {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    let index = NelIndex::build(model, kg)?;
    let positions: Vec<usize> = dataset
        .rows
        .iter()
        .map(|r| {
            let ranked = index.rank(&model.embed(&r.mention), pooling);
            ranked
                .iter()
                .position(|(id, _)| *id == r.concept_id)
                .expect("gold id is in the graph")
        })
        .collect();
    let model_digest = model.digest();
    let data_digest = dataset.digest();
    Ok(k_list
        .iter()
        .map(|&k| {
            let hits = positions.iter().filter(|&&p| p < k).count();
            EvalReport {
                benchmark: dataset.name.clone(),
                metric: format!("top{k}"),
                value: hits as f64 / positions.len() as f64,
                n: positions.len(),
                model_digest: model_digest.clone(),
                data_digest: data_digest.clone(),
            }
        })
        .collect())
}

/// Fraction of triplets whose anchor is strictly closer to the entailed text
/// than to the contradicted one.
pub fn eval_nli_triplets(model: &dyn Embedder, dataset: &NliDataset) -> Result<EvalReport> {
    if dataset.rows.is_empty() {
        return Err(Error::Precondition(format!("{} has no rows", dataset.name)));
    }
    let wins = dataset
        .rows
        .iter()
        .filter(|r| {
            let a = model.embed(&r.anchor);
            dot(&a, &model.embed(&r.entailed)) > dot(&a, &model.embed(&r.contradicted))
        })
        .count();
    Ok(EvalReport {
        benchmark: dataset.name.clone(),
        metric: "accuracy".into(),
        value: wins as f64 / dataset.rows.len() as f64,
        n: dataset.rows.len(),
        model_digest: model.digest(),
        data_digest: dataset.digest(),
    })
}
