use std::collections::HashSet;

use super::{epoch_order, mean, Stepper, TrainConfig, TrainOutcome};
use crate::encoder::{backward, forward, Checkpoint, Forward, Gradient, Phase};
use crate::error::{Error, Result};
use crate::losses::info_nce;
use crate::ontology::{KnowledgeGraph, TrainingPair};
use crate::rng;

/// Splits `order` into batches of at most `batch_size` items with no concept
/// repeated inside a batch. When the next item would repeat a concept, the
/// first later item with an unseen concept is swapped into its place; if none
/// exists the batch closes early.
pub fn plan_batches(concepts: &[&str], mut order: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let mut batches = Vec::new();
    let mut i = 0;
    while i < n {
        let start = i;
        let mut seen: HashSet<&str> = HashSet::new();
        while i < n && i - start < batch_size {
            if seen.contains(concepts[order[i]]) {
                match (i + 1..n).find(|&j| !seen.contains(concepts[order[j]])) {
                    Some(j) => order.swap(i, j),
                    None => break,
                }
            }
            seen.insert(concepts[order[i]]);
            i += 1;
        }
        batches.push(order[start..i].to_vec());
    }
    batches
}

/// Batch layout of every epoch of a contrastive run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastivePlan {
    pub epochs: Vec<Vec<Vec<usize>>>,
}

impl ContrastivePlan {
    pub fn new(corpus: &[TrainingPair], cfg: &TrainConfig) -> Result<Self> {
        let concepts: Vec<&str> = corpus.iter().map(TrainingPair::concept_id).collect();
        let epochs = (0..cfg.epochs)
            .map(|e| plan_batches(&concepts, epoch_order(corpus.len(), cfg.seed, e), cfg.batch_size))
            .collect();
        Ok(Self { epochs })
    }

    pub fn total_steps(&self) -> usize {
        self.epochs.iter().map(Vec::len).sum()
    }
}

fn hard_negative_names(kg: &KnowledgeGraph, batch_concepts: &[&str], wanted: usize, seed: u64) -> Result<Vec<String>> {
    let in_batch: HashSet<&str> = batch_concepts.iter().copied().collect();
    let mut chosen: Vec<String> = Vec::new();
    for (i, c) in batch_concepts.iter().enumerate() {
        if chosen.len() >= wanted {
            break;
        }
        for cand in kg.sample_hard_negatives(c, wanted, rng::derive(seed, i as u64))? {
            if !in_batch.contains(cand.as_str()) && !chosen.contains(&cand) {
                chosen.push(cand);
                if chosen.len() >= wanted {
                    break;
                }
            }
        }
    }
    chosen
        .iter()
        .map(|id| kg.concept(id).map(|c| c.canonical_name().to_string()))
        .collect()
}

/// Contrastive grounding: names are attracted to their own descriptions and
/// repelled from the other descriptions in the batch (plus optional ontology
/// hard negatives).
pub fn train_contrastive(
    base: &Checkpoint,
    corpus: &[TrainingPair],
    kg: &KnowledgeGraph,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !matches!(base.phase, Phase::Base | Phase::StsAdapted) {
        return Err(Error::Precondition(format!(
            "contrastive training starts from a base or sts_adapted model, got {}",
            base.phase
        )));
    }
    if corpus.is_empty() {
        return Err(Error::Precondition("contrastive corpus is empty".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Precondition(
            "InfoNCE needs batch_size >= 2 for in-batch negatives".into(),
        ));
    }
    let distinct: HashSet<&str> = corpus.iter().map(TrainingPair::concept_id).collect();
    if distinct.len() < 2 {
        return Err(Error::Precondition(
            "corpus covers a single concept, so batches would have no negatives".into(),
        ));
    }
    if cfg.hard_negatives_per_batch > 0 {
        if let Some(id) = distinct.iter().find(|id| kg.get(id).is_none()) {
            return Err(Error::UnknownConcept(id.to_string()));
        }
    }

    let config = base.config.clone();
    let mut params = base.params.without_head();
    let plan = ContrastivePlan::new(corpus, cfg)?;
    let mut stepper = Stepper::new(&params, cfg, plan.total_steps().max(1));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for batches in &plan.epochs {
        let mut losses = Vec::with_capacity(batches.len());
        for batch in batches {
            let extras_text = if cfg.hard_negatives_per_batch > 0 {
                let concepts: Vec<&str> = batch.iter().map(|&i| corpus[i].concept_id()).collect();
                let seed = rng::derive(cfg.seed ^ 0x4841_5244, stepper.steps() as u64);
                hard_negative_names(kg, &concepts, cfg.hard_negatives_per_batch, seed)?
            } else {
                Vec::new()
            };

            let anchors: Vec<Forward> = batch
                .iter()
                .map(|&i| forward(&params, &config, &corpus[i].anchor.text))
                .collect();
            let positives: Vec<Forward> = batch
                .iter()
                .map(|&i| forward(&params, &config, &corpus[i].positive.text))
                .collect();
            let extras: Vec<Forward> = extras_text.iter().map(|t| forward(&params, &config, t)).collect();

            let outputs = |fs: &[Forward]| fs.iter().map(|f| f.output.clone()).collect::<Vec<_>>();
            let out = info_nce(
                &outputs(&anchors),
                &outputs(&positives),
                &outputs(&extras),
                &cfg.info_nce,
            )?;

            let mut grad = Gradient::zeros_like(&config, &params);
            for (f, g) in anchors.iter().zip(&out.grad_anchors) {
                backward(&params, &config, f, g, &mut grad);
            }
            for (f, g) in positives.iter().zip(&out.grad_positives) {
                backward(&params, &config, f, g, &mut grad);
            }
            for (f, g) in extras.iter().zip(&out.grad_extras) {
                backward(&params, &config, f, g, &mut grad);
            }
            stepper.apply(&mut params, &grad)?;
            losses.push(out.loss);
        }
        epoch_losses.push(mean(&losses));
    }

    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after contrastive training"));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(config, Phase::Contrastive, params)?,
        steps: stepper.steps(),
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        full_losses: Vec::new(),
    })
}
