//! Model soups: element-wise averages of compatible encoders.

use serde::{Deserialize, Serialize};

use crate::encoder::{Checkpoint, Params, Phase};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SoupCandidate {
    pub checkpoint: Checkpoint,
    /// Higher is better.
    pub validation_score: f64,
    pub label: String,
}

fn check_compatible(candidates: &[&SoupCandidate]) -> Result<()> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::Precondition("a soup needs at least one ingredient".into()))?;
    for c in &candidates[1..] {
        if !first.checkpoint.config.soup_compatible(&c.checkpoint.config) {
            return Err(Error::Validation(format!(
                "{:?} and {:?} have incompatible encoder configs",
                first.label, c.label
            )));
        }
        if first.checkpoint.phase != c.checkpoint.phase {
            return Err(Error::Validation(format!(
                "{:?} ({}) and {:?} ({}) come from different phases",
                first.label, first.checkpoint.phase, c.label, c.checkpoint.phase
            )));
        }
    }
    Ok(())
}

fn average(mut members: Vec<&SoupCandidate>) -> Result<Checkpoint> {
    check_compatible(&members)?;
    members.sort_by(|a, b| a.label.cmp(&b.label));
    let config = members[0].checkpoint.config.clone();
    // running mean keeps averages of identical values bit-exact
    let mut acc = members[0].checkpoint.params.without_head().flatten();
    for (i, m) in members.iter().enumerate().skip(1) {
        let inv = (i + 1) as f64;
        let v = m.checkpoint.params.without_head().flatten();
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += (x - *a) / inv;
        }
    }
    let params = Params::unflatten(&config, &acc)?;
    Checkpoint::new(config, Phase::Souped, params)
}

/// Element-wise mean of every candidate's encoder parameters (heads dropped).
pub fn uniform_soup(candidates: &[SoupCandidate]) -> Result<Checkpoint> {
    average(candidates.iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoupTrial {
    pub label: String,
    pub validation_score: f64,
    /// Score of the soup with this ingredient added (the starting ingredient's
    /// own score for the first entry).
    pub soup_score: f64,
    pub kept: bool,
}

#[derive(Clone, Debug)]
pub struct GreedySoup {
    pub checkpoint: Checkpoint,
    pub kept: Vec<String>,
    pub trials: Vec<SoupTrial>,
    pub score: f64,
}

/// Greedy soup: visit candidates by descending validation score (ties by
/// label) and keep each one whose addition does not lower `evaluate`.
pub fn greedy_soup(
    candidates: &[SoupCandidate],
    mut evaluate: impl FnMut(&Checkpoint) -> Result<f64>,
) -> Result<GreedySoup> {
    let mut order: Vec<&SoupCandidate> = candidates.iter().collect();
    check_compatible(&order)?;
    order.sort_by(|a, b| {
        b.validation_score
            .total_cmp(&a.validation_score)
            .then_with(|| a.label.cmp(&b.label))
    });

    let mut pool = vec![order[0]];
    let mut current = average(pool.clone())?;
    let mut score = evaluate(&current)?;
    let mut trials = vec![SoupTrial {
        label: order[0].label.clone(),
        validation_score: order[0].validation_score,
        soup_score: score,
        kept: true,
    }];

    for cand in &order[1..] {
        let mut tentative_pool = pool.clone();
        tentative_pool.push(cand);
        let tentative = average(tentative_pool.clone())?;
        let s = evaluate(&tentative)?;
        let keep = s >= score;
        trials.push(SoupTrial {
            label: cand.label.clone(),
            validation_score: cand.validation_score,
            soup_score: s,
            kept: keep,
        });
        if keep {
            pool = tentative_pool;
            current = tentative;
            score = s;
        }
    }

    Ok(GreedySoup {
        checkpoint: current,
        kept: pool.iter().map(|c| c.label.clone()).collect(),
        trials,
        score,
    })
}
