use super::{epoch_order, mean, Stepper, TrainConfig, TrainOutcome};
use crate::encoder::{backward, forward, Checkpoint, EncoderConfig, Gradient, Phase};
use crate::error::{Error, Result};
use crate::ontology::ParallelPair;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean over pairs of `|S(target) - T(source)|^2`.
pub fn xlingual_gap(student: &Checkpoint, teacher: &Checkpoint, pairs: &[ParallelPair]) -> f64 {
    let gaps: Vec<f64> = pairs
        .iter()
        .map(|p| {
            sq_dist(
                student.encode(&p.target_text).values(),
                teacher.encode(&p.source_text).values(),
            )
        })
        .collect();
    mean(&gaps)
}

/// Trains a fresh student so that both a source text and its translation land
/// on the frozen teacher's embedding of the source text. Per pair:
/// `0.5 * (|S(e) - T(e)|^2 + |S(f) - T(e)|^2)`, averaged over the batch.
pub fn train_xlingual(
    teacher: &Checkpoint,
    student_cfg: &EncoderConfig,
    pairs: &[ParallelPair],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Precondition("no parallel pairs".into()));
    }
    if student_cfg.output_dim != teacher.config.output_dim {
        return Err(Error::Dimension(format!(
            "student output_dim {} differs from teacher output_dim {}",
            student_cfg.output_dim, teacher.config.output_dim
        )));
    }
    let targets: Vec<Vec<f64>> = pairs
        .iter()
        .map(|p| teacher.encode(&p.source_text).into_vec())
        .collect();

    let student = Checkpoint::base(student_cfg.clone())?;
    let config = student.config;
    let mut params = student.params;
    let n = pairs.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mut stepper = Stepper::new(&params, cfg, (cfg.epochs * batches_per_epoch).max(1));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut losses = Vec::with_capacity(batches_per_epoch);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len() as f64;
            let mut grad = Gradient::zeros_like(&config, &params);
            let mut loss = 0.0;
            for &i in batch {
                let t = &targets[i];
                for text in [&pairs[i].source_text, &pairs[i].target_text] {
                    let f = forward(&params, &config, text);
                    loss += 0.5 * sq_dist(&f.output, t) / b;
                    // d/dS of 0.5 * |S - T|^2 / b
                    let g: Vec<f64> = f.output.iter().zip(t).map(|(s, t)| (s - t) / b).collect();
                    backward(&params, &config, &f, &g, &mut grad);
                }
            }
            stepper.apply(&mut params, &grad)?;
            losses.push(loss);
        }
        epoch_losses.push(mean(&losses));
    }

    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after cross-lingual distillation"));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(config, Phase::XlingualStudent, params)?,
        steps: stepper.steps(),
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        full_losses: Vec::new(),
    })
}
