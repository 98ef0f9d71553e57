use super::{epoch_order, mean, Stepper, TrainConfig, TrainOutcome};
use crate::encoder::{backward, forward, Checkpoint, Gradient, Phase};
use crate::error::{Error, Result};
use crate::eval::PairDataset;
use crate::losses::cosine_regression;

/// Fits pair cosines to `gold / 5` with squared error.
pub fn adapt_sts(model: &Checkpoint, dataset: &PairDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.rows.is_empty() {
        return Err(Error::Precondition("STS adaptation dataset is empty".into()));
    }
    dataset.check_sts_range()?;

    let config = model.config.clone();
    let mut params = model.params.without_head();
    let n = dataset.rows.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mut stepper = Stepper::new(&params, cfg, (cfg.epochs * batches_per_epoch).max(1));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut losses = Vec::with_capacity(batches_per_epoch);
        for batch in order.chunks(cfg.batch_size) {
            let fa: Vec<_> = batch
                .iter()
                .map(|&i| forward(&params, &config, &dataset.rows[i].text_a))
                .collect();
            let fb: Vec<_> = batch
                .iter()
                .map(|&i| forward(&params, &config, &dataset.rows[i].text_b))
                .collect();
            let gold: Vec<f64> = batch.iter().map(|&i| dataset.rows[i].gold / 5.0).collect();
            let u: Vec<Vec<f64>> = fa.iter().map(|f| f.output.clone()).collect();
            let v: Vec<Vec<f64>> = fb.iter().map(|f| f.output.clone()).collect();
            let out = cosine_regression(&u, &v, &gold)?;

            let mut grad = Gradient::zeros_like(&config, &params);
            for (f, g) in fa.iter().zip(&out.grad_u) {
                backward(&params, &config, f, g, &mut grad);
            }
            for (f, g) in fb.iter().zip(&out.grad_v) {
                backward(&params, &config, f, g, &mut grad);
            }
            stepper.apply(&mut params, &grad)?;
            losses.push(out.loss);
        }
        epoch_losses.push(mean(&losses));
    }

    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after STS adaptation"));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(config, Phase::StsAdapted, params)?,
        steps: stepper.steps(),
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        full_losses: Vec::new(),
    })
}
