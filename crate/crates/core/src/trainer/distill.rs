use super::{epoch_order, mean, pca_fit, PcaModel, Stepper, TrainConfig, TrainOutcome};
use crate::encoder::{backward, forward, Checkpoint, Gradient, Head, HeadGrad, Phase};
use crate::error::{Error, Result};
use crate::losses::mse;
use crate::ontology::KnowledgeGraph;
use crate::rng;

/// Dimension of the PCA-reduced regression targets.
pub const DEFAULT_TARGET_DIM: usize = 64;

const HEAD_STREAM: u64 = 0x4845_4144;

#[derive(Clone, Debug, PartialEq)]
pub struct DistillTarget {
    pub concept_id: String,
    pub target: Vec<f64>,
}

/// Teacher representation of a concept: the mean of the (unit-norm) embeddings
/// of its canonical name and canonical definition.
pub fn teacher_raw(teacher: &Checkpoint, kg: &KnowledgeGraph, concept_id: &str) -> Result<Vec<f64>> {
    let c = kg.concept(concept_id)?;
    let name = teacher.encode(c.canonical_name());
    let def = teacher.encode(&kg.canonical_definition(concept_id)?);
    Ok(name
        .values()
        .iter()
        .zip(def.values())
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Fits a `k`-component PCA on the teacher representations of every concept
/// and projects each one to obtain its regression target.
pub fn build_targets(teacher: &Checkpoint, kg: &KnowledgeGraph, k: usize) -> Result<(PcaModel, Vec<DistillTarget>)> {
    if !matches!(teacher.phase, Phase::Contrastive | Phase::StsAdapted) {
        return Err(Error::Precondition(format!(
            "distillation teacher must be contrastive or sts_adapted, got {}",
            teacher.phase
        )));
    }
    if kg.is_empty() {
        return Err(Error::Precondition("knowledge graph is empty".into()));
    }
    let ids: Vec<&str> = kg.concepts().map(|c| c.id.as_str()).collect();
    let raws = ids
        .iter()
        .map(|id| teacher_raw(teacher, kg, id))
        .collect::<Result<Vec<_>>>()?;
    let pca = pca_fit(&raws, k)?;
    let targets = ids
        .iter()
        .zip(&raws)
        .map(|(id, raw)| {
            Ok(DistillTarget {
                concept_id: id.to_string(),
                target: pca.project(raw)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pca, targets))
}

/// Every textual variant of every targeted concept, paired with the index of
/// its concept's target.
pub fn distill_examples(kg: &KnowledgeGraph, targets: &[DistillTarget]) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for (ti, t) in targets.iter().enumerate() {
        for d in kg.descriptions(&t.concept_id)? {
            out.push((d.text, ti));
        }
    }
    Ok(out)
}

fn full_loss(model: &Checkpoint, examples: &[(String, usize)], targets: &[DistillTarget]) -> Result<f64> {
    let head = model.params.head.as_ref().expect("distillation model carries a head");
    let preds: Vec<Vec<f64>> = examples
        .iter()
        .map(|(text, _)| head.forward(model.encode(text).values()))
        .collect();
    let golds: Vec<Vec<f64>> = examples.iter().map(|(_, ti)| targets[*ti].target.clone()).collect();
    Ok(mse(&preds, &golds)?.0)
}

/// Regresses a freshly seeded projection head on top of a not-yet-contrastive
/// encoder onto the distillation targets. Gradients reach both head and encoder.
pub fn train_self_distill(
    base: &Checkpoint,
    targets: &[DistillTarget],
    kg: &KnowledgeGraph,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !matches!(base.phase, Phase::Base | Phase::StsAdapted) {
        return Err(Error::Precondition(format!(
            "self-distillation needs a model that has not undergone the contrastive phase, got {}",
            base.phase
        )));
    }
    if targets.is_empty() {
        return Err(Error::Precondition("no distillation targets".into()));
    }
    let k = targets[0].target.len();
    if k == 0 || targets.iter().any(|t| t.target.len() != k) {
        return Err(Error::Dimension(
            "distillation targets have inconsistent dimension".into(),
        ));
    }

    let config = base.config.clone();
    let mut params = base.params.without_head();
    params.head = Some(Head::init(
        config.output_dim,
        k,
        config.init_scale,
        rng::derive(cfg.seed, HEAD_STREAM),
    ));

    let examples = distill_examples(kg, targets)?;
    let n = examples.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let mut stepper = Stepper::new(&params, cfg, (cfg.epochs * batches_per_epoch).max(1));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut full_losses = Vec::with_capacity(cfg.epochs + 1);
    let snapshot = |params: &crate::encoder::Params| -> Result<f64> {
        let model = Checkpoint::new(config.clone(), Phase::SelfDistilled, params.clone())?;
        full_loss(&model, &examples, targets)
    };
    full_losses.push(snapshot(&params)?);

    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut losses = Vec::with_capacity(batches_per_epoch);
        for batch in order.chunks(cfg.batch_size) {
            let head = params.head.as_ref().expect("head attached");
            let fwds: Vec<_> = batch
                .iter()
                .map(|&i| forward(&params, &config, &examples[i].0))
                .collect();
            let preds: Vec<Vec<f64>> = fwds.iter().map(|f| head.forward(&f.output)).collect();
            let golds: Vec<Vec<f64>> = batch.iter().map(|&i| targets[examples[i].1].target.clone()).collect();
            let (loss, dpred) = mse(&preds, &golds)?;

            let mut grad = Gradient::zeros_like(&config, &params);
            let mut head_grad = grad.head.take().unwrap_or(HeadGrad {
                weight: vec![0.0; head.weight.len()],
                bias: vec![0.0; k],
            });
            for (f, dy) in fwds.iter().zip(&dpred) {
                let dout = head.backward(&f.output, dy, &mut head_grad);
                backward(&params, &config, f, &dout, &mut grad);
            }
            grad.head = Some(head_grad);
            stepper.apply(&mut params, &grad)?;
            losses.push(loss);
        }
        epoch_losses.push(mean(&losses));
        full_losses.push(snapshot(&params)?);
    }

    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after self-distillation"));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(config, Phase::SelfDistilled, params)?,
        steps: stepper.steps(),
        final_loss: epoch_losses.last().copied().unwrap_or(f64::NAN),
        epoch_losses,
        full_losses,
    })
}

/// Mean squared error of a head-bearing model over all distillation examples.
pub fn distill_loss(model: &Checkpoint, kg: &KnowledgeGraph, targets: &[DistillTarget]) -> Result<f64> {
    if model.params.head.is_none() {
        return Err(Error::Precondition("model has no projection head".into()));
    }
    full_loss(model, &distill_examples(kg, targets)?, targets)
}
