use std::fmt;
use std::path::{Path, PathBuf};

use ontoembed::config::KvConfig;
use ontoembed::encoder::{load_checkpoint, save_checkpoint, Checkpoint, EncoderConfig};
use ontoembed::eval::{
    eval_bcr, eval_nel, eval_nli_triplets, eval_sts, EvalReport, NelDataset, NliDataset, PairDataset, SynonymPooling,
};
use ontoembed::io::{read_to_string, write_atomic};
use ontoembed::manifest::{manifest_path, ManifestBuilder};
use ontoembed::ontology::{self, corpus_to_jsonl, KnowledgeGraph};
use ontoembed::pipeline::{self, PipelineConfig};
use ontoembed::soup::{greedy_soup, uniform_soup, SoupCandidate};
use ontoembed::synthetic::{World, WorldConfig};
use ontoembed::trainer::{
    adapt_sts, build_targets, train_contrastive, train_self_distill, train_xlingual, TrainConfig, TrainOutcome,
};

use crate::{
    Benchmark, Command, ConfigArgs, EmbedArgs, EvalArgs, InitArgs, OntologyArgs, PipelineArgs, Pooling, SoupArgs,
    SoupMetric, SoupStrategy, SynthArgs, TrainCommand, TrainCommon, VerbalizeArgs, EXIT_DOMAIN, EXIT_IO, EXIT_USAGE,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(ontoembed::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Core(_) => EXIT_DOMAIN,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<ontoembed::Error> for CliError {
    fn from(e: ontoembed::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn args() -> Vec<String> {
    std::env::args().skip(1).collect()
}

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Synth(a) => synth(a),
        Command::Init(a) => init(a),
        Command::Verbalize(a) => verbalize(a),
        Command::Train(t) => train(t),
        Command::Soup(a) => soup(a),
        Command::Eval(a) => eval(a),
        Command::Embed(a) => embed(a),
        Command::Pipeline(a) => run_pipeline(a),
    }
}

fn load_kv(c: &ConfigArgs) -> CliResult<KvConfig> {
    let mut kv = match &c.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    for s in &c.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    Ok(kv)
}

fn train_config(common: &TrainCommon, mut cfg: TrainConfig) -> CliResult<TrainConfig> {
    let kv = load_kv(&common.config)?;
    cfg.apply_kv(&kv)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = common.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(b) = common.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str, why: &str) -> CliResult<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("{flag} is required {why}")))
}

fn load_kg(o: &OntologyArgs, why: &str, manifest: &mut ManifestBuilder) -> CliResult<KnowledgeGraph> {
    let path = require(&o.ontology, "--ontology", why)?;
    let mut kg = ontology::load_ontology(path)?;
    manifest.input(path)?;
    if let Some(t) = &o.templates {
        kg = kg.with_templates(ontology::load_templates(t)?);
        manifest.input(t)?;
    }
    if let Some(g) = &o.glossary {
        let merge = kg.merge_glossary(g)?;
        log::info!(
            "glossary: {} definitions merged, {} unknown ids skipped",
            merge.merged,
            merge.skipped.len()
        );
        manifest.input(g)?;
    }
    Ok(kg)
}

fn load_model(path: &Path, manifest: &mut ManifestBuilder) -> CliResult<Checkpoint> {
    let ck = load_checkpoint(path)?;
    manifest.input(path)?;
    Ok(ck)
}

fn finish(manifest: ManifestBuilder, out: &Path) -> CliResult {
    let mut manifest = manifest;
    manifest.output(out)?;
    manifest.finish().write(&manifest_path(out))?;
    Ok(())
}

fn synth(a: SynthArgs) -> CliResult {
    let world = World::generate(&WorldConfig {
        seed: a.seed,
        ..WorldConfig::default()
    })?;
    let files = world.write(&a.out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn init(a: InitArgs) -> CliResult {
    let kv = load_kv(&a.config)?;
    let mut cfg = EncoderConfig::default();
    cfg.apply_kv(&kv)?;
    if let Some(s) = a.seed {
        cfg.init_seed = s;
    }
    let mut m = ManifestBuilder::new("init", args(), cfg.init_seed);
    m.config(&cfg.to_kv());
    let ck = Checkpoint::base(cfg)?;
    save_checkpoint(&a.out, &ck)?;
    m.metric("param_count", ck.params.len());
    finish(m, &a.out)?;
    println!("wrote {} ({} parameters)", a.out.display(), ck.params.len());
    Ok(())
}

fn verbalize(a: VerbalizeArgs) -> CliResult {
    let mut m = ManifestBuilder::new("verbalize", args(), a.seed);
    require(&a.ontology.templates, "--templates", "to verbalize relations")?;
    let kg = load_kg(&a.ontology, "to verbalize", &mut m)?;
    let corpus = kg.build_corpus(a.per_concept, a.seed);
    write_atomic(&a.out, corpus_to_jsonl(&corpus).as_bytes())?;
    m.metric("pairs", corpus.len()).metric("concepts", kg.len());
    finish(m, &a.out)?;
    println!("{} training pairs for {} concepts", corpus.len(), kg.len());
    Ok(())
}

fn report_training(
    name: &str,
    outcome: &TrainOutcome,
    cfg: &TrainConfig,
    mut m: ManifestBuilder,
    out: &Path,
) -> CliResult {
    save_checkpoint(out, &outcome.checkpoint)?;
    m.config(&cfg.to_kv())
        .metric("steps", outcome.steps)
        .metric("final_loss", outcome.final_loss)
        .metric("epoch_losses", &outcome.epoch_losses)
        .metric("phase", outcome.checkpoint.phase.as_str())
        .metric("model_digest", outcome.checkpoint.digest());
    if !outcome.full_losses.is_empty() {
        m.metric("full_losses", &outcome.full_losses);
    }
    finish(m, out)?;
    println!(
        "{name}: final loss {:.6} after {} steps",
        outcome.final_loss, outcome.steps
    );
    Ok(())
}

fn train(t: TrainCommand) -> CliResult {
    match t {
        TrainCommand::Contrastive {
            model,
            corpus,
            ontology,
            common,
        } => {
            let cfg = train_config(&common, TrainConfig::contrastive())?;
            let mut m = ManifestBuilder::new("train contrastive", args(), cfg.seed);
            let base = load_model(&model, &mut m)?;
            let pairs = ontology::load_corpus(&corpus)?;
            m.input(&corpus)?;
            let kg = if ontology.ontology.is_some() {
                load_kg(&ontology, "", &mut m)?
            } else if cfg.hard_negatives_per_batch > 0 {
                return Err(usage("--ontology is required when hard_negatives_per_batch > 0"));
            } else {
                KnowledgeGraph::from_concepts(Vec::new())?
            };
            let out = train_contrastive(&base, &pairs, &kg, &cfg)?;
            report_training("contrastive", &out, &cfg, m, &common.out)
        }
        TrainCommand::Sts { model, data, common } => {
            let cfg = train_config(&common, TrainConfig::default())?;
            let mut m = ManifestBuilder::new("train sts", args(), cfg.seed);
            let base = load_model(&model, &mut m)?;
            let ds = PairDataset::load(&data)?;
            m.input(&data)?;
            let out = adapt_sts(&base, &ds, &cfg)?;
            report_training("sts", &out, &cfg, m, &common.out)
        }
        TrainCommand::SelfDistill {
            base,
            teacher,
            ontology,
            target_dim,
            common,
        } => {
            let cfg = train_config(&common, TrainConfig::self_distill())?;
            let mut m = ManifestBuilder::new("train self-distill", args(), cfg.seed);
            let base = load_model(&base, &mut m)?;
            let teacher = load_model(&teacher, &mut m)?;
            let kg = load_kg(&ontology, "for self-distillation", &mut m)?;
            if !matches!(base.phase, ontoembed::Phase::Base | ontoembed::Phase::StsAdapted) {
                return Err(ontoembed::Error::Precondition(format!(
                    "self-distillation base must not have undergone the contrastive phase (got {})",
                    base.phase
                ))
                .into());
            }
            let (_, targets) = build_targets(&teacher, &kg, target_dim)?;
            let out = train_self_distill(&base, &targets, &kg, &cfg)?;
            m.metric("target_dim", target_dim);
            report_training("self-distill", &out, &cfg, m, &common.out)
        }
        TrainCommand::Xlingual {
            teacher,
            pairs,
            student_seed,
            common,
        } => {
            let cfg = train_config(&common, TrainConfig::xlingual())?;
            let mut m = ManifestBuilder::new("train xlingual", args(), cfg.seed);
            let teacher = load_model(&teacher, &mut m)?;
            let parallel = ontology::load_parallel_pairs(&pairs)?;
            m.input(&pairs)?;
            let mut student_cfg = teacher.config.clone();
            student_cfg.init_seed = student_seed.unwrap_or(cfg.seed);
            let out = train_xlingual(&teacher, &student_cfg, &parallel, &cfg)?;
            m.metric("student_init_seed", student_cfg.init_seed);
            report_training("xlingual", &out, &cfg, m, &common.out)
        }
    }
}

type Evaluator = Box<dyn Fn(&Checkpoint) -> ontoembed::Result<f64>>;

fn soup(a: SoupArgs) -> CliResult {
    let mut m = ManifestBuilder::new("soup", args(), 0);
    let mut entries: Vec<(PathBuf, Option<f64>, String)> = Vec::new();
    if let Some(man) = &a.manifest {
        let content = read_to_string(man)?;
        m.input(man)?;
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&f.len()) {
                return Err(ontoembed::Error::parse(man, i + 1, "expected checkpoint \\t score [\\t label]").into());
            }
            let score: f64 = f[1]
                .trim()
                .parse()
                .map_err(|e| ontoembed::Error::parse(man, i + 1, format!("bad score: {e}")))?;
            let path = man.parent().unwrap_or(Path::new(".")).join(f[0]);
            let label = f.get(2).map(|s| s.to_string()).unwrap_or_else(|| f[0].to_string());
            entries.push((path, Some(score), label));
        }
    } else {
        for p in &a.models {
            entries.push((p.clone(), None, p.display().to_string()));
        }
    }
    if entries.is_empty() {
        return Err(usage("give --models or --manifest with at least one checkpoint"));
    }

    let kg = if a.metric == SoupMetric::NelTop1 && (a.strategy == SoupStrategy::Greedy || a.manifest.is_none()) {
        Some(load_kg(&a.ontology, "for --metric nel-top1", &mut m)?)
    } else {
        None
    };
    let needs_val = a.strategy == SoupStrategy::Greedy;
    let val_path = if needs_val {
        Some(require(&a.val, "--val", "for greedy soups")?.to_path_buf())
    } else {
        None
    };
    let evaluator: Option<Evaluator> = match &val_path {
        None => None,
        Some(p) => {
            m.input(p)?;
            Some(match a.metric {
                SoupMetric::Pearson => {
                    let ds = PairDataset::load(p)?;
                    Box::new(move |c| Ok(eval_sts(c, &ds)?.value))
                }
                SoupMetric::Spearman => {
                    let ds = PairDataset::load(p)?;
                    Box::new(move |c| Ok(eval_bcr(c, &ds)?.value))
                }
                SoupMetric::NelTop1 => {
                    let ds = NelDataset::load(p)?;
                    let kg = kg.clone().expect("graph loaded for nel");
                    Box::new(move |c| Ok(eval_nel(c, &kg, &ds, &[1], SynonymPooling::Max)?[0].value))
                }
            })
        }
    };

    let mut candidates = Vec::with_capacity(entries.len());
    for (path, score, label) in entries {
        let ck = load_model(&path, &mut m)?;
        let validation_score = match (score, &evaluator) {
            (Some(s), _) => s,
            (None, Some(f)) => f(&ck)?,
            (None, None) => 0.0,
        };
        candidates.push(SoupCandidate {
            checkpoint: ck,
            validation_score,
            label,
        });
    }

    let (checkpoint, report) = match a.strategy {
        SoupStrategy::Uniform => {
            let ck = uniform_soup(&candidates)?;
            let labels: Vec<&str> = candidates.iter().map(|c| c.label.as_str()).collect();
            (
                ck,
                serde_json::json!({ "strategy": "uniform", "kept": labels, "rejected": [] }),
            )
        }
        SoupStrategy::Greedy => {
            let f = evaluator.as_ref().expect("validation data loaded");
            let g = greedy_soup(&candidates, |c| f(c))?;
            let rejected: Vec<&str> = g.trials.iter().filter(|t| !t.kept).map(|t| t.label.as_str()).collect();
            let best = g.trials[0].soup_score;
            let report = serde_json::json!({
                "strategy": "greedy",
                "metric": format!("{:?}", a.metric).to_lowercase(),
                "kept": g.kept,
                "rejected": rejected,
                "trials": g.trials,
                "soup_score": g.score,
                "best_single_score": best,
            });
            (g.checkpoint, report)
        }
    };
    save_checkpoint(&a.out, &checkpoint)?;
    let report_path = a.out.with_extension("soup.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_atomic(&report_path, text.as_bytes())?;
    m.output(&report_path)?;
    m.metric("soup", &report);
    finish(m, &a.out)?;
    print!("{text}");
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let mut m = ManifestBuilder::new("eval", args(), 0);
    let model = load_model(&a.model, &mut m)?;
    let reports: Vec<EvalReport> = match a.benchmark {
        Benchmark::Sts => vec![eval_sts(&model, &PairDataset::load(&a.data)?)?],
        Benchmark::Bcr => vec![eval_bcr(&model, &PairDataset::load(&a.data)?)?],
        Benchmark::Nli => vec![eval_nli_triplets(&model, &NliDataset::load(&a.data)?)?],
        Benchmark::Nel => {
            let kg = load_kg(&a.ontology, "for nel", &mut m)?;
            let pooling = match a.pooling {
                Pooling::Max => SynonymPooling::Max,
                Pooling::Mean => SynonymPooling::Mean,
            };
            eval_nel(&model, &kg, &NelDataset::load(&a.data)?, &a.topk, pooling)?
        }
    };
    m.input(&a.data)?;
    let text: String = reports.iter().map(|r| r.to_json_line() + "\n").collect();
    print!("{text}");
    if let Some(out) = &a.out {
        write_atomic(out, text.as_bytes())?;
        m.metric("reports", &reports);
        finish(m, out)?;
    }
    Ok(())
}

/// One TSV row: the text, a tab, and the comma-joined vector at 17 significant digits.
pub fn embedding_row(text: &str, v: &[f64]) -> String {
    let nums: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
    format!("{text}\t{}\n", nums.join(","))
}

fn embed(a: EmbedArgs) -> CliResult {
    let mut m = ManifestBuilder::new("embed", args(), 0);
    let model = load_model(&a.model, &mut m)?;
    let content = read_to_string(&a.input)?;
    m.input(&a.input)?;
    let mut out = String::new();
    let mut n = 0usize;
    for line in content.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        out.push_str(&embedding_row(line, model.encode(line).values()));
        n += 1;
    }
    write_atomic(&a.out, out.as_bytes())?;
    m.metric("rows", n);
    finish(m, &a.out)?;
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> CliResult {
    let cfg_path = require(&a.config.config, "--config", "for the pipeline")?.to_path_buf();
    let mut kv = load_kv(&a.config)?;
    if let Some(s) = a.seed {
        kv.set("seed", s.to_string());
    }
    let base_dir = cfg_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let cfg = PipelineConfig::from_kv(&kv, &base_dir)?;
    let mut m = ManifestBuilder::new("pipeline", args(), cfg.seed);
    m.input(&cfg_path)?;
    let run = pipeline::run_pipeline(&cfg, Some(&a.out))?;
    let fixtures = pipeline::Fixtures::load(&cfg.data_dir)?;
    for f in &fixtures.files {
        m.input(f)?;
    }
    for f in pipeline::output_files(&run, &a.out) {
        m.output(&f)?;
    }
    m.config(&cfg.to_kv());
    for r in &run.rows {
        m.metric(
            format!("{}/{}/{}", r.phase, r.report.benchmark, r.report.metric),
            r.report.value,
        );
    }
    m.metric("soup_kept", &run.soup.kept);
    m.finish().write(&a.out.join("manifest.json"))?;
    print!("{}", run.table());
    Ok(())
}
