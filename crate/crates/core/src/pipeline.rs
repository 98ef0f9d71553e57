//! End-to-end run over a fixture directory:
//! STS adaptation, contrastive grounding, second STS adaptation, several
//! self-distillation runs, greedy soup, evaluation of every phase, and an
//! optional cross-lingual student.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::encoder::{save_checkpoint, Checkpoint, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{
    eval_bcr, eval_nel, eval_nli_triplets, eval_sts, EvalReport, NelDataset, NliDataset, PairDataset, SynonymPooling,
};
use crate::io::{sha256_hex, write_atomic};
use crate::ontology::{self, corpus_to_jsonl, KnowledgeGraph, ParallelPair};
use crate::rng;
use crate::soup::{greedy_soup, SoupCandidate, SoupTrial};
use crate::synthetic;
use crate::trainer::{
    adapt_sts, build_targets, train_contrastive, train_self_distill, train_xlingual, xlingual_gap, TrainConfig,
    TrainOutcome, DEFAULT_TARGET_DIM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherChoice {
    /// Contrastive model after the second STS adaptation.
    Adapted,
    /// Contrastive model as it leaves the contrastive phase.
    Contrastive,
}

impl FromStr for TeacherChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adapted" => Ok(Self::Adapted),
            "contrastive" => Ok(Self::Contrastive),
            other => Err(format!("expected adapted or contrastive, got {other:?}")),
        }
    }
}

fn parse_pooling(s: &str) -> Result<SynonymPooling> {
    match s {
        "max" => Ok(SynonymPooling::Max),
        "mean" => Ok(SynonymPooling::Mean),
        other => Err(Error::Config(format!(
            "nel_pooling: expected max or mean, got {other:?}"
        ))),
    }
}

fn parse_k_list(s: &str) -> Result<Vec<usize>> {
    let ks = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("bad k {t:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be positive".into()));
    }
    Ok(ks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub adapt: TrainConfig,
    pub contrastive: TrainConfig,
    pub distill: TrainConfig,
    pub xlingual: TrainConfig,
    pub per_concept: usize,
    pub target_dim: usize,
    pub soup_size: usize,
    pub second_adaptation: bool,
    pub teacher: TeacherChoice,
    pub nel_topk: Vec<usize>,
    pub nel_pooling: SynonymPooling,
    pub run_xlingual: bool,
}

const SECTIONS: &[&str] = &["encoder", "adapt", "contrastive", "distill", "xlingual"];
const TOP_LEVEL: &[&str] = &[
    "data_dir",
    "seed",
    "per_concept",
    "target_dim",
    "soup_size",
    "second_adaptation",
    "teacher",
    "nel_topk",
    "nel_pooling",
    "run_xlingual",
];

impl PipelineConfig {
    pub fn new(data_dir: impl Into<PathBuf>, seed: u64) -> Self {
        let mut cfg = Self {
            data_dir: data_dir.into(),
            seed,
            encoder: EncoderConfig::default(),
            adapt: TrainConfig::default(),
            contrastive: TrainConfig::contrastive(),
            distill: TrainConfig::self_distill(),
            xlingual: TrainConfig::xlingual(),
            per_concept: 2,
            target_dim: DEFAULT_TARGET_DIM,
            soup_size: 7,
            second_adaptation: true,
            teacher: TeacherChoice::Adapted,
            nel_topk: vec![1, 5],
            nel_pooling: SynonymPooling::Max,
            run_xlingual: true,
        };
        cfg.derive_seeds(&KvConfig::default());
        cfg
    }

    /// Seeds not pinned in `kv` are derived from the pipeline seed.
    fn derive_seeds(&mut self, kv: &KvConfig) {
        let s = self.seed;
        if kv.get_str("encoder.init_seed").is_none() {
            self.encoder.init_seed = s;
        }
        let phases: [(&str, &mut TrainConfig, u64); 4] = [
            ("adapt", &mut self.adapt, 1),
            ("contrastive", &mut self.contrastive, 2),
            ("distill", &mut self.distill, 3),
            ("xlingual", &mut self.xlingual, 4),
        ];
        for (name, tc, stream) in phases {
            if kv.get_str(&format!("{name}.seed")).is_none() {
                tc.seed = rng::derive(s, stream);
            }
        }
    }

    /// Reads a pipeline config; `data_dir` is resolved against `base_dir`.
    pub fn from_kv(kv: &KvConfig, base_dir: &Path) -> Result<Self> {
        for k in kv.keys() {
            let known = match k.split_once('.') {
                Some((section, _)) => SECTIONS.contains(&section),
                None => TOP_LEVEL.contains(&k),
            };
            if !known {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        let data_dir = kv
            .get_str("data_dir")
            .ok_or_else(|| Error::Config("data_dir is required".into()))?;
        let seed = kv.get("seed")?.unwrap_or(0);
        let mut cfg = Self::new(base_dir.join(data_dir), seed);
        cfg.encoder.apply_kv(&kv.section("encoder"))?;
        cfg.adapt.apply_kv(&kv.section("adapt"))?;
        cfg.contrastive.apply_kv(&kv.section("contrastive"))?;
        cfg.distill.apply_kv(&kv.section("distill"))?;
        cfg.xlingual.apply_kv(&kv.section("xlingual"))?;
        kv.apply("per_concept", &mut cfg.per_concept)?;
        kv.apply("target_dim", &mut cfg.target_dim)?;
        kv.apply("soup_size", &mut cfg.soup_size)?;
        kv.apply("second_adaptation", &mut cfg.second_adaptation)?;
        kv.apply("teacher", &mut cfg.teacher)?;
        kv.apply("run_xlingual", &mut cfg.run_xlingual)?;
        if let Some(s) = kv.get_str("nel_topk") {
            cfg.nel_topk = parse_k_list(s)?;
        }
        if let Some(s) = kv.get_str("nel_pooling") {
            cfg.nel_pooling = parse_pooling(s)?;
        }
        cfg.derive_seeds(kv);
        if cfg.soup_size == 0 {
            return Err(Error::Config("soup_size must be at least 1".into()));
        }
        if !cfg.second_adaptation && cfg.teacher == TeacherChoice::Adapted {
            cfg.teacher = TeacherChoice::Contrastive;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kv = KvConfig::load(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_kv(&kv, base)
    }

    /// Effective configuration, every key spelled out.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.set("data_dir", self.data_dir.display().to_string());
        kv.set("seed", self.seed.to_string());
        let sections = [
            ("encoder", self.encoder.to_kv()),
            ("adapt", self.adapt.to_kv()),
            ("contrastive", self.contrastive.to_kv()),
            ("distill", self.distill.to_kv()),
            ("xlingual", self.xlingual.to_kv()),
        ];
        for (name, sec) in sections {
            for k in sec.keys() {
                kv.set(format!("{name}.{k}"), sec.get_str(k).unwrap_or_default());
            }
        }
        kv.set("per_concept", self.per_concept.to_string());
        kv.set("target_dim", self.target_dim.to_string());
        kv.set("soup_size", self.soup_size.to_string());
        kv.set("second_adaptation", self.second_adaptation.to_string());
        kv.set(
            "teacher",
            match self.teacher {
                TeacherChoice::Adapted => "adapted",
                TeacherChoice::Contrastive => "contrastive",
            },
        );
        kv.set(
            "nel_topk",
            self.nel_topk.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        kv.set(
            "nel_pooling",
            match self.nel_pooling {
                SynonymPooling::Max => "max",
                SynonymPooling::Mean => "mean",
            },
        );
        kv.set("run_xlingual", self.run_xlingual.to_string());
        kv
    }
}

/// Every input file of a fixture directory.
#[derive(Clone, Debug)]
pub struct Fixtures {
    pub kg: KnowledgeGraph,
    pub sts_train: PairDataset,
    pub sts_val: PairDataset,
    pub sts_test: PairDataset,
    pub bcr: PairDataset,
    pub nel: NelDataset,
    pub nel_translated: Option<NelDataset>,
    pub nli: NliDataset,
    pub parallel: Vec<ParallelPair>,
    pub files: Vec<PathBuf>,
}

impl Fixtures {
    pub fn load(dir: &Path) -> Result<Self> {
        let f = |name: &str| dir.join(name);
        let mut files = vec![f(synthetic::ONTOLOGY_FILE), f(synthetic::TEMPLATES_FILE)];
        let mut kg = ontology::load_ontology(&files[0])?.with_templates(ontology::load_templates(&files[1])?);
        let glossary = f(synthetic::GLOSSARY_FILE);
        if glossary.exists() {
            let merge = kg.merge_glossary(&glossary)?;
            log::info!("glossary: {} merged, {} skipped", merge.merged, merge.skipped.len());
            files.push(glossary);
        }
        let load_pairs = |name: &str, files: &mut Vec<PathBuf>| -> Result<PairDataset> {
            let p = f(name);
            let d = PairDataset::load(&p)?;
            files.push(p);
            Ok(d)
        };
        let sts_train = load_pairs(synthetic::STS_TRAIN_FILE, &mut files)?;
        let sts_val = load_pairs(synthetic::STS_VAL_FILE, &mut files)?;
        let sts_test = load_pairs(synthetic::STS_TEST_FILE, &mut files)?;
        let bcr = load_pairs(synthetic::BCR_FILE, &mut files)?;
        for d in [&sts_train, &sts_val, &sts_test] {
            d.check_sts_range()?;
        }
        let nel_path = f(synthetic::NEL_FILE);
        let nel = NelDataset::load(&nel_path)?;
        files.push(nel_path);
        let nel_translated_path = f(synthetic::NEL_TRANSLATED_FILE);
        let nel_translated = if nel_translated_path.exists() {
            files.push(nel_translated_path.clone());
            Some(NelDataset::load(&nel_translated_path)?)
        } else {
            None
        };
        let nli_path = f(synthetic::NLI_FILE);
        let nli = NliDataset::load(&nli_path)?;
        files.push(nli_path);
        let parallel_path = f(synthetic::PARALLEL_FILE);
        let parallel = if parallel_path.exists() {
            files.push(parallel_path.clone());
            ontology::load_parallel_pairs(&parallel_path)?
        } else {
            Vec::new()
        };
        Ok(Self {
            kg,
            sts_train,
            sts_val,
            sts_test,
            bcr,
            nel,
            nel_translated,
            nli,
            parallel,
            files,
        })
    }
}

/// One line of the consolidated report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub phase: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: String,
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    pub full_losses: Vec<f64>,
}

impl PhaseSummary {
    fn new(phase: impl Into<String>, outcome: &TrainOutcome) -> Self {
        Self {
            phase: phase.into(),
            steps: outcome.steps,
            epoch_losses: outcome.epoch_losses.clone(),
            full_losses: outcome.full_losses.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoupSummary {
    pub kept: Vec<String>,
    pub trials: Vec<SoupTrial>,
    pub soup_score: f64,
    pub best_single_score: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub rows: Vec<ReportRow>,
    pub phases: Vec<PhaseSummary>,
    pub soup: SoupSummary,
    pub checkpoints: Vec<(String, Checkpoint)>,
}

impl PipelineRun {
    pub fn value(&self, phase: &str, benchmark: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.phase == phase && r.report.benchmark == benchmark && r.report.metric == metric)
            .map(|r| r.report.value)
    }

    pub fn checkpoint(&self, name: &str) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Consolidated report, one JSON object per line; contains no timings.
    pub fn report_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    pub fn summary_json(&self) -> String {
        let v = serde_json::json!({ "phases": self.phases, "soup": self.soup });
        serde_json::to_string_pretty(&v).expect("summary serializes") + "\n"
    }

    /// Human-readable table of the consolidated report.
    pub fn table(&self) -> String {
        let mut out = format!("{:<18} {:<16} {:<10} {:>8}\n", "phase", "benchmark", "metric", "value");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:<16} {:<10} {:>8.4}\n",
                r.phase, r.report.benchmark, r.report.metric, r.report.value
            ));
        }
        out
    }
}

fn evaluate_phase(phase: &str, model: &Checkpoint, fx: &Fixtures, cfg: &PipelineConfig) -> Result<Vec<ReportRow>> {
    let mut reports = vec![eval_sts(model, &fx.sts_test)?, eval_bcr(model, &fx.bcr)?];
    reports.extend(eval_nel(model, &fx.kg, &fx.nel, &cfg.nel_topk, cfg.nel_pooling)?);
    reports.push(eval_nli_triplets(model, &fx.nli)?);
    Ok(reports
        .into_iter()
        .map(|report| ReportRow {
            phase: phase.to_string(),
            report,
        })
        .collect())
}

fn parallel_digest(pairs: &[ParallelPair]) -> String {
    let text: String = pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.source_text, p.target_text, p.target_language))
        .collect();
    sha256_hex(text.as_bytes())
}

/// Runs the whole pipeline. When `out_dir` is given, every checkpoint, the
/// contrastive corpus, the consolidated report and a summary are written there.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<PipelineRun> {
    let fx = Fixtures::load(&cfg.data_dir)?;
    run_pipeline_on(cfg, &fx, out_dir)
}

pub fn run_pipeline_on(cfg: &PipelineConfig, fx: &Fixtures, out_dir: Option<&Path>) -> Result<PipelineRun> {
    let mut phases = Vec::new();
    let mut checkpoints: Vec<(String, Checkpoint)> = Vec::new();

    let init = Checkpoint::base(cfg.encoder.clone())?;
    log::info!("encoder with {} parameters", cfg.encoder.param_count());

    let adapted = adapt_sts(&init, &fx.sts_train, &cfg.adapt)?;
    log::info!(
        "sts adaptation: loss {:.5} after {} steps",
        adapted.final_loss,
        adapted.steps
    );
    phases.push(PhaseSummary::new("adapt", &adapted));
    let base = adapted.checkpoint;

    let corpus = fx.kg.build_corpus(cfg.per_concept, rng::derive(cfg.seed, 5));
    let contrastive = train_contrastive(&base, &corpus, &fx.kg, &cfg.contrastive)?;
    log::info!(
        "contrastive: {} pairs, loss {:.5} after {} steps",
        corpus.len(),
        contrastive.final_loss,
        contrastive.steps
    );
    phases.push(PhaseSummary::new("contrastive", &contrastive));
    let raw_contrastive = contrastive.checkpoint;

    let contrastive_final = if cfg.second_adaptation {
        let mut second = cfg.adapt.clone();
        second.seed = rng::derive(cfg.adapt.seed, 1);
        let out = adapt_sts(&raw_contrastive, &fx.sts_train, &second)?;
        log::info!("second sts adaptation: loss {:.5}", out.final_loss);
        phases.push(PhaseSummary::new("adapt_after_contrastive", &out));
        out.checkpoint
    } else {
        raw_contrastive.clone()
    };
    let teacher = match cfg.teacher {
        TeacherChoice::Adapted => &contrastive_final,
        TeacherChoice::Contrastive => &raw_contrastive,
    };

    let (_, targets) = build_targets(teacher, &fx.kg, cfg.target_dim)?;
    let mut candidates = Vec::with_capacity(cfg.soup_size);
    for i in 0..cfg.soup_size {
        let mut dc = cfg.distill.clone();
        dc.seed = rng::derive(cfg.distill.seed, i as u64);
        let out = train_self_distill(&base, &targets, &fx.kg, &dc)?;
        let label = format!("distill_{}", i + 1);
        let score = eval_sts(&out.checkpoint, &fx.sts_val)?.value;
        log::info!("{label}: loss {:.5}, validation pearson {score:.4}", out.final_loss);
        phases.push(PhaseSummary::new(label.clone(), &out));
        candidates.push(SoupCandidate {
            checkpoint: out.checkpoint,
            validation_score: score,
            label,
        });
    }
    let best_single = candidates
        .iter()
        .min_by(|a, b| {
            b.validation_score
                .total_cmp(&a.validation_score)
                .then_with(|| a.label.cmp(&b.label))
        })
        .expect("soup_size >= 1");
    let soup = greedy_soup(&candidates, |m| Ok(eval_sts(m, &fx.sts_val)?.value))?;
    log::info!("greedy soup kept {:?}, validation pearson {:.4}", soup.kept, soup.score);
    let soup_summary = SoupSummary {
        kept: soup.kept.clone(),
        trials: soup.trials.clone(),
        soup_score: soup.score,
        best_single_score: best_single.validation_score,
    };

    let mut rows = Vec::new();
    rows.extend(evaluate_phase("base", &base, fx, cfg)?);
    rows.extend(evaluate_phase("contrastive", &contrastive_final, fx, cfg)?);
    rows.extend(evaluate_phase("self_distilled", &best_single.checkpoint, fx, cfg)?);
    rows.extend(evaluate_phase("souped", &soup.checkpoint, fx, cfg)?);
    let val_row = |phase: &str, value: f64, model: &Checkpoint| ReportRow {
        phase: phase.to_string(),
        report: EvalReport {
            benchmark: fx.sts_val.name.clone(),
            metric: "pearson".into(),
            value,
            n: fx.sts_val.rows.len(),
            model_digest: model.digest(),
            data_digest: fx.sts_val.digest(),
        },
    };
    rows.push(val_row(
        "self_distilled",
        best_single.validation_score,
        &best_single.checkpoint,
    ));
    rows.push(val_row("souped", soup.score, &soup.checkpoint));

    let best_label = best_single.label.clone();
    checkpoints.push(("init".into(), init));
    checkpoints.push(("base".into(), base));
    checkpoints.push(("contrastive_raw".into(), raw_contrastive));
    checkpoints.push(("contrastive".into(), contrastive_final));
    for c in candidates {
        checkpoints.push((c.label, c.checkpoint));
    }
    checkpoints.push(("self_distilled".into(), find(&checkpoints, &best_label).clone()));
    checkpoints.push(("souped".into(), soup.checkpoint));

    if cfg.run_xlingual && !fx.parallel.is_empty() {
        let teacher = find(&checkpoints, "souped").clone();
        let mut student_cfg = cfg.encoder.clone();
        student_cfg.init_seed = rng::derive(cfg.seed, 6);
        let fresh = Checkpoint::base(student_cfg.clone())?;
        let gap0 = xlingual_gap(&fresh, &teacher, &fx.parallel);
        let out = train_xlingual(&teacher, &student_cfg, &fx.parallel, &cfg.xlingual)?;
        let gap1 = xlingual_gap(&out.checkpoint, &teacher, &fx.parallel);
        log::info!("cross-lingual student: gap {gap0:.5} -> {gap1:.5}");
        phases.push(PhaseSummary::new("xlingual", &out));
        let pdigest = parallel_digest(&fx.parallel);
        for (phase, value, model) in [
            ("xlingual_init", gap0, &fresh),
            ("xlingual_student", gap1, &out.checkpoint),
        ] {
            rows.push(ReportRow {
                phase: phase.into(),
                report: EvalReport {
                    benchmark: "parallel".into(),
                    metric: "mean_sq_gap".into(),
                    value,
                    n: fx.parallel.len(),
                    model_digest: model.digest(),
                    data_digest: pdigest.clone(),
                },
            });
        }
        let student = out.checkpoint;
        for r in eval_nel(&student, &fx.kg, &fx.nel, &cfg.nel_topk, cfg.nel_pooling)? {
            rows.push(ReportRow {
                phase: "xlingual_student".into(),
                report: r,
            });
        }
        if let Some(translated) = &fx.nel_translated {
            for (phase, model) in [("souped", &teacher), ("xlingual_student", &student)] {
                for r in eval_nel(model, &fx.kg, translated, &cfg.nel_topk, cfg.nel_pooling)? {
                    rows.push(ReportRow {
                        phase: phase.into(),
                        report: r,
                    });
                }
            }
        }
        checkpoints.push(("xlingual_student".into(), student));
    }

    let run = PipelineRun {
        rows,
        phases,
        soup: soup_summary,
        checkpoints,
    };
    if let Some(dir) = out_dir {
        write_outputs(&run, &corpus, cfg, dir)?;
    }
    Ok(run)
}

fn find<'a>(checkpoints: &'a [(String, Checkpoint)], name: &str) -> &'a Checkpoint {
    &checkpoints
        .iter()
        .find(|(n, _)| n == name)
        .expect("checkpoint recorded")
        .1
}

pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CONFIG_FILE: &str = "effective.cfg";
pub const FINAL_MODEL: &str = "final.ckpt";

fn write_outputs(run: &PipelineRun, corpus: &[ontology::TrainingPair], cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let ckpt_dir = dir.join("checkpoints");
    for (name, ck) in &run.checkpoints {
        save_checkpoint(&ckpt_dir.join(format!("{name}.ckpt")), ck)?;
    }
    save_checkpoint(&dir.join(FINAL_MODEL), find(&run.checkpoints, "souped"))?;
    write_atomic(&dir.join(CORPUS_FILE), corpus_to_jsonl(corpus).as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_kv().to_text().as_bytes())?;
    write_atomic(&dir.join(SUMMARY_FILE), run.summary_json().as_bytes())?;
    write_atomic(&dir.join(REPORT_FILE), run.report_jsonl().as_bytes())?;
    Ok(())
}

/// Output files written by [`run_pipeline`] into `dir`.
pub fn output_files(run: &PipelineRun, dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = run
        .checkpoints
        .iter()
        .map(|(n, _)| dir.join("checkpoints").join(format!("{n}.ckpt")))
        .collect();
    for f in [FINAL_MODEL, CORPUS_FILE, CONFIG_FILE, SUMMARY_FILE, REPORT_FILE] {
        out.push(dir.join(f));
    }
    out
}
