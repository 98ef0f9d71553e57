//! Acceptance report: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use ontoembed::config::KvConfig;
use ontoembed::encoder::{load_checkpoint, save_checkpoint, Head};
use ontoembed::eval::{
    eval_nel, eval_nli_triplets, pearson, spearman, NelDataset, NelRow, NliDataset, NliRow, SynonymPooling,
};
use ontoembed::losses::{info_nce, InfoNceConfig};
use ontoembed::pipeline::{run_pipeline, PipelineConfig};
use ontoembed::trainer::{pca_fit, DEFAULT_TARGET_DIM};
use ontoembed::{Checkpoint, Phase};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ontoembed(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ontoembed"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

type GradientCheck = (&'static str, fn(u64) -> f64);

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks: [GradientCheck; 4] = [
        ("encoder", encoder_gradient_error),
        ("info_nce", info_nce_gradient_error),
        ("mse", mse_gradient_error),
        ("cosine_regression", cosine_gradient_error),
    ];
    let mut worst = BTreeMap::new();
    for (name, f) in checks {
        let e = (0..20u64).map(f).fold(0.0, f64::max);
        worst.insert(name, e);
    }
    let elapsed = start.elapsed();
    let max = worst.values().copied().fold(0.0, f64::max);
    outcome(
        max <= FD_REL_TOL && elapsed < Duration::from_secs(30),
        format!(
            "worst relative error {max:.2e} (tol 1e-4) on 4 x 20 instances in {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn info_nce_anchor() -> Outcome {
    let rows = vec![vec![0.0, 1.0]; 128];
    let loss = info_nce(&rows, &rows, &[], &InfoNceConfig::default()).unwrap().loss;
    let err = (loss - 128f64.ln()).abs();
    outcome(
        err <= 1e-9,
        format!("loss {loss:.15} vs ln 128, error {err:.1e} (tol 1e-9)"),
    )
}

fn pca() -> Outcome {
    let (mut ortho, mut recon) = (0.0f64, 0.0f64);
    let mut sorted = true;
    for seed in 0..50u64 {
        let mut r = rng(seed);
        let d = r.gen_range(3..=12);
        let n = r.gen_range(d + 1..=40);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, d)).collect();
        let p = pca_fit(&rows, d).unwrap();
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                ortho = ortho.max((dot - f64::from(u8::from(i == j))).abs());
            }
        }
        sorted &= p.explained_variance.windows(2).all(|w| w[0] >= w[1]);

        let k = r.gen_range(1..d);
        let basis: Vec<Vec<f64>> = (0..k).map(|_| random_vec(&mut r, d)).collect();
        let low: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = random_vec(&mut r, k);
                (0..d)
                    .map(|j| 0.5 + (0..k).map(|i| c[i] * basis[i][j]).sum::<f64>())
                    .collect()
            })
            .collect();
        let p = pca_fit(&low, k).unwrap();
        for x in &low {
            let back = p.reconstruct(&p.project(x).unwrap());
            recon = recon.max(back.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }
    outcome(
        ortho <= 1e-8 && recon <= 1e-8 && sorted && DEFAULT_TARGET_DIM == 64,
        format!(
            "orthonormality error {ortho:.1e}, rank-k reconstruction error {recon:.1e} (tol 1e-8), \
             variances sorted: {sorted}, default dims {DEFAULT_TARGET_DIM}"
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..200u64 {
        let mut r = rng(seed);
        loop {
            let n = r.gen_range(2..=12);
            let x = random_sample(&mut r, n);
            let y = random_sample(&mut r, n);
            if has_spread(&x) && has_spread(&y) {
                worst = worst.max((pearson(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs());
                worst = worst.max((spearman(&x, &y).unwrap() - spearman_oracle(&x, &y)).abs());
                cases += 2;
                break;
            }
        }

        let inst = random_nel_instance(&mut r);
        let ds = NelDataset::new(
            "nel",
            inst.mentions
                .iter()
                .map(|(m, id)| NelRow {
                    mention: m.clone(),
                    concept_id: id.clone(),
                })
                .collect(),
        );
        let ks: Vec<usize> = (1..=inst.kg.len()).collect();
        for (k, rep) in ks
            .iter()
            .zip(eval_nel(&inst.model, &inst.kg, &ds, &ks, SynonymPooling::Max).unwrap())
        {
            worst = worst.max((rep.value - topk_oracle(&inst, *k)).abs());
        }
        cases += 1;

        let rows: Vec<(String, String, String)> = inst
            .mentions
            .iter()
            .map(|(m, _)| {
                let pick = |r: &mut ontoembed::rng::Rng| inst.mentions[r.gen_range(0..inst.mentions.len())].0.clone();
                (m.clone(), pick(&mut r), pick(&mut r))
            })
            .collect();
        let nli = NliDataset::new(
            "nli",
            rows.iter()
                .map(|(a, e, c)| NliRow {
                    anchor: a.clone(),
                    entailed: e.clone(),
                    contradicted: c.clone(),
                })
                .collect(),
        )
        .unwrap();
        let v = eval_nli_triplets(&inst.model, &nli).unwrap().value;
        worst = worst.max((v - nli_oracle(&inst.model, &rows)).abs());
        cases += 1;
    }
    outcome(
        worst <= 1e-12,
        format!("largest deviation from brute force {worst:.1e} (tol 1e-12) over {cases} randomized cases"),
    )
}

fn reports(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("report.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn value(rows: &[serde_json::Value], phase: &str, bench: &str, metric: &str) -> f64 {
    rows.iter()
        .find(|r| r["phase"] == phase && r["benchmark"] == bench && r["metric"] == metric)
        .and_then(|r| r["value"].as_f64())
        .unwrap_or(f64::NAN)
}

struct Ablation {
    seed: u64,
    base_nel: f64,
    contrastive_nel: f64,
    base_bcr: f64,
    contrastive_bcr: f64,
    contrastive_sts: f64,
    distilled_sts: f64,
}

impl Ablation {
    fn from_rows(seed: u64, rows: &[serde_json::Value]) -> Self {
        Self {
            seed,
            base_nel: value(rows, "base", "nel", "top1"),
            contrastive_nel: value(rows, "contrastive", "nel", "top1"),
            base_bcr: value(rows, "base", "bcr", "spearman"),
            contrastive_bcr: value(rows, "contrastive", "bcr", "spearman"),
            contrastive_sts: value(rows, "contrastive", "sts_test", "pearson"),
            distilled_sts: value(rows, "self_distilled", "sts_test", "pearson"),
        }
    }

    fn holds(&self) -> bool {
        self.contrastive_nel > self.base_nel
            && self.contrastive_bcr > self.base_bcr
            && self.distilled_sts >= self.contrastive_sts
    }

    fn describe(&self) -> String {
        format!(
            "seed {}: NEL {:.3}>{:.3} BCR {:.3}>{:.3} STS {:.3}>={:.3}",
            self.seed,
            self.contrastive_nel,
            self.base_nel,
            self.contrastive_bcr,
            self.base_bcr,
            self.distilled_sts,
            self.contrastive_sts
        )
    }
}

fn library_ablation(seed: u64) -> Ablation {
    let cfg_path = root().join("fixtures/demo.cfg");
    let mut kv = KvConfig::load(&cfg_path).unwrap();
    kv.set("seed", seed.to_string());
    kv.set("run_xlingual", "false".to_string());
    let cfg = PipelineConfig::from_kv(&kv, cfg_path.parent().unwrap()).unwrap();
    let run = run_pipeline(&cfg, None).unwrap();
    let rows: Vec<serde_json::Value> = run
        .report_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    Ablation::from_rows(seed, &rows)
}

fn ablation(seed0: &[serde_json::Value]) -> Outcome {
    let runs = [Ablation::from_rows(0, seed0), library_ablation(1), library_ablation(2)];
    let pass = runs.iter().all(Ablation::holds);
    outcome(pass, runs.iter().map(Ablation::describe).collect::<Vec<_>>().join("; "))
}

fn soup_guarantee(dir: &Path) -> Outcome {
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let soup = &summary["soup"];
    let score = soup["soup_score"].as_f64().unwrap();
    let best = soup["best_single_score"].as_f64().unwrap();
    let trials = soup["trials"].as_array().map_or(0, Vec::len);
    outcome(
        score >= best && trials == 7,
        format!(
            "validation pearson of soup {score:.6} >= best single {best:.6} over {trials} ingredients (kept {})",
            soup["kept"]
        ),
    )
}

fn xlingual(rows: &[serde_json::Value]) -> Outcome {
    let before = value(rows, "xlingual_init", "parallel", "mean_sq_gap");
    let after = value(rows, "xlingual_student", "parallel", "mean_sq_gap");
    let student = value(rows, "xlingual_student", "nel_translated", "top1");
    let teacher = value(rows, "souped", "nel", "top1");
    let ratio = after / before;
    outcome(
        ratio < 0.1 && student >= 0.9 * teacher,
        format!(
            "gap {before:.4} -> {after:.4} (ratio {ratio:.4} < 0.1); translated NEL top-1 {student:.3} vs \
             teacher English {teacher:.3} (ratio {:.3} >= 0.9)",
            student / teacher
        ),
    )
}

const SMALL_ENCODER: &str = "vocab_buckets = 1024\nembed_dim = 16\nhidden_dim = 24\noutput_dim = 16\ninit_seed = 4\n";

fn small_pipeline(data: &Path) -> String {
    format!(
        "data_dir = {}\nseed = 9\nsoup_size = 2\ntarget_dim = 8\n\
         encoder.vocab_buckets = 1024\nencoder.embed_dim = 16\nencoder.hidden_dim = 24\nencoder.output_dim = 16\n\
         adapt.learning_rate = 0.01\nadapt.epochs = 1\nadapt.batch_size = 64\n\
         contrastive.learning_rate = 0.01\ncontrastive.epochs = 1\ncontrastive.batch_size = 64\n\
         distill.learning_rate = 0.01\ndistill.epochs = 1\ndistill.batch_size = 64\n\
         xlingual.learning_rate = 0.01\nxlingual.epochs = 1\nxlingual.batch_size = 64\n",
        data.display()
    )
}

/// Every command, with outputs written relative to `dir`.
fn run_all_commands(dir: &Path) -> Result<(), String> {
    let d = root().join("fixtures/demo");
    let p = |name: &str| d.join(name).display().to_string();
    let (onto, tmpl, gloss) = (p("ontology.jsonl"), p("templates.tsv"), p("glossary.jsonl"));
    let kg = ["--ontology", &onto, "--templates", &tmpl, "--glossary", &gloss];
    let texts = root().join("fixtures/golden/texts.txt").display().to_string();
    let fast = ["--epochs", "1", "--batch-size", "64", "--learning-rate", "0.01"];
    std::fs::write(dir.join("encoder.cfg"), SMALL_ENCODER).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("pipeline.cfg"), small_pipeline(&d)).map_err(|e| e.to_string())?;

    let cmd = |parts: &[&[&str]]| ontoembed(dir, &parts.concat());
    cmd(&[&["synth", "--out", "world", "--seed", "7"]])?;
    cmd(&[&["init", "--config", "encoder.cfg", "--out", "init.ckpt"]])?;
    cmd(&[&["verbalize", "--seed", "3", "--out", "corpus.jsonl"], &kg])?;
    cmd(&[
        &[
            "train",
            "sts",
            "--model",
            "init.ckpt",
            "--data",
            &p("sts_train.tsv"),
            "--seed",
            "1",
        ],
        &fast,
        &["--out", "adapted.ckpt"],
    ])?;
    cmd(&[
        &[
            "train",
            "contrastive",
            "--model",
            "adapted.ckpt",
            "--corpus",
            "corpus.jsonl",
            "--seed",
            "2",
        ],
        &["--set", "hard_negatives_per_batch=2"],
        &kg,
        &fast,
        &["--out", "contrastive.ckpt"],
    ])?;
    for (seed, out) in [("3", "distill_a.ckpt"), ("4", "distill_b.ckpt")] {
        cmd(&[
            &[
                "train",
                "self-distill",
                "--base",
                "adapted.ckpt",
                "--teacher",
                "contrastive.ckpt",
                "--target-dim",
                "8",
            ],
            &kg,
            &fast,
            &["--seed", seed, "--out", out],
        ])?;
    }
    cmd(&[
        &[
            "train",
            "xlingual",
            "--teacher",
            "contrastive.ckpt",
            "--pairs",
            &p("parallel.tsv"),
            "--seed",
            "5",
        ],
        &fast,
        &["--out", "student.ckpt"],
    ])?;
    cmd(&[&[
        "soup",
        "--strategy",
        "uniform",
        "--models",
        "distill_a.ckpt",
        "distill_b.ckpt",
        "--out",
        "uniform.ckpt",
    ]])?;
    cmd(&[&[
        "soup",
        "--models",
        "distill_a.ckpt",
        "distill_b.ckpt",
        "--val",
        &p("sts_val.tsv"),
        "--out",
        "greedy.ckpt",
    ]])?;
    cmd(&[&[
        "eval",
        "sts",
        "--model",
        "greedy.ckpt",
        "--data",
        &p("sts_test.tsv"),
        "--out",
        "sts.jsonl",
    ]])?;
    cmd(&[&[
        "eval",
        "bcr",
        "--model",
        "greedy.ckpt",
        "--data",
        &p("bcr.tsv"),
        "--out",
        "bcr.jsonl",
    ]])?;
    cmd(&[&[
        "eval",
        "nli",
        "--model",
        "greedy.ckpt",
        "--data",
        &p("nli.tsv"),
        "--out",
        "nli.jsonl",
    ]])?;
    cmd(&[
        &[
            "eval",
            "nel",
            "--model",
            "greedy.ckpt",
            "--data",
            &p("nel.tsv"),
            "--topk",
            "1,5",
            "--out",
            "nel.jsonl",
        ],
        &kg,
    ])?;
    cmd(&[&["embed", "--model", "student.ckpt", "--in", &texts, "--out", "emb.tsv"]])?;
    cmd(&[&["pipeline", "--config", "pipeline.cfg", "--out", "pipe"]])?;
    Ok(())
}

/// File contents keyed by relative path; manifests lose their wall-clock field.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(dir).unwrap().display().to_string();
            let mut bytes = std::fs::read(&path).unwrap();
            if rel.ends_with("manifest.json") {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("duration_secs");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = run_all_commands(a.path()).and_then(|_| run_all_commands(b.path())) {
        return outcome(false, e);
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<&String> = sa.keys().filter(|k| sa.get(*k) != sb.get(*k)).collect();
    let checkpoints = sa.keys().filter(|k| k.ends_with(".ckpt")).count();
    outcome(
        differing.is_empty() && sa.len() == sb.len(),
        if differing.is_empty() {
            format!(
                "every command ran twice: {} files identical ({checkpoints} checkpoints; manifests compared without timings)",
                sa.len()
            )
        } else {
            format!("differing outputs: {differing:?}")
        },
    )
}

fn round_trip_and_golden() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut exact = true;
    for seed in 0..10u64 {
        let config = tiny_config(seed);
        let mut params = random_params(&config, &mut rng(seed));
        if seed % 2 == 0 {
            params.head = Some(Head::init(config.output_dim, 3, 0.2, seed));
        }
        let ck = Checkpoint::new(config, Phase::SelfDistilled, params).unwrap();
        let path = dir.path().join(format!("{seed}.ckpt"));
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        let bits = |c: &Checkpoint| c.params.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        exact &= back == ck && bits(&back) == bits(&ck) && std::fs::read(&path).unwrap() == ck.to_bytes();
    }

    let golden = root().join("fixtures/golden");
    let model = load_checkpoint(&golden.join("model.ckpt")).unwrap();
    let texts = std::fs::read_to_string(golden.join("texts.txt")).unwrap();
    let expected = std::fs::read_to_string(golden.join("embeddings.tsv")).unwrap();
    let mut worst = 0.0f64;
    let mut rows = 0;
    for (text, line) in texts.lines().zip(expected.lines()) {
        let (t, nums) = line.split_once('\t').unwrap();
        assert_eq!(t, text);
        let got = model.encode(text);
        for (g, e) in got.values().iter().zip(nums.split(',')) {
            worst = worst.max((g - e.parse::<f64>().unwrap()).abs());
        }
        rows += 1;
    }
    outcome(
        exact && worst <= 1e-12 && rows == texts.lines().count(),
        format!("10 checkpoints round-trip bit-exactly: {exact}; golden embeddings of {rows} texts within {worst:.1e} (tol 1e-12)"),
    )
}

fn main() {
    let demo_out = tempfile::tempdir().unwrap();
    let pipeline_out = demo_out.path().join("demo");
    let cfg = root().join("fixtures/demo.cfg").display().to_string();
    let start = Instant::now();
    let demo_run = ontoembed(
        &root(),
        &[
            "pipeline",
            "--config",
            &cfg,
            "--seed",
            "0",
            "--out",
            pipeline_out.to_str().unwrap(),
        ],
    );
    let demo_secs = start.elapsed().as_secs_f64();

    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradients()),
        ("InfoNCE anchor", info_nce_anchor()),
        ("PCA", pca()),
        ("metric oracles", metric_oracles()),
    ];
    match &demo_run {
        Ok(()) => {
            let rows = reports(&pipeline_out);
            results.push(("ablation ordering", ablation(&rows)));
            results.push(("greedy soup guarantee", soup_guarantee(&pipeline_out)));
            results.push(("cross-lingual distillation", xlingual(&rows)));
        }
        Err(e) => {
            for name in [
                "ablation ordering",
                "greedy soup guarantee",
                "cross-lingual distillation",
            ] {
                results.push((name, outcome(false, format!("demo pipeline failed: {e}"))));
            }
        }
    }
    results.push(("determinism", determinism()));
    results.push(("checkpoint round trip and golden embeddings", round_trip_and_golden()));
    results.push((
        "end-to-end demo time",
        outcome(
            demo_run.is_ok() && demo_secs < 300.0,
            format!("pipeline demo took {demo_secs:.1} s (limit 300 s)"),
        ),
    ));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "{} criterion {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
