//! Run configuration and the five command drivers behind the `mesin` binary.
//!
//! Every `cmd_*` creates a fresh run directory under `out`, named
//! `{verb}-{config hash}-{unix seconds}`, writes the resolved configuration
//! there as `config.toml` and then delegates to the matching `*_in` function,
//! which only writes inside the directory it is given.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{HyperParams, ModelConfig, Variant};
use crate::ehr::{ingest_records, load_cohort, save_cohort, CohortManifest, PatientRecord, Split};
use crate::error::{MesinError, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::Mesin;
use crate::synth::{generate_cohort, GeneratorSpec};
use crate::train::{self, Checkpoint, EpochRecord, TrainOutcome};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRACE_JSON: &str = "trace.json";
pub const TRACE_CSV: &str = "trace.csv";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.json";
pub const LAST_GOOD_CHECKPOINT: &str = "checkpoint_last_good.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_TXT: &str = "ablation.txt";
pub const STRUCTURE_FILE: &str = "structure.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub variants: Vec<String>,
    /// Model seeds; the cohort stays fixed.
    pub seeds: Vec<u64>,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            variants: vec!["vanilla".into(), "mesin".into()],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub variant: String,
    /// Split scored by `evaluate`.
    pub split: Split,
    /// Cohort directory read by `train`, `evaluate` and `ablate`.
    pub cohort: Option<PathBuf>,
    /// Checkpoint read by `evaluate`.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint that `train` continues from.
    pub resume: Option<PathBuf>,
    /// External record file that `generate` converts instead of sampling.
    pub ingest: Option<PathBuf>,
    /// Evaluation directory or metrics file read by `report`.
    pub input: Option<PathBuf>,
    pub generator: GeneratorSpec,
    pub hyper: HyperParams,
    pub ablation: AblationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs"),
            variant: "mesin".into(),
            split: Split::Test,
            cohort: None,
            checkpoint: None,
            resume: None,
            ingest: None,
            input: None,
            generator: GeneratorSpec::default(),
            hyper: HyperParams::default(),
            ablation: AblationSettings::default(),
        }
    }
}

/// Command-line values that replace the corresponding config entries.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<String>,
    pub split: Option<Split>,
    pub cohort: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub ingest: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub patients: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub batch_size: Option<usize>,
    pub variants: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MesinError::Parse {
            path: origin.into(),
            record: 0,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MesinError::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Config file (or defaults) with `overrides` applied on top.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *slot = v.clone();
            }
        }
        fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        set(&mut self.seed, &o.seed);
        set(&mut self.out, &o.out);
        set(&mut self.variant, &o.variant);
        set(&mut self.split, &o.split);
        set_opt(&mut self.cohort, &o.cohort);
        set_opt(&mut self.checkpoint, &o.checkpoint);
        set_opt(&mut self.resume, &o.resume);
        set_opt(&mut self.ingest, &o.ingest);
        set_opt(&mut self.input, &o.input);
        set(&mut self.generator.patients, &o.patients);
        set(&mut self.hyper.epochs, &o.epochs);
        set(&mut self.hyper.learning_rate, &o.learning_rate);
        set(&mut self.hyper.dropout, &o.dropout);
        set(&mut self.hyper.batch_size, &o.batch_size);
        set(&mut self.ablation.variants, &o.variants);
        set(&mut self.ablation.seeds, &o.seeds);
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| MesinError::Config(format!("cannot serialise run config: {e}")))
    }

    /// First 12 hex digits of the SHA-256 of the serialised config.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(digest)[..12].to_string())
    }

    /// Model configuration for `variant` on a cohort with this manifest.
    pub fn model_config(&self, variant: &str, manifest: &CohortManifest) -> Result<ModelConfig> {
        let config = ModelConfig {
            hyper: self.hyper.clone(),
            vocab: manifest.vocabulary,
            variant: Variant::named(variant)?,
        };
        config.validate()?;
        Ok(config)
    }

    fn need<'a>(&self, field: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| MesinError::Config(format!("{what} is required (set `{flag}` or pass --{flag})")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MesinError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| MesinError::io(path, e.into()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MesinError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MesinError::Parse {
        path: path.display().to_string(),
        record: 0,
        message: e.to_string(),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| MesinError::io(path, e.into()))
}

fn csv_row(w: &mut csv::Writer<fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| MesinError::io(path, e.into()))
}

fn csv_finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| MesinError::io(path, e))
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Create `out/{verb}-{hash}-{unix seconds}` (suffixed on collision) and
/// write the resolved config into it.
pub fn create_run_dir(cfg: &RunConfig, verb: &str) -> Result<PathBuf> {
    let hash = cfg.hash()?;
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::create_dir_all(&cfg.out).map_err(|e| MesinError::io(&cfg.out, e))?;
    let base = format!("{verb}-{hash}-{secs}");
    let mut n = 1;
    let dir = loop {
        let name = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = cfg.out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => break dir,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(MesinError::io(&dir, e)),
        }
    };
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
    Ok(dir)
}

/// Sample (or ingest) a cohort into `dir`.
pub fn generate_in(cfg: &RunConfig, dir: &Path) -> Result<CohortManifest> {
    fs::create_dir_all(dir).map_err(|e| MesinError::io(dir, e))?;
    if let Some(src) = &cfg.ingest {
        let (patients, manifest) = ingest_records(src, cfg.seed)?;
        save_cohort(dir, &patients, &manifest)?;
        return Ok(manifest);
    }
    let cohort = generate_cohort(&cfg.generator, cfg.seed)?;
    save_cohort(dir, &cohort.patients, &cohort.manifest)?;
    write_json(&dir.join(STRUCTURE_FILE), &cohort.structure)?;
    Ok(cohort.manifest)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(cfg, "generate")?;
    generate_in(cfg, &dir)?;
    Ok(dir)
}

struct Splits {
    manifest: CohortManifest,
    train: Vec<PatientRecord>,
    validation: Vec<PatientRecord>,
    test: Vec<PatientRecord>,
}

impl Splits {
    fn load(dir: &Path) -> Result<Self> {
        let (patients, manifest) = load_cohort(dir)?;
        let pick = |s| manifest.select(&patients, s).into_iter().cloned().collect::<Vec<_>>();
        Ok(Splits {
            train: pick(Split::Train),
            validation: pick(Split::Validation),
            test: pick(Split::Test),
            manifest,
        })
    }

    fn get(&self, which: Split) -> &[PatientRecord] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

pub fn write_trace(dir: &Path, trace: &[EpochRecord]) -> Result<()> {
    write_json(&dir.join(TRACE_JSON), &trace)?;
    let path = dir.join(TRACE_CSV);
    let mut w = csv_writer(&path)?;
    let header = [
        "epoch", "loss", "bce_per_label", "margin", "val_jaccard", "val_pr_auc", "val_recall", "val_f1", "val_loss",
    ];
    csv_row(&mut w, &path, &header.map(String::from))?;
    for r in trace {
        let v = r.validation.as_ref();
        csv_row(
            &mut w,
            &path,
            &[
                r.epoch.to_string(),
                r.loss.to_string(),
                r.bce_per_label.to_string(),
                r.margin.to_string(),
                opt_num(v.map(|v| v.jaccard)),
                opt_num(v.map(|v| v.pr_auc)),
                opt_num(v.map(|v| v.recall)),
                opt_num(v.map(|v| v.f1)),
                opt_num(v.map(|v| v.loss)),
            ],
        )?;
    }
    csv_finish(w, &path)
}

/// Train `cfg.variant` on the cohort; writes both checkpoints and the trace.
///
/// On divergence the last finite state is saved before the error is returned.
pub fn train_in(cfg: &RunConfig, dir: &Path) -> Result<TrainOutcome> {
    let cohort = cfg.need(&cfg.cohort, "a cohort directory", "cohort")?;
    let data = Splits::load(cohort)?;
    let config = cfg.model_config(&cfg.variant, &data.manifest)?;
    let result = match &cfg.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let (model, _) = Mesin::new(config)?;
            train::resume(&model, &ckpt, &data.train, &data.validation)
        }
        None => {
            let (model, store) = Mesin::initialised(config, cfg.seed)?;
            train::train(&model, store, &data.train, &data.validation, cfg.seed)
        }
    };
    let outcome = match result {
        Ok(o) => o,
        Err(MesinError::Diverged { epoch, last_good }) => {
            last_good.save(&dir.join(LAST_GOOD_CHECKPOINT))?;
            write_trace(dir, &last_good.trace)?;
            return Err(MesinError::Diverged { epoch, last_good });
        }
        Err(e) => return Err(e),
    };
    outcome.best.save(&dir.join(BEST_CHECKPOINT))?;
    outcome.last.save(&dir.join(LAST_CHECKPOINT))?;
    write_trace(dir, &outcome.trace)?;
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(cfg, "train")?;
    train_in(cfg, &dir)?;
    Ok(dir)
}

/// Score a checkpoint on `cfg.split`. The model is rebuilt from the run
/// config, so a checkpoint trained with other sizes is a shape mismatch.
pub fn evaluate_in(cfg: &RunConfig, dir: &Path) -> Result<MetricsReport> {
    let cohort = cfg.need(&cfg.cohort, "a cohort directory", "cohort")?;
    let ckpt_path = cfg.need(&cfg.checkpoint, "a checkpoint file", "checkpoint")?;
    let data = Splits::load(cohort)?;
    let ckpt = Checkpoint::load(ckpt_path)?;
    let config = cfg.model_config(&cfg.variant, &data.manifest)?;
    let (model, _) = Mesin::new(config)?;
    let store = ckpt.store()?;
    model.check_store(&store)?;
    let report = evaluate(&model, &store, data.get(cfg.split))?;
    write_json(&dir.join(METRICS_JSON), &report)?;
    write_text(&dir.join(METRICS_TXT), &report.table())?;
    let path = dir.join(PREDICTIONS_CSV);
    let mut w = csv_writer(&path)?;
    let header = ["patient_id", "visit", "truth", "predicted", "jaccard", "precision", "recall", "f1"];
    csv_row(&mut w, &path, &header.map(String::from))?;
    let join = |c: &[usize]| c.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    for r in &report.rows {
        csv_row(
            &mut w,
            &path,
            &[
                r.patient_id.clone(),
                r.visit.to_string(),
                join(&r.truth),
                join(&r.predicted),
                r.jaccard.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
            ],
        )?;
    }
    csv_finish(w, &path)?;
    Ok(report)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(cfg, "evaluate")?;
    evaluate_in(cfg, &dir)?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: String,
    pub seed: u64,
    /// Epoch of the best-validation checkpoint that was scored.
    pub best_epoch: usize,
    pub jaccard: f64,
    pub pr_auc: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub jaccard: MeanSd,
    pub pr_auc: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.summary.iter().find(|s| s.variant == name)
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16}{:>18}{:>18}{:>18}{:>18}\n",
            "variant", "Jaccard", "PR-AUC", "Recall", "F1"
        );
        let cell = |m: MeanSd| format!("{:.4}±{:.4}", m.mean, m.sd);
        for v in &self.summary {
            s += &format!(
                "{:<16}{:>18}{:>18}{:>18}{:>18}\n",
                v.variant,
                cell(v.jaccard),
                cell(v.pr_auc),
                cell(v.recall),
                cell(v.f1)
            );
        }
        s
    }
}

/// Train every (variant, seed) pair on the same cohort and score the
/// best-validation checkpoint on the test split.
pub fn ablate_in(cfg: &RunConfig, dir: &Path) -> Result<AblationReport> {
    let cohort = cfg.need(&cfg.cohort, "a cohort directory", "cohort")?;
    let names = &cfg.ablation.variants;
    let seeds = &cfg.ablation.seeds;
    if names.is_empty() || seeds.is_empty() {
        return Err(MesinError::Config("ablation needs at least one variant and one seed".into()));
    }
    let data = Splits::load(cohort)?;
    let configs = names
        .iter()
        .map(|n| cfg.model_config(n, &data.manifest))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, u64)> = (0..names.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (model, store) = Mesin::initialised(configs[v].clone(), seed)?;
            let out = train::train(&model, store, &data.train, &data.validation, seed)?;
            let best = out.best.store()?;
            let r = evaluate(&model, &best, &data.test)?;
            Ok(AblationRun {
                variant: names[v].clone(),
                seed,
                best_epoch: out.best.epoch,
                jaccard: r.jaccard,
                pr_auc: r.pr_auc,
                recall: r.recall,
                f1: r.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = names
        .iter()
        .map(|n| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| &r.variant == n).collect();
            let col = |f: fn(&AblationRun) -> f64| MeanSd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            VariantSummary {
                variant: n.clone(),
                jaccard: col(|r| r.jaccard),
                pr_auc: col(|r| r.pr_auc),
                recall: col(|r| r.recall),
                f1: col(|r| r.f1),
            }
        })
        .collect();
    let report = AblationReport {
        seeds: seeds.clone(),
        runs,
        summary,
    };
    write_json(&dir.join(ABLATION_JSON), &report)?;
    write_text(&dir.join(ABLATION_TXT), &report.table())?;
    let path = dir.join(ABLATION_CSV);
    let mut w = csv_writer(&path)?;
    let header = ["variant", "seed", "best_epoch", "jaccard", "pr_auc", "recall", "f1"];
    csv_row(&mut w, &path, &header.map(String::from))?;
    for r in &report.runs {
        csv_row(
            &mut w,
            &path,
            &[
                r.variant.clone(),
                r.seed.to_string(),
                r.best_epoch.to_string(),
                r.jaccard.to_string(),
                r.pr_auc.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
            ],
        )?;
    }
    csv_finish(w, &path)?;
    Ok(report)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(cfg, "ablate")?;
    ablate_in(cfg, &dir)?;
    Ok(dir)
}

pub const ATTENTION_FILES: [(&str, &str); 3] = [
    ("lab", "attention_lab.csv"),
    ("diagnosis", "attention_diagnosis.csv"),
    ("medication", "attention_medication.csv"),
];
pub const FUSION_CSV: &str = "fusion.csv";
pub const FUSION_SUMMARY_CSV: &str = "fusion_summary.csv";
pub const REPORT_SUMMARY: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub stream: String,
    pub visits: usize,
    pub weights: usize,
    pub exact_zeros: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub streams: Vec<StreamSummary>,
    pub fusion_rows: usize,
    /// Largest `|sum(row) - 1|` over fusion rows.
    pub fusion_max_deviation: f64,
}

/// Plot-ready CSVs from an evaluation: one long-format (patient, visit,
/// code, weight) table per attention stream and one row of fusion weights
/// per visit, plus per-source quantiles of the fusion weights.
pub fn report_in(cfg: &RunConfig, dir: &Path) -> Result<ReportSummary> {
    let input = cfg.need(&cfg.input, "an evaluation directory", "input")?;
    let file = if input.is_dir() { input.join(METRICS_JSON) } else { input.to_path_buf() };
    let report: MetricsReport = read_json(&file)?;
    let mut streams = Vec::new();
    for (stream, name) in ATTENTION_FILES {
        let path = dir.join(name);
        let mut w = csv_writer(&path)?;
        csv_row(&mut w, &path, &["patient_id", "visit", "code", "weight"].map(String::from))?;
        let mut summary = StreamSummary {
            stream: stream.into(),
            visits: 0,
            weights: 0,
            exact_zeros: 0,
        };
        for a in &report.attention {
            let rec = match stream {
                "lab" => &a.lab,
                "diagnosis" => &a.diagnosis,
                _ => &a.medication,
            };
            let Some(rec) = rec else { continue };
            summary.visits += 1;
            for (k, wgt) in rec.keys.iter().zip(&rec.weights) {
                summary.weights += 1;
                if *wgt == 0.0 {
                    summary.exact_zeros += 1;
                }
                csv_row(
                    &mut w,
                    &path,
                    &[a.patient_id.clone(), a.visit.to_string(), k.to_string(), wgt.to_string()],
                )?;
            }
        }
        csv_finish(w, &path)?;
        streams.push(summary);
    }

    let sources: Vec<String> = report
        .attention
        .iter()
        .find(|a| a.fusion.is_some())
        .map(|a| a.fusion_sources.iter().map(|s| s.name().to_string()).collect())
        .unwrap_or_default();
    let path = dir.join(FUSION_CSV);
    let mut w = csv_writer(&path)?;
    let mut header = vec!["patient_id".to_string(), "visit".to_string()];
    header.extend(sources.iter().cloned());
    csv_row(&mut w, &path, &header)?;
    let mut columns = vec![Vec::new(); sources.len()];
    let mut deviation = 0.0f64;
    let mut rows = 0;
    for a in &report.attention {
        let Some(f) = &a.fusion else { continue };
        rows += 1;
        deviation = deviation.max((f.iter().sum::<f64>() - 1.0).abs());
        let mut row = vec![a.patient_id.clone(), a.visit.to_string()];
        for (k, x) in f.iter().enumerate() {
            row.push(x.to_string());
            if let Some(c) = columns.get_mut(k) {
                c.push(*x);
            }
        }
        csv_row(&mut w, &path, &row)?;
    }
    csv_finish(w, &path)?;

    let path = dir.join(FUSION_SUMMARY_CSV);
    let mut w = csv_writer(&path)?;
    let header = ["source", "mean", "sd", "min", "q25", "median", "q75", "max"];
    csv_row(&mut w, &path, &header.map(String::from))?;
    for (name, mut col) in sources.iter().zip(columns) {
        if col.is_empty() {
            continue;
        }
        col.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (col.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            col[lo] + (col[hi] - col[lo]) * (pos - lo as f64)
        };
        let m = MeanSd::of(&col);
        let row = [m.mean, m.sd, col[0], q(0.25), q(0.5), q(0.75), col[col.len() - 1]];
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(f64::to_string));
        csv_row(&mut w, &path, &rec)?;
    }
    csv_finish(w, &path)?;

    let summary = ReportSummary {
        streams,
        fusion_rows: rows,
        fusion_max_deviation: deviation,
    };
    write_json(&dir.join(REPORT_SUMMARY), &summary)?;
    Ok(summary)
}

pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = create_run_dir(cfg, "report")?;
    report_in(cfg, &dir)?;
    Ok(dir)
}
