//! Subcommand implementations.
//!
//! Every command takes a fully resolved [`RunConfig`] and an output
//! directory, and writes nothing that depends on wall-clock time or the
//! machine, so rerunning a command with the same configuration reproduces
//! its files byte for byte.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use diffcore::Rng;
use ivus_core::augment::augment_dataset;
use ivus_core::dataset::{load_dataset, write_dataset};
use ivus_core::losses::{LossWeights, RecMode};
use ivus_core::metrics::{aggregate, evaluate_sample, Aggregate, Calibration, MetricsRecord, METRIC_COLUMNS};
use ivus_core::nets::{closed_form_generator_params, GeneratorConfig, GeneratorVariant};
use ivus_core::phantom::{make_dataset, Dataset, Manifest, Sample, Split};
use ivus_core::segment::{binarize, cleanup, extract_contour, predict_labels, Region};
use ivus_core::train::{load_checkpoint, load_checkpoint_expecting, predict, save_checkpoint, train, TrainOutput};
use serde::Serialize;

use crate::config::{ExperimentKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::reference::{row_for_metric, table_for, BETAS};
use crate::{svg, VERSION};

pub const CHECKPOINT_FILE: &str = "checkpoint.ivck";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RUNS_FILE: &str = "runs.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_MD: &str = "comparison.md";
pub const MERGED_FILE: &str = "merged.csv";

/// Pixels per side of one image pixel in overlay SVGs.
const OVERLAY_SCALE: usize = 6;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Shortest representation that parses back to the same value; empty for
/// a missing value.
fn fmt_num(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Self { writer }
    }

    fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    fn save(self, path: &Path) -> Result<()> {
        let bytes = self.writer.into_inner().expect("flushing to memory");
        write(path, bytes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: String,
    pub experiment: Option<String>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

impl Provenance {
    fn new(command: &str, cfg: &RunConfig, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            experiment: cfg.experiment.kind.map(|k| k.name().to_string()),
            config_hash: cfg.hash(),
            seeds,
            version: VERSION.into(),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("provenance serializes");
        write(&dir.join(PROVENANCE_FILE), format!("{json}\n"))
    }
}

// ----------------------------------------------------------------------
// gen-data
// ----------------------------------------------------------------------

/// Write the configured phantom dataset and its manifest to `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let data = make_dataset(&cfg.phantom, cfg.data.train, cfg.data.val, cfg.data.test)?;
    create_dir(out)?;
    Ok(write_dataset(out, &data)?)
}

// ----------------------------------------------------------------------
// train
// ----------------------------------------------------------------------

/// The dataset named by `data.dir`, or a freshly generated one.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let data = match &cfg.data.dir {
        Some(dir) => load_dataset(dir)?,
        None => make_dataset(&cfg.phantom, cfg.data.train, cfg.data.val, cfg.data.test)?,
    };
    let size = data.manifest.spec.image_size;
    if size != cfg.generator.image_size {
        return Err(HarnessError::Config {
            path: cfg.data.dir.clone().unwrap_or_else(|| PathBuf::from("<generated data>")),
            detail: format!(
                "dataset images are {size} px but the generator expects {}",
                cfg.generator.image_size
            ),
        });
    }
    Ok(data)
}

/// Training split with the configured augmentation applied.
pub fn training_samples(cfg: &RunConfig, data: &Dataset) -> Result<Vec<Sample>> {
    if cfg.data.rotations == 0 && cfg.data.scales.is_empty() {
        return Ok(data.train.clone());
    }
    Ok(augment_dataset(
        &data.train,
        cfg.data.rotations,
        &cfg.data.scales,
        cfg.data.augment_seed,
    )?)
}

/// Train on the (augmented) training split, validating on the val split.
pub fn fit(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutput> {
    let samples = training_samples(cfg, data)?;
    let mut tc = cfg.train.clone();
    tc.checkpoint_path = None;
    Ok(train(&cfg.generator, &cfg.discriminator, &tc, &samples, &data.val)?)
}

pub fn checkpoint_path(cfg: &RunConfig, out: &Path) -> PathBuf {
    match &cfg.train.checkpoint_path {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => out.join(p),
        None => out.join(CHECKPOINT_FILE),
    }
}

/// Train and write the checkpoint, history, resolved config and provenance.
pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<TrainOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let output = fit(cfg, &data)?;
    create_dir(out)?;
    let ck = checkpoint_path(cfg, out);
    if let Some(parent) = ck.parent() {
        create_dir(parent)?;
    }
    save_checkpoint(&ck, &output.generator, &output.discriminator)?;
    write(&out.join(HISTORY_FILE), output.history.to_csv())?;
    write(&out.join(CONFIG_FILE), cfg.to_toml())?;
    Provenance::new("train", cfg, vec![cfg.train.seed]).save(out)?;
    Ok(output)
}

// ----------------------------------------------------------------------
// eval
// ----------------------------------------------------------------------

/// Random stream used for inference-time dropout.
pub fn evaluation_rng(seed: u64) -> Rng {
    Rng::new(seed).fork("evaluation")
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<MetricsRecord>,
    pub summary: Aggregate,
}

/// Per-sample predicted LU and MA contours, `None` where a region is empty.
fn predicted_contours(labels: &ivus_core::labels::LabelMap) -> (Option<ivus_core::geometry::Contour>, Option<ivus_core::geometry::Contour>) {
    let get = |r: Region| extract_contour(&cleanup(&binarize(labels, r))).ok();
    (get(Region::Lumen), get(Region::LumenPlusPlaque))
}

/// Evaluate a checkpoint on one split and write per-sample metrics, a
/// summary and one overlay SVG per sample. With `strict`, the checkpoint's
/// network configurations must equal the ones in `cfg`.
pub fn eval_cmd(cfg: &RunConfig, checkpoint: &Path, split: Split, strict: bool, out: &Path) -> Result<Evaluation> {
    let ck = if strict {
        load_checkpoint_expecting(checkpoint, &cfg.generator, &cfg.discriminator)?
    } else {
        load_checkpoint(checkpoint)?
    };
    let mut cfg = cfg.clone();
    cfg.generator = ck.generator.net.config().clone();
    let data = load_data(&cfg)?;
    let samples = data.split(split);
    if samples.is_empty() {
        return Err(HarnessError::Usage(format!("split `{}` is empty", split.name())));
    }
    let outputs = predict(
        &ck.generator.net,
        &ck.generator.weights,
        samples,
        cfg.train.batch_size,
        &mut evaluation_rng(cfg.train.seed),
    )?;
    let cal = Calibration::default();
    let overlays = out.join("overlays");
    create_dir(&overlays)?;
    let mut header = vec!["sample"];
    header.extend(METRIC_COLUMNS);
    let mut csv = CsvOut::new(&header);
    let mut records = Vec::with_capacity(samples.len());
    for (sample, output) in samples.iter().zip(&outputs) {
        let labels = predict_labels(output)?;
        let rec = evaluate_sample(&labels, sample, cal)?;
        let mut row = vec![sample.index.to_string()];
        row.extend(rec.values().iter().map(|&v| fmt_num(v)));
        csv.row(&row);
        let (lu, ma) = predicted_contours(&labels);
        let name = format!("{}_{:04}.svg", split.name(), sample.index);
        write(&overlays.join(name), svg::overlay(sample, (lu.as_ref(), ma.as_ref()), OVERLAY_SCALE))?;
        records.push(rec);
    }
    csv.save(&out.join(METRICS_FILE))?;
    let summary = aggregate(&records);
    write_summary(&out.join(SUMMARY_FILE), &summary)?;
    Ok(Evaluation { records, summary })
}

fn write_summary(path: &Path, a: &Aggregate) -> Result<()> {
    let mut header = vec!["statistic", "n", "lu_misses", "ma_misses"];
    header.extend(METRIC_COLUMNS);
    let mut csv = CsvOut::new(&header);
    for (name, values) in [("mean", &a.mean), ("std", &a.std)] {
        let mut row = vec![
            name.to_string(),
            a.n.to_string(),
            a.lu_misses.to_string(),
            a.ma_misses.to_string(),
        ];
        row.extend(values.iter().map(|&v| fmt_num(v)));
        csv.row(&row);
    }
    csv.save(path)
}

// ----------------------------------------------------------------------
// experiment
// ----------------------------------------------------------------------

/// One configuration of an experiment, trained once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub label: String,
    pub beta: Option<f64>,
    pub variant: GeneratorVariant,
    pub weights: LossWeights,
    /// Column of the matching reference table.
    pub reference_column: usize,
}

/// The configurations `kind` trains, in report order.
pub fn plan(cfg: &RunConfig, kind: ExperimentKind) -> Vec<Setting> {
    let base = cfg.train.weights;
    let variant = cfg.generator.variant;
    let with = |a: f64, b: f64, rec_mode: RecMode| LossWeights { a, b, rec_mode, ..base };
    let setting = |label: &str, beta, variant, weights, reference_column| Setting {
        label: label.to_string(),
        beta,
        variant,
        weights,
        reference_column,
    };
    match kind {
        ExperimentKind::LossAblation => vec![
            setting("adversarial_only", None, variant, with(1.0, 0.0, base.rec_mode), 0),
            setting("l1_only", None, variant, with(0.0, base.b, RecMode::L1), 1),
            setting("l2_only", None, variant, with(0.0, base.b, RecMode::L2), 2),
            setting("adversarial_l1", None, variant, with(1.0, base.b, RecMode::L1), 3),
            setting("adversarial_l2", None, variant, with(1.0, base.b, RecMode::L2), 4),
        ],
        ExperimentKind::BetaSweepL1 | ExperimentKind::BetaSweepL2 => {
            let mode = if kind == ExperimentKind::BetaSweepL1 {
                RecMode::L1
            } else {
                RecMode::L2
            };
            BETAS
                .iter()
                .enumerate()
                .map(|(i, &beta)| setting(&format!("beta_{beta}"), Some(beta), variant, with(1.0, beta, mode), i))
                .collect()
        }
        ExperimentKind::GeneratorComparison => GeneratorVariant::ALL
            .iter()
            .enumerate()
            .map(|(i, &v)| setting(v.name(), None, v, base, i))
            .collect(),
    }
}

fn generator_for(cfg: &RunConfig, variant: GeneratorVariant) -> GeneratorConfig {
    GeneratorConfig {
        variant,
        ..cfg.generator.clone()
    }
}

/// Outcome of one (setting, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub setting: Setting,
    pub params: usize,
    pub seed: u64,
    /// Mean test metrics, or the error that stopped the run.
    pub outcome: std::result::Result<Aggregate, String>,
}

const RUN_COLUMNS: [&str; 7] = ["experiment", "config", "beta", "variant", "params", "seed", "status"];

pub fn runs_header() -> Vec<&'static str> {
    let mut h = RUN_COLUMNS.to_vec();
    h.extend(METRIC_COLUMNS);
    h.push("error");
    h
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunRecord>,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Train one setting for one seed and score it on the test split.
pub fn run_setting(cfg: &RunConfig, data: &Dataset, setting: &Setting, seed: u64) -> Result<Aggregate> {
    let mut run = cfg.clone();
    run.generator = generator_for(cfg, setting.variant);
    run.train.weights = setting.weights;
    run.train.seed = seed;
    let output = fit(&run, data)?;
    let records: Vec<MetricsRecord> = ivus_core::train::evaluate(
        &output.generator.net,
        &output.generator.weights,
        &data.test,
        run.train.batch_size,
        &mut evaluation_rng(seed),
        Calibration::default(),
    )?;
    Ok(aggregate(&records))
}

/// Run every setting of the configured experiment for every seed, then
/// write runs, report, comparison and provenance files. Failed runs are
/// recorded and the remaining runs still execute; the result is then
/// [`HarnessError::RunsFailed`].
pub fn experiment_cmd(cfg: &RunConfig, out: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let kind = cfg
        .experiment
        .kind
        .ok_or_else(|| HarnessError::Usage("no experiment selected (set experiment.kind or pass --kind)".into()))?;
    let data = load_data(cfg)?;
    let settings = plan(cfg, kind);
    let total = settings.len() * cfg.experiment.seeds.len();
    let mut runs = Vec::with_capacity(total);
    for setting in &settings {
        let gen_cfg = generator_for(cfg, setting.variant);
        let params = ivus_core::nets::Generator::new(&gen_cfg)?.param_count();
        for &seed in &cfg.experiment.seeds {
            let outcome = run_setting(cfg, &data, setting, seed).map_err(|e| e.to_string());
            match &outcome {
                Ok(a) => eprintln!(
                    "[{}/{total}] {} seed {seed}: lu_jm {:.4} ma_jm {:.4}",
                    runs.len() + 1,
                    setting.label,
                    a.mean[0].unwrap_or(f64::NAN),
                    a.mean[1].unwrap_or(f64::NAN)
                ),
                Err(e) => eprintln!("[{}/{total}] {} seed {seed}: failed: {e}", runs.len() + 1, setting.label),
            }
            runs.push(RunRecord {
                setting: setting.clone(),
                params,
                seed,
                outcome,
            });
        }
    }
    create_dir(out)?;
    write_runs(&out.join(RUNS_FILE), kind, &runs)?;
    let rows = summarize(&settings, &runs);
    write_report(&out.join(REPORT_FILE), kind, &rows)?;
    write_comparison(out, cfg, kind, &rows)?;
    write(&out.join(CONFIG_FILE), cfg.to_toml())?;
    Provenance::new("experiment", cfg, cfg.experiment.seeds.clone()).save(out)?;
    let outcome = ExperimentOutcome { runs };
    match outcome.failed() {
        0 => Ok(outcome),
        failed => Err(HarnessError::RunsFailed { failed, total }),
    }
}

fn fmt_beta(beta: Option<f64>) -> String {
    beta.map(|b| b.to_string()).unwrap_or_default()
}

fn write_runs(path: &Path, kind: ExperimentKind, runs: &[RunRecord]) -> Result<()> {
    let mut csv = CsvOut::new(&runs_header());
    for r in runs {
        let mut row = vec![
            kind.name().to_string(),
            r.setting.label.clone(),
            fmt_beta(r.setting.beta),
            r.setting.variant.name().to_string(),
            r.params.to_string(),
            r.seed.to_string(),
        ];
        match &r.outcome {
            Ok(a) => {
                row.push("ok".into());
                row.extend(a.mean.iter().map(|&v| fmt_num(v)));
                row.push(String::new());
            }
            Err(e) => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
                row.push(e.clone());
            }
        }
        csv.row(&row);
    }
    csv.save(path)
}

/// Seed-averaged results of one setting.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub setting: Setting,
    pub params: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: [Option<f64>; 8],
}

fn summarize(settings: &[Setting], runs: &[RunRecord]) -> Vec<ReportRow> {
    settings
        .iter()
        .map(|s| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.setting.label == s.label).collect();
            let ok: Vec<&Aggregate> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let mut mean = [None; 8];
            for (i, m) in mean.iter_mut().enumerate() {
                let vals: Vec<f64> = ok.iter().filter_map(|a| a.mean[i]).collect();
                if !vals.is_empty() {
                    *m = Some(vals.iter().sum::<f64>() / vals.len() as f64);
                }
            }
            ReportRow {
                setting: s.clone(),
                params: mine.first().map_or(0, |r| r.params),
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
                mean,
            }
        })
        .collect()
}

pub fn report_header() -> Vec<&'static str> {
    let mut h = vec![
        "experiment",
        "config",
        "beta",
        "variant",
        "params",
        "model_size_m",
        "n_ok",
        "n_failed",
    ];
    h.extend(METRIC_COLUMNS);
    h
}

fn write_report(path: &Path, kind: ExperimentKind, rows: &[ReportRow]) -> Result<()> {
    let mut csv = CsvOut::new(&report_header());
    for r in rows {
        let mut row = vec![
            kind.name().to_string(),
            r.setting.label.clone(),
            fmt_beta(r.setting.beta),
            r.setting.variant.name().to_string(),
            r.params.to_string(),
            fmt_num(Some(r.params as f64 / 1e6)),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
        ];
        row.extend(r.mean.iter().map(|&v| fmt_num(v)));
        csv.row(&row);
    }
    csv.save(path)
}

/// Parameter count of `variant` at the published full scale (256 px input,
/// eight levels, 64 base channels), for context next to the desk-scale
/// count.
pub fn full_scale_params(variant: GeneratorVariant) -> usize {
    closed_form_generator_params(&GeneratorConfig {
        variant,
        image_size: 256,
        depth: 8,
        base_channels: 64,
        ..GeneratorConfig::default()
    })
}

struct ComparisonLine {
    config: String,
    metric: String,
    ours: Option<f64>,
    reference: Option<f64>,
}

fn comparison_lines(kind: ExperimentKind, rows: &[ReportRow]) -> Vec<ComparisonLine> {
    let table = table_for(kind);
    let mut lines = Vec::new();
    for r in rows {
        let col = r.setting.reference_column;
        for (i, metric) in METRIC_COLUMNS.iter().enumerate() {
            lines.push(ComparisonLine {
                config: r.setting.label.clone(),
                metric: metric.to_string(),
                ours: r.mean[i],
                reference: row_for_metric(metric).and_then(|row| table.value(row, col)),
            });
        }
        if kind == ExperimentKind::GeneratorComparison {
            lines.push(ComparisonLine {
                config: r.setting.label.clone(),
                metric: "model_size_m".into(),
                ours: Some(r.params as f64 / 1e6),
                reference: table.value("Model size /M", col),
            });
            lines.push(ComparisonLine {
                config: r.setting.label.clone(),
                metric: "full_scale_params_m".into(),
                ours: Some(full_scale_params(r.setting.variant) as f64 / 1e6),
                reference: None,
            });
        }
    }
    lines
}

fn write_comparison(out: &Path, cfg: &RunConfig, kind: ExperimentKind, rows: &[ReportRow]) -> Result<()> {
    let lines = comparison_lines(kind, rows);
    let delta = |l: &ComparisonLine| l.ours.zip(l.reference).map(|(o, p)| o - p);
    let mut csv = CsvOut::new(&["config", "metric", "ours", "reference", "delta"]);
    for l in &lines {
        csv.row([
            l.config.clone(),
            l.metric.clone(),
            fmt_num(l.ours),
            fmt_num(l.reference),
            fmt_num(delta(l)),
        ]);
    }
    csv.save(&out.join(COMPARISON_CSV))?;

    let table = table_for(kind);
    let seeds: Vec<String> = cfg.experiment.seeds.iter().map(u64::to_string).collect();
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    let mut md = format!(
        "# {kind}\n\n\
         - config hash: `{}`\n\
         - seeds: {}\n\
         - build version: {VERSION}\n\
         - reference: {}\n\n\
         Reference values come from clinical IVUS data with undisclosed training settings. \
         Deltas are informational only. Our distances are in pixels, the reference in mm.\n\n\
         | config | metric | ours | reference | delta |\n|---|---|---:|---:|---:|\n",
        cfg.hash(),
        seeds.join(", "),
        table.caption,
    );
    for l in &lines {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            l.config,
            l.metric,
            cell(l.ours),
            cell(l.reference),
            cell(delta(l))
        ));
    }
    write(&out.join(COMPARISON_MD), md)
}

// ----------------------------------------------------------------------
// report
// ----------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub rows: usize,
    pub duplicates: usize,
    pub plots: Vec<PathBuf>,
}

fn runs_file(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(RUNS_FILE)
    } else {
        input.to_path_buf()
    }
}

fn read_runs(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let csv_err = |e: csv::Error| HarnessError::Csv {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(csv_err)?.clone();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>().map_err(csv_err)?;
    Ok((header, rows))
}

/// Merge the `runs.csv` files of several experiment directories into
/// `merged.csv` and draw one SVG per experiment and metric: a line over β
/// for the reconstruction-weight sweeps, a bar per configuration otherwise.
/// Rows repeating an earlier (experiment, config, seed) are dropped with a
/// warning.
pub fn report_cmd(inputs: &[PathBuf], out: &Path) -> Result<MergeOutcome> {
    if inputs.is_empty() {
        return Err(HarnessError::Usage("report needs at least one run directory or runs.csv".into()));
    }
    let mut header: Option<(PathBuf, csv::StringRecord)> = None;
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut seen = HashSet::new();
    let mut duplicates = 0;
    for input in inputs {
        let path = runs_file(input);
        let (h, records) = read_runs(&path)?;
        match &header {
            None => header = Some((path.clone(), h)),
            Some((first, expected)) if *expected != h => {
                return Err(HarnessError::Csv {
                    path,
                    detail: format!(
                        "columns [{}] differ from [{}] in {}",
                        h.iter().collect::<Vec<_>>().join(","),
                        expected.iter().collect::<Vec<_>>().join(","),
                        first.display()
                    ),
                })
            }
            Some(_) => {}
        }
        let cols = &header.as_ref().expect("set above").1;
        let idx = |name: &str| {
            cols.iter().position(|c| c == name).ok_or_else(|| HarnessError::Csv {
                path: path.clone(),
                detail: format!("missing column `{name}`"),
            })
        };
        let key_cols = [idx("experiment")?, idx("config")?, idx("seed")?];
        for r in records {
            let key: Vec<String> = key_cols.iter().map(|&i| r.get(i).unwrap_or("").to_string()).collect();
            if seen.insert(key.clone()) {
                rows.push(r);
            } else {
                duplicates += 1;
                eprintln!(
                    "warning: dropping duplicate run experiment={} config={} seed={} from {}",
                    key[0],
                    key[1],
                    key[2],
                    path.display()
                );
            }
        }
    }
    let (_, header) = header.expect("at least one input");
    create_dir(out)?;
    let mut csv = CsvOut::new(&header.iter().collect::<Vec<_>>());
    for r in &rows {
        csv.row(r);
    }
    csv.save(&out.join(MERGED_FILE))?;
    let plots = plot_runs(&header, &rows, &out.join("plots"))?;
    Ok(MergeOutcome {
        rows: rows.len(),
        duplicates,
        plots,
    })
}

fn plot_runs(header: &csv::StringRecord, rows: &[csv::StringRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let col = |name: &str| header.iter().position(|c| c == name);
    let (Some(exp_i), Some(cfg_i)) = (col("experiment"), col("config")) else {
        return Ok(Vec::new());
    };
    let status_i = col("status");
    let beta_i = col("beta");
    let mut experiments: Vec<&str> = Vec::new();
    for r in rows {
        let e = r.get(exp_i).unwrap_or("");
        if !experiments.contains(&e) {
            experiments.push(e);
        }
    }
    let mut written = Vec::new();
    if !experiments.is_empty() {
        create_dir(dir)?;
    }
    for exp in experiments {
        let mine: Vec<&csv::StringRecord> = rows
            .iter()
            .filter(|r| r.get(exp_i) == Some(exp))
            .filter(|r| status_i.is_none_or(|i| r.get(i) == Some("ok")))
            .collect();
        let mut configs: Vec<&str> = Vec::new();
        for r in &mine {
            let c = r.get(cfg_i).unwrap_or("");
            if !configs.contains(&c) {
                configs.push(c);
            }
        }
        for metric in METRIC_COLUMNS {
            let Some(mi) = col(metric) else { continue };
            let mean_of = |config: &str| -> Option<f64> {
                let vals: Vec<f64> = mine
                    .iter()
                    .filter(|r| r.get(cfg_i) == Some(config))
                    .filter_map(|r| r.get(mi)?.parse().ok())
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            let betas: Option<Vec<f64>> = beta_i.and_then(|bi| {
                configs
                    .iter()
                    .map(|c| {
                        mine.iter()
                            .find(|r| r.get(cfg_i) == Some(c))
                            .and_then(|r| r.get(bi)?.parse::<f64>().ok())
                            .filter(|b| *b > 0.0)
                    })
                    .collect()
            });
            let title = format!("{exp}: {metric}");
            let svg = match betas {
                Some(betas) if !betas.is_empty() => {
                    let mut points: Vec<(f64, Option<f64>)> =
                        betas.iter().zip(&configs).map(|(&b, c)| (b, mean_of(c))).collect();
                    points.sort_by(|a, b| a.0.total_cmp(&b.0));
                    svg::log2_line_chart(&title, metric, "beta", &points)
                }
                _ => {
                    let bars: Vec<(String, Option<f64>)> = configs.iter().map(|c| (c.to_string(), mean_of(c))).collect();
                    svg::bar_chart(&title, metric, &bars)
                }
            };
            let path = dir.join(format!("{exp}_{metric}.svg"));
            write(&path, svg)?;
            written.push(path);
        }
    }
    Ok(written)
}
