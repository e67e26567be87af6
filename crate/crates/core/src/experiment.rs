//! Experiment drivers behind the command line: dataset generation, the
//! k-fold overfitting study, the convergence study, the privacy table and
//! standalone plotting. Every driver records its outputs in a manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::Serialize;

use crate::analysis::{
    convergence_report, diffs, gap_reduction, generalization_curve, max_diff, write_curve_csv,
    ConvergenceReport, FoldResult, GeneralizationCurve,
};
use crate::config::ExperimentConfig;
use crate::data::{generate, read_csv, split_folds, write_csv, Dataset, Label, Samples};
use crate::error::{Error, Result};
use crate::mlp::{error_rate, write_checkpoint, Architecture};
use crate::optim::{initial_params, train, write_step_log, Snapshot, TrainHistory, TrainOutcome};
use crate::privacy::{budget_row, BudgetRow};
use crate::rng::RandomStream;
use crate::svg::{emit_svg, PlotSeries, PlotStyle};

/// Fork labels under the master stream.
pub mod streams {
    pub const DATA: u32 = 0;
    pub const FOLDS: u32 = 1;
    pub const CONV_DATA: u32 = 2;
    pub const CONV_TRAIN: u32 = 3;
}

pub const TABLE_HEADER: &str = "fold,sgd_train,sgd_test,sgd_diff,dpsgd_train,dpsgd_test,dpsgd_diff";
pub const HISTORY_HEADER: &str = "epoch,sgd_train,sgd_test,dpsgd_train,dpsgd_test";
pub const ACCOUNTANT_HEADER: &str = "sigma,q,steps,eps_step,eps_amplified,eps_total,delta_total";

/// `2` for 2.0, `8.5` for 8.5.
pub fn sigma_tag(sigma: f64) -> String {
    format!("{sigma}")
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamInfo {
    pub name: String,
    pub path: Vec<u32>,
    pub fingerprint: String,
}

impl StreamInfo {
    fn of(name: impl Into<String>, stream: &RandomStream) -> Self {
        StreamInfo {
            name: name.into(),
            path: stream.path().to_vec(),
            fingerprint: format!("{:016x}", stream.fingerprint()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub streams: Vec<StreamInfo>,
    pub outputs: Vec<String>,
    pub status: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub elapsed_secs: Option<f64>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Output directory plus the manifest that lists what was written into it.
pub struct Run {
    out: PathBuf,
    manifest_path: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    pub fn start(command: &str, config: &ExperimentConfig, out: &Path) -> Result<Self> {
        fs::create_dir_all(out)?;
        let mut run = Run {
            out: out.to_path_buf(),
            manifest_path: out.join(format!("{command}_manifest.json")),
            manifest: RunManifest {
                command: command.to_string(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config.hash(),
                seed: config.seed,
                streams: Vec::new(),
                outputs: Vec::new(),
                status: "running".into(),
                started_unix: unix_now(),
                finished_unix: None,
                elapsed_secs: None,
            },
            started: Instant::now(),
        };
        fs::write(out.join(format!("{command}_config.toml")), config.to_toml())?;
        run.manifest.outputs.push(format!("{command}_config.toml"));
        run.save()?;
        Ok(run)
    }

    fn save(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Io(e.into()))?;
        fs::write(&self.manifest_path, json + "\n")?;
        Ok(())
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    /// Path for a new output file relative to the run directory.
    pub fn file(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    /// Marks a file as written.
    pub fn wrote(&mut self, rel: &str) {
        self.manifest.outputs.push(rel.to_string());
    }

    pub fn stream(&mut self, name: impl Into<String>, stream: &RandomStream) {
        self.manifest.streams.push(StreamInfo::of(name, stream));
    }

    pub fn finish<T>(mut self, result: Result<T>) -> Result<(T, RunManifest)> {
        self.manifest.status = match &result {
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        };
        self.manifest.finished_unix = Some(unix_now());
        self.manifest.elapsed_secs = Some(self.started.elapsed().as_secs_f64());
        self.save()?;
        result.map(|v| (v, self.manifest))
    }
}

fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

fn dataset_for(config: &ExperimentConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(path) => {
            let d = read_csv(path)?;
            if d.attr_count() != config.attributes {
                return Err(Error::Config(format!(
                    "{} has {} attributes, config expects {}",
                    path.display(),
                    d.attr_count(),
                    config.attributes
                )));
            }
            Ok(d)
        }
        None => generate(
            &config.synthetic_spec(),
            &mut RandomStream::new(config.seed).fork(streams::DATA),
        ),
    }
}

#[derive(Debug, Clone)]
pub struct GenDataReport {
    pub records: usize,
    pub fold_sizes: Vec<usize>,
}

pub fn run_gen_data(config: &ExperimentConfig, out: &Path) -> Result<(GenDataReport, RunManifest)> {
    config.validate()?;
    let mut run = Run::start("gen_data", config, out)?;
    let result = (|| {
        let master = RandomStream::new(config.seed);
        run.stream("data", &master.fork(streams::DATA));
        let dataset = dataset_for(config, None)?;
        let path = run.file("data/dataset.csv")?;
        write_csv(&dataset, &path)?;
        run.wrote("data/dataset.csv");

        let folds = split_folds(&dataset, config.folds)?;
        let rows = folds.folds.iter().enumerate().map(|(i, idx)| {
            let pos = idx
                .iter()
                .filter(|&&j| dataset.labels()[j] == Label::Positive)
                .count();
            format!("{i},{},{pos},{}", idx.len(), idx.len() - pos)
        });
        write_lines(
            &run.file("data/folds.csv")?,
            "fold,records,positive,negative",
            rows,
        )?;
        run.wrote("data/folds.csv");
        info!("wrote {} records in {} folds", dataset.len(), folds.k());
        Ok(GenDataReport {
            records: dataset.len(),
            fold_sizes: folds.folds.iter().map(Vec::len).collect(),
        })
    })();
    run.finish(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub sigma: f64,
    pub folds: Vec<FoldResult>,
    pub exploded_steps: usize,
    pub max_postclip_norm: f64,
    pub train_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverfitReport {
    pub sgd: Vec<FoldResult>,
    pub sgd_train_secs: f64,
    pub arms: Vec<ArmSummary>,
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl OverfitReport {
    pub fn arm(&self, sigma: f64) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.sigma == sigma)
    }
}

fn fold_result(
    fold: usize,
    outcome: &TrainOutcome,
    full: &Samples,
    train_set: &Samples,
) -> Result<FoldResult> {
    Ok(FoldResult::new(
        fold,
        error_rate(&outcome.params, train_set)?,
        error_rate(&outcome.params, full)?,
    ))
}

/// Trains SGD and each DPSGD arm on every fold, scoring on the whole
/// dataset. Writes per-sigma tables, alpha-beta curves and step logs.
pub fn run_overfit(
    config: &ExperimentConfig,
    out: &Path,
    data: Option<&Path>,
) -> Result<(OverfitReport, RunManifest)> {
    config.validate()?;
    let arch = config.architecture()?;
    let mut run = Run::start("overfit", config, out)?;
    let result = overfit_body(config, &arch, data, &mut run);
    run.finish(result)
}

fn overfit_body(
    config: &ExperimentConfig,
    arch: &Architecture,
    data: Option<&Path>,
    run: &mut Run,
) -> Result<OverfitReport> {
    let master = RandomStream::new(config.seed);
    if data.is_none() {
        run.stream("data", &master.fork(streams::DATA));
    }
    let dataset = dataset_for(config, data)?;
    let folds = split_folds(&dataset, config.folds)?;
    let full = dataset.to_samples();
    let fold_root = master.fork(streams::FOLDS);

    let mut sgd = Vec::with_capacity(folds.k());
    let mut sgd_train_secs = 0.0;
    let mut arms: Vec<ArmSummary> = config
        .sigmas
        .iter()
        .map(|&sigma| ArmSummary {
            sigma,
            folds: Vec::new(),
            exploded_steps: 0,
            max_postclip_norm: 0.0,
            train_secs: 0.0,
        })
        .collect();

    for (f, idx) in folds.folds.iter().enumerate() {
        let stream = fold_root.fork(f as u32);
        run.stream(format!("fold_{f}"), &stream);
        let train_set = dataset.subset(idx).to_samples();

        let clock = Instant::now();
        let outcome = train(&train_set, &full, &config.sgd_arm(), arch, &stream)?;
        sgd_train_secs += clock.elapsed().as_secs_f64();
        let rel = format!("overfit/steps/sgd_fold_{f}.csv");
        write_step_log(&outcome.steps, &run.file(&rel)?)?;
        run.wrote(&rel);
        let r = fold_result(f, &outcome, &full, &train_set)?;
        info!(
            "fold {f} sgd: train {:.4} full {:.4}",
            r.train_error, r.full_error
        );
        sgd.push(r);

        for arm in arms.iter_mut() {
            let clock = Instant::now();
            let outcome = train(
                &train_set,
                &full,
                &config.dpsgd_arm(arm.sigma),
                arch,
                &stream,
            )?;
            arm.train_secs += clock.elapsed().as_secs_f64();
            let rel = format!("overfit/steps/sigma_{}_fold_{f}.csv", sigma_tag(arm.sigma));
            write_step_log(&outcome.steps, &run.file(&rel)?)?;
            run.wrote(&rel);
            arm.exploded_steps += outcome.steps.iter().filter(|s| s.exploded).count();
            arm.max_postclip_norm = outcome
                .steps
                .iter()
                .filter(|s| !s.exploded && s.lot_size > 0)
                .map(|s| s.postclip_max_norm)
                .fold(arm.max_postclip_norm, f64::max);
            let r = fold_result(f, &outcome, &full, &train_set)?;
            info!(
                "fold {f} dpsgd sigma {}: train {:.4} full {:.4}",
                arm.sigma, r.train_error, r.full_error
            );
            arm.folds.push(r);
        }
    }

    let sgd_curve = generalization_curve(&diffs(&sgd), config.alpha_step)?;
    let mut summary = Vec::new();
    for arm in &arms {
        let tag = sigma_tag(arm.sigma);
        let rows = sgd.iter().zip(&arm.folds).map(|(s, d)| {
            format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                s.fold, s.train_error, s.full_error, s.diff, d.train_error, d.full_error, d.diff
            )
        });
        let rel = format!("overfit/table_sigma_{tag}.csv");
        write_lines(&run.file(&rel)?, TABLE_HEADER, rows)?;
        run.wrote(&rel);

        let dp_curve = generalization_curve(&diffs(&arm.folds), config.alpha_step)?;
        let rel = format!("overfit/curve_sigma_{tag}.csv");
        write_curve_csv(&sgd_curve, &dp_curve, &run.file(&rel)?)?;
        run.wrote(&rel);
        let rel = format!("overfit/curve_sigma_{tag}.svg");
        emit_svg(
            &curve_series(&sgd_curve, &dp_curve),
            &PlotStyle::new(
                format!("alpha-beta generalization, sigma = {tag}"),
                "alpha",
                "beta",
            ),
            &run.file(&rel)?,
        )?;
        run.wrote(&rel);

        let reduction = gap_reduction(&diffs(&sgd), &diffs(&arm.folds))
            .map(|r| format!("{r:.6}"))
            .unwrap_or_else(|_| "undefined".into());
        summary.push(format!(
            "{tag},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{reduction},{}",
            mean(sgd.iter().map(|r| r.train_error)),
            mean(sgd.iter().map(|r| r.full_error)),
            mean(sgd.iter().map(|r| r.diff)),
            mean(arm.folds.iter().map(|r| r.train_error)),
            mean(arm.folds.iter().map(|r| r.full_error)),
            mean(arm.folds.iter().map(|r| r.diff)),
            max_diff(&diffs(&sgd)),
            max_diff(&diffs(&arm.folds)),
            arm.exploded_steps
        ));
    }
    write_lines(
        &run.file("overfit/summary.csv")?,
        "sigma,sgd_mean_train,sgd_mean_test,sgd_mean_diff,dpsgd_mean_train,dpsgd_mean_test,dpsgd_mean_diff,\
         sgd_max_diff,dpsgd_max_diff,gap_reduction,exploded_steps",
        summary,
    )?;
    run.wrote("overfit/summary.csv");
    Ok(OverfitReport {
        sgd,
        sgd_train_secs,
        arms,
    })
}

fn curve_series(sgd: &GeneralizationCurve, dpsgd: &GeneralizationCurve) -> Vec<PlotSeries> {
    let pts = |c: &GeneralizationCurve| c.points().iter().map(|p| (p.alpha, p.beta)).collect();
    vec![
        PlotSeries::new("SGD", pts(sgd)),
        PlotSeries::new("DPSGD", pts(dpsgd)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub sgd_train: f64,
    pub sgd_test: f64,
    pub dpsgd_train: f64,
    pub dpsgd_test: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRun {
    pub sigma: f64,
    pub rows: Vec<HistoryRow>,
    pub sgd: ConvergenceReport,
    pub dpsgd: ConvergenceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceOutput {
    pub runs: Vec<ConvergenceRun>,
}

/// History with an epoch-0 snapshot of the initial parameters in front.
fn with_initial(initial: Snapshot, history: &TrainHistory) -> Result<TrainHistory> {
    let mut h = TrainHistory::new();
    h.push(initial)?;
    for s in history.snapshots() {
        h.push(*s)?;
    }
    Ok(h)
}

fn convergence_data(config: &ExperimentConfig) -> Result<(Samples, Samples)> {
    let spec = crate::data::SyntheticSpec {
        n: config.conv_train_records + config.conv_test_records,
        ..config.synthetic_spec()
    };
    let dataset = generate(
        &spec,
        &mut RandomStream::new(config.seed).fork(streams::CONV_DATA),
    )?;
    let train_idx: Vec<usize> = (0..config.conv_train_records).collect();
    let test_idx: Vec<usize> = (config.conv_train_records..dataset.len()).collect();
    Ok((
        dataset.subset(&train_idx).to_samples(),
        dataset.subset(&test_idx).to_samples(),
    ))
}

/// Trains both arms on a fixed train/test split and records error
/// snapshots; one history file and plot per sigma.
pub fn run_convergence(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(ConvergenceOutput, RunManifest)> {
    config.validate()?;
    let arch = config.architecture()?;
    let mut run = Run::start("convergence", config, out)?;
    let result = convergence_body(config, &arch, &mut run);
    run.finish(result)
}

fn convergence_body(
    config: &ExperimentConfig,
    arch: &Architecture,
    run: &mut Run,
) -> Result<ConvergenceOutput> {
    let master = RandomStream::new(config.seed);
    run.stream("convergence_data", &master.fork(streams::CONV_DATA));
    let (train_set, test_set) = convergence_data(config)?;
    let stream = master.fork(streams::CONV_TRAIN);
    run.stream("convergence_train", &stream);

    let init = initial_params(arch, &stream);
    let initial = Snapshot {
        epoch: 0,
        train_error: error_rate(&init, &train_set)?,
        test_error: error_rate(&init, &test_set)?,
        lots: 0,
    };

    let sgd = train(&train_set, &test_set, &config.conv_sgd_arm(), arch, &stream)?;
    let sgd_history = with_initial(initial, &sgd.history)?;
    let sgd_report = convergence_report(&sgd_history, config.conv_tol)?;
    write_checkpoint(&sgd.params, &run.file("convergence/params/sgd.bin")?)?;
    run.wrote("convergence/params/sgd.bin");
    info!("sgd: {:?}", sgd_report);

    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for &sigma in &config.conv_sigmas {
        let tag = sigma_tag(sigma);
        let dp = train(
            &train_set,
            &test_set,
            &config.conv_dpsgd_arm(sigma),
            arch,
            &stream,
        )?;
        let dp_history = with_initial(initial, &dp.history)?;
        let dp_report = convergence_report(&dp_history, config.conv_tol)?;
        info!("dpsgd sigma {tag}: {:?}", dp_report);
        let rel = format!("convergence/params/dpsgd_sigma_{tag}.bin");
        write_checkpoint(&dp.params, &run.file(&rel)?)?;
        run.wrote(&rel);

        let rows: Vec<HistoryRow> = sgd_history
            .snapshots()
            .iter()
            .zip(dp_history.snapshots())
            .map(|(s, d)| HistoryRow {
                epoch: s.epoch,
                sgd_train: s.train_error,
                sgd_test: s.test_error,
                dpsgd_train: d.train_error,
                dpsgd_test: d.test_error,
            })
            .collect();
        let rel = format!("convergence/history_sigma_{tag}.csv");
        write_lines(
            &run.file(&rel)?,
            HISTORY_HEADER,
            rows.iter().map(|r| {
                format!(
                    "{},{:.6},{:.6},{:.6},{:.6}",
                    r.epoch, r.sgd_train, r.sgd_test, r.dpsgd_train, r.dpsgd_test
                )
            }),
        )?;
        run.wrote(&rel);
        let rel = format!("convergence/history_sigma_{tag}.svg");
        emit_svg(
            &history_series(&rows),
            &PlotStyle::new(
                format!("accuracy by epoch, sigma = {tag}"),
                "epoch",
                "accuracy",
            ),
            &run.file(&rel)?,
        )?;
        run.wrote(&rel);

        let epoch = |e: Option<usize>| {
            e.map(|e| e.to_string())
                .unwrap_or_else(|| "not_converged".into())
        };
        summary.push(format!(
            "{tag},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            epoch(sgd_report.epoch_train_converged),
            epoch(sgd_report.epoch_test_converged),
            epoch(dp_report.epoch_train_converged),
            epoch(dp_report.epoch_test_converged),
            sgd_report.final_train_error,
            sgd_report.final_test_error,
            dp_report.final_train_error,
            dp_report.final_test_error,
        ));
        runs.push(ConvergenceRun {
            sigma,
            rows,
            sgd: sgd_report,
            dpsgd: dp_report,
        });
    }
    write_lines(
        &run.file("convergence/summary.csv")?,
        "sigma,sgd_train_epoch,sgd_test_epoch,dpsgd_train_epoch,dpsgd_test_epoch,\
         sgd_final_train,sgd_final_test,dpsgd_final_train,dpsgd_final_test",
        summary,
    )?;
    run.wrote("convergence/summary.csv");
    Ok(ConvergenceOutput { runs })
}

fn history_series(rows: &[HistoryRow]) -> Vec<PlotSeries> {
    let series = |name: &str, f: fn(&HistoryRow) -> f64| {
        PlotSeries::new(
            name,
            rows.iter().map(|r| (r.epoch as f64, 1.0 - f(r))).collect(),
        )
    };
    vec![
        series("SGD train", |r| r.sgd_train),
        series("SGD test", |r| r.sgd_test).dashed(),
        series("DPSGD train", |r| r.dpsgd_train),
        series("DPSGD test", |r| r.dpsgd_test).dashed(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccountantQuery {
    pub q: f64,
    pub steps: u64,
    pub delta: f64,
}

impl AccountantQuery {
    /// One fold of training data, `epochs * ceil(fold / L)` lots.
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let fold = config.fold_size();
        AccountantQuery {
            q: config.lot_size as f64 / fold as f64,
            steps: (config.epochs * fold.div_ceil(config.lot_size)) as u64,
            delta: config.delta,
        }
    }
}

#[derive(Debug)]
pub struct AccountantRow {
    pub sigma: f64,
    pub row: Result<BudgetRow>,
}

impl AccountantRow {
    pub fn to_csv(&self, query: &AccountantQuery) -> String {
        match &self.row {
            Ok(r) => format!(
                "{},{},{},{:.6},{:.6e},{:.6},{:.6e}",
                r.sigma, r.q, r.steps, r.eps_step, r.eps_amplified, r.eps_total, r.delta_total
            ),
            Err(Error::OutOfRegime(_)) => format!(
                "{},{},{},out_of_regime,out_of_regime,out_of_regime,out_of_regime",
                self.sigma, query.q, query.steps
            ),
            Err(_) => format!(
                "{},{},{},error,error,error,error",
                self.sigma, query.q, query.steps
            ),
        }
    }
}

pub fn accountant_rows(sigmas: &[f64], query: &AccountantQuery) -> Vec<AccountantRow> {
    sigmas
        .iter()
        .map(|&sigma| AccountantRow {
            sigma,
            row: budget_row(sigma, query.q, query.steps, query.delta),
        })
        .collect()
}

pub fn run_accountant(
    config: &ExperimentConfig,
    query: &AccountantQuery,
    out: &Path,
) -> Result<(Vec<AccountantRow>, RunManifest)> {
    config.validate()?;
    if !(query.q > 0.0 && query.q <= 1.0)
        || query.steps == 0
        || !(query.delta > 0.0 && query.delta < 1.0)
    {
        return Err(Error::Config(format!(
            "accountant needs q in (0, 1], steps >= 1 and delta in (0, 1); got {query:?}"
        )));
    }
    let mut run = Run::start("accountant", config, out)?;
    let result = (|| {
        let rows = accountant_rows(&config.sigmas, query);
        write_lines(
            &run.file("accountant.csv")?,
            ACCOUNTANT_HEADER,
            rows.iter().map(|r| r.to_csv(query)),
        )?;
        run.wrote("accountant.csv");
        Ok(rows)
    })();
    run.finish(result)
}

/// Renders a curve or history CSV produced by the drivers as SVG.
pub fn plot_csv(input: &Path, output: &Path) -> Result<()> {
    let text = fs::read_to_string(input)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let parse_err = |row: usize, message: String| Error::Parse {
        path: input.to_path_buf(),
        row,
        message,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let values: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        let values = values.map_err(|e| parse_err(i + 2, e.to_string()))?;
        if values.len() != header.split(',').count() {
            return Err(parse_err(
                i + 2,
                format!("expected {} columns", header.split(',').count()),
            ));
        }
        rows.push(values);
    }
    let name = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plot")
        .to_string();
    let (series, style) = if header == crate::analysis::CURVE_HEADER {
        let col = |c: usize| rows.iter().map(|r| (r[0], r[c])).collect();
        (
            vec![
                PlotSeries::new("SGD", col(1)),
                PlotSeries::new("DPSGD", col(2)),
            ],
            PlotStyle::new(name, "alpha", "beta"),
        )
    } else if header == HISTORY_HEADER {
        let rows: Vec<HistoryRow> = rows
            .iter()
            .map(|r| HistoryRow {
                epoch: r[0] as usize,
                sgd_train: r[1],
                sgd_test: r[2],
                dpsgd_train: r[3],
                dpsgd_test: r[4],
            })
            .collect();
        (
            history_series(&rows),
            PlotStyle::new(name, "epoch", "accuracy"),
        )
    } else {
        return Err(parse_err(1, format!("unrecognized header {header:?}")));
    };
    emit_svg(&series, &style, output)
}
