//! Pipeline steps behind the command line and their on-disk artifacts.
//!
//! Everything lands under one output directory:
//!
//! | file | written by |
//! |---|---|
//! | `data/{regions,mobility,context}.csv` | synth, ingest |
//! | `checkpoint.txt`, `metrics.jsonl` | train |
//! | `metrics.json`, `predictions.csv`, `diagnostics/`, `plots/` | eval |
//! | `indicators.csv` | indicators |
//! | `report.md` | report |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::checkpoint;
use crate::config::{Config, DataSource};
use crate::datagen::{
    admissible_targets, build_sample, ingest_csv, make_training_samples, sample_seed,
    synth_mobility, Dataset, SampleGeometry, TurbulenceLayer, TurbulenceSpec, TIMESTAMP_FORMAT,
};
use crate::error::{Result, StuaError};
use crate::indicators::{variance_views, IndicatorKind, NeighborSet};
use crate::metrics::{covered, mape, picp, rmse};
use crate::model::{Model, Prediction, PreparedSample, Scaler};
use crate::plot;
use crate::trainer::{evaluate_loss, train, LossBreakdown, TrainReport};

pub const VERSION: &str = concat!("stua ", env!("CARGO_PKG_VERSION"));

/// Writes via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| StuaError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| StuaError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| StuaError::io(path, e))
}

/// Artifact locations under one output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub out: PathBuf,
}

impl RunPaths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }
    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.out.join("checkpoint.txt")
    }
    pub fn metrics_log(&self) -> PathBuf {
        self.out.join("metrics.jsonl")
    }
    pub fn metrics(&self) -> PathBuf {
        self.out.join("metrics.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.out.join("predictions.csv")
    }
    pub fn indicators(&self) -> PathBuf {
        self.out.join("indicators.csv")
    }
    pub fn diagnostics_dir(&self) -> PathBuf {
        self.out.join("diagnostics")
    }
    pub fn plots_dir(&self) -> PathBuf {
        self.out.join("plots")
    }
    pub fn report(&self) -> PathBuf {
        self.out.join("report.md")
    }
}

/// `weekly`, `daily1..dailyq`, `closeness`.
pub fn period_label(m: usize, q: usize) -> String {
    match m {
        0 => "weekly".to_string(),
        m if m == q + 1 => "closeness".to_string(),
        m => format!("daily{m}"),
    }
}

/// Chronological split of the admissible targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub val: Vec<usize>,
}

pub fn split_targets(targets: &[usize], train_fraction: f64, test_fraction: f64) -> Split {
    let len = targets.len();
    let n_train = ((train_fraction * len as f64).round() as usize).min(len);
    let n_test = ((test_fraction * len as f64).round() as usize).min(len - n_train);
    Split {
        train: targets[..n_train].to_vec(),
        test: targets[n_train..n_train + n_test].to_vec(),
        val: targets[n_train + n_test..].to_vec(),
    }
}

/// Builds the dataset the config describes, without touching disk.
pub fn load_dataset(cfg: &Config) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Synthetic => synth_mobility(&cfg.data.generator, cfg.train.seed),
        DataSource::Csv => {
            let need = |key: &str, v: &Option<String>| {
                v.clone().ok_or_else(|| {
                    StuaError::InvalidConfig(format!(
                        "data.{key} is required when data.source = \"csv\""
                    ))
                })
            };
            ingest_csv(
                Path::new(&need("regions_csv", &cfg.data.regions_csv)?),
                Path::new(&need("mobility_csv", &cfg.data.mobility_csv)?),
                Path::new(&need("context_csv", &cfg.data.context_csv)?),
                cfg.data.interval_minutes,
            )
        }
    }
}

pub fn step_synth(cfg: &Config, paths: &RunPaths) -> Result<Dataset> {
    let data = synth_mobility(&cfg.data.generator, cfg.train.seed)?;
    data.write_csv(&paths.data_dir())?;
    Ok(data)
}

pub fn step_ingest(cfg: &Config, paths: &RunPaths) -> Result<Dataset> {
    if cfg.data.source != DataSource::Csv {
        return Err(StuaError::InvalidConfig(
            "ingest needs data.source = \"csv\" with the three csv paths".into(),
        ));
    }
    let data = load_dataset(cfg)?;
    data.write_csv(&paths.data_dir())?;
    Ok(data)
}

/// The prepared dataset under `out/data`, or the configured source.
pub fn dataset_for(cfg: &Config, paths: &RunPaths) -> Result<Dataset> {
    let dir = paths.data_dir();
    if dir.join("mobility.csv").exists() {
        Dataset::read_csv_dir(&dir, cfg.data.interval_minutes)
    } else {
        load_dataset(cfg)
    }
}

/// Split, scaler and geometry shared by training and evaluation.
#[derive(Debug, Clone)]
pub struct Plan {
    pub geometry: SampleGeometry,
    pub split: Split,
    pub neighbors: NeighborSet,
}

pub fn plan(cfg: &Config, data: &Dataset) -> Result<Plan> {
    let geometry = SampleGeometry::new(&cfg.model, data.mobility.intervals_per_day());
    let targets: Vec<usize> = admissible_targets(data.mobility.len(), &geometry).collect();
    if targets.is_empty() {
        return Err(StuaError::InsufficientHistory {
            target: data.mobility.len(),
            needed: admissible_targets(0, &geometry).start + 1,
        });
    }
    let split = split_targets(&targets, cfg.train.train_fraction, cfg.train.test_fraction);
    if split.train.is_empty() || split.test.is_empty() {
        return Err(StuaError::InsufficientHistory {
            target: data.mobility.len(),
            needed: admissible_targets(0, &geometry).start + 2,
        });
    }
    Ok(Plan {
        geometry,
        split,
        neighbors: NeighborSet::from_graph(&data.graph),
    })
}

fn prepare_targets(
    data: &Dataset,
    plan: &Plan,
    scaler: &Scaler,
    targets: &[usize],
    spec_for: impl Fn(usize) -> Result<TurbulenceSpec> + Sync,
) -> Result<Vec<PreparedSample>> {
    targets
        .par_iter()
        .map(|&t| {
            let sample = build_sample(data, &plan.neighbors, &plan.geometry, t, &spec_for(t)?)?;
            Ok(PreparedSample::new(&sample, scaler))
        })
        .collect()
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
}

/// Trains from the dataset in memory and returns the best checkpoint.
pub fn fit(cfg: &Config, data: &Dataset) -> Result<TrainOutcome> {
    let plan = plan(cfg, data)?;
    let last_train = *plan.split.train.last().expect("nonempty");
    let scaler = Scaler::fit(&data.mobility.values, &data.context.values, last_train + 1)?;
    let raw = make_training_samples(
        data,
        &plan.geometry,
        &plan.split.train,
        &cfg.turbulence.layers,
        cfg.turbulence.noisy_fraction,
        cfg.turbulence.ood_fraction,
        cfg.train.seed,
    )?;
    let train_set: Vec<PreparedSample> = raw
        .iter()
        .map(|s| PreparedSample::new(s, &scaler))
        .collect();
    let val_set = prepare_targets(data, &plan, &scaler, &plan.split.val, |_| {
        Ok(TurbulenceSpec::pure())
    })?;

    let mut model = Model::new(
        &cfg.model,
        data.graph.len(),
        data.context.categories(),
        cfg.train.seed,
    );
    model.scaler = scaler;
    let report = train(&mut model, &train_set, &val_set, &cfg.train)?;
    Ok(TrainOutcome { model, report })
}

pub fn step_train(cfg: &Config, paths: &RunPaths) -> Result<TrainOutcome> {
    let data = dataset_for(cfg, paths)?;
    let outcome = fit(cfg, &data)?;
    checkpoint::save(&outcome.model, &paths.checkpoint())?;
    write_atomic(&paths.metrics_log(), outcome.report.to_jsonl().as_bytes())?;
    Ok(outcome)
}

/// One test cell.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub timestamp: String,
    pub region_id: String,
    pub h_true: f64,
    pub h_pred: f64,
    pub sigma: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    /// Percentage.
    pub mape: f64,
    pub mape_excluded: usize,
    pub picp: f64,
    pub records: Vec<IntervalRecord>,
    pub test_loss: LossBreakdown,
    /// Mean internal uncertainty over pure and OOD-corrupted test windows,
    /// in intensity units.
    pub mean_internal_pure: f64,
    pub mean_internal_ood: f64,
    pub ood_samples: usize,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl EvalReport {
    /// Flat, key-sorted JSON object.
    pub fn to_json(&self) -> String {
        let mut m = Map::new();
        m.insert("rmse".into(), json!(self.rmse));
        m.insert("mape".into(), json!(self.mape));
        m.insert("mape_excluded".into(), json!(self.mape_excluded));
        m.insert("picp".into(), json!(self.picp));
        m.insert("test_cells".into(), json!(self.records.len()));
        m.insert("quality_term".into(), json!(self.test_loss.quality_term));
        m.insert(
            "period_variance_term".into(),
            json!(self.test_loss.period_variance_term),
        );
        m.insert(
            "final_variance_term".into(),
            json!(self.test_loss.final_variance_term),
        );
        m.insert(
            "prediction_term".into(),
            json!(self.test_loss.prediction_term),
        );
        m.insert("l2_term".into(), json!(self.test_loss.l2_term));
        m.insert("loss_total".into(), json!(self.test_loss.total));
        m.insert("mean_internal_pure".into(), json!(self.mean_internal_pure));
        m.insert("mean_internal_ood".into(), json!(self.mean_internal_ood));
        m.insert("ood_samples".into(), json!(self.ood_samples));
        m.insert("seed".into(), json!(self.seed));
        m.insert("config_hash".into(), json!(self.config_hash));
        m.insert("version".into(), json!(self.version));
        serde_json::to_string_pretty(&Value::Object(m)).expect("json") + "\n"
    }

    pub fn predictions_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| StuaError::Parse {
            path: "predictions.csv".into(),
            message: e.to_string(),
        };
        w.write_record([
            "timestamp",
            "region_id",
            "h_true",
            "h_pred",
            "sigma",
            "covered",
        ])
        .map_err(err)?;
        for r in &self.records {
            w.write_record([
                r.timestamp.clone(),
                r.region_id.clone(),
                r.h_true.to_string(),
                r.h_pred.to_string(),
                r.sigma.to_string(),
                r.covered.to_string(),
            ])
            .map_err(err)?;
        }
        w.into_inner().map_err(|e| StuaError::Parse {
            path: "predictions.csv".into(),
            message: e.to_string(),
        })
    }
}

/// Seed of the `draw`-th OOD corruption used at evaluation time.
pub fn ood_eval_seed(base: u64, target: usize, draw: usize) -> u64 {
    sample_seed(
        base ^ 0x6576_616c_0000_0000 ^ draw as u64,
        target,
        TurbulenceLayer::Ood,
    )
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Region-major `region_id,period,kind,value` rows of one prediction's
/// internal, external and overall uncertainty, in intensity units.
pub fn uncertainty_fields_csv(
    prediction: &Prediction,
    region_ids: &[String],
    q: usize,
    scaler: &Scaler,
) -> String {
    let mut out = String::from("region_id,period,kind,value\n");
    for (i, id) in region_ids.iter().enumerate() {
        for m in 0..prediction.internal.nrows() {
            for (kind, field) in [
                ("u_internal", &prediction.internal),
                ("u_external", &prediction.external),
                ("u_overall", &prediction.overall),
            ] {
                let _ = writeln!(
                    out,
                    "{id},{},{kind},{}",
                    period_label(m, q),
                    scaler.unscale_spread(field[[m, i]])
                );
            }
        }
    }
    out
}

/// Evaluates `model` on the test split.
pub fn evaluate(
    cfg: &Config,
    data: &Dataset,
    model: &Model,
) -> Result<(EvalReport, Vec<(usize, Prediction)>)> {
    let plan = plan(cfg, data)?;
    let scaler = &model.scaler;
    let tests = &plan.split.test;
    let pure = prepare_targets(data, &plan, scaler, tests, |_| Ok(TurbulenceSpec::pure()))?;
    let predictions: Vec<Prediction> = pure
        .par_iter()
        .map(|s| model.predict(s))
        .collect::<Result<_>>()?;

    let n = data.graph.len();
    let mut h_hat = Array2::zeros((tests.len(), n));
    let mut sigma = Array2::zeros((tests.len(), n));
    let mut h_true = Array2::zeros((tests.len(), n));
    let mut records = Vec::with_capacity(tests.len() * n);
    for (k, (&t, pred)) in tests.iter().zip(&predictions).enumerate() {
        let ts = data
            .mobility
            .timestamp(t)
            .format(TIMESTAMP_FORMAT)
            .to_string();
        for (i, id) in data.graph.region_ids().iter().enumerate() {
            let (p, s, y) = (
                scaler.unscale_value(pred.h_recal[i]),
                scaler.unscale_spread(pred.sigma_hat[i]).abs(),
                data.mobility.values[[t, i]],
            );
            h_hat[[k, i]] = p;
            sigma[[k, i]] = s;
            h_true[[k, i]] = y;
            records.push(IntervalRecord {
                timestamp: ts.clone(),
                region_id: id.clone(),
                h_true: y,
                h_pred: p,
                sigma: s,
                covered: covered(p, s, y),
            });
        }
    }
    let m = mape(&h_hat, &h_true, cfg.eval.mape_floor)?;

    let draws = cfg.eval.ood_draws;
    let ood_targets: Vec<(usize, usize)> = tests
        .iter()
        .flat_map(|&t| (0..draws).map(move |d| (t, d)))
        .collect();
    let ood_internal: Vec<f64> = ood_targets
        .par_iter()
        .map(|&(t, d)| {
            let spec = TurbulenceSpec::new(
                TurbulenceLayer::Ood,
                cfg.turbulence.ood_fraction,
                ood_eval_seed(cfg.train.seed, t, d),
            )?;
            let sample = build_sample(data, &plan.neighbors, &plan.geometry, t, &spec)?;
            let pred = model.predict(&PreparedSample::new(&sample, scaler))?;
            Ok(pred.internal.mean().unwrap_or(0.0))
        })
        .collect::<Result<_>>()?;

    let report = EvalReport {
        rmse: rmse(&h_hat, &h_true)?,
        mape: m.value,
        mape_excluded: m.excluded,
        picp: picp(&h_hat, &sigma, &h_true)?,
        records,
        test_loss: evaluate_loss(model, &pure, cfg.train.quality_enabled),
        mean_internal_pure: scaler.unscale_spread(mean(
            predictions.iter().map(|p| p.internal.mean().unwrap_or(0.0)),
        )),
        mean_internal_ood: scaler.unscale_spread(mean(ood_internal.iter().copied())),
        ood_samples: ood_internal.len(),
        seed: cfg.train.seed,
        config_hash: cfg.hash(),
        version: VERSION.to_string(),
    };
    Ok((report, tests.iter().copied().zip(predictions).collect()))
}

fn write_plots(data: &Dataset, report: &EvalReport, paths: &RunPaths) -> Result<()> {
    let dir = paths.plots_dir();
    let ids = data.graph.region_ids();
    let n = ids.len();
    for (i, id) in ids.iter().enumerate() {
        let rows: Vec<&IntervalRecord> = report.records.iter().skip(i).step_by(n).collect();
        let pick = |f: fn(&IntervalRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
        plot::interval_chart(
            &pick(|r| r.h_true),
            &pick(|r| r.h_pred),
            &pick(|r| r.sigma),
            &dir.join(format!("interval_{id}.png")),
        )?;
    }
    let last = &report.records[report.records.len() - n..];
    plot::region_heatmap(
        data.graph.coords(),
        &last.iter().map(|r| r.h_pred).collect::<Vec<_>>(),
        &dir.join("heatmap_h.png"),
    )?;
    plot::region_heatmap(
        data.graph.coords(),
        &last.iter().map(|r| r.sigma).collect::<Vec<_>>(),
        &dir.join("heatmap_sigma.png"),
    )
}

pub fn step_eval(cfg: &Config, paths: &RunPaths) -> Result<EvalReport> {
    let data = dataset_for(cfg, paths)?;
    let model = checkpoint::load(&paths.checkpoint())?;
    if model.regions != data.graph.len() || model.categories != data.context.categories() {
        return Err(StuaError::Checkpoint(format!(
            "checkpoint expects {} regions and {} context fields, data has {} and {}",
            model.regions,
            model.categories,
            data.graph.len(),
            data.context.categories()
        )));
    }
    if model.config != cfg.model {
        return Err(StuaError::Checkpoint(
            "checkpoint model settings differ from the config".into(),
        ));
    }
    let (report, predictions) = evaluate(cfg, &data, &model)?;
    write_atomic(&paths.metrics(), report.to_json().as_bytes())?;
    write_atomic(&paths.predictions(), &report.predictions_csv()?)?;
    for (t, pred) in &predictions {
        let text =
            uncertainty_fields_csv(pred, data.graph.region_ids(), cfg.model.q, &model.scaler);
        write_atomic(
            &paths.diagnostics_dir().join(format!("target_{t}.csv")),
            text.as_bytes(),
        )?;
    }
    if cfg.eval.plots {
        write_plots(&data, &report, paths)?;
    }
    Ok(report)
}

/// Indicator fields of the most recent admissible window, with the quality
/// gap taken under the OOD turbulence level.
pub fn indicators_csv(cfg: &Config, data: &Dataset) -> Result<String> {
    let plan = plan(cfg, data)?;
    let target = *plan
        .split
        .val
        .last()
        .or(plan.split.test.last())
        .expect("nonempty");
    let spec = TurbulenceSpec::new(
        TurbulenceLayer::Ood,
        cfg.turbulence.ood_fraction,
        sample_seed(cfg.train.seed, target, TurbulenceLayer::Ood),
    )?;
    let sample = build_sample(data, &plan.neighbors, &plan.geometry, target, &spec)?;
    let g = &plan.geometry;
    let views = variance_views(&sample.periods, &plan.neighbors);
    let var_ep = views.var_ep_field();
    let var_st = views.st_variance();

    let mut out = String::from("region_id,period,kind,value\n");
    for (i, id) in data.graph.region_ids().iter().enumerate() {
        for m in 0..g.periods() {
            for (kind, v) in [
                (IndicatorKind::Quality, sample.sigma_qua[[m, i]]),
                (IndicatorKind::VarS, views.var_s[[m, i]]),
                (IndicatorKind::VarEp, var_ep[[m, i]]),
                (IndicatorKind::VarIp, views.var_ip[[m, i]]),
                (IndicatorKind::VarSt, var_st[[m, i]]),
            ] {
                let _ = writeln!(out, "{id},{},{},{v}", period_label(m, g.q), kind.label());
            }
        }
    }
    Ok(out)
}

pub fn step_indicators(cfg: &Config, paths: &RunPaths) -> Result<String> {
    let data = dataset_for(cfg, paths)?;
    let text = indicators_csv(cfg, &data)?;
    write_atomic(&paths.indicators(), text.as_bytes())?;
    Ok(text)
}

/// Markdown summary of `metrics.json` and `metrics.jsonl`.
pub fn step_report(paths: &RunPaths) -> Result<String> {
    let read = |p: PathBuf| std::fs::read_to_string(&p).map_err(|e| StuaError::io(p, e));
    let metrics: Value =
        serde_json::from_str(&read(paths.metrics())?).map_err(|e| StuaError::Parse {
            path: paths.metrics(),
            message: e.to_string(),
        })?;
    let mut out =
        String::from("# Run report\n\n## Test metrics\n\n| metric | value |\n|---|---|\n");
    if let Value::Object(map) = &metrics {
        for (k, v) in map {
            let _ = writeln!(out, "| {k} | {v} |");
        }
    }
    if let Ok(log) = read(paths.metrics_log()) {
        out.push_str("\n## Training\n\n| epoch | lr | train | val |\n|---|---|---|---|\n");
        for line in log.lines().filter(|l| !l.trim().is_empty()) {
            let r: crate::trainer::EpochRecord =
                serde_json::from_str(line).map_err(|e| StuaError::Parse {
                    path: paths.metrics_log(),
                    message: e.to_string(),
                })?;
            let _ = writeln!(
                out,
                "| {} | {:.6} | {:.6} | {:.6} |",
                r.epoch, r.lr, r.train_total, r.val_total
            );
        }
    }
    write_atomic(&paths.report(), out.as_bytes())?;
    Ok(out)
}

/// Data, training, evaluation and report in one go.
pub fn run_experiment(config_path: &Path, out: &Path) -> Result<EvalReport> {
    let cfg = Config::load(config_path)?;
    run_with_config(&cfg, &RunPaths::new(out))
}

pub fn run_with_config(cfg: &Config, paths: &RunPaths) -> Result<EvalReport> {
    match cfg.data.source {
        DataSource::Synthetic => step_synth(cfg, paths)?,
        DataSource::Csv => step_ingest(cfg, paths)?,
    };
    step_train(cfg, paths)?;
    let report = step_eval(cfg, paths)?;
    step_indicators(cfg, paths)?;
    step_report(paths)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_default_sizes() {
        let targets: Vec<usize> = (174..240).collect();
        let s = split_targets(&targets, 0.6, 0.3);
        assert_eq!((s.train.len(), s.test.len(), s.val.len()), (40, 20, 6));
        assert_eq!(s.train[0], 174);
        assert_eq!(s.test[0], 214);
        assert_eq!(*s.val.last().unwrap(), 239);
    }

    #[test]
    fn period_labels() {
        let labels: Vec<String> = (0..5).map(|m| period_label(m, 3)).collect();
        assert_eq!(
            labels,
            ["weekly", "daily1", "daily2", "daily3", "closeness"]
        );
        assert_eq!(period_label(1, 0), "closeness");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/file.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
