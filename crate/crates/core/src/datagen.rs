//! Mobility data: synthetic generation, CSV ingestion, turbulence injection
//! and assembly of training samples.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Result, StuaError};
use crate::graphcore::{
    build_period_stack, gravity_adjacency, normalize_adjacency, period_adjacency, required_history,
    AdjacencyMatrix, UrbanGraph,
};
use crate::indicators::{target_variance, variance_views, NeighborSet};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Per-interval, per-region intensities (`T_total x N`, persons per interval).
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityTensor {
    pub values: Array2<f64>,
    pub interval_minutes: u32,
    pub start: NaiveDateTime,
}

impl MobilityTensor {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn intervals_per_day(&self) -> usize {
        (1440 / self.interval_minutes) as usize
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + TimeDelta::minutes(i64::from(self.interval_minutes) * t as i64)
    }
}

/// Context factors (`T_total x N x Q`), one numeric value per category.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTensor {
    pub values: Array3<f64>,
    pub category_names: Vec<String>,
}

impl ContextTensor {
    pub fn categories(&self) -> usize {
        self.category_names.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: UrbanGraph,
    pub mobility: MobilityTensor,
    pub context: ContextTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_regions: usize,
    pub days: usize,
    pub intervals_per_day: usize,
    /// Mean intensity level of a region.
    pub base_amplitude: f64,
    /// Relative amplitude of the daily harmonic.
    pub daily_weight: f64,
    /// Relative amplitude of the weekly harmonic.
    pub weekly_weight: f64,
    /// Per (interval, region) probability of an event bump.
    pub event_rate: f64,
    /// Event bump relative to the region level.
    pub event_magnitude: f64,
    /// Fractional damping of mobility at full weather intensity.
    pub weather_weight: f64,
    /// Gaussian noise std relative to the region level.
    pub noise_weight: f64,
    pub grid_spacing_km: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_regions: 6,
            days: 10,
            intervals_per_day: 24,
            base_amplitude: 100.0,
            daily_weight: 0.3,
            weekly_weight: 0.1,
            event_rate: 0.0,
            event_magnitude: 0.5,
            weather_weight: 0.0,
            noise_weight: 0.0,
            grid_spacing_km: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StuaError::InvalidConfig(format!("data.generator: {m}")));
        if self.n_regions < 2 {
            return bad("n_regions must be at least 2");
        }
        if self.days == 0 {
            return bad("days must be positive");
        }
        if self.intervals_per_day == 0 || 1440 % self.intervals_per_day != 0 {
            return bad("intervals_per_day must be positive and divide 1440 minutes");
        }
        if !(0.0..=1.0).contains(&self.event_rate) {
            return bad("event_rate must lie in [0, 1]");
        }
        let finite = [
            self.base_amplitude,
            self.daily_weight,
            self.weekly_weight,
            self.event_magnitude,
            self.weather_weight,
            self.noise_weight,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("amplitudes and weights must be finite and non-negative");
        }
        if !(self.grid_spacing_km > 0.0) {
            return bad("grid_spacing_km must be positive");
        }
        Ok(())
    }
}

pub const CONTEXT_CATEGORIES: [&str; 4] = ["time_of_day", "day_of_week", "weather", "event"];

fn synthetic_start() -> NaiveDateTime {
    // a Monday
    NaiveDate::from_ymd_opt(2021, 1, 4)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date")
}

/// Daily and weekly harmonics per region plus optional event bumps, weather
/// damping and Gaussian noise, clipped at 0.
pub fn synth_mobility(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_regions;
    let ipd = cfg.intervals_per_day;
    let total = cfg.days * ipd;
    let tau = std::f64::consts::TAU;

    let cols = (n as f64).sqrt().ceil() as usize;
    let mut ids = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    for i in 0..n {
        let jitter_x = rng.gen_range(-0.25..0.25) * cfg.grid_spacing_km;
        let jitter_y = rng.gen_range(-0.25..0.25) * cfg.grid_spacing_km;
        ids.push(format!("R{i:03}"));
        coords.push((
            (i % cols) as f64 * cfg.grid_spacing_km + jitter_x,
            (i / cols) as f64 * cfg.grid_spacing_km + jitter_y,
        ));
    }
    let graph = UrbanGraph::new(ids, coords)?;

    let levels: Vec<f64> = (0..n)
        .map(|_| cfg.base_amplitude * rng.gen_range(0.6..1.4))
        .collect();
    let daily_phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..tau)).collect();
    let weekly_phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..tau)).collect();
    let weather: Vec<f64> = (0..cfg.days).map(|_| rng.gen_range(0.0..1.0)).collect();

    let mut values = Array2::zeros((total, n));
    let mut context = Array3::zeros((total, n, CONTEXT_CATEGORIES.len()));
    for t in 0..total {
        let clock = (t % ipd) as f64 / ipd as f64;
        let week = (t % (7 * ipd)) as f64 / (7 * ipd) as f64;
        let day = t / ipd;
        for i in 0..n {
            let event = rng.gen_bool(cfg.event_rate);
            let z: f64 = rng.sample(StandardNormal);
            let periodic = 1.0
                + cfg.daily_weight * (tau * clock + daily_phase[i]).sin()
                + cfg.weekly_weight * (tau * week + weekly_phase[i]).sin();
            let mut h = levels[i] * periodic * (1.0 - cfg.weather_weight * weather[day]);
            if event {
                h += cfg.event_magnitude * levels[i];
            }
            h += cfg.noise_weight * levels[i] * z;
            values[[t, i]] = h.max(0.0);

            context[[t, i, 0]] = clock;
            context[[t, i, 1]] = (day % 7) as f64 / 6.0;
            context[[t, i, 2]] = weather[day];
            context[[t, i, 3]] = if event { 1.0 } else { 0.0 };
        }
    }

    Ok(Dataset {
        graph,
        mobility: MobilityTensor {
            values,
            interval_minutes: (1440 / ipd) as u32,
            start: synthetic_start(),
        },
        context: ContextTensor {
            values: context,
            category_names: CONTEXT_CATEGORIES.iter().map(|c| c.to_string()).collect(),
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MobilityRow {
    timestamp_iso8601: String,
    region_id: String,
    intensity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextRow {
    timestamp_iso8601: String,
    region_id: String,
    factor_name: String,
    value: f64,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> StuaError {
    StuaError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(text, TIMESTAMP_FORMAT)
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M").ok())
        .or_else(|| {
            chrono::DateTime::parse_from_rfc3339(text)
                .ok()
                .map(|d| d.naive_utc())
        })
}

/// Maps timestamps onto a regular interval grid starting at `start`.
struct TimeAxis {
    start: NaiveDateTime,
    interval_minutes: u32,
}

impl TimeAxis {
    fn index(&self, ts: NaiveDateTime, raw: &str, path: &Path) -> Result<usize> {
        let minutes = (ts - self.start).num_minutes();
        let step = i64::from(self.interval_minutes);
        if minutes < 0 || minutes % step != 0 || (ts - self.start).num_seconds() % 60 != 0 {
            return Err(parse_err(
                path,
                format!(
                    "timestamp {raw} is off the {}-minute grid",
                    self.interval_minutes
                ),
            ));
        }
        Ok((minutes / step) as usize)
    }
}

/// Reads the three CSV inputs into a dataset on a regular time axis.
/// Missing `(timestamp, region)` cells are an error.
pub fn ingest_csv(
    regions_path: &Path,
    mobility_path: &Path,
    context_path: &Path,
    interval_minutes: u32,
) -> Result<Dataset> {
    if interval_minutes == 0 || 1440 % interval_minutes != 0 {
        return Err(StuaError::InvalidConfig(
            "interval_minutes must divide a day".into(),
        ));
    }
    let graph = UrbanGraph::read_csv(regions_path)?;
    let n = graph.len();
    let region_index: HashMap<&str, usize> = graph
        .region_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut reader =
        csv::Reader::from_path(mobility_path).map_err(|e| parse_err(mobility_path, e))?;
    let mut rows = Vec::new();
    let mut previous: Option<NaiveDateTime> = None;
    for row in reader.deserialize::<MobilityRow>() {
        let row = row.map_err(|e| parse_err(mobility_path, e))?;
        let ts = parse_timestamp(&row.timestamp_iso8601).ok_or_else(|| {
            parse_err(
                mobility_path,
                format!("bad timestamp {}", row.timestamp_iso8601),
            )
        })?;
        if previous.is_some_and(|p| ts < p) {
            return Err(StuaError::NonMonotonicTimestamps(format!(
                "{} appears after a later timestamp in {}",
                row.timestamp_iso8601,
                mobility_path.display()
            )));
        }
        previous = Some(ts);
        let region = *region_index
            .get(row.region_id.as_str())
            .ok_or_else(|| StuaError::UnknownRegion(row.region_id.clone()))?;
        if !row.intensity.is_finite() || row.intensity < 0.0 {
            return Err(parse_err(
                mobility_path,
                format!(
                    "intensity {} must be finite and non-negative",
                    row.intensity
                ),
            ));
        }
        rows.push((ts, row.timestamp_iso8601, region, row.intensity));
    }
    let (start, end) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(StuaError::MissingData("mobility file has no rows".into())),
    };
    let axis = TimeAxis {
        start,
        interval_minutes,
    };
    let total = axis.index(end, "last timestamp", mobility_path)? + 1;

    let mut values = Array2::from_elem((total, n), f64::NAN);
    for (ts, raw, region, intensity) in &rows {
        let t = axis.index(*ts, raw, mobility_path)?;
        if !values[[t, *region]].is_nan() {
            return Err(StuaError::DuplicateCell {
                timestamp: raw.clone(),
                region: graph.region_ids()[*region].clone(),
            });
        }
        values[[t, *region]] = *intensity;
    }
    if let Some(((t, i), _)) = values.indexed_iter().find(|(_, v)| v.is_nan()) {
        let mobility = MobilityTensor {
            values: Array2::zeros((0, 0)),
            interval_minutes,
            start,
        };
        return Err(StuaError::MissingData(format!(
            "no mobility value for region `{}` at {}",
            graph.region_ids()[i],
            mobility.timestamp(t).format(TIMESTAMP_FORMAT)
        )));
    }

    let mut reader =
        csv::Reader::from_path(context_path).map_err(|e| parse_err(context_path, e))?;
    let mut categories: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut previous: Option<NaiveDateTime> = None;
    for row in reader.deserialize::<ContextRow>() {
        let row = row.map_err(|e| parse_err(context_path, e))?;
        let ts = parse_timestamp(&row.timestamp_iso8601).ok_or_else(|| {
            parse_err(
                context_path,
                format!("bad timestamp {}", row.timestamp_iso8601),
            )
        })?;
        if previous.is_some_and(|p| ts < p) {
            return Err(StuaError::NonMonotonicTimestamps(format!(
                "{} appears after a later timestamp in {}",
                row.timestamp_iso8601,
                context_path.display()
            )));
        }
        previous = Some(ts);
        let region = *region_index
            .get(row.region_id.as_str())
            .ok_or_else(|| StuaError::UnknownRegion(row.region_id.clone()))?;
        let t = axis.index(ts, &row.timestamp_iso8601, context_path)?;
        if t >= total {
            return Err(parse_err(
                context_path,
                format!(
                    "timestamp {} is past the mobility range",
                    row.timestamp_iso8601
                ),
            ));
        }
        if !row.value.is_finite() {
            return Err(parse_err(
                context_path,
                format!("non-finite value for {}", row.factor_name),
            ));
        }
        let c = match categories.iter().position(|c| *c == row.factor_name) {
            Some(c) => c,
            None => {
                categories.push(row.factor_name.clone());
                categories.len() - 1
            }
        };
        if cells.insert((t, region, c), row.value).is_some() {
            return Err(StuaError::DuplicateCell {
                timestamp: row.timestamp_iso8601,
                region: row.region_id,
            });
        }
    }
    if categories.is_empty() {
        return Err(StuaError::MissingData("context file has no rows".into()));
    }
    let q = categories.len();
    let mobility = MobilityTensor {
        values,
        interval_minutes,
        start,
    };
    let mut context = Array3::zeros((total, n, q));
    for t in 0..total {
        for i in 0..n {
            for (c, name) in categories.iter().enumerate() {
                context[[t, i, c]] = *cells.get(&(t, i, c)).ok_or_else(|| {
                    StuaError::MissingData(format!(
                        "no `{name}` context for region `{}` at {}",
                        graph.region_ids()[i],
                        mobility.timestamp(t).format(TIMESTAMP_FORMAT)
                    ))
                })?;
            }
        }
    }

    Ok(Dataset {
        graph,
        mobility,
        context: ContextTensor {
            values: context,
            category_names: categories,
        },
    })
}

impl Dataset {
    /// Writes `regions.csv`, `mobility.csv` and `context.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| StuaError::io(dir, e))?;
        self.graph.write_csv(&dir.join("regions.csv"))?;

        let path = dir.join("mobility.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| parse_err(&path, e))?;
        for t in 0..self.mobility.len() {
            let ts = self
                .mobility
                .timestamp(t)
                .format(TIMESTAMP_FORMAT)
                .to_string();
            for (i, id) in self.graph.region_ids().iter().enumerate() {
                w.serialize(MobilityRow {
                    timestamp_iso8601: ts.clone(),
                    region_id: id.clone(),
                    intensity: self.mobility.values[[t, i]],
                })
                .map_err(|e| parse_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| StuaError::io(&path, e))?;

        let path = dir.join("context.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| parse_err(&path, e))?;
        for t in 0..self.mobility.len() {
            let ts = self
                .mobility
                .timestamp(t)
                .format(TIMESTAMP_FORMAT)
                .to_string();
            for (i, id) in self.graph.region_ids().iter().enumerate() {
                for (c, name) in self.context.category_names.iter().enumerate() {
                    w.serialize(ContextRow {
                        timestamp_iso8601: ts.clone(),
                        region_id: id.clone(),
                        factor_name: name.clone(),
                        value: self.context.values[[t, i, c]],
                    })
                    .map_err(|e| parse_err(&path, e))?;
                }
            }
        }
        w.flush().map_err(|e| StuaError::io(&path, e))
    }

    pub fn read_csv_dir(dir: &Path, interval_minutes: u32) -> Result<Self> {
        ingest_csv(
            &dir.join("regions.csv"),
            &dir.join("mobility.csv"),
            &dir.join("context.csv"),
            interval_minutes,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurbulenceLayer {
    Pure,
    Noisy,
    Ood,
}

impl TurbulenceLayer {
    pub fn id(self) -> u64 {
        match self {
            TurbulenceLayer::Pure => 0,
            TurbulenceLayer::Noisy => 1,
            TurbulenceLayer::Ood => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TurbulenceLayer::Pure => "pure",
            TurbulenceLayer::Noisy => "noisy",
            TurbulenceLayer::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurbulenceSpec {
    pub layer: TurbulenceLayer,
    pub noise_std_fraction: f64,
    pub seed: u64,
}

impl TurbulenceSpec {
    pub fn pure() -> Self {
        Self {
            layer: TurbulenceLayer::Pure,
            noise_std_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn new(layer: TurbulenceLayer, noise_std_fraction: f64, seed: u64) -> Result<Self> {
        if layer == TurbulenceLayer::Pure && noise_std_fraction != 0.0 {
            return Err(StuaError::InvalidConfig(
                "pure turbulence layer must have zero noise".into(),
            ));
        }
        if !(noise_std_fraction >= 0.0) || !noise_std_fraction.is_finite() {
            return Err(StuaError::InvalidConfig(
                "noise_std_fraction must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            layer,
            noise_std_fraction,
            seed,
        })
    }
}

/// One corrupted observation, clipped at 0.
pub fn corrupt(value: f64, perturbation: f64) -> f64 {
    (value + perturbation).max(0.0)
}

/// Adds i.i.d. Gaussian noise with std `fraction * std_region(window)` to
/// every cell of a `T x N` window.
pub fn inject_noise(window: &Array2<f64>, spec: &TurbulenceSpec) -> Array2<f64> {
    if spec.layer == TurbulenceLayer::Pure || spec.noise_std_fraction == 0.0 {
        return window.clone();
    }
    let stds: Vec<f64> = window.axis_iter(Axis(1)).map(|col| col.std(0.0)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = window.clone();
    for mut row in out.rows_mut() {
        for (v, sd) in row.iter_mut().zip(&stds) {
            let z: f64 = rng.sample(StandardNormal);
            *v = corrupt(*v, spec.noise_std_fraction * sd * z);
        }
    }
    out
}

/// Seed of one sample, mixed from the base seed, target index and layer.
pub fn sample_seed(base: u64, target: usize, layer: TurbulenceLayer) -> u64 {
    let mut x = base
        ^ (target as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ layer.id().wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGeometry {
    pub p: usize,
    pub q: usize,
    pub intervals_per_day: usize,
    pub rho: f64,
    pub flow_floor: f64,
}

impl SampleGeometry {
    pub fn new(model: &ModelConfig, intervals_per_day: usize) -> Self {
        Self {
            p: model.p,
            q: model.q,
            intervals_per_day,
            rho: model.rho,
            flow_floor: model.flow_floor,
        }
    }

    pub fn periods(&self) -> usize {
        self.q + 2
    }

    /// Predictor sequence length: weekly summary, daily summary, closeness.
    pub fn steps(&self) -> usize {
        self.p + if self.q > 0 { 2 } else { 1 }
    }
}

/// Next-interval targets with enough history for both the input stack and
/// the shifted target window.
pub fn admissible_targets(total: usize, geom: &SampleGeometry) -> Range<usize> {
    required_history(geom.p, geom.intervals_per_day)..total
}

/// Everything one forward/backward pass needs, in raw units.
#[derive(Debug, Clone)]
pub struct Sample {
    pub target: usize,
    pub layer: TurbulenceLayer,
    /// `(q+2) x p x N` period values (possibly corrupted).
    pub periods: Array3<f64>,
    /// `(q+2) x N x Q` period-mean context.
    pub period_context: Array3<f64>,
    /// `(q+2)` normalized period adjacencies.
    pub period_adjacency: Vec<Array2<f64>>,
    /// `S x N` predictor step values.
    pub steps: Array2<f64>,
    /// `S x N x Q`
    pub step_context: Array3<f64>,
    /// `S` normalized adjacencies, one per step.
    pub step_adjacency: Vec<Array2<f64>>,
    /// `(q+2) x N`
    pub sigma_qua: Array2<f64>,
    /// `(q+2) x N`
    pub var_st: Array2<f64>,
    pub var_target: Array1<f64>,
    pub h_target: Array1<f64>,
}

impl Sample {
    pub fn regions(&self) -> usize {
        self.h_target.len()
    }
}

fn mean_context(context: &Array3<f64>, intervals: &[usize]) -> Array2<f64> {
    let (_, n, q) = context.dim();
    let mut out = Array2::zeros((n, q));
    for &t in intervals {
        out += &context.index_axis(Axis(0), t);
    }
    out / intervals.len() as f64
}

/// Builds the sample predicting interval `target` under one turbulence draw.
pub fn build_sample(
    data: &Dataset,
    neighbors: &NeighborSet,
    geom: &SampleGeometry,
    target: usize,
    spec: &TurbulenceSpec,
) -> Result<Sample> {
    let mobility = &data.mobility.values;
    if target >= mobility.nrows() || target == 0 {
        return Err(StuaError::InsufficientHistory {
            target,
            needed: mobility.nrows(),
        });
    }
    let (p, q, ipd) = (geom.p, geom.q, geom.intervals_per_day);
    let last = target - 1;
    let stack = build_period_stack(last, p, q, ipd)?;
    let lo = stack.all_indices()[0];

    let mut corrupted = mobility.clone();
    let noisy = inject_noise(&mobility.slice(s![lo..target, ..]).to_owned(), spec);
    corrupted.slice_mut(s![lo..target, ..]).assign(&noisy);

    let periods = stack.gather(&corrupted);
    let n = mobility.ncols();
    let period_count = geom.periods();

    let mut sigma_qua = Array2::zeros((period_count, n));
    for m in 0..period_count {
        let intervals = stack.period_intervals(m);
        for i in 0..n {
            let gaps: Vec<f64> = intervals
                .iter()
                .map(|&t| (mobility[[t, i]] - corrupted[[t, i]]).abs())
                .collect();
            sigma_qua[[m, i]] = crate::indicators::period_average(&gaps);
        }
    }
    let var_st = variance_views(&periods, neighbors).st_variance();
    let var_target = target_variance(&corrupted, neighbors, last, p, q, ipd)?;

    let mut per_interval: BTreeMap<usize, AdjacencyMatrix> = BTreeMap::new();
    let mut averaged = |intervals: &[usize]| -> Result<Array2<f64>> {
        let mut mats = Vec::with_capacity(intervals.len());
        for &t in intervals {
            if let std::collections::btree_map::Entry::Vacant(e) = per_interval.entry(t) {
                let row: Vec<f64> = corrupted.row(t).to_vec();
                let adj = gravity_adjacency(&data.graph, &row, geom.rho, geom.flow_floor)?
                    .clip_negative();
                e.insert(adj);
            }
            mats.push(per_interval[&t].clone());
        }
        Ok(normalize_adjacency(&period_adjacency(&mats)?)?.values)
    };

    let mut period_adjacency_list = Vec::with_capacity(period_count);
    let mut period_context = Array3::zeros((period_count, n, data.context.categories()));
    for m in 0..period_count {
        let intervals = stack.period_intervals(m);
        period_adjacency_list.push(averaged(&intervals)?);
        period_context
            .index_axis_mut(Axis(0), m)
            .assign(&mean_context(&data.context.values, &intervals));
    }

    let steps_len = geom.steps();
    let mut steps = Array2::zeros((steps_len, n));
    let mut step_context = Array3::zeros((steps_len, n, data.context.categories()));
    let mut step_adjacency = Vec::with_capacity(steps_len);

    steps.row_mut(0).assign(
        &periods
            .index_axis(Axis(0), 0)
            .mean_axis(Axis(0))
            .expect("p > 0"),
    );
    step_context
        .index_axis_mut(Axis(0), 0)
        .assign(&period_context.index_axis(Axis(0), 0));
    step_adjacency.push(period_adjacency_list[0].clone());
    let mut next = 1;
    if q > 0 {
        let daily = periods.slice(s![1..=q, .., ..]);
        let daily_mean = daily
            .mean_axis(Axis(0))
            .and_then(|d| d.mean_axis(Axis(0)))
            .expect("q > 0");
        steps.row_mut(1).assign(&daily_mean);
        let daily_intervals: Vec<usize> = (1..=q).flat_map(|m| stack.period_intervals(m)).collect();
        step_context
            .index_axis_mut(Axis(0), 1)
            .assign(&mean_context(&data.context.values, &daily_intervals));
        step_adjacency.push(averaged(&daily_intervals)?);
        next = 2;
    }
    let closeness = stack.closeness();
    for (j, &t) in closeness.iter().enumerate() {
        steps
            .row_mut(next + j)
            .assign(&periods.slice(s![q + 1, j, ..]));
        step_context
            .index_axis_mut(Axis(0), next + j)
            .assign(&data.context.values.index_axis(Axis(0), t));
        step_adjacency.push(period_adjacency_list[q + 1].clone());
    }

    Ok(Sample {
        target,
        layer: spec.layer,
        periods,
        period_context,
        period_adjacency: period_adjacency_list,
        steps,
        step_context,
        step_adjacency,
        sigma_qua,
        var_st,
        var_target,
        h_target: mobility.row(target).to_owned(),
    })
}

pub fn layer_fraction(layer: TurbulenceLayer, noisy_fraction: f64, ood_fraction: f64) -> f64 {
    match layer {
        TurbulenceLayer::Pure => 0.0,
        TurbulenceLayer::Noisy => noisy_fraction,
        TurbulenceLayer::Ood => ood_fraction,
    }
}

/// Emits one sample per (target, turbulence layer), layers interleaved per
/// target in the order given.
pub fn make_training_samples(
    data: &Dataset,
    geom: &SampleGeometry,
    targets: &[usize],
    layers: &[TurbulenceLayer],
    noisy_fraction: f64,
    ood_fraction: f64,
    base_seed: u64,
) -> Result<Vec<Sample>> {
    let neighbors = NeighborSet::from_graph(&data.graph);
    let mut out = Vec::with_capacity(targets.len() * layers.len());
    for &target in targets {
        for &layer in layers {
            let spec = TurbulenceSpec::new(
                layer,
                layer_fraction(layer, noisy_fraction, ood_fraction),
                sample_seed(base_seed, target, layer),
            )?;
            out.push(build_sample(data, &neighbors, geom, target, &spec)?);
        }
    }
    Ok(out)
}
