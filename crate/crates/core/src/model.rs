//! Full network: predictor, uncertainty head and gate over one parameter
//! store, plus the z-score scaling applied to raw samples.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::c2uq::{C2uq, PeriodVars, UncertaintyVars};
use crate::config::ModelConfig;
use crate::datagen::{Sample, TurbulenceLayer};
use crate::error::{Result, StuaError};
use crate::gmur::{Gate, GateVars};
use crate::nn::{Bound, ParamStore};
use crate::predictor::{step_vars, Predictor, StepValues, StepVars};

/// Global z-score for intensities, per-category z-score for context.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mobility_mean: f64,
    pub mobility_std: f64,
    pub context_mean: Vec<f64>,
    pub context_std: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 1.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

impl Scaler {
    pub fn identity(categories: usize) -> Self {
        Self {
            mobility_mean: 0.0,
            mobility_std: 1.0,
            context_mean: vec![0.0; categories],
            context_std: vec![1.0; categories],
        }
    }

    /// Fits on intervals `0..end` only.
    pub fn fit(mobility: &Array2<f64>, context: &ndarray::Array3<f64>, end: usize) -> Result<Self> {
        let end = end.min(mobility.nrows());
        if end == 0 {
            return Err(StuaError::MissingData(
                "no intervals to fit the scaler".into(),
            ));
        }
        let (mobility_mean, mobility_std) = mean_std(mobility.slice(s![..end, ..]).iter().copied());
        let q = context.dim().2;
        let mut context_mean = Vec::with_capacity(q);
        let mut context_std = Vec::with_capacity(q);
        for c in 0..q {
            let (m, sd) = mean_std(context.slice(s![..end, .., c]).iter().copied());
            context_mean.push(m);
            context_std.push(sd);
        }
        Ok(Self {
            mobility_mean,
            mobility_std,
            context_mean,
            context_std,
        })
    }

    pub fn scale_value(&self, x: f64) -> f64 {
        (x - self.mobility_mean) / self.mobility_std
    }

    pub fn unscale_value(&self, z: f64) -> f64 {
        z * self.mobility_std + self.mobility_mean
    }

    /// Dispersions scale by the std only.
    pub fn scale_spread(&self, x: f64) -> f64 {
        x / self.mobility_std
    }

    pub fn unscale_spread(&self, z: f64) -> f64 {
        z * self.mobility_std
    }

    /// `N x Q` context block.
    pub fn scale_context(&self, ctx: &Array2<f64>) -> Array2<f64> {
        let mut out = ctx.clone();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.context_mean[c]) / self.context_std[c]);
        }
        out
    }
}

/// Scaled, tape-ready sample.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub target: usize,
    pub layer: TurbulenceLayer,
    /// Per period, `N x p`.
    pub period_values: Vec<Array2<f64>>,
    /// Per period, `N x Q`.
    pub period_context: Vec<Array2<f64>>,
    pub period_adjacency: Vec<Array2<f64>>,
    pub steps: Vec<StepValues>,
    /// `(q+2) x N`
    pub sigma_qua: Array2<f64>,
    /// `(q+2) x N`
    pub var_st: Array2<f64>,
    pub var_target: Array1<f64>,
    pub h_target: Array1<f64>,
}

impl PreparedSample {
    pub fn new(sample: &Sample, scaler: &Scaler) -> Self {
        let periods = sample.periods.dim().0;
        let period_values = (0..periods)
            .map(|m| {
                sample
                    .periods
                    .index_axis(Axis(0), m)
                    .t()
                    .mapv(|v| scaler.scale_value(v))
            })
            .collect();
        let period_context = (0..periods)
            .map(|m| scaler.scale_context(&sample.period_context.index_axis(Axis(0), m).to_owned()))
            .collect();
        let steps = (0..sample.steps.nrows())
            .map(|k| StepValues {
                values: sample.steps.row(k).mapv(|v| scaler.scale_value(v)),
                context: scaler
                    .scale_context(&sample.step_context.index_axis(Axis(0), k).to_owned()),
                adjacency: sample.step_adjacency[k].clone(),
            })
            .collect();
        Self {
            target: sample.target,
            layer: sample.layer,
            period_values,
            period_context,
            period_adjacency: sample.period_adjacency.clone(),
            steps,
            sigma_qua: sample.sigma_qua.mapv(|v| scaler.scale_spread(v)),
            var_st: sample.var_st.mapv(|v| scaler.scale_spread(v)),
            var_target: sample.var_target.mapv(|v| scaler.scale_spread(v)),
            h_target: sample.h_target.mapv(|v| scaler.scale_value(v)),
        }
    }

    pub fn regions(&self) -> usize {
        self.h_target.len()
    }

    pub fn periods(&self) -> usize {
        self.period_values.len()
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// Predictor output before the gate.
    pub h_hat: Var,
    pub uncertainty: UncertaintyVars,
    pub gate: GateVars,
}

/// One forward pass as plain values, in scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub h_hat: Array1<f64>,
    pub u_hat: Array1<f64>,
    pub h_recal: Array1<f64>,
    pub sigma_hat: Array1<f64>,
    pub f_gate: Array1<f64>,
    /// `(q+2) x N`
    pub internal: Array2<f64>,
    pub external: Array2<f64>,
    pub overall: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub regions: usize,
    pub categories: usize,
    pub store: ParamStore,
    pub predictor: Predictor,
    pub c2uq: C2uq,
    pub gate: Gate,
    pub scaler: Scaler,
}

fn col(v: &Array2<f64>) -> Array1<f64> {
    v.column(0).to_owned()
}

impl Model {
    pub fn new(config: &ModelConfig, regions: usize, categories: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let predictor = Predictor::new(&mut store, config, categories, &mut rng);
        let c2uq = C2uq::new(&mut store, config, regions, categories, &mut rng);
        let gate = Gate::new(&mut store, regions);
        Self {
            config: config.clone(),
            regions,
            categories,
            store,
            predictor,
            c2uq,
            gate,
            scaler: Scaler::identity(categories),
        }
    }

    pub fn check(&self, sample: &PreparedSample) -> Result<()> {
        if sample.regions() != self.regions {
            return Err(StuaError::shape(
                "model regions",
                self.regions,
                sample.regions(),
            ));
        }
        let periods = self.config.q + 2;
        if sample.periods() != periods {
            return Err(StuaError::shape("model periods", periods, sample.periods()));
        }
        for (v, c) in sample.period_values.iter().zip(&sample.period_context) {
            if v.dim() != (self.regions, self.config.p) {
                return Err(StuaError::shape(
                    "model period values",
                    format!("({}, {})", self.regions, self.config.p),
                    format!("{:?}", v.dim()),
                ));
            }
            if c.dim() != (self.regions, self.categories) {
                return Err(StuaError::shape(
                    "model period context",
                    format!("({}, {})", self.regions, self.categories),
                    format!("{:?}", c.dim()),
                ));
            }
        }
        self.predictor.check_steps(&sample.steps)?;
        Ok(())
    }

    /// Records one sample's forward pass on `tape`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, sample: &PreparedSample) -> ForwardVars {
        let steps: Vec<StepVars> = sample.steps.iter().map(|s| step_vars(tape, s)).collect();
        let h_hat = self.predictor.forward(tape, bound, &steps);
        let periods: Vec<PeriodVars> = (0..sample.periods())
            .map(|m| PeriodVars {
                values: tape.leaf(sample.period_values[m].clone()),
                context: tape.leaf(sample.period_context[m].clone()),
                adjacency: tape.leaf(sample.period_adjacency[m].clone()),
            })
            .collect();
        let uncertainty = self.c2uq.forward(tape, bound, &periods);
        let gate = self.gate.forward(tape, bound, h_hat, uncertainty.next);
        ForwardVars {
            h_hat,
            uncertainty,
            gate,
        }
    }

    pub fn predict(&self, sample: &PreparedSample) -> Result<Prediction> {
        self.check(sample)?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let out = self.forward(&mut tape, &bound, sample);
        let stack = |vars: &[Var]| {
            let mut m = Array2::zeros((vars.len(), self.regions));
            for (k, &v) in vars.iter().enumerate() {
                m.row_mut(k).assign(&col(tape.value(v)));
            }
            m
        };
        Ok(Prediction {
            h_hat: col(tape.value(out.h_hat)),
            u_hat: col(tape.value(out.uncertainty.next)),
            h_recal: col(tape.value(out.gate.h_recal)),
            sigma_hat: col(tape.value(out.gate.sigma_hat)),
            f_gate: col(tape.value(out.gate.f_gate)),
            internal: stack(&out.uncertainty.internal),
            external: stack(&out.uncertainty.external),
            overall: stack(&out.uncertainty.overall),
        })
    }
}
