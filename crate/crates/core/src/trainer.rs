//! Composite loss, Adam training loop with step decay, and finite-difference
//! gradient checking.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::config::{ModelConfig, TrainConfig};
use crate::datagen::TurbulenceLayer;
use crate::error::{Result, StuaError};
use crate::model::{ForwardVars, Model, PreparedSample};
use crate::nn::ParamGroup;
use crate::predictor::StepValues;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub quality_term: f64,
    pub period_variance_term: f64,
    pub final_variance_term: f64,
    pub prediction_term: f64,
    pub l2_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_terms(t: [f64; 5]) -> Self {
        Self {
            quality_term: t[0],
            period_variance_term: t[1],
            final_variance_term: t[2],
            prediction_term: t[3],
            l2_term: t[4],
            total: t.iter().sum(),
        }
    }

    fn terms(&self) -> [f64; 5] {
        [
            self.quality_term,
            self.period_variance_term,
            self.final_variance_term,
            self.prediction_term,
            self.l2_term,
        ]
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let mut acc = [0.0; 5];
        for b in items {
            for (a, t) in acc.iter_mut().zip(b.terms()) {
                *a += t;
            }
        }
        LossBreakdown::from_terms(acc.map(|a| a / items.len() as f64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Quality,
    PeriodVariance,
    FinalVariance,
    Prediction,
    L2,
}

impl LossTerm {
    pub const ALL: [LossTerm; 5] = [
        LossTerm::Quality,
        LossTerm::PeriodVariance,
        LossTerm::FinalVariance,
        LossTerm::Prediction,
        LossTerm::L2,
    ];

    pub fn active(quality_enabled: bool) -> Vec<LossTerm> {
        LossTerm::ALL
            .into_iter()
            .filter(|t| quality_enabled || *t != LossTerm::Quality)
            .collect()
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Network outputs entering the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossOutputs<'a> {
    /// `(q+2) x N`
    pub internal: &'a Array2<f64>,
    /// `(q+2) x N`
    pub overall: &'a Array2<f64>,
    pub sigma_hat: &'a Array1<f64>,
    pub h_recal: &'a Array1<f64>,
}

/// Weak labels and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct LossLabels<'a> {
    pub sigma_qua: &'a Array2<f64>,
    pub var_st: &'a Array2<f64>,
    pub var_target: &'a Array1<f64>,
    pub h_target: &'a Array1<f64>,
}

struct LossVars {
    terms: [Var; 5],
    total: Var,
}

fn label_column(tape: &mut Tape, row: ndarray::ArrayView1<f64>) -> Var {
    tape.column(&row.to_vec())
}

/// Records the loss over per-period `N x 1` outputs.
fn loss_on_tape(
    tape: &mut Tape,
    internal: &[Var],
    overall: &[Var],
    sigma_hat: Var,
    h_recal: Var,
    labels: &LossLabels,
    terms: &[LossTerm],
) -> LossVars {
    let period_sum = |tape: &mut Tape, outs: &[Var], target: &Array2<f64>| {
        let parts: Vec<Var> = outs
            .iter()
            .enumerate()
            .map(|(m, &u)| {
                let y = label_column(tape, target.row(m));
                let d = tape.sub(u, y);
                tape.sum_squares(d)
            })
            .collect();
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p);
        }
        acc
    };
    let quality = period_sum(tape, internal, labels.sigma_qua);
    let period_variance = period_sum(tape, overall, labels.var_st);
    let vt = label_column(tape, labels.var_target.view());
    let d = tape.sub(sigma_hat, vt);
    let final_variance = tape.sum_squares(d);
    let ht = label_column(tape, labels.h_target.view());
    let d = tape.sub(h_recal, ht);
    let prediction = tape.sum_squares(d);
    let l2 = tape.sum_squares(sigma_hat);

    let all = [quality, period_variance, final_variance, prediction, l2];
    let mut total: Option<Var> = None;
    for t in terms {
        let v = all[t.index()];
        total = Some(match total {
            Some(acc) => tape.add(acc, v),
            None => v,
        });
    }
    let total = total.unwrap_or_else(|| tape.scale(l2, 0.0));
    LossVars { terms: all, total }
}

fn breakdown(tape: &Tape, vars: &LossVars, terms: &[LossTerm]) -> LossBreakdown {
    let mut t = [0.0; 5];
    for term in terms {
        t[term.index()] = tape.scalar(vars.terms[term.index()]);
    }
    LossBreakdown::from_terms(t)
}

/// Composite loss on plain values.
pub fn compute_loss(
    outputs: &LossOutputs,
    labels: &LossLabels,
    quality_enabled: bool,
) -> Result<LossBreakdown> {
    let (periods, n) = labels.sigma_qua.dim();
    let checks = [
        ("compute_loss internal", outputs.internal.dim()),
        ("compute_loss overall", outputs.overall.dim()),
        ("compute_loss var_st", labels.var_st.dim()),
    ];
    for (ctx, dim) in checks {
        if dim != (periods, n) {
            return Err(StuaError::shape(
                ctx,
                format!("({periods}, {n})"),
                format!("{dim:?}"),
            ));
        }
    }
    for (ctx, len) in [
        ("compute_loss sigma_hat", outputs.sigma_hat.len()),
        ("compute_loss h_recal", outputs.h_recal.len()),
        ("compute_loss var_target", labels.var_target.len()),
        ("compute_loss h_target", labels.h_target.len()),
    ] {
        if len != n {
            return Err(StuaError::shape(ctx, n, len));
        }
    }
    if periods == 0 {
        return Err(StuaError::shape("compute_loss periods", "at least 1", 0));
    }
    let mut tape = Tape::new();
    let internal: Vec<Var> = (0..periods)
        .map(|m| label_column(&mut tape, outputs.internal.row(m)))
        .collect();
    let overall: Vec<Var> = (0..periods)
        .map(|m| label_column(&mut tape, outputs.overall.row(m)))
        .collect();
    let sigma = label_column(&mut tape, outputs.sigma_hat.view());
    let h = label_column(&mut tape, outputs.h_recal.view());
    let terms = LossTerm::active(quality_enabled);
    let vars = loss_on_tape(&mut tape, &internal, &overall, sigma, h, labels, &terms);
    Ok(breakdown(&tape, &vars, &terms))
}

fn sample_labels(sample: &PreparedSample) -> LossLabels<'_> {
    LossLabels {
        sigma_qua: &sample.sigma_qua,
        var_st: &sample.var_st,
        var_target: &sample.var_target,
        h_target: &sample.h_target,
    }
}

fn record(
    model: &Model,
    tape: &mut Tape,
    sample: &PreparedSample,
    terms: &[LossTerm],
) -> (crate::nn::Bound, LossVars) {
    let bound = model.store.bind(tape);
    let ForwardVars {
        uncertainty, gate, ..
    } = model.forward(tape, &bound, sample);
    let vars = loss_on_tape(
        tape,
        &uncertainty.internal,
        &uncertainty.overall,
        gate.sigma_hat,
        gate.h_recal,
        &sample_labels(sample),
        terms,
    );
    (bound, vars)
}

pub fn sample_loss(model: &Model, sample: &PreparedSample, terms: &[LossTerm]) -> LossBreakdown {
    let mut tape = Tape::new();
    let (_, vars) = record(model, &mut tape, sample, terms);
    breakdown(&tape, &vars, terms)
}

/// Loss and per-parameter gradients for one sample.
pub fn sample_gradients(
    model: &Model,
    sample: &PreparedSample,
    terms: &[LossTerm],
) -> (LossBreakdown, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let (bound, vars) = record(model, &mut tape, sample, terms);
    let grads = tape.backward(vars.total);
    (
        breakdown(&tape, &vars, terms),
        bound.collect(&grads, &model.store),
    )
}

/// Mean per-sample loss over a set, evaluated in parallel.
pub fn evaluate_loss(
    model: &Model,
    samples: &[PreparedSample],
    quality_enabled: bool,
) -> LossBreakdown {
    let terms = LossTerm::active(quality_enabled);
    let losses: Vec<LossBreakdown> = samples
        .par_iter()
        .map(|s| sample_loss(model, s, &terms))
        .collect();
    LossBreakdown::mean(&losses)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: model.store.zeros_like(),
            v: model.store.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((p, g), m), v) in model
            .store
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut p.value)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Learning rate in effect during 0-based epoch `epoch`.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.learning_rate * cfg.decay_rate.powi((epoch / cfg.decay_every.max(1)) as i32)
}

/// One line of metrics.jsonl. Epoch 0 is the state before any update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_total: f64,
    pub val_total: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

impl TrainReport {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Trains in place and leaves the best-validation parameters in `model`.
/// Without validation samples the training loss selects the checkpoint.
pub fn train(
    model: &mut Model,
    train_set: &[PreparedSample],
    val_set: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(StuaError::MissingData("empty training set".into()));
    }
    for s in train_set.iter().chain(val_set) {
        model.check(s)?;
    }
    let terms = LossTerm::active(cfg.quality_enabled);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let assess = |model: &Model, epoch: usize, lr: f64| -> Result<EpochRecord> {
        let train = evaluate_loss(model, train_set, cfg.quality_enabled);
        let val = evaluate_loss(model, val_set, cfg.quality_enabled);
        if !train.total.is_finite() || !val.total.is_finite() {
            return Err(StuaError::NonFiniteLoss { epoch });
        }
        Ok(EpochRecord {
            epoch,
            lr,
            train_total: train.total,
            val_total: val.total,
            train,
            val,
        })
    };
    let select = |r: &EpochRecord| {
        if val_set.is_empty() {
            r.train_total
        } else {
            r.val_total
        }
    };

    let first = assess(model, 0, learning_rate(cfg, 0))?;
    let mut best_val = select(&first);
    let mut best_epoch = 0;
    let mut best_params: Vec<Array2<f64>> = model.store.iter().map(|p| p.value.clone()).collect();
    let mut records = vec![first];

    for epoch in 1..=cfg.epochs {
        let lr = learning_rate(cfg, epoch - 1);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let results: Vec<(LossBreakdown, Vec<Array2<f64>>)> = batch
                .par_iter()
                .map(|&k| sample_gradients(model, &train_set[k], &terms))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grads = model.store.zeros_like();
            for (loss, g) in &results {
                if !loss.total.is_finite() {
                    return Err(StuaError::NonFiniteLoss { epoch });
                }
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.scaled_add(scale, gi);
                }
            }
            adam.step(model, &grads, lr);
        }
        let rec = assess(model, epoch, lr)?;
        if select(&rec) < best_val {
            best_val = select(&rec);
            best_epoch = epoch;
            best_params = model.store.iter().map(|p| p.value.clone()).collect();
        }
        records.push(rec);
    }
    for (p, best) in model.store.iter_mut().zip(best_params) {
        p.value = best;
    }
    Ok(TrainReport {
        records,
        best_epoch,
        best_val,
    })
}

/// Largest relative gradient error in one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub group: &'static str,
    pub scalars: usize,
    pub max_rel_error: f64,
}

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Denominator floor. Entries with gradients below it are compared in
/// absolute terms against `1e-4 * GRADCHECK_FLOOR`, which sits about ten
/// times above central-difference rounding noise at loss values near 10.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

/// Micro configuration for gradient checks: `p = 2`, `q = 1`.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        p: 2,
        q: 1,
        ..ModelConfig::default()
    }
}

/// A random scaled sample with `regions` regions and `categories` context
/// fields, shaped for `cfg`.
pub fn random_sample(
    cfg: &ModelConfig,
    regions: usize,
    categories: usize,
    seed: u64,
) -> PreparedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = regions;
    let mut adjacency = || {
        let a = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0));
        let sym = &a + &a.t();
        let d = sym.sum_axis(ndarray::Axis(1)).mapv(|v: f64| 1.0 / v.sqrt());
        Array2::from_shape_fn((n, n), |(i, j)| d[i] * sym[[i, j]] * d[j])
    };
    let periods = cfg.q + 2;
    let period_adjacency: Vec<Array2<f64>> = (0..periods).map(|_| adjacency()).collect();
    let steps_len = cfg.p + if cfg.q > 0 { 2 } else { 1 };
    let step_adjacency: Vec<Array2<f64>> = (0..steps_len).map(|_| adjacency()).collect();
    let mut normal =
        |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let period_values = (0..periods).map(|_| normal((n, cfg.p))).collect();
    let period_context = (0..periods).map(|_| normal((n, categories))).collect();
    let steps = step_adjacency
        .into_iter()
        .map(|a| StepValues {
            values: normal((n, 1)).column(0).to_owned(),
            context: normal((n, categories)),
            adjacency: a,
        })
        .collect();
    let sigma_qua = normal((periods, n)).mapv(f64::abs);
    let var_st = normal((periods, n)).mapv(f64::abs);
    let var_target = normal((1, n)).row(0).mapv(f64::abs);
    let h_target = normal((1, n)).row(0).to_owned();
    PreparedSample {
        target: 0,
        layer: TurbulenceLayer::Pure,
        period_values,
        period_context,
        period_adjacency,
        steps,
        sigma_qua,
        var_st,
        var_target,
        h_target,
    }
}

/// Compares analytic gradients against central differences for every
/// parameter, grouped by module. The numeric derivative is the sum of the
/// central differences of the individual loss terms.
pub fn gradcheck(model: &Model, sample: &PreparedSample, terms: &[LossTerm]) -> Vec<GroupError> {
    let (_, analytic) = sample_gradients(model, sample, terms);
    let mut probe = model.clone();
    let mut report: Vec<GroupError> = ParamGroup::ALL
        .iter()
        .map(|g| GroupError {
            group: g.label(),
            scalars: 0,
            max_rel_error: 0.0,
        })
        .collect();
    let groups: Vec<ParamGroup> = model.store.iter().map(|p| p.group).collect();
    for (k, group) in groups.into_iter().enumerate() {
        let slot = ParamGroup::ALL
            .iter()
            .position(|g| *g == group)
            .expect("known group");
        let shape = analytic[k].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let original = model.store.iter().nth(k).expect("param").value[[r, c]];
                let mut eval = |x: f64| {
                    probe.store.iter_mut().nth(k).expect("param").value[[r, c]] = x;
                    sample_loss(&probe, sample, terms).terms()
                };
                let (up, down) = (
                    eval(original + GRADCHECK_STEP),
                    eval(original - GRADCHECK_STEP),
                );
                eval(original);
                // differencing each term keeps large terms that do not
                // depend on this entry from adding their rounding noise
                let numeric: f64 = up
                    .iter()
                    .zip(&down)
                    .map(|(u, d)| (u - d) / (2.0 * GRADCHECK_STEP))
                    .sum();
                let a = analytic[k][[r, c]];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
                let entry = &mut report[slot];
                entry.scalars += 1;
                entry.max_rel_error = entry.max_rel_error.max(rel);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_labels(
        periods: usize,
        n: usize,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>, Array1<f64>) {
        (
            Array2::zeros((periods, n)),
            Array2::zeros((periods, n)),
            Array1::zeros(n),
            Array1::zeros(n),
        )
    }

    #[test]
    fn perfect_fit_is_zero() {
        let (sq, vs, vt, h) = zero_labels(3, 2);
        let h = h + 5.0;
        let out = LossOutputs {
            internal: &sq,
            overall: &vs,
            sigma_hat: &vt,
            h_recal: &h,
        };
        let labels = LossLabels {
            sigma_qua: &sq,
            var_st: &vs,
            var_target: &vt,
            h_target: &h,
        };
        assert_eq!(compute_loss(&out, &labels, true).unwrap().total, 0.0);
    }

    #[test]
    fn sigma_only_example() {
        let (sq, vs, vt, h) = zero_labels(1, 2);
        let sigma = array![3.0, 4.0];
        let out = LossOutputs {
            internal: &sq,
            overall: &vs,
            sigma_hat: &sigma,
            h_recal: &h,
        };
        let labels = LossLabels {
            sigma_qua: &sq,
            var_st: &vs,
            var_target: &vt,
            h_target: &h,
        };
        let b = compute_loss(&out, &labels, true).unwrap();
        assert_eq!(b.l2_term, 25.0);
        assert_eq!(b.final_variance_term, 25.0);
        assert_eq!(b.total, 50.0);
    }

    #[test]
    fn single_quality_example_and_flag() {
        let (sq, vs, vt, h) = zero_labels(1, 1);
        let ui = array![[1.0]];
        let out = LossOutputs {
            internal: &ui,
            overall: &vs,
            sigma_hat: &vt,
            h_recal: &h,
        };
        let labels = LossLabels {
            sigma_qua: &sq,
            var_st: &vs,
            var_target: &vt,
            h_target: &h,
        };
        let on = compute_loss(&out, &labels, true).unwrap();
        assert_eq!(on.total, 1.0);
        let off = compute_loss(&out, &labels, false).unwrap();
        assert_eq!(off.total, 0.0);
        assert_eq!(on.total - off.total, on.quality_term);
    }

    #[test]
    fn loss_shape_mismatch() {
        let (sq, vs, vt, h) = zero_labels(2, 3);
        let bad = Array2::zeros((1, 3));
        let out = LossOutputs {
            internal: &bad,
            overall: &vs,
            sigma_hat: &vt,
            h_recal: &h,
        };
        let labels = LossLabels {
            sigma_qua: &sq,
            var_st: &vs,
            var_target: &vt,
            h_target: &h,
        };
        assert!(matches!(
            compute_loss(&out, &labels, true),
            Err(StuaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_lr_step_is_bit_identical() {
        let cfg = micro_config();
        let mut model = Model::new(&cfg, 4, 2, 3);
        let sample = random_sample(&cfg, 4, 2, 4);
        let before = model.store.clone();
        let (_, g) = sample_gradients(&model, &sample, &LossTerm::active(true));
        let mut adam = Adam::new(&model);
        adam.step(&mut model, &g, 0.0);
        for (a, b) in model.store.iter().zip(before.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn zero_parameters_give_zero_gate_gradient_for_l2() {
        let cfg = micro_config();
        let mut model = Model::new(&cfg, 4, 2, 5);
        model.store.set_all(0.0);
        let sample = random_sample(&cfg, 4, 2, 6);
        let (_, g) = sample_gradients(&model, &sample, &[LossTerm::L2]);
        let k = model
            .store
            .iter()
            .position(|p| p.group == ParamGroup::Gate)
            .unwrap();
        assert!(g[k].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_gate_blocks_prediction_gradient_into_uncertainty_head() {
        let cfg = micro_config();
        let model = Model::new(&cfg, 4, 2, 7);
        let sample = random_sample(&cfg, 4, 2, 8);
        let (_, g) = sample_gradients(&model, &sample, &[LossTerm::Prediction]);
        let head = [
            ParamGroup::PeriodEmbed,
            ParamGroup::Internal,
            ParamGroup::Fm,
            ParamGroup::C2Lstm,
            ParamGroup::Aggregate,
        ];
        let mut predictor_moves = false;
        for (p, gi) in model.store.iter().zip(&g) {
            if head.contains(&p.group) {
                assert!(gi.iter().all(|&v| v == 0.0), "{}", p.name);
            }
            if p.group == ParamGroup::Sequence {
                predictor_moves |= gi.iter().any(|&v| v != 0.0);
            }
        }
        assert!(predictor_moves);
    }

    #[test]
    fn gradcheck_micro_instance() {
        let cfg = micro_config();
        let mut model = Model::new(&cfg, 4, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gate = model.gate.weight;
        *model.store.get_mut(gate) = Array2::from_shape_fn((4, 8), |_| rng.gen_range(-0.3..0.3));
        let sample = random_sample(&cfg, 4, 2, 13);
        let report = gradcheck(&model, &sample, &LossTerm::active(true));
        for g in &report {
            assert!(g.scalars > 0, "{}", g.group);
            assert!(g.max_rel_error <= 1e-4, "{}: {}", g.group, g.max_rel_error);
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate(&cfg, 0), 0.001);
        assert_eq!(learning_rate(&cfg, 9), 0.001);
        assert!((learning_rate(&cfg, 10) - 0.00098).abs() < 1e-15);
        assert!((learning_rate(&cfg, 25) - 0.001 * 0.98f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_keep_initialization() {
        let cfg = micro_config();
        let mut model = Model::new(&cfg, 4, 2, 9);
        let init = model.store.clone();
        let samples: Vec<PreparedSample> =
            (0..3).map(|k| random_sample(&cfg, 4, 2, 20 + k)).collect();
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &samples, &samples[..1], &tc).unwrap();
        assert_eq!(report.records.len(), 1);
        for (a, b) in model.store.iter().zip(init.iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = micro_config();
        let samples: Vec<PreparedSample> =
            (0..6).map(|k| random_sample(&cfg, 4, 2, 40 + k)).collect();
        let tc = TrainConfig {
            epochs: 15,
            batch_size: 2,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = Model::new(&cfg, 4, 2, 1);
            train(&mut model, &samples, &[], &tc).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert!(a.records.last().unwrap().train_total < a.records[0].train_total);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cfg = micro_config();
        let mut model = Model::new(&cfg, 4, 2, 1);
        assert!(train(&mut model, &[], &[], &TrainConfig::default()).is_err());
    }
}
