//! Point-estimation head: one graph-convolution block per sequence step
//! (weekly summary, daily summary, closeness intervals) feeding a row-wise
//! mobility LSTM with a region-shared readout.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Result, StuaError};
use crate::nn::{graph_conv, Bound, GraphConvStack, Linear, Lstm, ParamGroup, ParamStore};

/// Value-level graph convolution weights, `W^0 .. W^{K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub weights: Vec<Array2<f64>>,
}

/// `H^k = ReLU(A_hat H^{k-1} W^{k-1})`, `H^0 = X`.
pub fn gcn_forward(
    a_hat: &Array2<f64>,
    x: &Array2<f64>,
    params: &GcnParams,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    if a_hat.dim() != (n, n) {
        return Err(StuaError::shape(
            "gcn_forward adjacency",
            format!("({n}, {n})"),
            format!("{:?}", a_hat.dim()),
        ));
    }
    let mut width = x.ncols();
    for w in &params.weights {
        if w.nrows() != width {
            return Err(StuaError::shape(
                "gcn_forward weight rows",
                width,
                w.nrows(),
            ));
        }
        width = w.ncols();
    }
    let mut tape = Tape::new();
    let a = tape.leaf(a_hat.clone());
    let xv = tape.leaf(x.clone());
    let ws: Vec<Var> = params
        .weights
        .iter()
        .map(|w| tape.leaf(w.clone()))
        .collect();
    let out = graph_conv(&mut tape, a, xv, &ws, false);
    Ok(tape.value(out).clone())
}

/// One predictor step on the tape.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    /// `N x 1` intensities.
    pub values: Var,
    /// `N x Q` context.
    pub context: Var,
    /// `N x N` normalized adjacency.
    pub adjacency: Var,
}

/// One predictor step as plain values.
#[derive(Debug, Clone)]
pub struct StepValues {
    pub values: Array1<f64>,
    pub context: Array2<f64>,
    pub adjacency: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub gcn: GraphConvStack,
    /// Step context embedded to the GCN feature width and added.
    pub context: Linear,
    pub lstm: Lstm,
    pub readout: Linear,
    pub categories: usize,
}

impl Predictor {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        categories: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![1];
        dims.extend(std::iter::repeat_n(cfg.gcn_hidden, cfg.gcn_layers));
        Self {
            gcn: GraphConvStack::new(store, "predictor.gcn", ParamGroup::Gcn, &dims, rng),
            context: Linear::new(
                store,
                "predictor.context",
                ParamGroup::Sequence,
                categories,
                cfg.gcn_hidden,
                rng,
            ),
            lstm: Lstm::new(
                store,
                "predictor.lstm",
                ParamGroup::Sequence,
                cfg.gcn_hidden,
                cfg.lstm_hidden,
                cfg.lstm_layers,
                rng,
            ),
            readout: Linear::new(
                store,
                "predictor.readout",
                ParamGroup::Sequence,
                cfg.lstm_hidden,
                1,
                rng,
            ),
            categories,
        }
    }

    /// `N x 1` next-interval estimate.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, steps: &[StepVars]) -> Var {
        let features: Vec<Var> = steps
            .iter()
            .map(|step| {
                let g = self
                    .gcn
                    .forward(tape, bound, step.adjacency, step.values, false);
                let c = self.context.forward(tape, bound, step.context);
                tape.add(g, c)
            })
            .collect();
        let h = self.lstm.forward(tape, bound, &features);
        self.readout.forward(tape, bound, h)
    }

    pub fn check_steps(&self, steps: &[StepValues]) -> Result<usize> {
        let first = steps
            .first()
            .ok_or_else(|| StuaError::shape("predict_mobility steps", "at least 1", 0))?;
        let n = first.values.len();
        for step in steps {
            if step.values.len() != n {
                return Err(StuaError::shape(
                    "predict_mobility values",
                    n,
                    step.values.len(),
                ));
            }
            if step.context.dim() != (n, self.categories) {
                return Err(StuaError::shape(
                    "predict_mobility context",
                    format!("({n}, {})", self.categories),
                    format!("{:?}", step.context.dim()),
                ));
            }
            if step.adjacency.dim() != (n, n) {
                return Err(StuaError::shape(
                    "predict_mobility adjacency",
                    format!("({n}, {n})"),
                    format!("{:?}", step.adjacency.dim()),
                ));
            }
        }
        Ok(n)
    }
}

pub(crate) fn step_vars(tape: &mut Tape, step: &StepValues) -> StepVars {
    let n = step.values.len();
    StepVars {
        values: tape.leaf(
            step.values
                .clone()
                .into_shape_with_order((n, 1))
                .expect("column"),
        ),
        context: tape.leaf(step.context.clone()),
        adjacency: tape.leaf(step.adjacency.clone()),
    }
}

/// Value-level forward pass of the predictor head.
pub fn predict_mobility(
    store: &ParamStore,
    predictor: &Predictor,
    steps: &[StepValues],
) -> Result<Array1<f64>> {
    predictor.check_steps(steps)?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let vars: Vec<StepVars> = steps.iter().map(|s| step_vars(&mut tape, s)).collect();
    let out = predictor.forward(&mut tape, &bound, &vars);
    Ok(tape.value(out).column(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_graph_single_layer_is_relu() {
        let x = array![[1.0, -2.0], [-0.5, 3.0]];
        let out = gcn_forward(
            &Array2::eye(2),
            &x,
            &GcnParams {
                weights: vec![Array2::eye(2)],
            },
        )
        .unwrap();
        assert_eq!(out, x.mapv(|v: f64| v.max(0.0)));
        let neg = gcn_forward(
            &Array2::eye(2),
            &(-x.mapv(f64::abs)),
            &GcnParams {
                weights: vec![Array2::eye(2)],
            },
        )
        .unwrap();
        assert_eq!(neg, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn two_node_average() {
        let a = array![[0.5, 0.5], [0.5, 0.5]];
        let out = gcn_forward(
            &a,
            &array![[2.0], [4.0]],
            &GcnParams {
                weights: vec![array![[1.0]]],
            },
        )
        .unwrap();
        assert_eq!(out, array![[3.0], [3.0]]);
    }

    #[test]
    fn gcn_dimension_mismatch() {
        let err = gcn_forward(
            &Array2::eye(2),
            &Array2::zeros((2, 3)),
            &GcnParams {
                weights: vec![Array2::eye(2)],
            },
        );
        assert!(matches!(err, Err(StuaError::DimensionMismatch { .. })));
    }

    fn steps(n: usize, count: usize, q: usize, rng: &mut ChaCha8Rng) -> Vec<StepValues> {
        (0..count)
            .map(|_| StepValues {
                values: Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
                context: Array2::from_shape_fn((n, q), |_| rng.gen_range(0.0..1.0)),
                adjacency: Array2::from_elem((n, n), 1.0 / n as f64),
            })
            .collect()
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let pred = Predictor::new(&mut store, &ModelConfig::default(), 3, &mut rng);
        store.set_all(0.0);
        let out = predict_mobility(&store, &pred, &steps(5, 8, 3, &mut rng)).unwrap();
        assert_eq!(out, Array1::<f64>::zeros(5));
    }

    #[test]
    fn shape_and_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let pred = Predictor::new(&mut store, &ModelConfig::default(), 2, &mut rng);
        for n in [2, 4, 7] {
            let s = steps(n, 5, 2, &mut rng);
            let a = predict_mobility(&store, &pred, &s).unwrap();
            let b = predict_mobility(&store, &pred, &s).unwrap();
            assert_eq!(a.len(), n);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let pred = Predictor::new(&mut store, &ModelConfig::default(), 2, &mut rng);
        let n = 5;
        let s: Vec<StepValues> = (0..6)
            .map(|_| {
                let a = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.0..1.0));
                StepValues {
                    values: Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0)),
                    context: Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0)),
                    adjacency: &a + &a.t(),
                }
            })
            .collect();
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<StepValues> = s
            .iter()
            .map(|st| StepValues {
                values: Array1::from_shape_fn(n, |i| st.values[perm[i]]),
                context: Array2::from_shape_fn((n, 2), |(i, c)| st.context[[perm[i], c]]),
                adjacency: Array2::from_shape_fn((n, n), |(i, j)| st.adjacency[[perm[i], perm[j]]]),
            })
            .collect();
        let base = predict_mobility(&store, &pred, &s).unwrap();
        let moved = predict_mobility(&store, &pred, &permuted).unwrap();
        for i in 0..n {
            assert!((moved[i] - base[perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn step_shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let pred = Predictor::new(&mut store, &ModelConfig::default(), 2, &mut rng);
        let mut s = steps(3, 4, 2, &mut rng);
        s[2].adjacency = Array2::zeros((2, 2));
        assert!(predict_mobility(&store, &pred, &s).is_err());
        assert!(predict_mobility(&store, &pred, &[]).is_err());
    }
}
