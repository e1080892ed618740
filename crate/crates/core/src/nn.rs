//! Named parameter storage and the layers shared by both heads.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};

/// Parameter groups, reported separately by the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Gcn,
    Sequence,
    PeriodEmbed,
    Internal,
    Fm,
    C2Lstm,
    Aggregate,
    Gate,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Gcn,
        ParamGroup::Sequence,
        ParamGroup::PeriodEmbed,
        ParamGroup::Internal,
        ParamGroup::Fm,
        ParamGroup::C2Lstm,
        ParamGroup::Aggregate,
        ParamGroup::Gate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Gcn => "gcn",
            ParamGroup::Sequence => "sequence",
            ParamGroup::PeriodEmbed => "period_embed",
            ParamGroup::Internal => "internal",
            ParamGroup::Fm => "fm",
            ParamGroup::C2Lstm => "c2_lstm",
            ParamGroup::Aggregate => "aggregate",
            ParamGroup::Gate => "gate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Xavier/Glorot uniform bound.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        value: Array2<f64>,
    ) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Param { name, group, value });
        ParamId(self.params.len() - 1)
    }

    pub fn glorot(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = glorot_bound(shape.0, shape.1);
        let value = Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..=bound));
        self.add(name, group, value)
    }

    pub fn zeros(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
    ) -> ParamId {
        self.add(name, group, Array2::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.params
            .iter()
            .map(|p| Array2::zeros(p.value.dim()))
            .collect()
    }

    pub fn set_all(&mut self, value: f64) {
        for p in &mut self.params {
            p.value.fill(value);
        }
    }
}

/// Tape handles of a bound parameter store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Per-parameter gradients, zero where the output does not depend on it.
    pub fn collect(&self, grads: &Gradients, store: &ParamStore) -> Vec<Array2<f64>> {
        self.vars
            .iter()
            .zip(store.iter())
            .map(|(&v, p)| grads.get_or_zeros(v, p.value.dim()))
            .collect()
    }
}

/// Graph convolution stack `H^k = act(A_hat H^{k-1} W^{k-1})` without biases.
#[derive(Debug, Clone)]
pub struct GraphConvStack {
    pub weights: Vec<ParamId>,
}

impl GraphConvStack {
    /// `dims` lists the feature width entering each layer followed by the output width.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        dims: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let weights = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| store.glorot(format!("{prefix}.w{k}"), group, (w[0], w[1]), rng))
            .collect();
        Self { weights }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        a_hat: Var,
        x: Var,
        linear_last: bool,
    ) -> Var {
        let weights: Vec<Var> = self.weights.iter().map(|&w| bound.var(w)).collect();
        graph_conv(tape, a_hat, x, &weights, linear_last)
    }
}

/// ReLU after every layer, or after all but the last when `linear_last`.
pub fn graph_conv(tape: &mut Tape, a_hat: Var, x: Var, weights: &[Var], linear_last: bool) -> Var {
    let mut h = x;
    let last = weights.len().saturating_sub(1);
    for (k, &w) in weights.iter().enumerate() {
        let ah = tape.matmul(a_hat, h);
        let z = tape.matmul(ah, w);
        h = if linear_last && k == last {
            z
        } else {
            tape.relu(z)
        };
    }
    h
}

#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
}

/// Stacked LSTM applied row-wise: every row (region) is an independent
/// sequence sharing the same weights. Gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { input } else { hidden };
                let w_input = store.glorot(
                    format!("{prefix}.l{l}.w_input"),
                    group,
                    (fan_in, 4 * hidden),
                    rng,
                );
                let w_hidden = store.glorot(
                    format!("{prefix}.l{l}.w_hidden"),
                    group,
                    (hidden, 4 * hidden),
                    rng,
                );
                let mut b = Array2::zeros((1, 4 * hidden));
                b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
                let bias = store.add(format!("{prefix}.l{l}.bias"), group, b);
                LstmLayer {
                    w_input,
                    w_hidden,
                    bias,
                }
            })
            .collect();
        Self { layers, hidden }
    }

    /// Runs the sequence and returns the last hidden state of the top layer.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "LSTM needs at least one step");
        let rows = tape.shape(inputs[0]).0;
        let hd = self.hidden;
        let mut seq: Vec<Var> = inputs.to_vec();
        for layer in &self.layers {
            let mut h = tape.leaf(Array2::zeros((rows, hd)));
            let mut c = tape.leaf(Array2::zeros((rows, hd)));
            let mut outputs = Vec::with_capacity(seq.len());
            for &x in &seq {
                let xi = tape.matmul(x, bound.var(layer.w_input));
                let hh = tape.matmul(h, bound.var(layer.w_hidden));
                let pre = tape.add(xi, hh);
                let pre = tape.add_row(pre, bound.var(layer.bias));
                let i_pre = tape.slice_cols(pre, 0, hd);
                let f_pre = tape.slice_cols(pre, hd, 2 * hd);
                let g_pre = tape.slice_cols(pre, 2 * hd, 3 * hd);
                let o_pre = tape.slice_cols(pre, 3 * hd, 4 * hd);
                let i = tape.sigmoid(i_pre);
                let f = tape.sigmoid(f_pre);
                let g = tape.tanh(g_pre);
                let o = tape.sigmoid(o_pre);
                let keep = tape.mul(f, c);
                let write = tape.mul(i, g);
                c = tape.add(keep, write);
                let ct = tape.tanh(c);
                h = tape.mul(o, ct);
                outputs.push(h);
            }
            seq = outputs;
        }
        *seq.last().expect("non-empty sequence")
    }
}

/// Dense map `x W + b` applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            weight: store.glorot(format!("{prefix}.weight"), group, (input, output), rng),
            bias: store.zeros(format!("{prefix}.bias"), group, (1, output)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Var {
        let xw = tape.matmul(x, bound.var(self.weight));
        tape.add_row(xw, bound.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_values_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.glorot("w", ParamGroup::Gcn, (10, 6), &mut rng);
        let b = glorot_bound(10, 6);
        assert!(store.get(id).iter().all(|v| v.abs() <= b));
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "m", ParamGroup::Sequence, 3, 2, 1, &mut rng);
        assert_eq!(
            store.get(lstm.layers[0].bias),
            &array![[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "m", ParamGroup::Sequence, 2, 3, 2, &mut rng);
        store.set_all(0.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xs: Vec<Var> = (0..4)
            .map(|k| tape.leaf(Array2::from_elem((5, 2), k as f64)))
            .collect();
        let h = lstm.forward(&mut tape, &bound, &xs);
        assert_eq!(tape.value(h), &Array2::<f64>::zeros((5, 3)));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.zeros("a", ParamGroup::Gate, (1, 1));
        store.zeros("a", ParamGroup::Gate, (1, 1));
    }
}
