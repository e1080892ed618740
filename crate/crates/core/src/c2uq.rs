//! Content-context uncertainty head.
//!
//! Per period `m` (weekly summary, daily 1..q, closeness):
//!
//! * internal uncertainty from period-embedding similarity,
//!   `U_I = W_I exp(-s) + b_I`,
//! * external uncertainty from pairwise context-field interactions
//!   propagated over the period adjacency (FM-GCN),
//! * a linear fusion `U_o = W_aggr [U_I; U_E]`,
//!
//! and a row-wise C2-LSTM over the `U_o` sequence producing `U^{T+1}`.
//!
//! Embedding, `W_I`/`b_I` and the fusion map are shared across periods.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Result, StuaError};
use crate::graphcore::{normalize_adjacency, AdjacencyKind, AdjacencyMatrix};
use crate::nn::{graph_conv, Bound, GraphConvStack, Linear, Lstm, ParamGroup, ParamId, ParamStore};

/// Width of the concatenated field embeddings and pairwise interactions.
pub fn fm_output_dim(categories: usize, field_dim: usize, interaction_dim: usize) -> usize {
    categories * field_dim + categories * categories.saturating_sub(1) / 2 * interaction_dim
}

/// Field pairs `(u, v)` with `u < v`, in lexicographic order.
pub fn field_pairs(categories: usize) -> Vec<(usize, usize)> {
    (0..categories)
        .flat_map(|u| ((u + 1)..categories).map(move |v| (u, v)))
        .collect()
}

/// Value-level period embedding weights in column-vector orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    /// `p x L_c`, aligns the context to the period length.
    pub w_context: Array2<f64>,
    /// `L_e x p`
    pub w: Array2<f64>,
    /// `L_e`
    pub b: Array1<f64>,
}

/// `I = W ((W_ex ex) + h) + b`.
pub fn embed_period(h: &[f64], ex: &[f64], params: &EmbedParams) -> Result<Array1<f64>> {
    let p = h.len();
    if params.w_context.dim() != (p, ex.len()) {
        return Err(StuaError::shape(
            "embed_period context map",
            format!("({p}, {})", ex.len()),
            format!("{:?}", params.w_context.dim()),
        ));
    }
    if params.w.ncols() != p || params.w.nrows() != params.b.len() {
        return Err(StuaError::shape(
            "embed_period weight",
            format!("({}, {p})", params.b.len()),
            format!("{:?}", params.w.dim()),
        ));
    }
    let mut tape = Tape::new();
    let hv = tape.leaf(row(h));
    let exv = tape.leaf(row(ex));
    let wc = tape.leaf(params.w_context.t().to_owned());
    let w = tape.leaf(params.w.t().to_owned());
    let b = tape.leaf(row(params.b.as_slice().expect("contiguous")));
    let out = embed_rows(&mut tape, hv, exv, wc, w, b);
    Ok(tape.value(out).row(0).to_owned())
}

fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row")
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column")
}

/// Row-batched embedding: `values` is `N x p`, `context` is `N x L_c`,
/// weights are stored transposed (`L_c x p`, `p x L_e`, `1 x L_e`).
fn embed_rows(
    tape: &mut Tape,
    values: Var,
    context: Var,
    w_context_t: Var,
    w_t: Var,
    b: Var,
) -> Var {
    let aligned = tape.matmul(context, w_context_t);
    let z = tape.add(aligned, values);
    let e = tape.matmul(z, w_t);
    tape.add_row(e, b)
}

/// Row-batched similarity: `s_m = (1/(P-1)) sum_{j != m} <I_m, I_j>` for
/// `P` periods, each `I` an `N x L_e` matrix; returns `N x 1` columns.
fn similarity_rows(tape: &mut Tape, embeddings: &[Var]) -> Vec<Var> {
    let others = 1.0 / (embeddings.len() - 1) as f64;
    let mut total = embeddings[0];
    for &e in &embeddings[1..] {
        total = tape.add(total, e);
    }
    embeddings
        .iter()
        .map(|&e| {
            let rest = tape.sub(total, e);
            let prod = tape.mul(e, rest);
            let s = tape.sum_cols(prod);
            tape.scale(s, others)
        })
        .collect()
}

/// Mean inner product of each period embedding with every other period's.
pub fn period_similarity(embeddings: &[Array1<f64>]) -> Result<Vec<f64>> {
    if embeddings.len() < 2 {
        return Err(StuaError::shape(
            "period_similarity periods",
            "at least 2",
            embeddings.len(),
        ));
    }
    let width = embeddings[0].len();
    if let Some(bad) = embeddings.iter().find(|e| e.len() != width) {
        return Err(StuaError::shape(
            "period_similarity width",
            width,
            bad.len(),
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = embeddings
        .iter()
        .map(|e| tape.leaf(row(e.as_slice().expect("contiguous"))))
        .collect();
    let s = similarity_rows(&mut tape, &vars);
    Ok(s.iter().map(|&v| tape.scalar(v)).collect())
}

fn internal_column(tape: &mut Tape, s: Var, w_i: Var, b_i: Var) -> Var {
    let neg = tape.scale(s, -1.0);
    let e = tape.exp(neg);
    let we = tape.matmul(w_i, e);
    tape.add(we, b_i)
}

/// `U_I = W_I exp(-s) + b_I` across regions.
pub fn internal_uncertainty(s: &[f64], w_i: &Array2<f64>, b_i: &[f64]) -> Result<Array1<f64>> {
    let n = s.len();
    if w_i.dim() != (n, n) || b_i.len() != n {
        return Err(StuaError::shape(
            "internal_uncertainty",
            format!("({n}, {n}) and {n}"),
            format!("{:?} and {}", w_i.dim(), b_i.len()),
        ));
    }
    let mut tape = Tape::new();
    let sv = tape.leaf(column(s));
    let w = tape.leaf(w_i.clone());
    let b = tape.leaf(column(b_i));
    let out = internal_column(&mut tape, sv, w, b);
    Ok(tape.value(out).column(0).to_owned())
}

/// Value-level FM weights for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct FmFieldParams {
    /// Per category, `L_ce` scale of the raw factor.
    pub field_weight: Vec<Array1<f64>>,
    /// Per category, `L_ce` offset.
    pub field_bias: Vec<Array1<f64>>,
    /// Per pair in `field_pairs` order, `L_ce x L_ie`.
    pub pair_weight: Vec<Array2<f64>>,
}

/// `(e_u ⊙ e_v) W_E`.
pub fn field_interaction(
    e_u: &Array1<f64>,
    e_v: &Array1<f64>,
    w_e: &Array2<f64>,
) -> Result<Array1<f64>> {
    if e_u.len() != e_v.len() || w_e.nrows() != e_u.len() {
        return Err(StuaError::shape(
            "field_interaction",
            e_u.len(),
            format!("{} / {:?}", e_v.len(), w_e.dim()),
        ));
    }
    Ok((e_u * e_v).dot(w_e))
}

/// Field embeddings followed by all pairwise interactions, concatenated.
pub fn fm_interactions(raw: &[f64], params: &FmFieldParams) -> Result<Array1<f64>> {
    let q = raw.len();
    if q == 0 {
        return Err(StuaError::shape(
            "fm_interactions categories",
            "at least 1",
            0,
        ));
    }
    if params.field_weight.len() != q || params.field_bias.len() != q {
        return Err(StuaError::shape(
            "fm_interactions fields",
            q,
            params.field_weight.len(),
        ));
    }
    let pairs = field_pairs(q);
    if params.pair_weight.len() != pairs.len() {
        return Err(StuaError::shape(
            "fm_interactions pairs",
            pairs.len(),
            params.pair_weight.len(),
        ));
    }
    let fields: Vec<Array1<f64>> = raw
        .iter()
        .zip(params.field_weight.iter().zip(&params.field_bias))
        .map(|(&x, (w, b))| w * x + b)
        .collect();
    let mut out: Vec<f64> = fields.iter().flat_map(|e| e.iter().copied()).collect();
    for (&(u, v), w) in pairs.iter().zip(&params.pair_weight) {
        out.extend(field_interaction(&fields[u], &fields[v], w)?);
    }
    Ok(Array1::from(out))
}

/// FM-GCN over node features `E^m`; raw adjacencies are normalized first.
pub fn external_uncertainty(
    adjacency: &AdjacencyMatrix,
    features: &Array2<f64>,
    kernels: &[Array2<f64>],
) -> Result<Array1<f64>> {
    let n = features.nrows();
    if adjacency.len() != n {
        return Err(StuaError::shape(
            "external_uncertainty adjacency",
            n,
            adjacency.len(),
        ));
    }
    let a_hat = if adjacency.kind == AdjacencyKind::Normalized {
        adjacency.values.clone()
    } else {
        normalize_adjacency(adjacency)?.values
    };
    let mut width = features.ncols();
    for k in kernels {
        if k.nrows() != width {
            return Err(StuaError::shape(
                "external_uncertainty kernel",
                width,
                k.nrows(),
            ));
        }
        width = k.ncols();
    }
    if width != 1 {
        return Err(StuaError::shape(
            "external_uncertainty output width",
            1,
            width,
        ));
    }
    let mut tape = Tape::new();
    let a = tape.leaf(a_hat);
    let x = tape.leaf(features.clone());
    let ks: Vec<Var> = kernels.iter().map(|k| tape.leaf(k.clone())).collect();
    let out = graph_conv(&mut tape, a, x, &ks, true);
    Ok(tape.value(out).column(0).to_owned())
}

/// `U_o = W [U_I; U_E]` with `W` of shape `N x 2N`.
pub fn aggregate(
    u_internal: &[f64],
    u_external: &[f64],
    weights: &Array2<f64>,
) -> Result<Array1<f64>> {
    let n = u_internal.len();
    if u_external.len() != n || weights.dim() != (n, 2 * n) {
        return Err(StuaError::shape(
            "aggregate",
            format!("{n} / ({n}, {})", 2 * n),
            format!("{} / {:?}", u_external.len(), weights.dim()),
        ));
    }
    let mut tape = Tape::new();
    let ui = tape.leaf(column(u_internal));
    let ue = tape.leaf(column(u_external));
    let w = tape.leaf(weights.clone());
    let stacked = tape.concat_rows(&[ui, ue]);
    let out = tape.matmul(w, stacked);
    Ok(tape.value(out).column(0).to_owned())
}

/// One period's inputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PeriodVars {
    /// `N x p`
    pub values: Var,
    /// `N x Q` raw (scaled) context.
    pub context: Var,
    /// `N x N` normalized adjacency.
    pub adjacency: Var,
}

#[derive(Debug, Clone)]
pub struct UncertaintyVars {
    /// Per period, `N x 1`.
    pub internal: Vec<Var>,
    pub external: Vec<Var>,
    pub overall: Vec<Var>,
    /// `N x 1`
    pub next: Var,
}

#[derive(Debug, Clone)]
pub struct C2uq {
    /// One embedder per period, shared across regions.
    pub embed_context: Vec<ParamId>,
    pub embed_weight: Vec<ParamId>,
    pub embed_bias: Vec<ParamId>,
    pub internal_weight: ParamId,
    pub internal_bias: ParamId,
    pub field_weight: Vec<ParamId>,
    pub field_bias: Vec<ParamId>,
    pub pair_weight: Vec<ParamId>,
    pub fm_gcn: GraphConvStack,
    pub aggregate: ParamId,
    pub c2_lstm: Lstm,
    pub c2_readout: Linear,
    pub regions: usize,
    pub categories: usize,
}

impl C2uq {
    pub fn new(
        store: &mut ParamStore,
        cfg: &ModelConfig,
        regions: usize,
        categories: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let n = regions;
        let periods = cfg.q + 2;
        let mut embed_context = Vec::with_capacity(periods);
        let mut embed_weight = Vec::with_capacity(periods);
        let mut embed_bias = Vec::with_capacity(periods);
        // All periods start from one draw: independent draws give negative
        // cross-period products and exp(-s) overflows before training starts.
        let group = ParamGroup::PeriodEmbed;
        let context0 = store.glorot("c2uq.embed0.context", group, (categories, cfg.p), rng);
        let weight0 = store.glorot("c2uq.embed0.weight", group, (cfg.p, cfg.embed_dim), rng);
        let (context_init, weight_init) = (store.get(context0).clone(), store.get(weight0).clone());
        embed_context.push(context0);
        embed_weight.push(weight0);
        embed_bias.push(store.zeros("c2uq.embed0.bias", group, (1, cfg.embed_dim)));
        for m in 1..periods {
            embed_context.push(store.add(
                format!("c2uq.embed{m}.context"),
                group,
                context_init.clone(),
            ));
            embed_weight.push(store.add(
                format!("c2uq.embed{m}.weight"),
                group,
                weight_init.clone(),
            ));
            embed_bias.push(store.zeros(format!("c2uq.embed{m}.bias"), group, (1, cfg.embed_dim)));
        }
        let internal_weight =
            store.glorot("c2uq.internal.weight", ParamGroup::Internal, (n, n), rng);
        let internal_bias = store.zeros("c2uq.internal.bias", ParamGroup::Internal, (n, 1));

        let field_weight = (0..categories)
            .map(|u| {
                store.glorot(
                    format!("c2uq.fm.field{u}.weight"),
                    ParamGroup::Fm,
                    (1, cfg.field_dim),
                    rng,
                )
            })
            .collect();
        let field_bias = (0..categories)
            .map(|u| {
                store.glorot(
                    format!("c2uq.fm.field{u}.bias"),
                    ParamGroup::Fm,
                    (1, cfg.field_dim),
                    rng,
                )
            })
            .collect();
        let pair_weight = field_pairs(categories)
            .into_iter()
            .map(|(u, v)| {
                store.glorot(
                    format!("c2uq.fm.pair{u}_{v}"),
                    ParamGroup::Fm,
                    (cfg.field_dim, cfg.interaction_dim),
                    rng,
                )
            })
            .collect();
        let mut dims = vec![fm_output_dim(
            categories,
            cfg.field_dim,
            cfg.interaction_dim,
        )];
        dims.extend(std::iter::repeat_n(cfg.fm_gcn_hidden, cfg.fm_gcn_layers - 1));
        dims.push(1);
        let fm_gcn = GraphConvStack::new(store, "c2uq.fm.gcn", ParamGroup::Fm, &dims, rng);

        let aggregate = store.glorot("c2uq.aggregate", ParamGroup::Aggregate, (n, 2 * n), rng);
        let c2_lstm = Lstm::new(
            store,
            "c2uq.lstm",
            ParamGroup::C2Lstm,
            1,
            cfg.c2_hidden,
            cfg.c2_layers,
            rng,
        );
        let c2_readout = Linear::new(
            store,
            "c2uq.readout",
            ParamGroup::C2Lstm,
            cfg.c2_hidden,
            1,
            rng,
        );

        Self {
            embed_context,
            embed_weight,
            embed_bias,
            internal_weight,
            internal_bias,
            field_weight,
            field_bias,
            pair_weight,
            fm_gcn,
            aggregate,
            c2_lstm,
            c2_readout,
            regions,
            categories,
        }
    }

    /// `N x L_e` embeddings of period `m`.
    pub fn embed(&self, tape: &mut Tape, bound: &Bound, m: usize, period: &PeriodVars) -> Var {
        embed_rows(
            tape,
            period.values,
            period.context,
            bound.var(self.embed_context[m]),
            bound.var(self.embed_weight[m]),
            bound.var(self.embed_bias[m]),
        )
    }

    /// `N x d` concatenated field embeddings and interactions.
    pub fn interactions(&self, tape: &mut Tape, bound: &Bound, context: Var) -> Var {
        let fields: Vec<Var> = (0..self.categories)
            .map(|u| {
                let x = tape.slice_cols(context, u, u + 1);
                let e = tape.matmul(x, bound.var(self.field_weight[u]));
                tape.add_row(e, bound.var(self.field_bias[u]))
            })
            .collect();
        let mut parts = fields.clone();
        for (&(u, v), &w) in field_pairs(self.categories).iter().zip(&self.pair_weight) {
            let had = tape.mul(fields[u], fields[v]);
            parts.push(tape.matmul(had, bound.var(w)));
        }
        tape.concat_cols(&parts)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        periods: &[PeriodVars],
    ) -> UncertaintyVars {
        let embeddings: Vec<Var> = periods
            .iter()
            .enumerate()
            .map(|(m, p)| self.embed(tape, bound, m, p))
            .collect();
        let similarity = similarity_rows(tape, &embeddings);
        let w_i = bound.var(self.internal_weight);
        let b_i = bound.var(self.internal_bias);
        let w_aggr = bound.var(self.aggregate);

        let mut internal = Vec::with_capacity(periods.len());
        let mut external = Vec::with_capacity(periods.len());
        let mut overall = Vec::with_capacity(periods.len());
        for (period, &s) in periods.iter().zip(&similarity) {
            let u_i = internal_column(tape, s, w_i, b_i);
            let e = self.interactions(tape, bound, period.context);
            let u_e = self.fm_gcn.forward(tape, bound, period.adjacency, e, true);
            let stacked = tape.concat_rows(&[u_i, u_e]);
            let u_o = tape.matmul(w_aggr, stacked);
            internal.push(u_i);
            external.push(u_e);
            overall.push(u_o);
        }
        let h = self.c2_lstm.forward(tape, bound, &overall);
        let next = self.c2_readout.forward(tape, bound, h);
        UncertaintyVars {
            internal,
            external,
            overall,
            next,
        }
    }

    /// Value-level C2-LSTM over a `U_o` sequence.
    pub fn evolve_uncertainty(
        &self,
        store: &ParamStore,
        sequence: &[Array1<f64>],
    ) -> Result<Array1<f64>> {
        if sequence.is_empty() {
            return Err(StuaError::shape(
                "evolve_uncertainty steps",
                "at least 1",
                0,
            ));
        }
        let n = sequence[0].len();
        if let Some(bad) = sequence.iter().find(|u| u.len() != n) {
            return Err(StuaError::shape("evolve_uncertainty regions", n, bad.len()));
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let steps: Vec<Var> = sequence
            .iter()
            .map(|u| tape.leaf(column(u.as_slice().expect("contiguous"))))
            .collect();
        let h = self.c2_lstm.forward(&mut tape, &bound, &steps);
        let out = self.c2_readout.forward(&mut tape, &bound, h);
        Ok(tape.value(out).column(0).to_owned())
    }
}
