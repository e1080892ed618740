//! Gated re-calibration between the point estimate and its uncertainty.
//!
//! `f = tanh(W_gate [U; H])`, `H' = H + U f`, `sigma = U - U f`, so
//! `H' + sigma = H + U` holds elementwise.

use ndarray::{Array1, Array2};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, StuaError};
use crate::nn::{Bound, ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `N x 2N`
    pub w_gate: Array2<f64>,
}

impl GateParams {
    pub fn zeros(n: usize) -> Self {
        Self {
            w_gate: Array2::zeros((n, 2 * n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recalibrated {
    pub h_recal: Array1<f64>,
    pub sigma_hat: Array1<f64>,
    pub f_gate: Array1<f64>,
}

/// Applies an already computed gate.
pub fn recalibrate_with_gate(
    h_hat: &Array1<f64>,
    u_hat: &Array1<f64>,
    f_gate: &Array1<f64>,
) -> Result<Recalibrated> {
    let n = h_hat.len();
    if u_hat.len() != n || f_gate.len() != n {
        return Err(StuaError::shape(
            "recalibrate_with_gate",
            n,
            format!("{} / {}", u_hat.len(), f_gate.len()),
        ));
    }
    let shift = u_hat * f_gate;
    Ok(Recalibrated {
        h_recal: h_hat + &shift,
        sigma_hat: u_hat - &shift,
        f_gate: f_gate.clone(),
    })
}

pub fn recalibrate(
    h_hat: &Array1<f64>,
    u_hat: &Array1<f64>,
    params: &GateParams,
) -> Result<Recalibrated> {
    let n = h_hat.len();
    if u_hat.len() != n {
        return Err(StuaError::shape("recalibrate uncertainty", n, u_hat.len()));
    }
    if params.w_gate.dim() != (n, 2 * n) {
        return Err(StuaError::shape(
            "recalibrate gate",
            format!("({n}, {})", 2 * n),
            format!("{:?}", params.w_gate.dim()),
        ));
    }
    let mut stacked = Array1::zeros(2 * n);
    stacked.slice_mut(ndarray::s![..n]).assign(u_hat);
    stacked.slice_mut(ndarray::s![n..]).assign(h_hat);
    let f = params.w_gate.dot(&stacked).mapv(f64::tanh);
    recalibrate_with_gate(h_hat, u_hat, &f)
}

/// Tape handles of one gate application, all `N x 1`.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub h_recal: Var,
    pub sigma_hat: Var,
    pub f_gate: Var,
}

#[derive(Debug, Clone)]
pub struct Gate {
    pub weight: ParamId,
}

impl Gate {
    /// Zero-initialized, so training starts from the identity.
    pub fn new(store: &mut ParamStore, regions: usize) -> Self {
        Self {
            weight: store.zeros("gmur.gate", ParamGroup::Gate, (regions, 2 * regions)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, h_hat: Var, u_hat: Var) -> GateVars {
        let stacked = tape.concat_rows(&[u_hat, h_hat]);
        let z = tape.matmul(bound.var(self.weight), stacked);
        let f = tape.tanh(z);
        let shift = tape.mul(u_hat, f);
        GateVars {
            h_recal: tape.add(h_hat, shift),
            sigma_hat: tape.sub(u_hat, shift),
            f_gate: f,
        }
    }
}
