//! Lifted linear model on the autoencoder features: fit of (Phi, Gamma),
//! linear rollout, and the data-derived one-step residual bound.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{AEModel, LiftedVector};
use crate::dataset::TrajectoryDataset;
use crate::edmd;
use crate::error::{Error, Result};

/// Lifted transition z' = Phi z + Gamma u with the residual box bound
/// observed on the fitting data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KoopmanModel {
    #[serde(with = "crate::edmd::rowmajor")]
    pub phi: DMatrix<f64>,
    #[serde(with = "crate::edmd::rowmajor")]
    pub gamma: DMatrix<f64>,
    /// Max infinity-norm one-step residual over the fitting data.
    pub w_max: f64,
    /// Per-coordinate residual radii; w_max is their maximum.
    pub w_box: Vec<f64>,
}

impl KoopmanModel {
    pub fn lifted_dim(&self) -> usize {
        self.phi.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.gamma.ncols()
    }
}

/// Encodes the X and Y snapshot matrices: Zx[:,k] = phi_e(X[:,k]),
/// Zy[:,k] = phi_e(Y[:,k]).
pub fn lift_dataset(ae: &AEModel, ds: &TrajectoryDataset) -> (DMatrix<f64>, DMatrix<f64>) {
    (ae.encode_columns(ds.x()), ae.encode_columns(ds.y()))
}

/// Least-squares fit of min ||Zy - Phi Zx - Gamma U||_F^2 via the same
/// ridge-regularized normal equations as the EDMD baseline.
pub fn fit_phi_gamma(
    zx: &DMatrix<f64>,
    zy: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    edmd::fit_ab(zx, zy, u, lambda)
}

/// Linear rollout from z0 under the input sequence; length |u_seq| + 1.
pub fn predict_lifted(
    model: &KoopmanModel,
    z0: &LiftedVector,
    u_seq: &[crate::dynamics::ControlInput],
) -> Vec<LiftedVector> {
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(z0.clone());
    for u in u_seq {
        let prev = out.last().unwrap();
        out.push(&model.phi * prev + &model.gamma * u.as_vector());
    }
    out
}

/// Residual statistics over a dataset: the scalar bound w_max and the
/// per-coordinate radii w_box, plus how many samples exceed a given box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualBound {
    pub w_max: f64,
    pub w_box: Vec<f64>,
}

/// Scans every (x, u, y) triple and bounds the one-step lifted residual
/// phi_e(y) - Phi phi_e(x) - Gamma u in the infinity norm.
pub fn residual_bound(
    ae: &AEModel,
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    ds: &TrajectoryDataset,
) -> Result<ResidualBound> {
    if ds.num_samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (zx, zy) = lift_dataset(ae, ds);
    let residual = residual_matrix(phi, gamma, &zx, &zy, ds.u());
    let n = residual.nrows();
    let w_box: Vec<f64> = (0..n)
        .map(|i| residual.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
        .collect();
    let w_max = w_box.iter().copied().fold(0.0, f64::max);
    Ok(ResidualBound { w_max, w_box })
}

/// Residual columns zy - Phi zx - Gamma u (chunked, deterministic order).
pub fn residual_matrix(
    phi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    zx: &DMatrix<f64>,
    zy: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> DMatrix<f64> {
    const CHUNK: usize = 4096;
    let m = zx.ncols();
    let starts: Vec<usize> = (0..m.max(1)).step_by(CHUNK).collect();
    let blocks: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&s| {
            if m == 0 {
                return zy.clone();
            }
            let len = CHUNK.min(m - s);
            let mut r = zy.columns(s, len).clone_owned();
            r -= phi * zx.columns(s, len);
            if gamma.ncols() > 0 {
                r -= gamma * u.columns(s, len);
            }
            r
        })
        .collect();
    let mut out = DMatrix::zeros(zy.nrows(), m);
    let mut at = 0;
    for b in blocks {
        if b.ncols() == 0 {
            continue;
        }
        out.columns_mut(at, b.ncols()).copy_from(&b);
        at += b.ncols();
    }
    out
}

/// Fraction of columns whose residual stays inside the w_max cube.
pub fn residual_violations(
    ae: &AEModel,
    model: &KoopmanModel,
    ds: &TrajectoryDataset,
) -> Result<(usize, usize)> {
    if ds.num_samples() == 0 {
        return Ok((0, 0));
    }
    let (zx, zy) = lift_dataset(ae, ds);
    let residual = residual_matrix(&model.phi, &model.gamma, &zx, &zy, ds.u());
    let violations = (0..residual.ncols())
        .filter(|&k| residual.column(k).iter().any(|v| v.abs() > model.w_max))
        .count();
    Ok((violations, residual.ncols()))
}
