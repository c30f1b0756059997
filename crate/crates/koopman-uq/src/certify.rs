//! Lipschitz certification of the single-hidden-layer decoder through the
//! slope-restricted multiplier LMI.
//!
//! The feasibility matrix for decoder weights W0 (hidden x N) and W1
//! (n x hidden), slope bounds [a, b] and diagonal multiplier T is
//!
//!   P(L^2, T) = [ -2ab W0^T T W0 - L^2 I    (a+b) W0^T T  ]
//!               [ (a+b) T W0                W1^T W1 - 2T  ]
//!
//! P <= 0 certifies L as a global Lipschitz bound of z -> W1 act(W0 z + b0)
//! for every bias b0. The smallest certified L is found by bisection over L
//! with an inner projected-subgradient search over T at each trial; inner
//! suboptimality can only leave the answer conservative, never unsound,
//! because the final (L*, T) pair is re-verified by one eigenvalue check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::AEModel;
use crate::error::{Error, Result};
use crate::linalg;

/// Slope interval of the hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeBounds {
    pub lo: f64,
    pub hi: f64,
}

impl SlopeBounds {
    /// tanh difference quotients lie in (0, 1).
    pub fn tanh() -> Self {
        SlopeBounds { lo: 0.0, hi: 1.0 }
    }
}

/// Diagonal multiplier T = diag(lambda), lambda >= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub lambda: Vec<f64>,
}

impl Multiplier {
    pub fn uniform(dim: usize, value: f64) -> Self {
        assert!(value >= 0.0);
        Multiplier {
            lambda: vec![value; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }
}

/// Output of `certify_lipschitz`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub l_star: f64,
    pub multiplier: Multiplier,
    /// Largest eigenvalue of P(L*^2, T) at the witness; must be <= feas_tol.
    pub margin: f64,
    pub empirical_lo: f64,
    pub spectral_hi: f64,
    /// Set when the inner solver never certified anything below spectral_hi.
    pub degraded: bool,
    pub bisection_steps: usize,
    pub inner_iterations: usize,
}

/// Solver tolerances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub bisect_rel_tol: f64,
    pub feas_tol: f64,
    pub inner_iters: usize,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            bisect_rel_tol: 1e-4,
            feas_tol: 1e-8,
            inner_iters: 500,
            seed: 1,
        }
    }
}

/// Assembles P(L^2, T); exactly symmetric by construction.
pub fn lmi_matrix(
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    l_sq: f64,
    t: &Multiplier,
    slopes: SlopeBounds,
) -> Result<DMatrix<f64>> {
    let h = w0.nrows();
    let n = w0.ncols();
    if w1.ncols() != h {
        return Err(Error::Dimension {
            context: "W1 columns vs W0 rows".into(),
            expected: h,
            got: w1.ncols(),
        });
    }
    if t.dim() != h {
        return Err(Error::Dimension {
            context: "multiplier dimension".into(),
            expected: h,
            got: t.dim(),
        });
    }
    let mut p = DMatrix::zeros(n + h, n + h);

    // (1,1): -2ab W0^T T W0 - L^2 I, symmetrized against gemm round-off.
    let ab = slopes.lo * slopes.hi;
    if ab != 0.0 {
        let tw0 = scale_rows(w0, &t.lambda);
        let block = w0.transpose() * tw0;
        let sym = (&block + block.transpose()) * 0.5;
        p.view_mut((0, 0), (n, n)).copy_from(&(-2.0 * ab * sym));
    }
    for i in 0..n {
        p[(i, i)] -= l_sq;
    }

    // (1,2) and its transpose: (a+b) W0^T T.
    let coupling = (slopes.lo + slopes.hi) * w0.transpose() * diag(&t.lambda);
    p.view_mut((0, n), (n, h)).copy_from(&coupling);
    p.view_mut((n, 0), (h, n)).copy_from(&coupling.transpose());

    // (2,2): W1^T W1 - 2T, symmetrized.
    let w1tw1 = w1.transpose() * w1;
    let mut lower = (&w1tw1 + w1tw1.transpose()) * 0.5;
    for i in 0..h {
        lower[(i, i)] -= 2.0 * t.lambda[i];
    }
    p.view_mut((n, n), (h, h)).copy_from(&lower);
    Ok(p)
}

fn diag(lambda: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(lambda))
}

/// T * W0 for diagonal T without forming T.
fn scale_rows(w0: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let mut out = w0.clone();
    for (i, l) in lambda.iter().enumerate() {
        for v in out.row_mut(i).iter_mut() {
            *v *= l;
        }
    }
    out
}

/// Largest eigenvalue and its eigenvector of a symmetric matrix.
fn top_eigenpair(p: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let eig = p.clone().symmetric_eigen();
    let mut imax = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let value = eig.eigenvalues[imax];
    if !value.is_finite() {
        return Err(Error::EigenFailure("non-finite eigenvalue in LMI".into()));
    }
    Ok((value, eig.eigenvectors.column(imax).clone_owned()))
}

/// Feasibility of P(L^2, T) <= 0 at tolerance `feas_tol`; also returns the
/// margin (largest eigenvalue).
pub fn is_feasible(
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    l_sq: f64,
    t: &Multiplier,
    slopes: SlopeBounds,
    feas_tol: f64,
) -> Result<(bool, f64)> {
    let p = lmi_matrix(w0, w1, l_sq, t, slopes)?;
    let (margin, _) = top_eigenpair(&p)?;
    Ok((margin <= feas_tol, margin))
}

/// Sound upper bound: max(|a|, |b|) * ||W1||_2 * ||W0||_2.
pub fn spectral_bound(w0: &DMatrix<f64>, w1: &DMatrix<f64>, slopes: SlopeBounds) -> f64 {
    let slope = slopes.lo.abs().max(slopes.hi.abs());
    slope * linalg::spectral_norm(w1) * linalg::spectral_norm(w0)
}

/// Lower bound from Jacobian gains of z -> W1 act(W0 z) at sampled points;
/// at z = 0 the tanh slope is exactly 1, giving sigma_max(W1 W0).
fn jacobian_lower_bound(w0: &DMatrix<f64>, w1: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
    let mut best = linalg::spectral_norm(&(w1 * w0));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = w0.ncols();
    for _ in 0..samples {
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let pre = w0 * &z;
        let mut scaled = w1.clone();
        for (j, s) in pre.iter().enumerate() {
            let d = 1.0 - s.tanh() * s.tanh();
            for v in scaled.column_mut(j).iter_mut() {
                *v *= d;
            }
        }
        best = best.max(linalg::spectral_norm(&(scaled * w0)));
    }
    best
}

struct InnerOutcome {
    lambda: Vec<f64>,
    margin: f64,
    iterations: usize,
}

/// Minimizes the LMI margin over diagonal T >= 0 by projected subgradient
/// descent from a set of starting points; exits early once strictly
/// feasible (margin <= -1e-10).
fn inner_solve(
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    l_sq: f64,
    slopes: SlopeBounds,
    starts: &[Vec<f64>],
    max_iters: usize,
) -> Result<InnerOutcome> {
    let h = w0.nrows();
    let n = w0.ncols();
    let mut best_lambda = starts[0].clone();
    let mut best_margin = f64::INFINITY;
    let mut iterations = 0;

    for start in starts {
        let mut lambda = start.clone();
        for k in 0..max_iters {
            iterations += 1;
            let t = Multiplier {
                lambda: lambda.clone(),
            };
            let p = lmi_matrix(w0, w1, l_sq, &t, slopes)?;
            let (margin, v) = top_eigenpair(&p)?;
            if margin < best_margin {
                best_margin = margin;
                best_lambda = lambda.clone();
            }
            if best_margin <= -1e-10 {
                return Ok(InnerOutcome {
                    lambda: best_lambda,
                    margin: best_margin,
                    iterations,
                });
            }
            // Subgradient of lambda_max with respect to each lambda_i.
            let v1 = v.rows(0, n);
            let v2 = v.rows(n, h);
            let mut g = vec![0.0; h];
            let a = slopes.lo;
            let b = slopes.hi;
            let mut gnorm = 0.0;
            for i in 0..h {
                let wi_v1: f64 = w0.row(i).transpose().dot(&v1.clone_owned());
                let gi = -2.0 * a * b * wi_v1 * wi_v1 + 2.0 * (a + b) * wi_v1 * v2[i]
                    - 2.0 * v2[i] * v2[i];
                g[i] = gi;
                gnorm += gi * gi;
            }
            let gnorm = gnorm.sqrt();
            if gnorm <= 1e-15 {
                break;
            }
            let scale = lambda.iter().fold(1.0f64, |acc, l| acc.max(*l));
            let step = 0.3 * scale / ((k + 1) as f64).sqrt() / gnorm;
            for (l, gi) in lambda.iter_mut().zip(&g) {
                *l = (*l - step * gi).max(0.0);
            }
        }
    }
    Ok(InnerOutcome {
        lambda: best_lambda,
        margin: best_margin,
        iterations,
    })
}

/// Certifies the smallest multiplier-LMI Lipschitz constant of the map
/// z -> W1 act(W0 z + b0). Bisection brackets [empirical lower bound,
/// spectral upper bound]; every accepted trial carries a witness T that is
/// re-verified at the end.
pub fn certify_lipschitz(
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    slopes: SlopeBounds,
    cfg: &CertifyConfig,
) -> Result<LipschitzCertificate> {
    let h = w0.nrows();
    if w1.ncols() != h {
        return Err(Error::Dimension {
            context: "decoder weight chain".into(),
            expected: h,
            got: w1.ncols(),
        });
    }
    let spectral_hi = spectral_bound(w0, w1, slopes);
    let empirical_lo = jacobian_lower_bound(w0, w1, 16, cfg.seed).min(spectral_hi);

    let b_sq = linalg::spectral_norm(w1).powi(2);
    let warm0 = vec![b_sq.max(1e-12); h];
    let mut witness: Option<Vec<f64>> = None;
    let mut inner_total = 0;

    // The spectral bound is feasible with T = sigma_max(W1)^2 I; verify and
    // fall back to a degraded certificate if numerics disagree.
    let hi_out = inner_solve(
        w0,
        w1,
        spectral_hi * spectral_hi,
        slopes,
        &[warm0.clone()],
        cfg.inner_iters,
    )?;
    inner_total += hi_out.iterations;
    if hi_out.margin <= cfg.feas_tol {
        witness = Some(hi_out.lambda);
    }

    let mut lo = empirical_lo;
    let mut hi = spectral_hi;
    let mut steps = 0;
    if witness.is_some() {
        while hi - lo > cfg.bisect_rel_tol * hi.max(1e-12) && steps < 200 {
            steps += 1;
            let mid = 0.5 * (lo + hi);
            let mut starts = vec![witness.clone().unwrap(), warm0.clone()];
            starts.push(warm0.iter().map(|v| v * 2.0).collect());
            let out = inner_solve(w0, w1, mid * mid, slopes, &starts, cfg.inner_iters)?;
            inner_total += out.iterations;
            if out.margin <= cfg.feas_tol {
                hi = mid;
                witness = Some(out.lambda);
            } else {
                lo = mid;
            }
        }
    }

    let degraded = witness.is_none();
    let lambda = witness.unwrap_or(warm0);
    let t = Multiplier { lambda };
    let (_, margin) = is_feasible(w0, w1, hi * hi, &t, slopes, cfg.feas_tol)?;
    Ok(LipschitzCertificate {
        l_star: hi,
        multiplier: t,
        margin,
        empirical_lo,
        spectral_hi,
        degraded,
        bisection_steps: steps,
        inner_iterations: inner_total,
    })
}

/// Certifies the decoder of a trained model. Only the single-hidden-layer
/// shape (two weight matrices) is supported.
pub fn certify_decoder(model: &AEModel, cfg: &CertifyConfig) -> Result<LipschitzCertificate> {
    if model.decoder.len() != 2 {
        return Err(Error::UnsupportedArchitecture(format!(
            "decoder has {} layers; the certificate needs exactly one hidden layer",
            model.decoder.len()
        )));
    }
    certify_lipschitz(
        &model.decoder[0].w,
        &model.decoder[1].w,
        SlopeBounds::tanh(),
        cfg,
    )
}

/// Empirical lower bound on the decoder's Lipschitz constant: the largest
/// difference quotient over `pairs` random probes around the given points,
/// with perturbation norms in [1e-4, 1e-1].
pub fn empirical_lipschitz(
    model: &AEModel,
    probe_points: &[DVector<f64>],
    pairs: usize,
    seed: u64,
) -> f64 {
    if probe_points.is_empty() || pairs == 0 {
        return 0.0;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = probe_points[0].len();
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let z = &probe_points[rng.random_range(0..probe_points.len())];
        let mut delta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let norm = delta.norm();
        if norm == 0.0 {
            continue;
        }
        let radius = rng.random_range(1e-4..=1e-1);
        delta *= radius / norm;
        let z2 = z + &delta;
        let fz = model.decode(&z.clone());
        let fz2 = model.decode(&z2);
        let quotient = (fz2.as_vector() - fz.as_vector()).norm() / delta.norm();
        best = best.max(quotient);
    }
    best
}
