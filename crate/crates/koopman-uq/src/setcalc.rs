//! Invariant-set calculus for the lifted error dynamics e' = Phi e + w:
//! contraction search, the finite-sum outer approximation of the minimal
//! robust positively invariant set, and the reconstruction ball obtained by
//! pushing that set through the decoder's Lipschitz bound.
//!
//! The disturbance set W is the cube of radius w_max, for which the
//! containment Phi^s W <= alpha W is exactly the induced infinity norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Origin-centered box with per-coordinate radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub radius: Vec<f64>,
}

impl BoxSet {
    pub fn cube(dim: usize, r: f64) -> Self {
        assert!(r >= 0.0);
        BoxSet {
            radius: vec![r; dim],
        }
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.radius.len()
            && v.iter().zip(&self.radius).all(|(x, r)| x.abs() <= *r)
    }

    /// 2-norm of the farthest corner.
    pub fn corner_norm(&self) -> f64 {
        self.radius.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

/// Origin-centered zonotope { G xi : ||xi||_inf <= 1 }.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonotopeSet {
    pub generators: DMatrix<f64>,
}

impl ZonotopeSet {
    pub fn dim(&self) -> usize {
        self.generators.nrows()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    /// The point G xi for a coefficient vector with ||xi||_inf <= 1.
    pub fn point(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.generators * xi
    }

    /// Interval hull: radius_j = sum_c |G[j, c]|.
    pub fn interval_hull(&self) -> BoxSet {
        let radius = (0..self.generators.nrows())
            .map(|j| self.generators.row(j).iter().map(|v| v.abs()).sum())
            .collect();
        BoxSet { radius }
    }

    /// Sum of generator-column 2-norms: an upper bound on the set's 2-norm.
    pub fn column_norm_sum(&self) -> f64 {
        (0..self.generators.ncols())
            .map(|c| self.generators.column(c).norm())
            .sum()
    }
}

/// Outer approximation R(alpha, s) = (1 - alpha)^-1 (+)_{i<s} Phi^i W of the
/// minimal RPI set, with precomputed norm bounds.
#[derive(Debug, Clone)]
pub struct RpiCertificate {
    pub s: usize,
    pub alpha: f64,
    pub w_max: f64,
    pub zonotope: ZonotopeSet,
    pub interval_hull: BoxSet,
    pub l2_radius: f64,
}

/// Ball radius in physical state units guaranteed to contain the true state
/// around the decoded prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionBall {
    pub radius: f64,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(phi: &DMatrix<f64>) -> Result<f64> {
    linalg::spectral_radius(phi)
}

/// Smallest alpha with Phi^s W <= alpha W for the cube W: the induced
/// infinity norm of Phi^s. Independent of w_max because the cube scales out.
pub fn contraction_factor(phi: &DMatrix<f64>, s: usize) -> f64 {
    assert!(s >= 1, "contraction exponent must be >= 1");
    let mut p = phi.clone();
    for _ in 1..s {
        p = &p * phi;
    }
    linalg::inf_norm(&p)
}

/// Finds the smallest s <= s_max with contraction_factor(phi, s) <=
/// alpha_target. Requires a strictly stable phi.
pub fn find_s_alpha(
    phi: &DMatrix<f64>,
    alpha_target: f64,
    s_max: usize,
) -> Result<(usize, f64)> {
    if !(alpha_target > 0.0 && alpha_target < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha_target must lie in (0, 1), got {alpha_target}"
        )));
    }
    let rho = spectral_radius(phi)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let mut p = phi.clone();
    for s in 1..=s_max {
        let alpha = linalg::inf_norm(&p);
        if alpha <= alpha_target {
            return Ok((s, alpha));
        }
        p = &p * phi;
    }
    Err(Error::SMaxExceeded {
        s_max,
        alpha_target,
    })
}

/// Builds R(alpha, s): generator blocks (1-alpha)^-1 w_max Phi^i for
/// i = 0..s-1, the interval hull, and a sound 2-norm radius (the smaller of
/// the generator-norm sum and the hull corner norm).
pub fn rpi_set(phi: &DMatrix<f64>, w_max: f64, s: usize, alpha: f64) -> RpiCertificate {
    assert!(s >= 1, "s must be >= 1");
    assert!((0.0..1.0).contains(&alpha), "alpha must lie in [0, 1)");
    assert!(w_max >= 0.0, "w_max must be >= 0");
    let n = phi.nrows();
    let coef = w_max / (1.0 - alpha);
    let mut generators = DMatrix::zeros(n, n * s);
    let mut block = DMatrix::identity(n, n);
    for i in 0..s {
        generators
            .columns_mut(i * n, n)
            .copy_from(&(coef * &block));
        block = &block * phi;
    }
    let zonotope = ZonotopeSet { generators };
    let interval_hull = zonotope.interval_hull();
    let l2_radius = zonotope.column_norm_sum().min(interval_hull.corner_norm());
    RpiCertificate {
        s,
        alpha,
        w_max,
        zonotope,
        interval_hull,
        l2_radius,
    }
}

/// r = L* times the 2-norm radius of the invariant set.
pub fn reconstruction_radius(l_star: f64, cert: &RpiCertificate) -> ReconstructionBall {
    assert!(l_star >= 0.0, "Lipschitz constant must be >= 0");
    ReconstructionBall {
        radius: l_star * cert.l2_radius,
    }
}
