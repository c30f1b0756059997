//! EDMD baseline: thin-plate-spline RBF lifting plus state concatenation,
//! with least-squares fits of the lifted transition (A, B) and the
//! reconstruction matrix C.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, StateVector};
use crate::error::{Error, Result};
use crate::linalg;

/// Ridge weight added to every Gram matrix before solving; thin-plate Gram
/// matrices are ill-conditioned.
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-8;

/// Thin-plate RBF dictionary: lifted vector = [RBF values at each center; x].
#[derive(Debug, Clone, PartialEq)]
pub struct RbfLifting {
    centers: Vec<DVector<f64>>,
    state_dim: usize,
}

impl RbfLifting {
    pub fn new(centers: Vec<DVector<f64>>, state_dim: usize) -> Result<Self> {
        for (i, c) in centers.iter().enumerate() {
            if c.len() != state_dim {
                return Err(Error::Dimension {
                    context: format!("RBF center {i}"),
                    expected: state_dim,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("RBF center {i}"),
                });
            }
        }
        Ok(RbfLifting { centers, state_dim })
    }

    /// Draws `count` centers uniformly from the unit box [-1, 1]^n.
    pub fn sample_centers(count: usize, state_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let centers = (0..count)
            .map(|_| {
                DVector::from_iterator(
                    state_dim,
                    (0..state_dim).map(|_| rng.random_range(-1.0..=1.0)),
                )
            })
            .collect();
        RbfLifting { centers, state_dim }
    }

    pub fn centers(&self) -> &[DVector<f64>] {
        &self.centers
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Lifted dimension N = number of centers + n.
    pub fn lifted_dim(&self) -> usize {
        self.centers.len() + self.state_dim
    }

    /// Length-N lifted vector: all RBF values, then the raw state.
    pub fn lift(&self, x: &StateVector) -> DVector<f64> {
        let n = self.lifted_dim();
        let mut z = DVector::zeros(n);
        for (i, c) in self.centers.iter().enumerate() {
            z[i] = thin_plate_rbf_vec(x.as_vector(), c);
        }
        for j in 0..self.state_dim {
            z[self.centers.len() + j] = x[j];
        }
        z
    }

    /// Lifts every column of a state matrix.
    pub fn lift_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.state_dim);
        let n = self.lifted_dim();
        let cols: Vec<DVector<f64>> = (0..x.ncols())
            .into_par_iter()
            .map(|k| {
                let xs = StateVector::from_dvector_unchecked(x.column(k).clone_owned());
                self.lift(&xs)
            })
            .collect();
        DMatrix::from_columns(&cols[..]).reshape_generic(
            nalgebra::Dyn(n),
            nalgebra::Dyn(x.ncols()),
        )
    }
}

/// Thin plate basis r * log(r), continuously extended with 0 at r = 0.
pub fn thin_plate_rbf(x: &StateVector, center: &StateVector) -> f64 {
    thin_plate_rbf_vec(x.as_vector(), center.as_vector())
}

fn thin_plate_rbf_vec(x: &DVector<f64>, center: &DVector<f64>) -> f64 {
    let r = (x - center).norm();
    if r == 0.0 {
        0.0
    } else {
        r * r.ln()
    }
}

/// Fitted EDMD model: lifted transition x' = A z + B u, reconstruction x = C z.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdmdModel {
    #[serde(with = "crate::edmd::rowmajor")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::edmd::rowmajor")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::edmd::rowmajor")]
    pub c: DMatrix<f64>,
}

/// Row-major serde adapter for DMatrix fields.
pub mod rowmajor {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        crate::linalg::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        crate::linalg::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

const GRAM_CHUNK: usize = 4096;

/// Accumulates G = [Z; U][Z; U]^T and T = Y [Z; U]^T over fixed-size column
/// chunks (parallel, combined in deterministic order).
fn accumulate_normal_eqs(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    u: Option<&DMatrix<f64>>,
    chunk: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = z.ncols();
    let stacked_rows = z.nrows() + u.map_or(0, |u| u.nrows());
    let starts: Vec<usize> = (0..m).step_by(chunk.max(1)).collect();
    let partials: Vec<(DMatrix<f64>, DMatrix<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let len = chunk.min(m - s);
            let mut stacked = DMatrix::zeros(stacked_rows, len);
            stacked.rows_mut(0, z.nrows()).copy_from(&z.columns(s, len));
            if let Some(u) = u {
                stacked
                    .rows_mut(z.nrows(), u.nrows())
                    .copy_from(&u.columns(s, len));
            }
            let g = &stacked * stacked.transpose();
            let t = y.columns(s, len) * stacked.transpose();
            (g, t)
        })
        .collect();
    let mut g = DMatrix::zeros(stacked_rows, stacked_rows);
    let mut t = DMatrix::zeros(y.nrows(), stacked_rows);
    for (pg, pt) in partials {
        g += pg;
        t += pt;
    }
    (g, t)
}

/// Least-squares fit of min ||Ylift - A Xlift - B U||_F^2 via the
/// ridge-regularized normal equations.
pub fn fit_ab(
    xlift: &DMatrix<f64>,
    ylift: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = xlift.nrows();
    let m_in = u.nrows();
    if ylift.ncols() != xlift.ncols() || (m_in > 0 && u.ncols() != xlift.ncols()) {
        return Err(Error::Dimension {
            context: "fit_ab sample counts".into(),
            expected: xlift.ncols(),
            got: ylift.ncols().min(u.ncols()),
        });
    }
    let u_opt = if m_in > 0 { Some(u) } else { None };
    let (g, t) = accumulate_normal_eqs(ylift, xlift, u_opt, GRAM_CHUNK);
    let m = linalg::ridge_solve(&t, &g, lambda)?;
    let a = m.columns(0, n).clone_owned();
    let b = m.columns(n, m_in).clone_owned();
    Ok((a, b))
}

/// Least-squares fit of min ||X - C Xlift||_F^2.
pub fn fit_c(x: &DMatrix<f64>, xlift: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != xlift.ncols() {
        return Err(Error::Dimension {
            context: "fit_c sample counts".into(),
            expected: xlift.ncols(),
            got: x.ncols(),
        });
    }
    let (g, t) = accumulate_normal_eqs(x, xlift, None, GRAM_CHUNK);
    linalg::ridge_solve(&t, &g, lambda)
}

/// Fits the full EDMD model on one dataset split.
pub fn fit_edmd(
    rbf: &RbfLifting,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
) -> Result<EdmdModel> {
    let xlift = rbf.lift_columns(x);
    let ylift = rbf.lift_columns(y);
    let (a, b) = fit_ab(&xlift, &ylift, u, lambda)?;
    let c = fit_c(x, &xlift, lambda)?;
    Ok(EdmdModel { a, b, c })
}

/// Lifts once at x0, iterates linearly in the lifted space (never
/// re-lifting), and maps back with C at every step.
pub fn edmd_predict(
    model: &EdmdModel,
    rbf: &RbfLifting,
    x0: &StateVector,
    u_seq: &[ControlInput],
) -> Vec<StateVector> {
    let mut z = rbf.lift(x0);
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(StateVector::from_dvector_unchecked(&model.c * &z));
    for u in u_seq {
        z = &model.a * &z + &model.b * u.as_vector();
        out.push(StateVector::from_dvector_unchecked(&model.c * &z));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn st(v: &[f64]) -> StateVector {
        StateVector::from_slice(v).unwrap()
    }

    fn seeded(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn random_matrix(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Independent least-squares oracle: M = Y S^T (S S^T)^+ via SVD.
    fn pinv_oracle(y: &DMatrix<f64>, stacked: &DMatrix<f64>) -> DMatrix<f64> {
        let pinv = stacked
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .unwrap();
        y * pinv
    }

    #[test]
    fn thin_plate_examples() {
        let c = st(&[0.3, -0.4]);
        assert_eq!(thin_plate_rbf(&c, &c), 0.0);
        // r = 1 -> log 1 = 0.
        let x = st(&[1.3, -0.4]);
        assert_eq!(thin_plate_rbf(&x, &c), 0.0);
        // r = e -> e * log e = e.
        let x = st(&[0.3 + std::f64::consts::E, -0.4]);
        assert_relative_eq!(
            thin_plate_rbf(&x, &c),
            std::f64::consts::E,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lift_concatenates_state_and_zeroes_at_center() {
        let rbf = RbfLifting::sample_centers(100, 2, 21);
        let x = StateVector::from_slice(rbf.centers()[17].as_slice()).unwrap();
        let z = rbf.lift(&x);
        assert_eq!(z.len(), 102);
        assert_eq!(z[17], 0.0);
        assert_eq!(z[100], x[0]);
        assert_eq!(z[101], x[1]);
        // Deterministic given fixed centers.
        assert_eq!(z, rbf.lift(&x));
    }

    #[test]
    fn center_sampling_is_seeded_and_in_unit_box() {
        let a = RbfLifting::sample_centers(100, 2, 5);
        let b = RbfLifting::sample_centers(100, 2, 5);
        assert_eq!(a, b);
        assert!(a
            .centers()
            .iter()
            .all(|c| c.iter().all(|v| (-1.0..=1.0).contains(v))));
    }

    #[test]
    fn fit_ab_recovers_known_linear_system() {
        let mut rng = seeded(1);
        let n = 6;
        let a_star = random_matrix(&mut rng, n, n) * 0.3;
        let b_star = random_matrix(&mut rng, n, 1);
        let xlift = random_matrix(&mut rng, n, 500);
        let u = random_matrix(&mut rng, 1, 500);
        let ylift = &a_star * &xlift + &b_star * &u;
        let (a, b) = fit_ab(&xlift, &ylift, &u, DEFAULT_RIDGE_LAMBDA).unwrap();
        assert!((a - a_star).norm() <= 1e-6);
        assert!((b - b_star).norm() <= 1e-6);
    }

    #[test]
    fn fit_ab_identity_when_outputs_equal_inputs() {
        let mut rng = seeded(2);
        let xlift = random_matrix(&mut rng, 4, 200);
        let u = DMatrix::zeros(0, 200);
        let (a, _b) = fit_ab(&xlift, &xlift.clone(), &u, DEFAULT_RIDGE_LAMBDA).unwrap();
        assert!((&a - DMatrix::<f64>::identity(4, 4)).norm() <= 1e-6);
        let residual = (&a * &xlift - &xlift).norm();
        assert!(residual <= 1e-6);
    }

    #[test]
    fn fit_ab_scalar_least_squares() {
        // One sample, N = 1, m = 0: xlift = 2, ylift = 6 -> A = 3.
        let xlift = DMatrix::from_row_slice(1, 1, &[2.0]);
        let ylift = DMatrix::from_row_slice(1, 1, &[6.0]);
        let u = DMatrix::zeros(0, 1);
        let (a, b) = fit_ab(&xlift, &ylift, &u, DEFAULT_RIDGE_LAMBDA).unwrap();
        assert_relative_eq!(a[(0, 0)], 3.0, epsilon = 1e-7);
        assert_eq!(b.ncols(), 0);
    }

    #[test]
    fn fit_ab_matches_pinv_oracle() {
        let mut rng = seeded(3);
        let xlift = random_matrix(&mut rng, 5, 300);
        let u = random_matrix(&mut rng, 2, 300);
        let ylift = random_matrix(&mut rng, 5, 300);
        let (a, b) = fit_ab(&xlift, &ylift, &u, 1e-12).unwrap();

        let mut stacked = DMatrix::zeros(7, 300);
        stacked.rows_mut(0, 5).copy_from(&xlift);
        stacked.rows_mut(5, 2).copy_from(&u);
        let m_oracle = pinv_oracle(&ylift, &stacked);
        let mut m_fit = DMatrix::zeros(5, 7);
        m_fit.columns_mut(0, 5).copy_from(&a);
        m_fit.columns_mut(5, 2).copy_from(&b);
        assert!(
            (&m_fit - &m_oracle).norm() <= 1e-8,
            "fit differs from pseudo-inverse oracle by {}",
            (m_fit - m_oracle).norm()
        );
    }

    #[test]
    fn fit_c_reconstructs_concatenated_state_exactly() {
        let mut rng = seeded(4);
        let rbf = RbfLifting::sample_centers(20, 2, 6);
        let x = random_matrix(&mut rng, 2, 400);
        let xlift = rbf.lift_columns(&x);
        let c = fit_c(&x, &xlift, DEFAULT_RIDGE_LAMBDA).unwrap();
        // A selector of the last two rows achieves zero residual, so the
        // fitted C must reach the regularization floor.
        let residual = (&c * &xlift - &x).norm();
        assert!(residual <= 1e-5, "residual {residual}");
    }

    #[test]
    fn fit_c_identity_when_lift_is_identity() {
        let mut rng = seeded(5);
        let x = random_matrix(&mut rng, 3, 100);
        let c = fit_c(&x, &x.clone(), DEFAULT_RIDGE_LAMBDA).unwrap();
        assert!((&c - DMatrix::<f64>::identity(3, 3)).norm() <= 1e-6);
    }

    #[test]
    fn fit_c_matches_pinv_oracle() {
        let mut rng = seeded(6);
        let xlift = random_matrix(&mut rng, 6, 250);
        let x = random_matrix(&mut rng, 2, 250);
        let c = fit_c(&x, &xlift, 1e-12).unwrap();
        let oracle = pinv_oracle(&x, &xlift);
        assert!((&c - &oracle).norm() <= 1e-8);
    }

    #[test]
    fn fits_beat_random_candidate_matrices() {
        let mut rng = seeded(7);
        let xlift = random_matrix(&mut rng, 4, 300);
        let u = random_matrix(&mut rng, 1, 300);
        let ylift = random_matrix(&mut rng, 4, 300);
        let (a, b) = fit_ab(&xlift, &ylift, &u, DEFAULT_RIDGE_LAMBDA).unwrap();
        let best = (&ylift - &a * &xlift - &b * &u).norm_squared();
        for _ in 0..100 {
            let da = random_matrix(&mut rng, 4, 4) * 1e-3;
            let db = random_matrix(&mut rng, 4, 1) * 1e-3;
            let cand = (&ylift - (&a + da) * &xlift - (&b + db) * &u).norm_squared();
            assert!(cand + 1e-12 >= best);
        }
    }

    #[test]
    fn predict_is_constant_for_identity_dynamics() {
        let rbf = RbfLifting::sample_centers(5, 2, 8);
        let n = rbf.lifted_dim();
        let model = EdmdModel {
            a: DMatrix::identity(n, n),
            b: DMatrix::zeros(n, 1),
            c: DMatrix::identity(2, n).columns(0, n).clone_owned(),
        };
        let u = vec![ControlInput::scalar(0.0).unwrap(); 5];
        let traj = edmd_predict(&model, &rbf, &st(&[0.4, -0.2]), &u);
        assert_eq!(traj.len(), 6);
        for x in &traj[1..] {
            assert_eq!(x.as_vector(), traj[0].as_vector());
        }
    }

    #[test]
    fn one_step_prediction_matches_definition() {
        let mut rng = seeded(9);
        let rbf = RbfLifting::sample_centers(5, 2, 10);
        let n = rbf.lifted_dim();
        let model = EdmdModel {
            a: random_matrix(&mut rng, n, n),
            b: random_matrix(&mut rng, n, 1),
            c: random_matrix(&mut rng, 2, n),
        };
        let x0 = st(&[0.3, 0.9]);
        let u0 = ControlInput::scalar(0.25).unwrap();
        let traj = edmd_predict(&model, &rbf, &x0, std::slice::from_ref(&u0));
        let expected = &model.c * (&model.a * rbf.lift(&x0) + &model.b * u0.as_vector());
        assert_eq!(traj[1].as_vector(), &expected);
    }

    #[test]
    fn edmd_model_json_round_trip() {
        let mut rng = seeded(11);
        let model = EdmdModel {
            a: random_matrix(&mut rng, 3, 3),
            b: random_matrix(&mut rng, 3, 1),
            c: random_matrix(&mut rng, 2, 3),
        };
        let text = serde_json::to_string(&model).unwrap();
        let back: EdmdModel = serde_json::from_str(&text).unwrap();
        assert_eq!(model.a, back.a);
        assert_eq!(model.b, back.b);
        assert_eq!(model.c, back.c);
        assert_eq!(text, serde_json::to_string(&back).unwrap());
    }
}
