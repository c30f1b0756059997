//! Forced Van der Pol benchmark and a fixed-step RK4 integrator.
//!
//! All functions here are pure: identical inputs produce bit-identical
//! trajectories, which the dataset and report layers rely on.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical state x in R^n (benchmark: n = 2).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "state vector".into(),
            });
        }
        Ok(StateVector(DVector::from_vec(values)))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub(crate) fn from_dvector_unchecked(v: DVector<f64>) -> Self {
        StateVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Control input u in R^m (benchmark: m = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput(DVector<f64>);

impl ControlInput {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "control input".into(),
            });
        }
        Ok(ControlInput(DVector::from_vec(values)))
    }

    pub fn scalar(u: f64) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

impl std::ops::Index<usize> for ControlInput {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Fixed-step integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    #[serde(rename = "rk4")]
    Rk4,
}

/// Simulation configuration: step size in seconds and step count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    pub integrator: Integrator,
}

impl SimConfig {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {dt}")));
        }
        Ok(SimConfig {
            dt,
            steps,
            integrator: Integrator::Rk4,
        })
    }
}

/// Continuous-time right-hand side of a controlled system.
pub trait VectorField: Sync {
    fn eval(&self, x: &StateVector, u: &ControlInput) -> Result<StateVector>;
}

impl<F> VectorField for F
where
    F: Fn(&StateVector, &ControlInput) -> Result<StateVector> + Sync,
{
    fn eval(&self, x: &StateVector, u: &ControlInput) -> Result<StateVector> {
        self(x, u)
    }
}

/// Forced Van der Pol right-hand side:
/// x1' = 2 x2,  x2' = -0.8 x1 - 10 x1^2 x2 + 2 x2 - u.
pub fn vdp_derivative(x: &StateVector, u: &ControlInput) -> Result<StateVector> {
    if x.dim() != 2 {
        return Err(Error::Dimension {
            context: "Van der Pol state".into(),
            expected: 2,
            got: x.dim(),
        });
    }
    if u.dim() != 1 {
        return Err(Error::Dimension {
            context: "Van der Pol input".into(),
            expected: 1,
            got: u.dim(),
        });
    }
    if !x.is_finite() || !u[0].is_finite() {
        return Err(Error::NonFinite {
            context: "Van der Pol derivative input".into(),
        });
    }
    let (x1, x2) = (x[0], x[1]);
    StateVector::new(vec![2.0 * x2, -0.8 * x1 - 10.0 * x1 * x1 * x2 + 2.0 * x2 - u[0]])
}

/// One classical RK4 update with the input held constant across all four
/// stages (zero-order hold).
pub fn rk4_step<F: VectorField>(
    field: &F,
    x: &StateVector,
    u: &ControlInput,
    dt: f64,
) -> Result<StateVector> {
    if dt < 0.0 || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("dt must be >= 0, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(x.clone());
    }
    let k1 = field.eval(x, u)?;
    let x2 = StateVector::from_dvector_unchecked(x.as_vector() + (dt / 2.0) * k1.as_vector());
    let k2 = field.eval(&x2, u)?;
    let x3 = StateVector::from_dvector_unchecked(x.as_vector() + (dt / 2.0) * k2.as_vector());
    let k3 = field.eval(&x3, u)?;
    let x4 = StateVector::from_dvector_unchecked(x.as_vector() + dt * k3.as_vector());
    let k4 = field.eval(&x4, u)?;

    let next = x.as_vector()
        + (dt / 6.0)
            * (k1.as_vector() + 2.0 * k2.as_vector() + 2.0 * k3.as_vector() + k4.as_vector());
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "rk4 step result".into(),
        });
    }
    Ok(StateVector::from_dvector_unchecked(next))
}

/// Rolls the system forward for `cfg.steps` steps. Returns x_0 .. x_steps
/// (length steps + 1).
pub fn simulate<F: VectorField>(
    field: &F,
    x0: &StateVector,
    inputs: &[ControlInput],
    cfg: &SimConfig,
) -> Result<Vec<StateVector>> {
    if inputs.len() != cfg.steps {
        return Err(Error::Dimension {
            context: "input sequence length".into(),
            expected: cfg.steps,
            got: inputs.len(),
        });
    }
    let mut traj = Vec::with_capacity(cfg.steps + 1);
    traj.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        let next = rk4_step(field, &traj[k], u, cfg.dt).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Integration { step: k },
            other => other,
        })?;
        traj.push(next);
    }
    Ok(traj)
}

/// `simulate` specialized to the Van der Pol benchmark.
pub fn simulate_vdp(
    x0: &StateVector,
    inputs: &[ControlInput],
    cfg: &SimConfig,
) -> Result<Vec<StateVector>> {
    simulate(&vdp_derivative, x0, inputs, cfg)
}

/// Square-wave test input: magnitude one, sign flipping every 0.3 s.
pub fn square_wave(t: f64) -> ControlInput {
    let half_cycles = (t / 0.3).floor() as i64;
    let u = if half_cycles % 2 == 0 { 1.0 } else { -1.0 };
    ControlInput(DVector::from_vec(vec![u]))
}

/// Square wave with a configurable switching interval.
pub fn square_wave_with_period(t: f64, half_period: f64) -> ControlInput {
    let half_cycles = (t / half_period).floor() as i64;
    let u = if half_cycles % 2 == 0 { 1.0 } else { -1.0 };
    ControlInput(DVector::from_vec(vec![u]))
}

/// Writes a trajectory as CSV with header `k,t,x1,x2,u`. The final row has
/// the terminal state and an empty input cell (no input is applied there).
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    traj: &[StateVector],
    inputs: &[ControlInput],
    dt: f64,
) -> std::io::Result<()> {
    writeln!(w, "k,t,x1,x2,u")?;
    for (k, x) in traj.iter().enumerate() {
        let t = k as f64 * dt;
        let u = if k < inputs.len() {
            fmt_sig(inputs[k][0])
        } else {
            String::new()
        };
        writeln!(w, "{k},{},{},{},{u}", fmt_sig(t), fmt_sig(x[0]), fmt_sig(x[1]))?;
    }
    Ok(())
}

/// Fixed 15-decimal formatting used by every CSV artifact.
pub fn fmt_sig(v: f64) -> String {
    format!("{v:.15}")
}

// Serialize the newtypes as plain arrays so artifacts stay readable.
impl Serialize for StateVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        StateVector::new(v).map_err(serde::de::Error::custom)
    }
}

impl Serialize for ControlInput {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ControlInput {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ControlInput::new(v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn st(v: &[f64]) -> StateVector {
        StateVector::from_slice(v).unwrap()
    }

    fn u1(v: f64) -> ControlInput {
        ControlInput::scalar(v).unwrap()
    }

    #[test]
    fn vdp_vanishes_at_origin_with_zero_input() {
        let d = vdp_derivative(&st(&[0.0, 0.0]), &u1(0.0)).unwrap();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn vdp_hand_evaluated_points() {
        let d = vdp_derivative(&st(&[1.0, 1.0]), &u1(0.0)).unwrap();
        assert_relative_eq!(d[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(d[1], -8.8, epsilon = 1e-14);

        // x2' = 0.08 + 0.05 - 1 - 1 = -1.87
        let d = vdp_derivative(&st(&[-0.1, -0.5]), &u1(1.0)).unwrap();
        assert_relative_eq!(d[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(d[1], -1.87, epsilon = 1e-12);
    }

    #[test]
    fn vdp_rejects_bad_dims_and_nonfinite() {
        assert!(vdp_derivative(&st(&[1.0]), &u1(0.0)).is_err());
        assert!(StateVector::new(vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn rk4_zero_width_step_returns_input() {
        let x = st(&[0.3, -0.7]);
        let y = rk4_step(&vdp_derivative, &x, &u1(0.5), 0.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rk4_exact_on_constant_field() {
        // x' = u, so one step of size dt moves by exactly u*dt.
        let field = |_x: &StateVector, u: &ControlInput| StateVector::new(vec![u[0]]);
        let y = rk4_step(&field, &st(&[0.0]), &u1(1.0), 0.01).unwrap();
        assert_relative_eq!(y[0], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn rk4_matches_finer_rk4_oracle_on_unit_box() {
        // Local accuracy: one dt=0.01 step vs 1000 substeps of dt=1e-5.
        // Worst case sits at the stiff box corner (-1, 1): measured 2.4e-8,
        // scaling as dt^5 under step halving.
        let probes = [
            [1.0, 1.0],
            [-1.0, 1.0],
            [0.5, -0.25],
            [-0.9, -0.9],
            [0.1, 0.0],
        ];
        for p in probes {
            let x = st(&p);
            let u = u1(0.7);
            let coarse = rk4_step(&vdp_derivative, &x, &u, 0.01).unwrap();
            let mut fine = x.clone();
            for _ in 0..1000 {
                fine = rk4_step(&vdp_derivative, &fine, &u, 0.01 / 1000.0).unwrap();
            }
            for i in 0..2 {
                assert!(
                    (coarse[i] - fine[i]).abs() <= 5e-8,
                    "component {i} differs by {}",
                    (coarse[i] - fine[i]).abs()
                );
            }
        }
    }

    #[test]
    fn rk4_step_close_to_fine_euler_oracle() {
        // Independent oracle: 1000-substep forward Euler across one step.
        // Oracle value frozen from the Euler run itself; the gap is dominated
        // by the oracle's own first-order error (~1.6e-6 on x2).
        let x = st(&[1.0, 1.0]);
        let u = u1(0.0);
        let coarse = rk4_step(&vdp_derivative, &x, &u, 0.01).unwrap();
        let mut e = x.as_vector().clone();
        let h = 0.01 / 1000.0;
        for _ in 0..1000 {
            let d = vdp_derivative(&StateVector::from_dvector_unchecked(e.clone()), &u).unwrap();
            e += h * d.as_vector();
        }
        assert_relative_eq!(e[0], 1.019131055317096, epsilon = 1e-12);
        assert_relative_eq!(e[1], 0.913558370542577, epsilon = 1e-12);
        for i in 0..2 {
            assert!(
                (coarse[i] - e[i]).abs() <= 2e-6,
                "component {i} differs from Euler oracle by {}",
                (coarse[i] - e[i]).abs()
            );
        }
    }

    #[test]
    fn simulate_zero_steps_returns_initial_state() {
        let cfg = SimConfig::new(0.01, 0).unwrap();
        let traj = simulate_vdp(&st(&[-0.1, -0.5]), &[], &cfg).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0], st(&[-0.1, -0.5]));
    }

    #[test]
    fn simulate_square_wave_stays_bounded_and_oscillates() {
        // Over 2 s the orbit completes only half a swing; the full
        // oscillation (two x1 zero crossings) shows up over 7 s.
        let cfg = SimConfig::new(0.01, 700).unwrap();
        let inputs: Vec<ControlInput> =
            (0..700).map(|k| square_wave(k as f64 * cfg.dt)).collect();
        let traj = simulate_vdp(&st(&[-0.1, -0.5]), &inputs, &cfg).unwrap();
        assert_eq!(traj.len(), 701);
        let max_abs = traj
            .iter()
            .flat_map(|x| [x[0].abs(), x[1].abs()])
            .fold(0.0, f64::max);
        assert!(max_abs < 10.0, "trajectory unbounded: {max_abs}");
        let sign_changes = traj.windows(2).filter(|w| w[0][0] * w[1][0] < 0.0).count();
        assert!(sign_changes >= 2);
    }

    #[test]
    fn simulate_rejects_mismatched_input_length() {
        let cfg = SimConfig::new(0.01, 5).unwrap();
        let err = simulate_vdp(&st(&[0.0, 0.0]), &vec![u1(0.0); 3], &cfg);
        assert!(err.is_err());
    }

    #[test]
    fn simulate_blowup_reports_step_index() {
        // x' = x^2 from x0 = 1 blows up at t = 1.
        let field = |x: &StateVector, _u: &ControlInput| StateVector::new(vec![x[0] * x[0]]);
        let cfg = SimConfig::new(0.5, 10).unwrap();
        let err = simulate(&field, &st(&[1.0]), &vec![u1(0.0); 10], &cfg).unwrap_err();
        match err {
            Error::Integration { step } => assert!(step < 10),
            other => panic!("expected integration error, got {other}"),
        }
    }

    #[test]
    fn square_wave_examples() {
        assert_eq!(square_wave(0.0)[0], 1.0);
        assert_eq!(square_wave(0.31)[0], -1.0);
        assert_eq!(square_wave(0.65)[0], 1.0);
    }

    #[test]
    fn trajectory_csv_has_header_and_row_per_step() {
        let cfg = SimConfig::new(0.01, 3).unwrap();
        let inputs = vec![u1(1.0), u1(-1.0), u1(1.0)];
        let traj = simulate_vdp(&st(&[0.2, 0.1]), &inputs, &cfg).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj, &inputs, cfg.dt).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,x1,x2,u");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].ends_with(','), "terminal row has no input");
    }

    proptest! {
        #[test]
        fn square_wave_range_is_plus_minus_one(t in 0.0f64..100.0) {
            let u = square_wave(t)[0];
            prop_assert!(u == 1.0 || u == -1.0);
        }

        #[test]
        fn simulate_composes_at_any_split(
            x0a in -1.0f64..1.0, x0b in -1.0f64..1.0,
            seed in 0u64..1000, j in 0usize..20,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let steps = 20;
            let inputs: Vec<ControlInput> = (0..steps)
                .map(|_| u1(rng.random_range(-1.0..=1.0)))
                .collect();
            let cfg = SimConfig::new(0.01, steps).unwrap();
            let full = simulate_vdp(&st(&[x0a, x0b]), &inputs, &cfg).unwrap();

            let cfg_a = SimConfig::new(0.01, j).unwrap();
            let head = simulate_vdp(&st(&[x0a, x0b]), &inputs[..j], &cfg_a).unwrap();
            let cfg_b = SimConfig::new(0.01, steps - j).unwrap();
            let tail = simulate_vdp(&head[j], &inputs[j..], &cfg_b).unwrap();

            let glued: Vec<&StateVector> = head[..j].iter().chain(tail.iter()).collect();
            prop_assert_eq!(glued.len(), full.len());
            for (a, b) in glued.iter().zip(full.iter()) {
                prop_assert_eq!(a.as_vector(), b.as_vector());
            }
        }
    }
}
