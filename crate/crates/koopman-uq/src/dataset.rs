//! Training-corpus generation, trajectory-wise splitting, and input
//! normalization.
//!
//! Snapshot layout: columns of X hold states, U the inputs applied there, and
//! Y the successor states. A (x, u, y) triple never straddles a trajectory
//! boundary.

use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::dynamics::{simulate, ControlInput, SimConfig, StateVector, VectorField};
use crate::error::{Error, Result};

/// Snapshot matrices X (n x M), U (m x M), Y (n x M) plus the column ranges
/// of the trajectories they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    x: DMatrix<f64>,
    u: DMatrix<f64>,
    y: DMatrix<f64>,
    boundaries: Vec<Range<usize>>,
}

impl TrajectoryDataset {
    pub fn new(
        x: DMatrix<f64>,
        u: DMatrix<f64>,
        y: DMatrix<f64>,
        boundaries: Vec<Range<usize>>,
    ) -> Result<Self> {
        if x.ncols() != u.ncols() || x.ncols() != y.ncols() {
            return Err(Error::Dimension {
                context: "snapshot matrix column counts".into(),
                expected: x.ncols(),
                got: u.ncols().min(y.ncols()),
            });
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension {
                context: "X/Y row counts".into(),
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        let mut covered = 0;
        for r in &boundaries {
            if r.start != covered || r.end > x.ncols() {
                return Err(Error::InvalidConfig(format!(
                    "trajectory boundaries must tile the columns; got {r:?} at offset {covered}"
                )));
            }
            covered = r.end;
        }
        if covered != x.ncols() {
            return Err(Error::InvalidConfig(format!(
                "trajectory boundaries cover {covered} of {} columns",
                x.ncols()
            )));
        }
        Ok(TrajectoryDataset { x, u, y, boundaries })
    }

    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_trajectories(&self) -> usize {
        self.boundaries.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn boundaries(&self) -> &[Range<usize>] {
        &self.boundaries
    }

    /// Assembles a new dataset from whole trajectories, renumbering columns.
    pub fn select_trajectories(&self, indices: &[usize]) -> Result<Self> {
        let total: usize = indices
            .iter()
            .map(|&i| self.boundaries[i].len())
            .sum();
        let mut x = DMatrix::zeros(self.x.nrows(), total);
        let mut u = DMatrix::zeros(self.u.nrows(), total);
        let mut y = DMatrix::zeros(self.y.nrows(), total);
        let mut boundaries = Vec::with_capacity(indices.len());
        let mut at = 0;
        for &i in indices {
            let r = self.boundaries[i].clone();
            let len = r.len();
            x.columns_mut(at, len).copy_from(&self.x.columns(r.start, len));
            u.columns_mut(at, len).copy_from(&self.u.columns(r.start, len));
            y.columns_mut(at, len).copy_from(&self.y.columns(r.start, len));
            boundaries.push(at..at + len);
            at += len;
        }
        TrajectoryDataset::new(x, u, y, boundaries)
    }
}

/// Disjoint train/validation/test datasets split by whole trajectories.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: TrajectoryDataset,
    pub validation: TrajectoryDataset,
    pub test: TrajectoryDataset,
}

/// Generation output: the dataset and how many trajectories had to be
/// redrawn because they left the finite range.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: TrajectoryDataset,
    pub resampled: usize,
}

const MAX_RESAMPLE_ATTEMPTS: usize = 100;

/// Generates `num_traj` trajectories of `steps` steps each from x0 ~ U[-1,1]^n
/// and i.i.d. inputs u_k ~ U[-1,1]^m, all drawn from per-trajectory seeded
/// substreams so the result is independent of scheduling order.
pub fn generate_dataset(
    num_traj: usize,
    steps: usize,
    cfg: &SimConfig,
    seed: u64,
) -> Result<GeneratedDataset> {
    generate_dataset_with_field(&crate::dynamics::vdp_derivative, 2, 1, num_traj, steps, cfg, seed)
}

/// Generic generation used by `generate_dataset` and by tests that need a
/// field with rejectable (blowing-up) trajectories.
pub fn generate_dataset_with_field<F: VectorField>(
    field: &F,
    state_dim: usize,
    input_dim: usize,
    num_traj: usize,
    steps: usize,
    cfg: &SimConfig,
    seed: u64,
) -> Result<GeneratedDataset> {
    if num_traj < 1 || steps < 1 {
        return Err(Error::InvalidConfig(
            "num_traj and steps must both be >= 1".into(),
        ));
    }
    if cfg.steps != steps {
        return Err(Error::InvalidConfig(format!(
            "cfg.steps ({}) must equal steps ({steps})",
            cfg.steps
        )));
    }

    struct TrajOut {
        states: Vec<StateVector>,
        inputs: Vec<ControlInput>,
        attempts: usize,
    }

    let results: Vec<Result<TrajOut>> = (0..num_traj)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(t as u64 + 1);
            for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
                let x0 = StateVector::new(
                    (0..state_dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                )?;
                let inputs: Vec<ControlInput> = (0..steps)
                    .map(|_| {
                        ControlInput::new(
                            (0..input_dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
                        )
                    })
                    .collect::<Result<_>>()?;
                match simulate(field, &x0, &inputs, cfg) {
                    Ok(states) => {
                        return Ok(TrajOut {
                            states,
                            inputs,
                            attempts: attempt,
                        })
                    }
                    Err(Error::Integration { .. }) => continue,
                    Err(other) => return Err(other),
                }
            }
            Err(Error::Integration { step: 0 })
        })
        .collect();

    let m = num_traj * steps;
    let mut x = DMatrix::zeros(state_dim, m);
    let mut u = DMatrix::zeros(input_dim, m);
    let mut y = DMatrix::zeros(state_dim, m);
    let mut boundaries = Vec::with_capacity(num_traj);
    let mut resampled = 0;
    for (t, res) in results.into_iter().enumerate() {
        let out = res?;
        resampled += out.attempts;
        let base = t * steps;
        for k in 0..steps {
            x.column_mut(base + k).copy_from(out.states[k].as_vector());
            u.column_mut(base + k).copy_from(out.inputs[k].as_vector());
            y.column_mut(base + k).copy_from(out.states[k + 1].as_vector());
        }
        boundaries.push(base..base + steps);
    }

    Ok(GeneratedDataset {
        dataset: TrajectoryDataset::new(x, u, y, boundaries)?,
        resampled,
    })
}

/// Splits by whole trajectories after a seeded shuffle. Part sizes are the
/// rounded ratio shares; every part with a positive ratio must receive at
/// least one trajectory.
pub fn split(ds: &TrajectoryDataset, ratios: (f64, f64, f64), seed: u64) -> Result<SplitDataset> {
    let (r0, r1, r2) = ratios;
    let sum = r0 + r1 + r2;
    if !(sum - 1.0).abs().le(&1e-9) || r0 < 0.0 || r1 < 0.0 || r2 < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }
    let t = ds.num_trajectories();

    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Fisher-Yates, written out so the drawing order is pinned.
    for i in (1..t).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let n0 = (r0 * t as f64).round() as usize;
    let n01 = ((r0 + r1) * t as f64).round() as usize;
    let n0 = n0.min(t);
    let n01 = n01.clamp(n0, t);
    let counts = [n0, n01 - n0, t - n01];
    for (count, ratio) in counts.iter().zip([r0, r1, r2]) {
        if ratio > 0.0 && *count == 0 {
            return Err(Error::TooFewTrajectories {
                got: t,
                parts: [r0, r1, r2].iter().filter(|r| **r > 0.0).count(),
            });
        }
    }

    let train = ds.select_trajectories(&order[..n0])?;
    let validation = ds.select_trajectories(&order[n0..n01])?;
    let test = ds.select_trajectories(&order[n01..])?;
    Ok(SplitDataset {
        train,
        validation,
        test,
    })
}

/// Per-feature affine map sending the training range of each state feature
/// to [-1, 1]: normalized = 2 (x - offset) / scale - 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Identity map for `dim` features (range [-1, 1] per feature).
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            offset: vec![-1.0; dim],
            scale: vec![2.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn normalize(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim());
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.offset.iter().zip(&self.scale))
                .map(|(v, (lo, s))| 2.0 * ((v - lo) / s) - 1.0),
        )
    }

    pub fn denormalize(&self, z: &DVector<f64>) -> DVector<f64> {
        assert_eq!(z.len(), self.dim());
        DVector::from_iterator(
            z.len(),
            z.iter()
                .zip(self.offset.iter().zip(&self.scale))
                .map(|(v, (lo, s))| lo + (v + 1.0) / 2.0 * s),
        )
    }

    /// Normalizes every column of a feature matrix.
    pub fn normalize_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.dim());
        let mut out = m.clone();
        for i in 0..m.nrows() {
            let (lo, s) = (self.offset[i], self.scale[i]);
            for v in out.row_mut(i).iter_mut() {
                *v = 2.0 * ((*v - lo) / s) - 1.0;
            }
        }
        out
    }
}

/// Fits the normalizer on the state matrix of `ds` (training split).
pub fn fit_normalizer(ds: &TrajectoryDataset) -> Result<Normalizer> {
    if ds.num_samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = ds.state_dim();
    let mut offset = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let row = ds.x.row(i);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi - lo).is_finite() || hi - lo <= 0.0 {
            return Err(Error::ConstantFeature { index: i });
        }
        offset.push(lo);
        scale.push(hi - lo);
    }
    Ok(Normalizer { offset, scale })
}

/// Sidecar metadata stored next to the X/U/Y CSV triplet.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub schema_version: u32,
    pub seed: u64,
    pub dt: f64,
    pub steps_per_trajectory: usize,
    pub num_trajectories: usize,
    pub num_samples: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub resampled: usize,
    pub boundaries: Vec<[usize; 2]>,
    pub x_csv_sha256: String,
    pub u_csv_sha256: String,
    pub y_csv_sha256: String,
}

fn matrix_to_coo_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 24 + 32);
    out.push_str("feature_index,sample_index,value\n");
    for k in 0..m.ncols() {
        for i in 0..m.nrows() {
            // Shortest exact decimal representation so reloads are bit-exact.
            out.push_str(&format!("{i},{k},{}\n", m[(i, k)]));
        }
    }
    out
}

fn matrix_from_coo_csv(text: &str, nrows: usize, ncols: usize, path: &Path) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(nrows, ncols);
    let bad = |line: usize, what: &str| {
        Error::InvalidConfig(format!(
            "malformed dataset CSV {} at line {line}: {what}",
            path.display()
        ))
    };
    for (idx, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.splitn(3, ',');
        let i: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(idx + 1, "feature index"))?;
        let k: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(idx + 1, "sample index"))?;
        let v: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(idx + 1, "value"))?;
        if i >= nrows || k >= ncols {
            return Err(bad(idx + 1, "index out of range"));
        }
        m[(i, k)] = v;
    }
    Ok(m)
}

/// Writes X.csv / U.csv / Y.csv plus dataset.json into `dir`.
pub fn save_dataset(
    dir: &Path,
    gen: &GeneratedDataset,
    seed: u64,
    cfg: &SimConfig,
) -> Result<DatasetSidecar> {
    let ds = &gen.dataset;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let x_text = matrix_to_coo_csv(&ds.x);
    let u_text = matrix_to_coo_csv(&ds.u);
    let y_text = matrix_to_coo_csv(&ds.y);
    artifact::write_text(&dir.join("X.csv"), &x_text)?;
    artifact::write_text(&dir.join("U.csv"), &u_text)?;
    artifact::write_text(&dir.join("Y.csv"), &y_text)?;
    let sidecar = DatasetSidecar {
        schema_version: 1,
        seed,
        dt: cfg.dt,
        steps_per_trajectory: cfg.steps,
        num_trajectories: ds.num_trajectories(),
        num_samples: ds.num_samples(),
        state_dim: ds.state_dim(),
        input_dim: ds.input_dim(),
        resampled: gen.resampled,
        boundaries: ds.boundaries.iter().map(|r| [r.start, r.end]).collect(),
        x_csv_sha256: artifact::sha256_hex(x_text.as_bytes()),
        u_csv_sha256: artifact::sha256_hex(u_text.as_bytes()),
        y_csv_sha256: artifact::sha256_hex(y_text.as_bytes()),
    };
    artifact::save_json(&dir.join("dataset.json"), &sidecar)?;
    Ok(sidecar)
}

/// Loads the CSV triplet back, verifying the sidecar hashes.
pub fn load_dataset(dir: &Path) -> Result<(TrajectoryDataset, DatasetSidecar)> {
    let sidecar: DatasetSidecar =
        artifact::load_stage_json(&dir.join("dataset.json"), "gen-data")?;
    let mut mats = Vec::with_capacity(3);
    for (name, rows, expect) in [
        ("X.csv", sidecar.state_dim, &sidecar.x_csv_sha256),
        ("U.csv", sidecar.input_dim, &sidecar.u_csv_sha256),
        ("Y.csv", sidecar.state_dim, &sidecar.y_csv_sha256),
    ] {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                stage: "gen-data".into(),
                path,
            });
        }
        let text = artifact::read_text(&path)?;
        if artifact::sha256_hex(text.as_bytes()) != *expect {
            return Err(Error::StaleArtifact {
                artifact: name.into(),
                input: "dataset.json".into(),
                stage: "gen-data".into(),
            });
        }
        mats.push(matrix_from_coo_csv(&text, rows, sidecar.num_samples, &path)?);
    }
    let y = mats.pop().unwrap();
    let u = mats.pop().unwrap();
    let x = mats.pop().unwrap();
    let boundaries = sidecar.boundaries.iter().map(|b| b[0]..b[1]).collect();
    Ok((TrajectoryDataset::new(x, u, y, boundaries)?, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rk4_step;
    use proptest::prelude::*;

    fn sim_cfg(steps: usize) -> SimConfig {
        SimConfig::new(0.01, steps).unwrap()
    }

    #[test]
    fn single_pair_dataset_matches_simulation() {
        let gen = generate_dataset(1, 1, &sim_cfg(1), 7).unwrap();
        let ds = &gen.dataset;
        assert_eq!(ds.num_samples(), 1);
        let x0 = StateVector::from_slice(ds.x().column(0).as_slice()).unwrap();
        let u0 = ControlInput::new(ds.u().column(0).iter().copied().collect()).unwrap();
        let y = rk4_step(&crate::dynamics::vdp_derivative, &x0, &u0, 0.01).unwrap();
        assert_eq!(y.as_vector(), &ds.y().column(0).clone_owned());
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = generate_dataset(5, 20, &sim_cfg(20), 42).unwrap();
        let b = generate_dataset(5, 20, &sim_cfg(20), 42).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_dataset(5, 20, &sim_cfg(20), 43).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn successor_columns_are_bit_exact_rk4_steps() {
        let gen = generate_dataset(3, 50, &sim_cfg(50), 11).unwrap();
        let ds = &gen.dataset;
        for k in 0..ds.num_samples() {
            let x = StateVector::from_slice(ds.x().column(k).as_slice()).unwrap();
            let u = ControlInput::new(ds.u().column(k).iter().copied().collect()).unwrap();
            let y = rk4_step(&crate::dynamics::vdp_derivative, &x, &u, 0.01).unwrap();
            assert_eq!(
                y.as_vector(),
                &ds.y().column(k).clone_owned(),
                "column {k} is not the recorded successor"
            );
        }
    }

    #[test]
    fn blowup_trajectories_are_resampled() {
        // x' = x^2 escapes in finite time for x0 > 0 at this horizon.
        let field =
            |x: &StateVector, _u: &ControlInput| StateVector::new(vec![x[0] * x[0]]);
        let cfg = SimConfig::new(0.5, 10).unwrap();
        let gen = generate_dataset_with_field(&field, 1, 1, 20, 10, &cfg, 3).unwrap();
        assert!(gen.resampled > 0, "expected at least one redraw");
        assert!(gen.dataset.x().iter().all(|v| v.is_finite()));
        assert!(gen.dataset.y().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn split_ten_trajectories_gives_7_2_1() {
        let gen = generate_dataset(10, 5, &sim_cfg(5), 1).unwrap();
        let s = split(&gen.dataset, (0.7, 0.2, 0.1), 9).unwrap();
        assert_eq!(s.train.num_trajectories(), 7);
        assert_eq!(s.validation.num_trajectories(), 2);
        assert_eq!(s.test.num_trajectories(), 1);
    }

    #[test]
    fn split_all_in_train_when_ratio_is_one() {
        let gen = generate_dataset(4, 5, &sim_cfg(5), 1).unwrap();
        let s = split(&gen.dataset, (1.0, 0.0, 0.0), 9).unwrap();
        assert_eq!(s.train.num_samples(), 20);
        assert_eq!(s.validation.num_samples(), 0);
        assert_eq!(s.test.num_samples(), 0);
    }

    #[test]
    fn split_thousand_trajectories_is_700_200_100() {
        let gen = generate_dataset(1000, 1, &sim_cfg(1), 5).unwrap();
        let s = split(&gen.dataset, (0.7, 0.2, 0.1), 9).unwrap();
        assert_eq!(
            (
                s.train.num_trajectories(),
                s.validation.num_trajectories(),
                s.test.num_trajectories()
            ),
            (700, 200, 100)
        );
    }

    #[test]
    fn split_rejects_too_few_trajectories() {
        let gen = generate_dataset(2, 5, &sim_cfg(5), 1).unwrap();
        assert!(split(&gen.dataset, (0.7, 0.2, 0.1), 9).is_err());
    }

    #[test]
    fn split_parts_partition_the_columns() {
        let gen = generate_dataset(9, 8, &sim_cfg(8), 2).unwrap();
        let ds = &gen.dataset;
        let s = split(ds, (0.7, 0.2, 0.1), 3).unwrap();
        let total =
            s.train.num_samples() + s.validation.num_samples() + s.test.num_samples();
        assert_eq!(total, ds.num_samples());

        let col_key = |m: &DMatrix<f64>, k: usize| -> Vec<u64> {
            m.column(k).iter().map(|v| v.to_bits()).collect()
        };
        let mut split_cols: Vec<Vec<u64>> = Vec::new();
        for part in [&s.train, &s.validation, &s.test] {
            for k in 0..part.num_samples() {
                split_cols.push(col_key(part.x(), k));
            }
        }
        let mut orig_cols: Vec<Vec<u64>> =
            (0..ds.num_samples()).map(|k| col_key(ds.x(), k)).collect();
        split_cols.sort();
        orig_cols.sort();
        assert_eq!(split_cols, orig_cols);
    }

    #[test]
    fn normalizer_on_symmetric_range_is_identity() {
        let x = DMatrix::from_row_slice(1, 3, &[-1.0, 0.25, 1.0]);
        let ds = TrajectoryDataset::new(x.clone(), DMatrix::zeros(1, 3), x, vec![0..3]).unwrap();
        let nz = fit_normalizer(&ds).unwrap();
        let v = DVector::from_vec(vec![0.25]);
        assert!((nz.normalize(&v)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn normalizer_on_zero_two_range_shifts_by_one() {
        let x = DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 2.0]);
        let ds = TrajectoryDataset::new(x.clone(), DMatrix::zeros(1, 3), x, vec![0..3]).unwrap();
        let nz = fit_normalizer(&ds).unwrap();
        for v in [0.0, 0.5, 1.3, 2.0] {
            let out = nz.normalize(&DVector::from_vec(vec![v]))[0];
            assert!((out - (v - 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn normalizer_maps_max_to_exactly_one() {
        let x = DMatrix::from_row_slice(1, 3, &[0.137, 0.9, 2.7173]);
        let ds = TrajectoryDataset::new(x.clone(), DMatrix::zeros(1, 3), x, vec![0..3]).unwrap();
        let nz = fit_normalizer(&ds).unwrap();
        assert_eq!(nz.normalize(&DVector::from_vec(vec![2.7173]))[0], 1.0);
        assert_eq!(nz.normalize(&DVector::from_vec(vec![0.137]))[0], -1.0);
    }

    #[test]
    fn normalizer_rejects_constant_feature() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let ds =
            TrajectoryDataset::new(x, DMatrix::zeros(1, 2), DMatrix::zeros(2, 2), vec![0..2])
                .unwrap();
        match fit_normalizer(&ds).unwrap_err() {
            Error::ConstantFeature { index } => assert_eq!(index, 0),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn dataset_csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = sim_cfg(12);
        let gen = generate_dataset(4, 12, &cfg, 99).unwrap();
        save_dataset(dir.path(), &gen, 99, &cfg).unwrap();
        let (loaded, sidecar) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, gen.dataset);
        assert_eq!(sidecar.num_samples, 48);

        // Tampering with a CSV must be detected.
        let xpath = dir.path().join("X.csv");
        let mut text = std::fs::read_to_string(&xpath).unwrap();
        text.push_str("0,0,99.0\n");
        std::fs::write(&xpath, text).unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::StaleArtifact { .. } => {}
            other => panic!("unexpected error {other}"),
        }
    }

    proptest! {
        #[test]
        fn normalize_round_trip_is_identity(
            lo in -5.0f64..0.0, width in 0.1f64..10.0, frac in 0.0f64..1.0,
        ) {
            let hi = lo + width;
            let x = DMatrix::from_row_slice(1, 2, &[lo, hi]);
            let ds = TrajectoryDataset::new(
                x.clone(), DMatrix::zeros(1, 2), x, vec![0..2],
            ).unwrap();
            let nz = fit_normalizer(&ds).unwrap();
            let v = lo + frac * width;
            let round = nz.denormalize(&nz.normalize(&DVector::from_vec(vec![v])))[0];
            prop_assert!((round - v).abs() <= 1e-12);
        }
    }
}
