use koopman_uq::dataset::{fit_normalizer, generate_dataset, split};
use koopman_uq::dynamics::SimConfig;
use koopman_uq::autoencoder::{train, AEModel, TrainConfig};
use koopman_uq::koopman::{fit_phi_gamma, lift_dataset};
use koopman_uq::edmd::{RbfLifting, fit_edmd};
use koopman_uq::linalg::spectral_radius;
use nalgebra::DVector;

fn main() {
    let steps = 200;
    let cfg = SimConfig::new(0.01, steps).unwrap();
    let gen = generate_dataset(200, steps, &cfg, 2024).unwrap();
    let sp = split(&gen.dataset, (0.7, 0.2, 0.1), 2025).unwrap();
    let nz = fit_normalizer(&sp.train).unwrap();
    println!("normalizer offset={:?} scale={:?}", nz.offset, nz.scale);

    // Trained-with-biases AE, N=12
    let init = AEModel::init(2, 60, 12, nz.clone(), 2026).unwrap();
    let tc = TrainConfig { epochs: 30, seed: 2026, train_biases: true, ..TrainConfig::default() };
    let out = train(&init, &sp, &tc).unwrap();
    let (zx, zy) = lift_dataset(&out.model, &sp.train);
    let (phi, _gamma) = fit_phi_gamma(&zx, &zy, sp.train.u(), 1e-8).unwrap();

    // eigenvalues sorted by modulus
    let eigs = phi.clone().complex_eigenvalues();
    let mut mods: Vec<(f64, f64)> = eigs.iter().map(|c| (c.norm(), c.im.atan2(c.re))).collect();
    mods.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    println!("AE Phi top eigenvalues (modulus, angle):");
    for (m, a) in mods.iter().take(6) { println!("  |l|={m:.6} angle={a:.5}"); }

    // Check constant-direction: left eigenvector c for top eigenvalue; is c'z(x) ~ const?
    // Solve via eigen of Phi^T (real part approximation for the dominant real eigenvalue).
    let phit = phi.transpose();
    // power iteration on Phi^T
    let mut v = DVector::from_element(12, 1.0).normalize();
    for _ in 0..5000 { v = (&phit * v).normalize(); }
    let lam = (&phit * &v).dot(&v);
    println!("power iteration on Phi^T: lambda={lam:.6}");
    // c' z over data: mean and std
    let proj = v.transpose() * &zx;
    let mean = proj.iter().sum::<f64>() / proj.len() as f64;
    let var = proj.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / proj.len() as f64;
    println!("c'z over data: mean={mean:.4} std={:.4}  (near-constant iff std << |mean|)", var.sqrt());

    // EDMD baseline spectral radius
    let rbf = RbfLifting::sample_centers(100, 2, 2027);
    let em = fit_edmd(&rbf, sp.train.x(), sp.train.u(), sp.train.y(), 1e-8).unwrap();
    println!("EDMD rho(A) = {:.6}", spectral_radius(&em.a).unwrap());
}
