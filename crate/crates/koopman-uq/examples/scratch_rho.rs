use koopman_uq::dataset::{fit_normalizer, generate_dataset, split};
use koopman_uq::dynamics::SimConfig;
use koopman_uq::autoencoder::{train, AEModel, TrainConfig, reconstruction_mse};
use koopman_uq::koopman::{fit_phi_gamma, lift_dataset, residual_bound};
use koopman_uq::linalg::spectral_radius;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let num_traj: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let steps = 200;
    let cfg = SimConfig::new(0.01, steps).unwrap();
    let t0 = Instant::now();
    let gen = generate_dataset(num_traj, steps, &cfg, 2024).unwrap();
    let sp = split(&gen.dataset, (0.7, 0.2, 0.1), 2025).unwrap();
    println!("dataset {} samples in {:?}", gen.dataset.num_samples(), t0.elapsed());
    let nz = fit_normalizer(&sp.train).unwrap();

    for lifted in [8usize, 12, 16, 20] {
        for epochs in [20usize, 50] {
            for seed in [2026u64, 7, 99] {
                let t1 = Instant::now();
                let init = AEModel::init(2, 60, lifted, nz.clone(), seed).unwrap();
                let tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
                let out = train(&init, &sp, &tc).unwrap();
                let train_time = t1.elapsed();
                let (zx, zy) = lift_dataset(&out.model, &sp.train);
                let (phi, gamma) = fit_phi_gamma(&zx, &zy, sp.train.u(), 1e-8).unwrap();
                let rho = spectral_radius(&phi).unwrap();
                let rb = residual_bound(&out.model, &phi, &gamma, &sp.train).unwrap();
                let vmse = reconstruction_mse(&out.model, sp.validation.x());
                println!(
                    "N={lifted:2} epochs={epochs:2} seed={seed:4}: rho={rho:.6} w_max={:.5} val_mse={:.2e} train {:?}",
                    rb.w_max, vmse, train_time
                );
            }
        }
    }
}
