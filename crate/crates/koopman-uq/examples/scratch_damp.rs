use koopman_uq::dataset::{fit_normalizer, generate_dataset, split};
use koopman_uq::dynamics::{simulate_vdp, square_wave, ControlInput, SimConfig, StateVector};
use koopman_uq::autoencoder::{train, AEModel, TrainConfig, reconstruction_mse};
use koopman_uq::koopman::{fit_phi_gamma, lift_dataset, residual_bound, KoopmanModel};
use koopman_uq::linalg::{cap_spectral_radius, spectral_radius};
use koopman_uq::setcalc::{find_s_alpha, rpi_set};
use koopman_uq::certify::{certify_decoder, CertifyConfig};
use koopman_uq::report::{rollout_predict, metrics_for};
use koopman_uq::pipeline::premise_flags;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let num_traj: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);
    let steps = 200;
    let cfg = SimConfig::new(0.01, steps).unwrap();
    let gen = generate_dataset(num_traj, steps, &cfg, 2024).unwrap();
    let sp = split(&gen.dataset, (0.7, 0.2, 0.1), 2025).unwrap();
    let nz = fit_normalizer(&sp.train).unwrap();

    let mk = |h: usize| -> (Vec<ControlInput>, Vec<StateVector>) {
        let x0 = StateVector::from_slice(&[-0.1, -0.5]).unwrap();
        let inputs: Vec<ControlInput> = (0..h).map(|k| square_wave(k as f64 * 0.01)).collect();
        let ecfg = SimConfig::new(0.01, h).unwrap();
        let truth = simulate_vdp(&x0, &inputs, &ecfg).unwrap();
        (inputs, truth)
    };
    let (in2, tr2) = mk(200);
    let (in7, tr7) = mk(700);
    let x0 = StateVector::from_slice(&[-0.1, -0.5]).unwrap();

    for seed in [2026u64, 7] {
        let init = AEModel::init(2, 60, 3, nz.clone(), seed).unwrap();
        let tc = TrainConfig { epochs, seed, train_biases: true, lr_decay_every: 50, ..TrainConfig::default() };
        let out = train(&init, &sp, &tc).unwrap();
        let (zx, zy) = lift_dataset(&out.model, &sp.train);
        let (phi_ls, gamma) = fit_phi_gamma(&zx, &zy, sp.train.u(), 1e-8).unwrap();
        let rho_raw = spectral_radius(&phi_ls).unwrap();
        let cert = certify_decoder(&out.model, &CertifyConfig::default()).unwrap();
        println!("seed={seed}: val={:.2e} rho_raw={rho_raw:.6} L*={:.3}",
            reconstruction_mse(&out.model, sp.validation.x()), cert.l_star);
        for cap in [0.9999f64, 0.999, 0.995, 0.99] {
            let phi = cap_spectral_radius(&phi_ls, cap).unwrap();
            let rb = residual_bound(&out.model, &phi, &gamma, &sp.train).unwrap();
            let km = KoopmanModel { phi: phi.clone(), gamma: gamma.clone(), w_max: rb.w_max, w_box: rb.w_box };
            let p2 = rollout_predict(&out.model, &km, &x0, &in2);
            let m2 = metrics_for("ae2", &tr2, &p2.predicted_states);
            let p7 = rollout_predict(&out.model, &km, &x0, &in7);
            let m7 = metrics_for("ae7", &tr7, &p7.predicted_states);
            match find_s_alpha(&phi, 0.1, 400_000) {
                Ok((s, alpha)) => {
                    let rc = rpi_set(&phi, rb.w_max, s, alpha);
                    let r = cert.l_star * rc.l2_radius;
                    let flags = premise_flags(&out.model, &km, &tr7, &in7);
                    let pf = flags.iter().filter(|b| **b).count() as f64 / flags.len() as f64;
                    let viol = tr7.iter().zip(&p7.predicted_states).zip(&flags)
                        .filter(|((t, p), f)| **f && (t.as_vector() - p.as_vector()).norm() > r).count();
                    println!("  cap={cap}: w={:.5} MSE2=({:.4},{:.4}) MSE7=({:.4},{:.4}) s={s} r={r:.2} premise={pf:.3} viol={viol}",
                        rb.w_max, m2.mse[0], m2.mse[1], m7.mse[0], m7.mse[1]);
                }
                Err(e) => println!("  cap={cap}: w={:.5} MSE2=({:.4},{:.4}) find_s FAILED: {e}", rb.w_max, m2.mse[0], m2.mse[1]),
            }
        }
    }
}
