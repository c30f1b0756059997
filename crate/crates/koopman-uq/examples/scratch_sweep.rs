use koopman_uq::dataset::{fit_normalizer, generate_dataset, split};
use koopman_uq::dynamics::{simulate_vdp, square_wave, ControlInput, SimConfig, StateVector};
use koopman_uq::autoencoder::{train, AEModel, TrainConfig, reconstruction_mse};
use koopman_uq::koopman::{fit_phi_gamma, lift_dataset, residual_bound, KoopmanModel};
use koopman_uq::edmd::{RbfLifting, fit_edmd, edmd_predict};
use koopman_uq::linalg::spectral_radius;
use koopman_uq::setcalc::{find_s_alpha, rpi_set};
use koopman_uq::report::{rollout_predict, metrics_for};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let num_traj: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let steps = 200;
    let cfg = SimConfig::new(0.01, steps).unwrap();
    let gen = generate_dataset(num_traj, steps, &cfg, 2024).unwrap();
    let sp = split(&gen.dataset, (0.7, 0.2, 0.1), 2025).unwrap();
    let nz = fit_normalizer(&sp.train).unwrap();

    // Eval scenario: 7s square wave from (-0.1,-0.5)
    let eval_steps = 700;
    let x0 = StateVector::from_slice(&[-0.1, -0.5]).unwrap();
    let inputs: Vec<ControlInput> = (0..eval_steps).map(|k| square_wave(k as f64 * 0.01)).collect();
    let ecfg = SimConfig::new(0.01, eval_steps).unwrap();
    let truth = simulate_vdp(&x0, &inputs, &ecfg).unwrap();

    // EDMD baseline
    let rbf = RbfLifting::sample_centers(100, 2, 2027);
    let em = fit_edmd(&rbf, sp.train.x(), sp.train.u(), sp.train.y(), 1e-8).unwrap();
    let epred = edmd_predict(&em, &rbf, &x0, &inputs);
    let met = metrics_for("edmd", &truth, &epred);
    println!("EDMD: rho={:.6} MSE=({:.4},{:.4}) ME=({:.3},{:.3})  [bands: MSE<=0.039/0.084, ME<=0.70/0.994]",
        spectral_radius(&em.a).unwrap(), met.mse[0], met.mse[1], met.me[0], met.me[1]);

    for lifted in [3usize, 4, 5, 6, 8] {
        for seed in [2026u64, 7] {
            let init = AEModel::init(2, 60, lifted, nz.clone(), seed).unwrap();
            let tc = TrainConfig { epochs: 40, seed, train_biases: true, ..TrainConfig::default() };
            let out = train(&init, &sp, &tc).unwrap();
            let (zx, zy) = lift_dataset(&out.model, &sp.train);
            let (phi, gamma) = fit_phi_gamma(&zx, &zy, sp.train.u(), 1e-8).unwrap();
            let rho = spectral_radius(&phi).unwrap();
            let rb = residual_bound(&out.model, &phi, &gamma, &sp.train).unwrap();
            let vmse = reconstruction_mse(&out.model, sp.validation.x());
            let km = KoopmanModel { phi: phi.clone(), gamma, w_max: rb.w_max, w_box: rb.w_box };
            let pred = rollout_predict(&out.model, &km, &x0, &inputs);
            let m = metrics_for("ae", &truth, &pred.predicted_states);
            let sa = find_s_alpha(&phi, 0.1, 5000);
            let (s_str, hull) = match &sa {
                Ok((s, alpha)) => {
                    let cert = rpi_set(&phi, rb.w_max, *s, *alpha);
                    (format!("s={s} a={alpha:.3}"), format!("l2r={:.3}", cert.l2_radius))
                }
                Err(_) => ("s=FAIL".to_string(), "-".to_string()),
            };
            println!("N={lifted} seed={seed:4}: rho={rho:.6} w_max={:.4} val={:.1e} MSE=({:.4},{:.4}) ME=({:.3},{:.3}) {s_str} {hull}",
                rb.w_max, vmse, m.mse[0], m.mse[1], m.me[0], m.me[1]);
        }
    }
}
