use koopman_uq::dynamics::*;

fn st(v: &[f64]) -> StateVector { StateVector::from_slice(v).unwrap() }
fn u1(v: f64) -> ControlInput { ControlInput::scalar(v).unwrap() }

fn main() {
    // RK4 order check: local error should scale ~ dt^5 at a fixed point.
    let x = st(&[-1.0, 1.0]);
    let u = u1(0.7);
    for dt in [0.01, 0.005, 0.0025] {
        let coarse = rk4_step(&vdp_derivative, &x, &u, dt).unwrap();
        let mut fine = x.clone();
        for _ in 0..4000 { fine = rk4_step(&vdp_derivative, &fine, &u, dt / 4000.0).unwrap(); }
        println!("dt={dt}: err = {:.4e} {:.4e}", (coarse[0]-fine[0]).abs(), (coarse[1]-fine[1]).abs());
    }
}
