//! Multi-step evaluation, per-state error metrics, containment verification
//! against the reconstruction ball, and CSV/SVG artifact emission.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::autoencoder::{AEModel, LiftedVector};
use crate::dynamics::{fmt_sig, ControlInput, StateVector};
use crate::error::{Error, Result};
use crate::koopman::{predict_lifted, KoopmanModel};
use crate::setcalc::ReconstructionBall;

/// Lifted rollout and its decoded states, produced from x0 and the inputs
/// alone.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub predicted_states: Vec<StateVector>,
    pub lifted_pred: Vec<LiftedVector>,
}

/// A prediction run aligned with the true trajectory, optionally carrying
/// the reconstruction ball radius.
#[derive(Debug, Clone)]
pub struct PredictionRun {
    pub true_states: Vec<StateVector>,
    pub predicted_states: Vec<StateVector>,
    pub lifted_pred: Vec<LiftedVector>,
    pub inputs: Vec<ControlInput>,
    pub r: Option<ReconstructionBall>,
}

impl PredictionRun {
    /// Joins the prediction with its ground truth; lengths must agree
    /// (states = inputs + 1).
    pub fn assemble(
        true_states: Vec<StateVector>,
        prediction: Prediction,
        inputs: Vec<ControlInput>,
        r: Option<ReconstructionBall>,
    ) -> Result<Self> {
        if true_states.len() != prediction.predicted_states.len() {
            return Err(Error::Dimension {
                context: "true vs predicted trajectory length".into(),
                expected: true_states.len(),
                got: prediction.predicted_states.len(),
            });
        }
        if true_states.len() != inputs.len() + 1 {
            return Err(Error::Dimension {
                context: "trajectory vs input length".into(),
                expected: inputs.len() + 1,
                got: true_states.len(),
            });
        }
        Ok(PredictionRun {
            true_states,
            predicted_states: prediction.predicted_states,
            lifted_pred: prediction.lifted_pred,
            inputs,
            r,
        })
    }

    pub fn len(&self) -> usize {
        self.true_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_states.is_empty()
    }
}

/// Encodes x0 once, rolls the lifted linear model, and decodes every step.
pub fn rollout_predict(
    ae: &AEModel,
    koopman: &KoopmanModel,
    x0: &StateVector,
    u_seq: &[ControlInput],
) -> Prediction {
    let z0 = ae.encode(x0);
    let lifted = predict_lifted(koopman, &z0, u_seq);
    let predicted = lifted.iter().map(|z| ae.decode(z)).collect();
    Prediction {
        predicted_states: predicted,
        lifted_pred: lifted,
    }
}

/// Per-state maximum absolute error and mean squared error of a run, plus
/// the model label and its Lipschitz constant when one exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsTable {
    pub label: String,
    pub me: Vec<f64>,
    pub mse: Vec<f64>,
    pub l_star: Option<f64>,
}

/// Computes per-state ME and MSE over aligned trajectories.
pub fn metrics_for(label: &str, truth: &[StateVector], pred: &[StateVector]) -> MetricsTable {
    assert_eq!(truth.len(), pred.len(), "trajectories must align");
    assert!(!truth.is_empty(), "metrics need a nonempty run");
    let n = truth[0].dim();
    let mut me = vec![0.0f64; n];
    let mut mse = vec![0.0f64; n];
    for (t, p) in truth.iter().zip(pred) {
        for i in 0..n {
            let e = (t[i] - p[i]).abs();
            me[i] = me[i].max(e);
            mse[i] += e * e;
        }
    }
    for v in &mut mse {
        *v /= truth.len() as f64;
    }
    MetricsTable {
        label: label.to_string(),
        me,
        mse,
        l_star: None,
    }
}

/// Metrics of a prediction run.
pub fn metrics(run: &PredictionRun) -> MetricsTable {
    metrics_for("run", &run.true_states, &run.predicted_states)
}

/// Per-step containment of the true state in the ball of radius r around
/// the prediction.
#[derive(Debug, Clone, Serialize)]
pub struct ContainmentReport {
    pub fraction: f64,
    pub first_violation: Option<usize>,
    pub inside: Vec<bool>,
}

/// Flags ||x_k - xhat_k||_2 <= r per step.
pub fn containment_report(run: &PredictionRun) -> Result<ContainmentReport> {
    let r = run
        .r
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("containment needs a reconstruction radius".into()))?
        .radius;
    let inside: Vec<bool> = run
        .true_states
        .iter()
        .zip(&run.predicted_states)
        .map(|(t, p)| (t.as_vector() - p.as_vector()).norm() <= r)
        .collect();
    let hits = inside.iter().filter(|b| **b).count();
    Ok(ContainmentReport {
        fraction: hits as f64 / inside.len().max(1) as f64,
        first_violation: inside.iter().position(|b| !b),
        inside,
    })
}

/// Everything `emit_artifacts` writes for one evaluation.
pub struct ReportInputs<'a> {
    /// The primary (autoencoder Koopman) run, with its containment data.
    pub run: &'a PredictionRun,
    pub containment: &'a ContainmentReport,
    /// Steps whose incoming one-step lifted residual stayed inside W.
    pub premise_ok: &'a [bool],
    pub tables: &'a [MetricsTable],
    pub dt: f64,
    /// Times (seconds) at which the phase plot draws the uncertainty disk.
    pub disk_times: &'a [f64],
    /// Serialized verbatim into certificate.json / rpi.json.
    pub certificate_json: &'a serde_json::Value,
    pub rpi_json: &'a serde_json::Value,
}

/// Writes metrics.csv, trajectory.csv, phase_plane.svg, certificate.json and
/// rpi.json into `dir`.
pub fn emit_artifacts(dir: &Path, inputs: &ReportInputs<'_>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    artifact::write_text(&dir.join("metrics.csv"), &metrics_csv(inputs.tables))?;
    artifact::write_text(
        &dir.join("trajectory.csv"),
        &trajectory_csv(inputs.run, inputs.containment, inputs.dt),
    )?;
    artifact::write_text(
        &dir.join("phase_plane.svg"),
        &phase_plane_svg(inputs.run, inputs.dt, inputs.disk_times),
    )?;
    artifact::save_json(&dir.join("certificate.json"), inputs.certificate_json)?;
    artifact::save_json(&dir.join("rpi.json"), inputs.rpi_json)?;
    Ok(())
}

/// One row per model: label, per-state ME/MSE, L* when applicable.
pub fn metrics_csv(tables: &[MetricsTable]) -> String {
    let mut out = String::from("model,x1_me,x1_mse,x2_me,x2_mse,l_star\n");
    for t in tables {
        let l = t.l_star.map(fmt_sig).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{l}\n",
            t.label,
            fmt_sig(t.me[0]),
            fmt_sig(t.mse[0]),
            fmt_sig(t.me[1]),
            fmt_sig(t.mse[1]),
        ));
    }
    out
}

/// Per-step table: k,t,x1,x2,x1_hat,x2_hat,err2,r,inside.
pub fn trajectory_csv(run: &PredictionRun, cont: &ContainmentReport, dt: f64) -> String {
    let r = run.r.map(|b| b.radius).unwrap_or(f64::NAN);
    let mut out = String::from("k,t,x1,x2,x1_hat,x2_hat,err2,r,inside\n");
    for (k, (t, p)) in run
        .true_states
        .iter()
        .zip(&run.predicted_states)
        .enumerate()
    {
        let err2 = (t.as_vector() - p.as_vector()).norm();
        out.push_str(&format!(
            "{k},{},{},{},{},{},{},{},{}\n",
            fmt_sig(k as f64 * dt),
            fmt_sig(t[0]),
            fmt_sig(t[1]),
            fmt_sig(p[0]),
            fmt_sig(p[1]),
            fmt_sig(err2),
            fmt_sig(r),
            if cont.inside[k] { 1 } else { 0 },
        ));
    }
    out
}

fn svg_f(v: f64) -> String {
    format!("{v:.3}")
}

/// Self-contained phase-plane figure: true and predicted orbits plus the
/// uncertainty disk at the sampled times.
pub fn phase_plane_svg(run: &PredictionRun, dt: f64, disk_times: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const MARGIN: f64 = 50.0;
    let r = run.r.map(|b| b.radius).unwrap_or(0.0);

    // Data bounding box, padded by the disk radius.
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for x in run.true_states.iter().chain(&run.predicted_states) {
        for i in 0..2 {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    if run.is_empty() {
        lo = [-1.0; 2];
        hi = [1.0; 2];
    }
    for i in 0..2 {
        lo[i] -= r.max(0.05);
        hi[i] += r.max(0.05);
    }
    let scale = ((W - 2.0 * MARGIN) / (hi[0] - lo[0])).min((H - 2.0 * MARGIN) / (hi[1] - lo[1]));
    let px = |x: f64| MARGIN + (x - lo[0]) * scale;
    let py = |y: f64| H - MARGIN - (y - lo[1]) * scale;

    let polyline = |states: &[StateVector]| -> String {
        states
            .iter()
            .map(|s| format!("{},{}", svg_f(px(s[0])), svg_f(py(s[1]))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">Phase plane: true vs predicted with uncertainty disks</text>\n",
        W / 2.0
    ));

    // Uncertainty disks first so the orbits draw on top.
    for &ts in disk_times {
        let k = (ts / dt).round() as usize;
        if k >= run.predicted_states.len() {
            continue;
        }
        let c = &run.predicted_states[k];
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"#bbbbbb\" fill-opacity=\"0.5\" \
             stroke=\"#888888\"/>\n",
            svg_f(px(c[0])),
            svg_f(py(c[1])),
            svg_f(r * scale),
        ));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n",
        polyline(&run.true_states)
    ));
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"red\" stroke-width=\"1.2\" \
         stroke-dasharray=\"6 4\"/>\n",
        polyline(&run.predicted_states)
    ));
    // Markers at the sampled times: circle = true, square = predicted.
    for &ts in disk_times {
        let k = (ts / dt).round() as usize;
        if k >= run.len() {
            continue;
        }
        let t = &run.true_states[k];
        let p = &run.predicted_states[k];
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"black\"/>\n",
            svg_f(px(t[0])),
            svg_f(py(t[1])),
        ));
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"red\"/>\n",
            svg_f(px(p[0]) - 4.0),
            svg_f(py(p[1]) - 4.0),
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">t={ts}s</text>\n",
            svg_f(px(p[0]) + 6.0),
            svg_f(py(p[1]) - 6.0),
        ));
    }
    // Axis labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">x1</text>\n",
        W / 2.0,
        H - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">x2</text>\n",
        H / 2.0,
        H / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Default disk sample times in seconds.
pub const DEFAULT_DISK_TIMES: [f64; 4] = [2.1, 2.9, 4.7, 5.5];
