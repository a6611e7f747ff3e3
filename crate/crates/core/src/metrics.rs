//! Motion error, mean rotation error, and controlled-SNR flow corruption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::rotation_geodesic;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::trajectory::Trajectory;

/// Target SNR levels (dB) of the robustness sweep.
pub const SNR_LEVELS_DB: [f64; 5] = [25.0, 20.0, 15.0, 10.0, 5.0];

fn check_sequences(a: &[FlowField], b: &[FlowField]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} flow frames", a.len()), b.len()));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty flow sequence"));
    }
    a.iter().zip(b).try_for_each(|(x, y)| x.check_same_dims(y))
}

/// Per-frame sum of squared endpoint differences and pixel count, over pixels
/// valid in both fields.
fn squared_errors(a: &FlowField, b: &FlowField) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (va, vb)) in a.data().iter().zip(b.data()).enumerate() {
        if a.mask()[i] && b.mask()[i] {
            let (du, dv) = (va[0] - vb[0], va[1] - vb[1]);
            sum += du * du + dv * dv;
            n += 1;
        }
    }
    (sum, n)
}

/// Mean squared endpoint difference (px²), pooled over frames and pixels
/// valid in both sequences.
pub fn motion_error(input: &[FlowField], estimated: &[FlowField]) -> Result<f64> {
    check_sequences(input, estimated)?;
    let (sum, n) = input
        .iter()
        .zip(estimated)
        .map(|(a, b)| squared_errors(a, b))
        .fold((0.0, 0), |(s, n), (ds, dn)| (s + ds, n + dn));
    if n == 0 {
        return Err(Error::Unscorable);
    }
    Ok(sum / n as f64)
}

/// Per-frame motion error; frames without overlapping valid pixels give `None`.
pub fn motion_error_per_frame(input: &[FlowField], estimated: &[FlowField]) -> Result<Vec<Option<f64>>> {
    check_sequences(input, estimated)?;
    Ok(input
        .iter()
        .zip(estimated)
        .map(|(a, b)| {
            let (s, n) = squared_errors(a, b);
            (n > 0).then(|| s / n as f64)
        })
        .collect())
}

pub fn rotation_errors(gt: &Trajectory, est: &Trajectory) -> Result<Vec<f64>> {
    if gt.len() != est.len() {
        return Err(Error::shape(format!("{} frames", gt.len()), est.len()));
    }
    if gt.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    gt.poses()
        .zip(est.poses())
        .map(|(a, b)| rotation_geodesic(a.rotation(), b.rotation()))
        .collect()
}

/// Mean geodesic rotation error in radians.
pub fn mean_rotation_error(gt: &Trajectory, est: &Trajectory) -> Result<f64> {
    let errs = rotation_errors(gt, est)?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub flow: FlowField,
    pub target_snr_db: f64,
    pub measured_snr_db: f64,
    pub seed: u64,
}

/// Mean square of the u and v components over valid pixels.
pub fn signal_power(flow: &FlowField) -> f64 {
    let n = flow.valid_count();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = flow.iter_valid().map(|(_, _, v)| v.norm_squared()).sum();
    sum / (2 * n) as f64
}

pub fn measured_snr_db(clean: &FlowField, noisy: &FlowField) -> Result<f64> {
    clean.check_same_dims(noisy)?;
    let mut noise = 0.0;
    let mut n = 0usize;
    for (i, (a, b)) in clean.data().iter().zip(noisy.data()).enumerate() {
        if clean.mask()[i] {
            noise += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            n += 2;
        }
    }
    if n == 0 {
        return Err(Error::Unscorable);
    }
    Ok(10.0 * (signal_power(clean) / (noise / n as f64)).log10())
}

/// Adds white Gaussian noise to the valid components of `flow`. The drawn
/// noise is rescaled so its empirical power is exactly
/// `P_signal / 10^(target_db / 10)`, so the realised SNR equals the target.
/// `target_db = +inf` passes the flow through unchanged.
pub fn add_noise_snr(flow: &FlowField, target_db: f64, seed: u64) -> Result<NoisySample> {
    if target_db.is_nan() || target_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("invalid target SNR {target_db}")));
    }
    let power = signal_power(flow);
    if !(power > 0.0) {
        return Err(Error::ZeroPower);
    }
    if target_db == f64::INFINITY {
        return Ok(NoisySample {
            flow: flow.clone(),
            target_snr_db: target_db,
            measured_snr_db: f64::INFINITY,
            seed,
        });
    }
    let variance = power / 10f64.powf(target_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<[f64; 2]> = (0..flow.valid_count())
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    let drawn_power = draws.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>() / (2 * draws.len()) as f64;
    let gain = (variance / drawn_power).sqrt();
    for d in &mut draws {
        d[0] *= gain;
        d[1] *= gain;
    }
    let mut it = draws.iter();
    let noisy = flow.map_valid(|v| {
        let d = it.next().expect("one draw per valid pixel");
        v + nalgebra::Vector2::new(d[0], d[1])
    });
    let measured = measured_snr_db(flow, &noisy)?;
    Ok(NoisySample {
        flow: noisy,
        target_snr_db: target_db,
        measured_snr_db: measured,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    /// Motion error in px².
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_err: Option<f64>,
    /// Mean rotation error in radians.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_rot_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_frame_m_err: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_frame_rot_err: Vec<f64>,
    /// Motion error per noise level, when a robustness sweep was run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub robustness: Vec<RobustnessRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    /// `None` for the clean input.
    pub snr_db: Option<f64>,
    pub measured_snr_db: Option<f64>,
    pub m_err: f64,
}

impl MetricReport {
    /// Fixed-precision (4 decimals) text table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        out.push_str(&format!("{:<12} {:>12}\n", "metric", "value"));
        out.push_str(&format!("{:<12} {:>12}\n", "M-Err", fmt(self.m_err)));
        out.push_str(&format!("{:<12} {:>12}\n", "mRotErr(rad)", fmt(self.m_rot_err)));
        out.push_str(&format!(
            "{:<12} {:>12}\n",
            "mRotErr(deg)",
            fmt(self.m_rot_err.map(f64::to_degrees))
        ));
        if !self.robustness.is_empty() {
            let header: Vec<String> = self
                .robustness
                .iter()
                .map(|r| r.snr_db.map_or("Clean".to_string(), |d| format!("{d}dB")))
                .collect();
            out.push_str(&format!("\n{:<12}", ""));
            for h in &header {
                out.push_str(&format!(" {h:>9}"));
            }
            out.push_str(&format!("\n{:<12}", "M-Err"));
            for r in &self.robustness {
                out.push_str(&format!(" {:>9.4}", r.m_err));
            }
            out.push('\n');
        }
        out
    }
}
