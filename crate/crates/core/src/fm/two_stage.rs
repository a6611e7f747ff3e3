//! Stage 1 samples encoded flow (Plücker-conditioned in camera mode,
//! unconditioned in object mode); stage 2 samples frames conditioned on that
//! flow through the control branch.
//!
//! Stage-2 control input (7 channels): the encoded flow, the previous frame
//! backward-warped by the decoded flow, and a first-frame flag. Frame 0 is
//! sampled with only the flag set, unless an anchor frame is supplied.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::sample::sample;
use super::tensor::Tensor;
use super::VelocityModel;
use crate::camera::PluckerMap;
use crate::codec::{rgb_to_flow, EncodedFlow};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::render::{Frame, FrameSequence};
use crate::seed::derive_seed;

pub const PLUCKER_CHANNELS: usize = 12;
pub const VIDEO_COND_CHANNELS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    Camera,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub mode: MotionMode,
    pub s_f: f64,
    pub integrator_steps: usize,
    pub seed: u64,
}

fn to_signed(v: f64) -> f64 {
    2.0 * v - 1.0
}

fn to_unit(v: f64) -> f64 {
    ((v + 1.0) / 2.0).clamp(0.0, 1.0)
}

fn pixels_to_tensor(width: usize, height: usize, data: &[[f64; 3]]) -> Tensor {
    let mut t = Tensor::zeros(3, height, width);
    let plane = width * height;
    for (i, px) in data.iter().enumerate() {
        for k in 0..3 {
            t.data[k * plane + i] = to_signed(px[k]);
        }
    }
    t
}

fn tensor_to_pixels(t: &Tensor) -> Result<Vec<[f64; 3]>> {
    if t.c != 3 {
        return Err(Error::shape("3 channels", t.c));
    }
    let plane = t.plane();
    Ok((0..plane)
        .map(|i| [0, 1, 2].map(|k| to_unit(t.data[k * plane + i])))
        .collect())
}

/// Channel values mapped from [0, 1] to [−1, 1].
pub fn encoded_to_tensor(e: &EncodedFlow) -> Tensor {
    pixels_to_tensor(e.width, e.height, &e.data)
}

/// Inverse of [`encoded_to_tensor`], clamping to [0, 1].
pub fn tensor_to_encoded(t: &Tensor) -> Result<EncodedFlow> {
    Ok(EncodedFlow {
        width: t.w,
        height: t.h,
        data: tensor_to_pixels(t)?,
    })
}

pub fn frame_to_tensor(f: &Frame) -> Tensor {
    pixels_to_tensor(f.width, f.height, &f.data)
}

pub fn tensor_to_frame(t: &Tensor) -> Result<Frame> {
    Ok(Frame {
        width: t.w,
        height: t.h,
        data: tensor_to_pixels(t)?,
    })
}

/// Mean angle between horizontally adjacent rays; about `1/f` for a pinhole.
fn pixel_pitch(map: &PluckerMap) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for y in 0..map.height {
        for x in 1..map.width {
            sum += (map.direction(x, y) - map.direction(x - 1, y)).norm();
            n += 1;
        }
    }
    if n == 0 || sum <= 0.0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// 12 channels: the Plücker map of frame n, then its change to frame n+1
/// divided by the ray pitch of frame n, so the second half is in units of
/// pixel-sized ray rotations.
pub fn plucker_tensor(a: &PluckerMap, b: &PluckerMap) -> Result<Tensor> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    let plane = a.width * a.height;
    let scale = 1.0 / pixel_pitch(a);
    let mut t = Tensor::zeros(PLUCKER_CHANNELS, a.height, a.width);
    for (i, (ra, rb)) in a.data.iter().zip(&b.data).enumerate() {
        for k in 0..6 {
            t.data[k * plane + i] = ra[k];
            t.data[(6 + k) * plane + i] = (rb[k] - ra[k]) * scale;
        }
    }
    Ok(t)
}

/// `out(q) = prev(q − flow(q))`, bilinear with border clamping. Invalid flow
/// pixels copy `prev` unchanged.
pub fn warp_backward(prev: &Frame, flow: &FlowField) -> Result<Frame> {
    if (prev.width, prev.height) != flow.dims() {
        return Err(Error::shape(
            format!("{}x{}", prev.width, prev.height),
            format!("{}x{}", flow.width(), flow.height()),
        ));
    }
    let mut data = Vec::with_capacity(prev.data.len());
    for y in 0..prev.height {
        for x in 0..prev.width {
            let f = flow.get(x, y).unwrap_or_else(Vector2::zeros);
            data.push(prev.sample_clamped(Vector2::new(x as f64, y as f64) - f));
        }
    }
    Ok(Frame {
        width: prev.width,
        height: prev.height,
        data,
    })
}

/// Stage-2 control input. `step` is `None` for frame 0, otherwise the
/// encoded flow into this frame, the previous frame, and the decoded flow.
pub fn video_condition(width: usize, height: usize, step: Option<(&EncodedFlow, &Frame, &FlowField)>) -> Result<Tensor> {
    match step {
        None => {
            let mut t = Tensor::zeros(VIDEO_COND_CHANNELS, height, width);
            t.channel_mut(6).fill(1.0);
            Ok(t)
        }
        Some((enc, prev, flow)) => {
            if (enc.width, enc.height) != (width, height) {
                return Err(Error::shape(format!("{width}x{height}"), format!("{}x{}", enc.width, enc.height)));
            }
            let warped = warp_backward(prev, flow)?;
            let flag = Tensor::zeros(1, height, width);
            Tensor::concat(&[&encoded_to_tensor(enc), &frame_to_tensor(&warped), &flag])
        }
    }
}

/// Stage 1: `n_pairs` encoded flows plus their decoded fields.
/// Camera mode needs `n_pairs + 1` Plücker maps; object mode takes none.
pub fn generate_motion<M: VelocityModel + ?Sized>(
    model: &M,
    plucker: Option<&[PluckerMap]>,
    n_pairs: usize,
    shape: [usize; 3],
    config: &TwoStageConfig,
) -> Result<Vec<(EncodedFlow, FlowField)>> {
    match (config.mode, plucker) {
        (MotionMode::Camera, None) => return Err(Error::invalid("camera mode needs Plücker conditioning")),
        (MotionMode::Object, Some(_)) => return Err(Error::invalid("object mode is unconditioned")),
        (MotionMode::Camera, Some(maps)) if maps.len() != n_pairs + 1 => {
            return Err(Error::shape(format!("{} Plücker maps", n_pairs + 1), maps.len()));
        }
        _ => {}
    }
    let mut out = Vec::with_capacity(n_pairs);
    for n in 0..n_pairs {
        let cond = match plucker {
            Some(maps) => {
                let c = plucker_tensor(&maps[n], &maps[n + 1])?;
                if (c.h, c.w) != (shape[1], shape[2]) {
                    return Err(Error::shape(format!("{}x{}", shape[1], shape[2]), format!("{}x{}", c.h, c.w)));
                }
                Some(c)
            }
            None => None,
        };
        let seed = derive_seed(config.seed, &format!("motion/{n}"));
        let x = sample(model, cond.as_ref(), shape, config.integrator_steps, seed)?;
        let enc = tensor_to_encoded(&x)?;
        let flow = rgb_to_flow(&enc, config.s_f)?;
        out.push((enc, flow));
    }
    Ok(out)
}

/// Stage 2: one frame more than there are flows. With `anchor`, frame 0 is
/// the anchor instead of a sample.
pub fn generate_video<M: VelocityModel + ?Sized>(
    model: &M,
    flows: &[EncodedFlow],
    anchor: Option<&Frame>,
    shape: [usize; 3],
    config: &TwoStageConfig,
) -> Result<FrameSequence> {
    let [_, h, w] = shape;
    if let Some(bad) = flows.iter().find(|e| (e.width, e.height) != (w, h)) {
        return Err(Error::shape(format!("{w}x{h} flow"), format!("{}x{}", bad.width, bad.height)));
    }
    let first = match anchor {
        Some(a) if (a.width, a.height) != (w, h) => {
            return Err(Error::shape(format!("{w}x{h} anchor"), format!("{}x{}", a.width, a.height)));
        }
        Some(a) => a.clone(),
        None => {
            let cond = video_condition(w, h, None)?;
            let seed = derive_seed(config.seed, "video/0");
            tensor_to_frame(&sample(model, Some(&cond), shape, config.integrator_steps, seed)?)?
        }
    };
    let mut frames = vec![first];
    for (n, enc) in flows.iter().enumerate() {
        let flow = rgb_to_flow(enc, config.s_f)?;
        let cond = video_condition(w, h, Some((enc, frames.last().unwrap(), &flow)))?;
        let seed = derive_seed(config.seed, &format!("video/{}", n + 1));
        let x = sample(model, Some(&cond), shape, config.integrator_steps, seed)?;
        frames.push(tensor_to_frame(&x)?);
    }
    Ok(FrameSequence { frames })
}

/// Stage 1 followed by stage 2 on the generated flows.
pub fn two_stage_generate<M1: VelocityModel + ?Sized, M2: VelocityModel + ?Sized>(
    motion_model: &M1,
    video_model: &M2,
    plucker: Option<&[PluckerMap]>,
    n_frames: usize,
    shape: [usize; 3],
    anchor: Option<&Frame>,
    config: &TwoStageConfig,
) -> Result<(Vec<FlowField>, FrameSequence)> {
    if n_frames < 2 {
        return Err(Error::invalid("need at least two frames"));
    }
    let motion = generate_motion(motion_model, plucker, n_frames - 1, shape, config)?;
    let encoded: Vec<EncodedFlow> = motion.iter().map(|(e, _)| e.clone()).collect();
    let frames = generate_video(video_model, &encoded, anchor, shape, config)?;
    Ok((motion.into_iter().map(|(_, f)| f).collect(), frames))
}
