//! Ray-cast rendering of depth, ground-truth optical flow and shaded frames.
//!
//! Trajectory frame `i` (its position in the list) is rendered with the
//! scene's object transforms at frame `i`.

use nalgebra::{Vector2, Vector3};

use crate::camera::{project_camera, CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::scene::{SceneSpec, SurfaceHit};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub hit: Vec<bool>,
}

impl DepthMap {
    pub fn at(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.hit[i].then_some(self.depth[i])
    }
}

/// One RGB frame with channel values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn luma(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect()
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, pos: Vector2<f64>) -> Option<[f64; 3]> {
        if !(pos.x >= 0.0
            && pos.y >= 0.0
            && pos.x <= (self.width - 1) as f64
            && pos.y <= (self.height - 1) as f64)
        {
            return None;
        }
        Some(self.sample_clamped(pos))
    }

    /// Bilinear sample with coordinates clamped to the border.
    pub fn sample_clamped(&self, pos: Vector2<f64>) -> [f64; 3] {
        let px = pos.x.clamp(0.0, (self.width - 1) as f64);
        let py = pos.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = px.floor() as usize;
        let y0 = py.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = px - x0 as f64;
        let ay = py - y0 as f64;
        let mut out = [0.0; 3];
        for (x, y, w) in [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x1, y0, ax * (1.0 - ay)),
            (x0, y1, (1.0 - ax) * ay),
            (x1, y1, ax * ay),
        ] {
            let c = self.at(x, y);
            for k in 0..3 {
                out[k] += w * c[k];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn pixel_ray(intr: &CameraIntrinsics, pose: &CameraPose, pixel: Vector2<f64>) -> Vector3<f64> {
    pose.rotation() * intr.ray_camera(pixel)
}

fn cast(
    scene: &SceneSpec,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    frame: usize,
    pixel: Vector2<f64>,
) -> Option<SurfaceHit> {
    scene.intersect(pose.position(), &pixel_ray(intr, pose, pixel), frame)
}

pub fn render_depth(
    scene: &SceneSpec,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    frame: usize,
) -> Result<DepthMap> {
    scene.validate()?;
    intr.validate()?;
    let (w, h) = (intr.width, intr.height);
    let mut depth = vec![0.0; w * h];
    let mut hit = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(s) = cast(scene, intr, pose, frame, Vector2::new(x as f64, y as f64)) {
                depth[y * w + x] = s.distance;
                hit[y * w + x] = true;
            }
        }
    }
    Ok(DepthMap {
        width: w,
        height: h,
        depth,
        hit,
    })
}

/// Flow from trajectory frame `src` to frame `dst`: each visible surface point
/// is carried along by its object's motion and re-projected. Pixels whose
/// point leaves the view frustum or is hidden at `dst` are masked out.
pub fn render_flow_between(
    scene: &SceneSpec,
    traj: &Trajectory,
    src: usize,
    dst: usize,
) -> Result<FlowField> {
    scene.validate()?;
    let intr = &traj.intrinsics;
    let pose_src = traj.pose(src)?;
    let pose_dst = traj.pose(dst)?;
    let mut flow = FlowField::invalid(intr.width, intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            let p = Vector2::new(x as f64, y as f64);
            let Some(hit) = cast(scene, intr, pose_src, src, p) else {
                continue;
            };
            let moved = scene.world_point(&hit, dst);
            let cam = pose_dst.world_to_camera(&moved);
            let Some(q) = project_camera(&cam, intr) else {
                continue;
            };
            let tol = 1e-6 * cam.z.max(1.0);
            match cast(scene, intr, pose_dst, dst, q) {
                Some(front) if front.distance >= cam.z - tol => flow.set(x, y, q - p),
                _ => {}
            }
        }
    }
    Ok(flow)
}

pub fn render_flow(scene: &SceneSpec, traj: &Trajectory, n: usize) -> Result<FlowField> {
    check_pair(traj, n)?;
    render_flow_between(scene, traj, n, n + 1)
}

/// Flow from frame `n + 1` back to frame `n`.
pub fn render_flow_backward(scene: &SceneSpec, traj: &Trajectory, n: usize) -> Result<FlowField> {
    check_pair(traj, n)?;
    render_flow_between(scene, traj, n + 1, n)
}

fn check_pair(traj: &Trajectory, n: usize) -> Result<()> {
    if n + 1 >= traj.len() {
        return Err(Error::invalid(format!(
            "frame pair ({n}, {}) not in trajectory of {} frames",
            n + 1,
            traj.len()
        )));
    }
    Ok(())
}

pub fn render_frame(scene: &SceneSpec, intr: &CameraIntrinsics, pose: &CameraPose, frame: usize) -> Frame {
    let mut data = Vec::with_capacity(intr.width * intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            let color = cast(scene, intr, pose, frame, Vector2::new(x as f64, y as f64))
                .map(|hit| scene.shade(&hit))
                .unwrap_or([0.0; 3]);
            data.push(color);
        }
    }
    Frame {
        width: intr.width,
        height: intr.height,
        data,
    }
}

/// Unlit texture lookup at every pixel of every frame; misses are black.
pub fn render_frames(scene: &SceneSpec, traj: &Trajectory) -> Result<FrameSequence> {
    scene.validate()?;
    traj.validate()?;
    let frames = traj
        .poses()
        .enumerate()
        .map(|(i, pose)| render_frame(scene, &traj.intrinsics, pose, i))
        .collect();
    Ok(FrameSequence { frames })
}
