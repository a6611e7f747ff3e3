//! Procedural clip synthesis for the two dataset families, "real" proxy clips
//! with estimated flow, and the checker testbed.
//!
//! Camera mode: NURBS camera path over a static scene (backdrop plane plus
//! optional spheres). Human-like mode: a fixed hemisphere camera watching
//! rigidly moving spheres in front of an enclosing textured sphere.
//!
//! Real proxy clips use the same scene families with high-contrast textures,
//! but their forward and backward flows come from the block-matching
//! estimator rather than the renderer, so they carry genuine cycle errors.
//! A fraction of them move faster than the estimator's search radius.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::camera::{rot_y, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::estimate::{estimate_flow_naive, BlockMatchParams};
use crate::filter::{cycle_error_map, pooled_clip_score};
use crate::flow::FlowField;
use crate::io::{ensure_dir, write_flow, write_frame, write_json};
use crate::manifest::{DatasetManifest, ManifestEntry, Source, MANIFEST_FILE};
use crate::render::{render_flow, render_flow_backward, render_frames, FrameSequence};
use crate::scene::{RigidTransform, SceneObject, SceneSpec, Shape, Texture};
use crate::seed::derive_seed;
use crate::trajectory::{fixed_trajectory, nurbs_trajectory, HemisphereSampler, Trajectory, DEFAULT_NURBS_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetMode {
    #[serde(rename = "human-like")]
    HumanLike,
    #[serde(rename = "camera")]
    Camera,
}

impl DatasetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetMode::HumanLike => "human-like",
            DatasetMode::Camera => "camera",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "human-like" => Ok(DatasetMode::HumanLike),
            "camera" => Ok(DatasetMode::Camera),
            other => Err(Error::invalid(format!("unknown dataset mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub focal: f64,
    pub synthetic_clips: usize,
    pub real_clips: usize,
    /// Distance of the fixed human-like camera from the scene centre.
    pub hemisphere_radius: f64,
    /// Depth of the camera-mode backdrop plane.
    pub backdrop_depth: f64,
    /// Spheres placed in front of the camera-mode backdrop.
    pub camera_spheres: usize,
    /// Fraction of real proxy clips moving beyond the estimator's reach.
    pub fast_fraction: f64,
    pub block: BlockMatchParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            frames: 8,
            focal: 32.0,
            synthetic_clips: 12,
            real_clips: 12,
            hemisphere_radius: 6.0,
            backdrop_depth: 6.0,
            camera_spheres: 1,
            fast_fraction: 0.25,
            block: BlockMatchParams::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("resolution must be at least 8x8"));
        }
        if self.frames < 2 {
            return Err(Error::invalid("clips need at least two frames"));
        }
        if !(self.focal > 0.0) || !(self.hemisphere_radius > 0.0) || !(self.backdrop_depth > 1.0) {
            return Err(Error::invalid("focal, radius and backdrop depth must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fast_fraction) {
            return Err(Error::invalid("fast_fraction outside [0, 1]"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::centered(self.focal, self.width, self.height)
    }
}

/// One rendered clip held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipData {
    pub id: String,
    pub source: Source,
    pub scene: SceneSpec,
    pub trajectory: Trajectory,
    pub frames: FrameSequence,
    pub forward: Vec<FlowField>,
    pub backward: Vec<FlowField>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_vec(rng: &mut ChaCha8Rng, half: [f64; 3]) -> Vector3<f64> {
    Vector3::new(
        uniform(rng, -half[0], half[0]),
        uniform(rng, -half[1], half[1]),
        uniform(rng, -half[2], half[2]),
    )
}

fn high_contrast(rng: &mut ChaCha8Rng, scale: f64) -> Texture {
    if rng.random::<f64>() < 0.5 {
        Texture::Noise {
            seed: rng.random(),
            cell: 0.4 * scale,
        }
    } else {
        Texture::Checker {
            period: 0.8 * scale,
            dark: [0.1, 0.15, 0.2],
            light: [0.9, 0.85, 0.7],
        }
    }
}

/// Static camera-mode scene: textured backdrop plus optional spheres.
pub fn camera_scene(seed: u64, cfg: &DatasetConfig, contrast: bool) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backdrop_texture = if contrast {
        high_contrast(&mut rng, 1.0)
    } else {
        Texture::Smooth {
            seed: rng.random(),
            wavelength: 1.5,
        }
    };
    let backdrop = SceneObject::fixed(Shape::fronto_parallel(cfg.backdrop_depth), backdrop_texture);
    let mut objects = vec![backdrop];
    for _ in 0..cfg.camera_spheres {
        let z = uniform(&mut rng, 0.55, 0.75) * cfg.backdrop_depth;
        let center = Vector3::new(uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0), z);
        let texture = if contrast {
            high_contrast(&mut rng, 0.5)
        } else {
            Texture::Smooth {
                seed: rng.random(),
                wavelength: 0.6,
            }
        };
        objects.push(SceneObject::fixed(
            Shape::Sphere {
                center,
                radius: uniform(&mut rng, 0.4, 0.7),
            },
            texture,
        ));
    }
    SceneSpec::new(objects, None)
}

/// NURBS camera path near the origin looking toward the backdrop.
/// `speed` scales the spacing between keypoints.
pub fn camera_trajectory(seed: u64, cfg: &DatasetConfig, speed: f64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = random_vec(&mut rng, [0.4, 0.4, 0.3]);
    let mut keypoints = vec![p];
    for _ in 0..DEFAULT_NURBS_DEGREE {
        p += random_vec(&mut rng, [0.5, 0.5, 0.3]) * speed;
        keypoints.push(p);
    }
    let spread = 1.2 * speed.min(2.0);
    let targets = (0..2)
        .map(|_| Vector3::new(uniform(&mut rng, -spread, spread), uniform(&mut rng, -spread, spread), cfg.backdrop_depth))
        .collect::<Vec<_>>();
    nurbs_trajectory(&keypoints, &targets, cfg.frames, DEFAULT_NURBS_DEGREE, cfg.intrinsics()?)
}

/// Human-like scene: moving spheres around the origin inside a textured
/// enclosing sphere. `speed` scales the per-frame displacement.
pub fn human_scene(seed: u64, cfg: &DatasetConfig, contrast: bool, speed: f64) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = SceneObject::fixed(
        Shape::Sphere {
            center: Vector3::zeros(),
            radius: 4.0 * cfg.hemisphere_radius,
        },
        if contrast {
            high_contrast(&mut rng, 4.0)
        } else {
            Texture::Smooth {
                seed: rng.random(),
                wavelength: 6.0,
            }
        },
    );
    let n_objects = 2 + (rng.random::<u32>() % 2) as usize;
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let start = random_vec(&mut rng, [1.2, 0.8, 1.2]);
        let velocity = random_vec(&mut rng, [0.2, 0.12, 0.2]) * speed;
        let spin = uniform(&mut rng, -0.15, 0.15);
        let motion = (0..cfg.frames)
            .map(|n| RigidTransform::new(rot_y(spin * n as f64), start + velocity * n as f64))
            .collect();
        let texture = if contrast {
            high_contrast(&mut rng, 0.5)
        } else {
            Texture::Smooth {
                seed: rng.random(),
                wavelength: 0.8,
            }
        };
        objects.push(SceneObject {
            shape: Shape::Sphere {
                center: Vector3::zeros(),
                radius: uniform(&mut rng, 0.5, 0.9),
            },
            texture,
            motion,
        });
    }
    SceneSpec::new(objects, Some(background))
}

fn human_trajectory(seed: u64, cfg: &DatasetConfig) -> Result<Trajectory> {
    let pose = HemisphereSampler::new(cfg.hemisphere_radius, Vector3::zeros()).sample(seed)?;
    fixed_trajectory(pose, cfg.frames, cfg.intrinsics()?)
}

fn scene_and_path(mode: DatasetMode, seed: u64, cfg: &DatasetConfig, contrast: bool, speed: f64) -> Result<(SceneSpec, Trajectory)> {
    match mode {
        DatasetMode::Camera => Ok((
            camera_scene(derive_seed(seed, "scene"), cfg, contrast)?,
            camera_trajectory(derive_seed(seed, "path"), cfg, speed)?,
        )),
        DatasetMode::HumanLike => Ok((
            human_scene(derive_seed(seed, "scene"), cfg, contrast, speed)?,
            human_trajectory(derive_seed(seed, "path"), cfg)?,
        )),
    }
}

/// Synthetic clip with analytic forward and backward flow.
pub fn synthesize_clip(id: impl Into<String>, mode: DatasetMode, seed: u64, cfg: &DatasetConfig) -> Result<ClipData> {
    cfg.validate()?;
    let (scene, trajectory) = scene_and_path(mode, seed, cfg, false, 1.0)?;
    let frames = render_frames(&scene, &trajectory)?;
    let pairs = trajectory.len() - 1;
    let forward = (0..pairs).map(|n| render_flow(&scene, &trajectory, n)).collect::<Result<Vec<_>>>()?;
    let backward = (0..pairs)
        .map(|n| render_flow_backward(&scene, &trajectory, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipData {
        id: id.into(),
        source: Source::Synthetic,
        scene,
        trajectory,
        frames,
        forward,
        backward,
    })
}

/// Real proxy clip: rendered frames, flows estimated by block matching.
pub fn real_proxy_clip(id: impl Into<String>, mode: DatasetMode, seed: u64, cfg: &DatasetConfig) -> Result<ClipData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "real"));
    let fast = rng.random::<f64>() < cfg.fast_fraction;
    let speed = if fast { 5.0 } else { uniform(&mut rng, 0.4, 1.0) };
    let (scene, trajectory) = scene_and_path(mode, seed, cfg, true, speed)?;
    let frames = render_frames(&scene, &trajectory)?;
    let BlockMatchParams { block, search } = cfg.block;
    let forward = estimate_flow_naive(&frames, block, search)?;
    let reversed = FrameSequence {
        frames: frames.frames.iter().rev().cloned().collect(),
    };
    let mut backward = estimate_flow_naive(&reversed, block, search)?;
    backward.reverse();
    Ok(ClipData {
        id: id.into(),
        source: Source::Real,
        scene,
        trajectory,
        frames,
        forward,
        backward,
    })
}

/// Mean cycle error over all frame pairs; `None` if no pixel is scorable.
pub fn clip_consistency(clip: &ClipData) -> Result<Option<(f64, usize)>> {
    let maps = clip
        .forward
        .iter()
        .zip(&clip.backward)
        .map(|(f, b)| cycle_error_map(f, b))
        .collect::<Result<Vec<_>>>()?;
    match pooled_clip_score(&maps) {
        Ok(score) => Ok(Some(score)),
        Err(Error::Unscorable) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Fronto-parallel checker plane at depth 4 with cells of 8 px, viewed by a
/// camera translating sideways so the flow is exactly (2, 0) px per frame.
/// With 8 px cells every alias of that shift (±8 px on both axes, or 16 px
/// on one) lies outside the default ±7 px search window.
/// Horizontal testbed flow in pixels per frame. Kept small so little new
/// content enters at the border; 1 px has no checker alias inside ±7.
pub const TESTBED_FLOW_PX: f64 = 1.0;

pub fn checker_testbed(cfg: &DatasetConfig) -> Result<(SceneSpec, Trajectory)> {
    cfg.validate()?;
    let depth = 4.0;
    let intr = cfg.intrinsics()?;
    let cell = 8.0 * depth / cfg.focal;
    let scene = SceneSpec::new(
        vec![SceneObject::fixed(
            Shape::fronto_parallel(depth),
            Texture::Checker {
                period: cell,
                dark: [0.1, 0.1, 0.1],
                light: [0.9, 0.9, 0.9],
            },
        )],
        None,
    )?;
    // flow = -f·δ/z, so δ = -flow·z/f
    let step = Vector3::new(-TESTBED_FLOW_PX * depth / cfg.focal, 0.0, 0.0);
    let start = Vector3::new(0.3 * cell, 0.3 * cell, 0.0);
    let poses = (0..cfg.frames)
        .map(|n| crate::camera::CameraPose::from_position(start + step * n as f64))
        .collect();
    Ok((scene, Trajectory::from_poses(intr, poses)?))
}

pub fn testbed_clip(cfg: &DatasetConfig) -> Result<ClipData> {
    let (scene, trajectory) = checker_testbed(cfg)?;
    let frames = render_frames(&scene, &trajectory)?;
    let pairs = trajectory.len() - 1;
    let forward = (0..pairs).map(|n| render_flow(&scene, &trajectory, n)).collect::<Result<Vec<_>>>()?;
    let backward = (0..pairs)
        .map(|n| render_flow_backward(&scene, &trajectory, n))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipData {
        id: "testbed".into(),
        source: Source::Synthetic,
        scene,
        trajectory,
        frames,
        forward,
        backward,
    })
}

pub fn frame_name(n: usize) -> String {
    format!("frame_{n:03}.png")
}

/// Writes a clip under `root/clips/<id>/` and returns its manifest entry with
/// manifest-relative paths. Real clips carry their cycle score.
pub fn write_clip(root: &Path, clip: &ClipData) -> Result<ManifestEntry> {
    let rel_dir = format!("clips/{}", clip.id);
    let dir = root.join(&rel_dir);
    ensure_dir(&dir)?;
    let mut entry = ManifestEntry::new(clip.id.clone(), clip.source);
    for (n, frame) in clip.frames.frames.iter().enumerate() {
        let rel = format!("{rel_dir}/{}", frame_name(n));
        write_frame(&root.join(&rel), frame)?;
        entry.frame_paths.push(rel);
    }
    for (n, (f, b)) in clip.forward.iter().zip(&clip.backward).enumerate() {
        let fwd = format!("{rel_dir}/fwd_{n:03}.flo");
        let bwd = format!("{rel_dir}/bwd_{n:03}.flo");
        write_flow(&root.join(&fwd), f)?;
        write_flow(&root.join(&bwd), b)?;
        entry.flow_paths.push(fwd);
        entry.backward_flow_paths.push(bwd);
    }
    match clip.source {
        Source::Synthetic => {
            let traj = format!("{rel_dir}/trajectory.json");
            write_json(&root.join(&traj), &clip.trajectory)?;
            write_json(&dir.join("scene.json"), &clip.scene)?;
            entry.trajectory_path = Some(traj);
        }
        Source::Real => {
            entry.error = clip_consistency(clip)?.map(|(score, _)| score);
        }
    }
    Ok(entry)
}

/// Renders the full dataset under `root` and writes its manifest.
pub fn generate_dataset(root: &Path, mode: DatasetMode, cfg: &DatasetConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    ensure_dir(root)?;
    let mut manifest = DatasetManifest {
        mode: Some(mode.as_str().to_string()),
        width: Some(cfg.width),
        height: Some(cfg.height),
        ..Default::default()
    };
    manifest.extra.insert("frames".into(), Value::from(cfg.frames));
    manifest.extra.insert("seed".into(), Value::from(seed));
    for i in 0..cfg.synthetic_clips {
        let clip = synthesize_clip(format!("syn_{i:03}"), mode, derive_seed(seed, &format!("syn/{i}")), cfg)?;
        manifest.entries.push(write_clip(root, &clip)?);
    }
    for i in 0..cfg.real_clips {
        let clip = real_proxy_clip(format!("real_{i:03}"), mode, derive_seed(seed, &format!("real/{i}")), cfg)?;
        manifest.entries.push(write_clip(root, &clip)?);
    }
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use crate::estimate::estimate_pair;
    use crate::metrics::motion_error;

    fn small() -> DatasetConfig {
        DatasetConfig {
            frames: 4,
            ..Default::default()
        }
    }

    #[test]
    fn camera_clip_is_look_at_and_moves() {
        let clip = synthesize_clip("c", DatasetMode::Camera, 3, &small()).unwrap();
        assert_eq!(clip.frames.len(), 4);
        assert_eq!(clip.forward.len(), 3);
        let intr = clip.trajectory.intrinsics;
        assert!(clip.forward[0].max_magnitude() > 0.1);
        assert!(clip.forward.iter().all(|f| f.max_magnitude() < 8.0));
        // look-at targets lie on the backdrop, so the principal ray hits it
        for pose in clip.trajectory.poses() {
            let ahead = pose.camera_to_world(&Vector3::new(0.0, 0.0, 1.0));
            let p = project(&ahead, &intr, pose).unwrap().unwrap();
            assert!((p - intr.principal_point()).norm() < 1e-6);
        }
    }

    #[test]
    fn human_like_camera_is_fixed() {
        let clip = synthesize_clip("h", DatasetMode::HumanLike, 5, &small()).unwrap();
        let first = clip.trajectory.pose(0).unwrap().clone();
        assert!(clip.trajectory.poses().all(|p| *p == first));
        assert!(clip.forward.iter().any(|f| f.max_magnitude() > 0.1));
    }

    #[test]
    fn synthetic_cycle_error_is_tiny_real_is_not() {
        let syn = synthesize_clip("s", DatasetMode::Camera, 8, &small()).unwrap();
        let (score, _) = clip_consistency(&syn).unwrap().unwrap();
        assert!(score < 0.05, "{score}");
        let cfg = DatasetConfig {
            fast_fraction: 1.0,
            ..small()
        };
        let real = real_proxy_clip("r", DatasetMode::Camera, 8, &cfg).unwrap();
        if let Some((score, _)) = clip_consistency(&real).unwrap() {
            assert!(score > 1e-3);
        }
    }

    #[test]
    fn testbed_flow_is_integer_and_recoverable() {
        let clip = testbed_clip(&small()).unwrap();
        for f in &clip.forward {
            assert_eq!(f.valid_count(), 32 * 32);
            assert!(f.iter_valid().all(|(_, _, v)| (v.x - TESTBED_FLOW_PX).abs() < 1e-9 && v.y.abs() < 1e-9));
        }
        let est: Vec<FlowField> = clip
            .frames
            .frames
            .windows(2)
            .map(|p| estimate_pair(&p[0], &p[1], BlockMatchParams::default()).unwrap())
            .collect();
        assert!(est.iter().all(|f| f.valid_count() > 0));
        assert!(motion_error(&clip.forward, &est).unwrap() < 1e-9);
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = DatasetConfig {
            synthetic_clips: 2,
            real_clips: 2,
            ..small()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(a.path(), DatasetMode::Camera, &cfg, 4).unwrap();
        let mb = generate_dataset(b.path(), DatasetMode::Camera, &cfg, 4).unwrap();
        assert_eq!(ma, mb);
        let ta = std::fs::read(a.path().join(MANIFEST_FILE)).unwrap();
        let tb = std::fs::read(b.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ma.count(Source::Real), 2);
        assert!(ma.entries.iter().filter(|e| e.source == Source::Synthetic).all(|e| e.trajectory_path.is_some()));
        for e in &ma.entries {
            assert_eq!(e.frame_paths.len(), 4);
            assert!(a.path().join(&e.flow_paths[0]).exists());
        }
    }
}
