//! Camera trajectory families: a fixed camera sampled on a hemisphere and
//! NURBS-interpolated moving cameras that keep looking at interpolated targets.

use std::f64::consts::TAU;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};

/// World "up" used for hemispheres and look-at orientation.
pub const WORLD_UP: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Frame count of a full-scale sample (121 frames per clip).
pub const FULL_SCALE_FRAMES: usize = 121;

pub const DEFAULT_NURBS_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFrame {
    pub n: usize,
    #[serde(flatten)]
    pub pose: CameraPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<TrajectoryFrame>,
}

impl Trajectory {
    pub fn new(intrinsics: CameraIntrinsics, frames: Vec<TrajectoryFrame>) -> Result<Self> {
        let traj = Self { intrinsics, frames };
        traj.validate()?;
        Ok(traj)
    }

    /// Frames numbered 0..poses.len().
    pub fn from_poses(intrinsics: CameraIntrinsics, poses: Vec<CameraPose>) -> Result<Self> {
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(n, pose)| TrajectoryFrame { n, pose })
            .collect();
        Self::new(intrinsics, frames)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.frames.windows(2).any(|w| w[1].n <= w[0].n) {
            return Err(Error::invalid("trajectory frame indices must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pose(&self, i: usize) -> Result<&CameraPose> {
        self.frames
            .get(i)
            .map(|f| &f.pose)
            .ok_or_else(|| Error::invalid(format!("frame {i} not in trajectory of {}", self.len())))
    }

    pub fn poses(&self) -> impl Iterator<Item = &CameraPose> {
        self.frames.iter().map(|f| &f.pose)
    }
}

/// Samples a camera uniformly (by area) on the upper hemisphere around
/// `center`, oriented towards `center`. "Upper" is taken relative to `up`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HemisphereSampler {
    pub radius: f64,
    pub center: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl HemisphereSampler {
    pub fn new(radius: f64, center: Vector3<f64>) -> Self {
        Self {
            radius,
            center,
            up: WORLD_UP,
        }
    }

    pub fn with_up(mut self, up: Vector3<f64>) -> Self {
        self.up = up;
        self
    }

    pub fn sample(&self, seed: u64) -> Result<CameraPose> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::invalid("hemisphere radius must be positive"));
        }
        let up = self.up.try_normalize(1e-12).ok_or_else(|| Error::invalid("zero up vector"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // uniform on the cap: height uniform in (0,1], azimuth uniform
        let h: f64 = 1.0 - rng.random::<f64>();
        let phi: f64 = rng.random::<f64>() * TAU;
        let helper = if up.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::z()
        };
        let e1 = up.cross(&helper).normalize();
        let e2 = up.cross(&e1);
        let ring = (1.0 - h * h).max(0.0).sqrt();
        let dir = up * h + e1 * (ring * phi.cos()) + e2 * (ring * phi.sin());
        let eye = self.center + dir * self.radius;
        CameraPose::look_at(eye, self.center, up)
    }
}

pub fn sample_hemisphere_pose(seed: u64, radius: f64, center: Vector3<f64>) -> Result<CameraPose> {
    HemisphereSampler::new(radius, center).sample(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NurbsSpec {
    pub control_points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub degree: usize,
    pub knots: Vec<f64>,
}

impl NurbsSpec {
    pub fn new(
        control_points: Vec<Vector3<f64>>,
        weights: Vec<f64>,
        degree: usize,
        knots: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self {
            control_points,
            weights,
            degree,
            knots,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Clamped uniform knots on [0, 1].
    pub fn clamped_uniform(
        control_points: Vec<Vector3<f64>>,
        weights: Vec<f64>,
        degree: usize,
    ) -> Result<Self> {
        let n = control_points.len();
        if degree == 0 || n < degree + 1 {
            return Err(Error::invalid(format!(
                "degree {degree} needs at least {} control points, got {n}",
                degree + 1
            )));
        }
        let spans = n - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|i| i as f64 / spans as f64));
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self::new(control_points, weights, degree, knots)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.control_points.len();
        let p = self.degree;
        if p < 1 {
            return Err(Error::invalid("NURBS degree must be at least 1"));
        }
        if n < p + 1 {
            return Err(Error::invalid(format!(
                "degree {p} needs at least {} control points, got {n}",
                p + 1
            )));
        }
        if self.weights.len() != n {
            return Err(Error::shape(format!("{n} weights"), self.weights.len()));
        }
        if self.knots.len() != n + p + 1 {
            return Err(Error::shape(format!("{} knots", n + p + 1), self.knots.len()));
        }
        if self.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("NURBS weights must be positive"));
        }
        if self.control_points.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite())
            || self.knots.iter().any(|k| !k.is_finite())
        {
            return Err(Error::NonFinite("NURBS spec"));
        }
        if self.knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("knot vector must be non-decreasing"));
        }
        let first = self.knots[0];
        let last = self.knots[n + p];
        let clamped = self.knots[..=p].iter().all(|k| *k == first)
            && self.knots[n..].iter().all(|k| *k == last);
        if !clamped {
            return Err(Error::invalid("knot vector must be clamped"));
        }
        if !(last > first) {
            return Err(Error::invalid("knot vector spans an empty domain"));
        }
        Ok(())
    }

    /// Index `k` of the knot span containing `x`, with `knots[k] <= x < knots[k+1]`;
    /// the right end of the domain belongs to the last non-empty span.
    fn find_span(&self, x: f64) -> usize {
        let n = self.control_points.len();
        let p = self.degree;
        if x >= self.knots[n] {
            let mut k = n - 1;
            while k > p && self.knots[k] >= self.knots[k + 1] {
                k -= 1;
            }
            return k;
        }
        // upper_bound over knots[p..=n]
        let idx = self.knots[p..=n].partition_point(|k| *k <= x);
        (p + idx - 1).min(n - 1)
    }
}

/// Evaluates the rational curve at normalised parameter `u` in [0, 1] using
/// de Boor's recursion on homogeneous control points.
pub fn nurbs_eval(spec: &NurbsSpec, u: f64) -> Result<Vector3<f64>> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("curve parameter {u} outside [0, 1]")));
    }
    spec.validate()?;
    let p = spec.degree;
    let n = spec.control_points.len();
    let t = &spec.knots;
    let (lo, hi) = (t[p], t[n]);
    let x = lo + u * (hi - lo);
    let k = spec.find_span(x);

    let mut d: Vec<Vector4<f64>> = (0..=p)
        .map(|j| {
            let i = j + k - p;
            let w = spec.weights[i];
            let c = spec.control_points[i] * w;
            Vector4::new(c.x, c.y, c.z, w)
        })
        .collect();
    for r in 1..=p {
        for j in (r..=p).rev() {
            let left = t[j + k - p];
            let right = t[j + 1 + k - r];
            let alpha = if right > left {
                (x - left) / (right - left)
            } else {
                0.0
            };
            d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
        }
    }
    let h = d[p];
    Ok(Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w))
}

fn lerp_targets(targets: &[Vector3<f64>], u: f64) -> Vector3<f64> {
    if targets.len() == 1 {
        return targets[0];
    }
    let s = u * (targets.len() - 1) as f64;
    let i = (s.floor() as usize).min(targets.len() - 2);
    let a = s - i as f64;
    targets[i] * (1.0 - a) + targets[i + 1] * a
}

/// Camera positions follow a clamped uniform NURBS with unit weights through
/// the key positions; orientation looks at the piecewise-linearly
/// interpolated target.
pub fn nurbs_trajectory(
    keypoints: &[Vector3<f64>],
    look_targets: &[Vector3<f64>],
    n_frames: usize,
    degree: usize,
    intrinsics: CameraIntrinsics,
) -> Result<Trajectory> {
    if n_frames < 2 {
        return Err(Error::invalid("a trajectory needs at least 2 frames"));
    }
    if look_targets.is_empty() {
        return Err(Error::invalid("at least one look target required"));
    }
    let spec = NurbsSpec::clamped_uniform(keypoints.to_vec(), vec![1.0; keypoints.len()], degree)?;
    let poses = (0..n_frames)
        .map(|i| {
            let u = i as f64 / (n_frames - 1) as f64;
            let eye = nurbs_eval(&spec, u)?;
            CameraPose::look_at(eye, lerp_targets(look_targets, u), WORLD_UP)
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::from_poses(intrinsics, poses)
}

/// A static camera repeated for `n_frames`.
pub fn fixed_trajectory(
    pose: CameraPose,
    n_frames: usize,
    intrinsics: CameraIntrinsics,
) -> Result<Trajectory> {
    Trajectory::from_poses(intrinsics, vec![pose; n_frames])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use approx::assert_abs_diff_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::centered(40.0, 32, 32).unwrap()
    }

    #[test]
    fn hemisphere_on_unit_sphere_upper_half() {
        for seed in 0..200 {
            let pose = sample_hemisphere_pose(seed, 1.0, Vector3::zeros()).unwrap();
            assert_abs_diff_eq!(pose.position().norm(), 1.0, epsilon = 1e-9);
            assert!(pose.position().y >= 0.0);
            let with_z = HemisphereSampler::new(1.0, Vector3::zeros())
                .with_up(Vector3::z())
                .sample(seed)
                .unwrap();
            assert_abs_diff_eq!(with_z.position().norm(), 1.0, epsilon = 1e-9);
            assert!(with_z.position().z >= 0.0);
        }
    }

    #[test]
    fn hemisphere_looks_at_center() {
        let center = Vector3::new(1.0, -2.0, 0.5);
        for seed in 0..50 {
            let pose = sample_hemisphere_pose(seed, 3.5, center).unwrap();
            assert_abs_diff_eq!((pose.position() - center).norm(), 3.5, epsilon = 1e-9);
            assert!((pose.position() - center).dot(&WORLD_UP) >= 0.0);
            let p = project(&center, &intr(), &pose).unwrap().unwrap();
            assert_abs_diff_eq!(p, intr().principal_point(), epsilon = 1e-6);
        }
    }

    #[test]
    fn hemisphere_seeds_give_distinct_positions() {
        let positions: Vec<_> = (0..1000)
            .map(|s| *sample_hemisphere_pose(s, 1.0, Vector3::zeros()).unwrap().position())
            .collect();
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                assert!((positions[i] - positions[j]).norm() > 0.0, "seeds {i} and {j} collide");
            }
        }
        assert_eq!(
            sample_hemisphere_pose(7, 1.0, Vector3::zeros()).unwrap(),
            sample_hemisphere_pose(7, 1.0, Vector3::zeros()).unwrap()
        );
        assert!(sample_hemisphere_pose(7, 0.0, Vector3::zeros()).is_err());
    }

    #[test]
    fn nurbs_endpoint_and_bezier_midpoint() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        let spec = NurbsSpec::clamped_uniform(pts.clone(), vec![1.0; 3], 2).unwrap();
        assert_eq!(spec.knots, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(nurbs_eval(&spec, 0.0).unwrap(), pts[0]);
        assert_eq!(nurbs_eval(&spec, 1.0).unwrap(), pts[2]);
        assert_abs_diff_eq!(
            nurbs_eval(&spec, 0.5).unwrap(),
            Vector3::new(1.0, 0.5, 0.0),
            epsilon = 1e-15
        );
        assert!(nurbs_eval(&spec, 1.5).is_err());
        assert!(nurbs_eval(&spec, -0.1).is_err());
    }

    #[test]
    fn nurbs_collinear_stays_on_line() {
        let a = Vector3::new(1.0, 2.0, 3.0);
        let dir = Vector3::new(0.3, -0.7, 0.2);
        let pts: Vec<_> = [0.0, 0.5, 2.0, 2.2, 4.0].iter().map(|s| a + dir * *s).collect();
        let spec = NurbsSpec::clamped_uniform(pts, vec![1.0; 5], 3).unwrap();
        for i in 0..=20 {
            let q = nurbs_eval(&spec, i as f64 / 20.0).unwrap();
            assert!((q - a).cross(&dir).norm() <= 1e-9);
        }
    }

    #[test]
    fn nurbs_rational_quarter_circle() {
        // the classic exact quarter circle: weights 1, sqrt(2)/2, 1
        let w = std::f64::consts::FRAC_1_SQRT_2;
        let spec = NurbsSpec::clamped_uniform(
            vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 0.0), Vector3::new(0.0, 1.0, 0.0)],
            vec![1.0, w, 1.0],
            2,
        )
        .unwrap();
        for i in 0..=10 {
            let q = nurbs_eval(&spec, i as f64 / 10.0).unwrap();
            assert_abs_diff_eq!(q.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn nurbs_spec_validation() {
        let pts = vec![Vector3::zeros(), Vector3::x()];
        assert!(NurbsSpec::clamped_uniform(pts.clone(), vec![1.0; 2], 2).is_err());
        assert!(NurbsSpec::clamped_uniform(pts.clone(), vec![1.0, 0.0], 1).is_err());
        assert!(NurbsSpec::new(pts.clone(), vec![1.0; 2], 1, vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(NurbsSpec::new(pts.clone(), vec![1.0; 2], 1, vec![0.0, 0.0, 1.0, 0.5]).is_err());
        assert!(NurbsSpec::new(pts, vec![1.0; 2], 1, vec![0.0, 0.0, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn nurbs_json_has_explicit_knots() {
        let spec = NurbsSpec::clamped_uniform(
            vec![Vector3::zeros(), Vector3::x(), Vector3::y()],
            vec![1.0; 3],
            1,
        )
        .unwrap();
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(v["knots"], serde_json::json!([0.0, 0.0, 0.5, 1.0, 1.0]));
        let back: NurbsSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn linear_trajectory_is_evenly_spaced() {
        let a = Vector3::new(0.0, 0.0, -5.0);
        let b = Vector3::new(4.0, 0.0, -5.0);
        let traj =
            nurbs_trajectory(&[a, b], &[Vector3::new(2.0, 0.0, 10.0)], 5, 1, intr()).unwrap();
        assert_eq!(traj.len(), 5);
        for (i, pose) in traj.poses().enumerate() {
            assert_abs_diff_eq!(*pose.position(), a + (b - a) * (i as f64 / 4.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn trajectory_endpoints_and_look_at() {
        let keys = vec![
            Vector3::new(0.0, 1.0, -6.0),
            Vector3::new(3.0, 2.0, -4.0),
            Vector3::new(-2.0, 0.5, -3.0),
            Vector3::new(1.0, 1.5, -7.0),
            Vector3::new(2.0, 0.0, -5.0),
        ];
        let targets = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, -1.0, 2.0)];
        let traj = nurbs_trajectory(&keys, &targets, FULL_SCALE_FRAMES, DEFAULT_NURBS_DEGREE, intr())
            .unwrap();
        assert_eq!(traj.len(), 121);
        assert_abs_diff_eq!(*traj.pose(0).unwrap().position(), keys[0], epsilon = 1e-12);
        assert_abs_diff_eq!(*traj.pose(120).unwrap().position(), keys[4], epsilon = 1e-12);
        for (i, pose) in traj.poses().enumerate() {
            let target = lerp_targets(&targets, i as f64 / 120.0);
            let p = project(&target, &intr(), pose).unwrap().unwrap();
            assert_abs_diff_eq!(p, intr().principal_point(), epsilon = 1e-6);
        }
        assert!(nurbs_trajectory(&keys[..3], &targets, 10, 3, intr()).is_err());
        assert!(nurbs_trajectory(&keys, &targets, 1, 3, intr()).is_err());
    }

    #[test]
    fn trajectory_json_shape() {
        let traj = fixed_trajectory(CameraPose::identity(), 2, intr()).unwrap();
        let v = serde_json::to_value(&traj).unwrap();
        assert_eq!(v["frames"][1]["n"], 1);
        assert_eq!(v["frames"][0]["rotation"].as_array().unwrap().len(), 9);
        assert_eq!(v["intrinsics"]["width"], 32);
        let back: Trajectory = serde_json::from_value(v).unwrap();
        assert_eq!(back, traj);
        let bad = Trajectory::new(
            intr(),
            vec![
                TrajectoryFrame { n: 1, pose: CameraPose::identity() },
                TrajectoryFrame { n: 1, pose: CameraPose::identity() },
            ],
        );
        assert!(bad.is_err());
    }
}
