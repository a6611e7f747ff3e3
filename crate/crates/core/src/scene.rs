//! Parametric scenes built from planes and spheres with procedural textures.
//!
//! Every object carries an optional list of per-frame object-to-world rigid
//! transforms. An empty list means the object is static; a list shorter than
//! the clip holds its last transform.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::check_rotation;
use crate::error::{Error, Result};

const MIN_HIT_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse_rotate(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Plane through `origin` spanned by orthonormal `u_axis`, `v_axis`.
    /// `half_extent` bounds the surface coordinates when present.
    Plane {
        origin: Vector3<f64>,
        u_axis: Vector3<f64>,
        v_axis: Vector3<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        half_extent: Option<[f64; 2]>,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
}

impl Shape {
    /// Plane facing the camera at depth `z` (normal along -z, u = +x, v = +y).
    pub fn fronto_parallel(z: f64) -> Shape {
        Shape::Plane {
            origin: Vector3::new(0.0, 0.0, z),
            u_axis: Vector3::x(),
            v_axis: Vector3::y(),
            half_extent: None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Shape::Plane {
                origin,
                u_axis,
                v_axis,
                half_extent,
            } => {
                if origin.iter().chain(u_axis.iter()).chain(v_axis.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("plane"));
                }
                if (u_axis.norm() - 1.0).abs() > 1e-9
                    || (v_axis.norm() - 1.0).abs() > 1e-9
                    || u_axis.dot(v_axis).abs() > 1e-9
                {
                    return Err(Error::invalid("plane axes must be orthonormal"));
                }
                if let Some([a, b]) = half_extent {
                    if !(*a > 0.0 && *b > 0.0) {
                        return Err(Error::invalid("plane half extents must be positive"));
                    }
                }
            }
            Shape::Sphere { center, radius } => {
                if center.iter().any(|v| !v.is_finite()) || !radius.is_finite() {
                    return Err(Error::NonFinite("sphere"));
                }
                if *radius <= 0.0 {
                    return Err(Error::invalid("sphere radius must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Nearest positive ray parameter and local hit point, in the shape's frame.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Shape::Plane {
                origin,
                u_axis,
                v_axis,
                half_extent,
            } => {
                let n = u_axis.cross(v_axis);
                let denom = n.dot(d);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let s = n.dot(&(origin - o)) / denom;
                if s <= MIN_HIT_DISTANCE {
                    return None;
                }
                let p = o + d * s;
                if let Some([ha, hb]) = half_extent {
                    let rel = p - origin;
                    if rel.dot(u_axis).abs() > *ha || rel.dot(v_axis).abs() > *hb {
                        return None;
                    }
                }
                Some((s, p))
            }
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = 2.0 * d.dot(&oc);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                let (mut s0, mut s1) = (q / a, if q != 0.0 { c / q } else { q / a });
                if s0 > s1 {
                    std::mem::swap(&mut s0, &mut s1);
                }
                let s = if s0 > MIN_HIT_DISTANCE {
                    s0
                } else if s1 > MIN_HIT_DISTANCE {
                    s1
                } else {
                    return None;
                };
                Some((s, o + d * s))
            }
        }
    }

    /// Surface coordinates in world units at a local hit point.
    fn surface_coords(&self, p: &Vector3<f64>) -> Vector2<f64> {
        match self {
            Shape::Plane {
                origin,
                u_axis,
                v_axis,
                ..
            } => {
                let rel = p - origin;
                Vector2::new(rel.dot(u_axis), rel.dot(v_axis))
            }
            Shape::Sphere { center, radius } => {
                let rel = (p - center) / *radius;
                let lon = rel.x.atan2(rel.z);
                let lat = rel.y.clamp(-1.0, 1.0).asin();
                Vector2::new(lon * radius, lat * radius)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Solid {
        color: [f64; 3],
    },
    /// Square checker with cells of side `period` (world units).
    Checker {
        period: f64,
        dark: [f64; 3],
        light: [f64; 3],
    },
    /// Band-limited sum of plane waves; smooth at `wavelength` scale.
    Smooth {
        seed: u64,
        wavelength: f64,
    },
    /// Binary random cells of side `cell`, high contrast and aperiodic.
    Noise {
        seed: u64,
        cell: f64,
    },
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Texture {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Texture::Solid { color } => color.iter().all(|c| (0.0..=1.0).contains(c)),
            Texture::Checker { period, dark, light } => {
                *period > 0.0 && dark.iter().chain(light).all(|c| (0.0..=1.0).contains(c))
            }
            Texture::Smooth { wavelength, .. } => *wavelength > 0.0,
            Texture::Noise { cell, .. } => *cell > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid texture {self:?}")))
        }
    }

    pub fn color(&self, uv: Vector2<f64>) -> [f64; 3] {
        match self {
            Texture::Solid { color } => *color,
            Texture::Checker { period, dark, light } => {
                let i = (uv.x / period).floor() as i64;
                let j = (uv.y / period).floor() as i64;
                if (i + j).rem_euclid(2) == 0 {
                    *light
                } else {
                    *dark
                }
            }
            Texture::Smooth { seed, wavelength } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut out = [0.0; 3];
                for channel in out.iter_mut() {
                    let mut acc = 0.0;
                    for _ in 0..3 {
                        let theta: f64 = rng.random::<f64>() * PI;
                        let phase: f64 = rng.random::<f64>() * TAU;
                        let dir = Vector2::new(theta.cos(), theta.sin());
                        acc += (TAU * dir.dot(&uv) / wavelength + phase).sin();
                    }
                    *channel = 0.5 + acc / 6.0;
                }
                out
            }
            Texture::Noise { seed, cell } => {
                let i = (uv.x / cell).floor() as i64 as u64;
                let j = (uv.y / cell).floor() as i64 as u64;
                let h = splitmix64(seed ^ splitmix64(i ^ splitmix64(j.wrapping_add(0x5151))));
                let bit = (h >> 17) & 1;
                let shade = 0.1 + 0.8 * bit as f64;
                [shade; 3]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub texture: Texture,
    #[serde(default)]
    pub motion: Vec<RigidTransform>,
}

impl SceneObject {
    pub fn fixed(shape: Shape, texture: Texture) -> Self {
        Self {
            shape,
            texture,
            motion: Vec::new(),
        }
    }

    pub fn transform_at(&self, frame: usize) -> RigidTransform {
        match self.motion.len() {
            0 => RigidTransform::identity(),
            len => self.motion[frame.min(len - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    /// Static far surface hit when nothing else is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<SceneObject>,
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    /// Ray parameter; equals camera depth for rays with unit camera-z.
    pub distance: f64,
    /// Object index; `objects.len()` refers to the background.
    pub object: usize,
    /// Hit point in the object's local frame.
    pub local: Vector3<f64>,
}

impl SceneSpec {
    pub fn new(objects: Vec<SceneObject>, background: Option<SceneObject>) -> Result<Self> {
        let scene = Self {
            objects,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::invalid("scene needs at least one object"));
        }
        for obj in self.objects.iter().chain(self.background.iter()) {
            obj.shape.validate()?;
            obj.texture.validate()?;
            for t in &obj.motion {
                check_rotation(&t.rotation)?;
                if t.translation.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("object translation"));
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, index: usize) -> &SceneObject {
        if index < self.objects.len() {
            &self.objects[index]
        } else {
            self.background.as_ref().expect("background index without background")
        }
    }

    /// Whether every object keeps the same transform over `frames`.
    pub fn is_static(&self, frames: usize) -> bool {
        self.objects.iter().all(|o| {
            let first = o.transform_at(0);
            (1..frames).all(|f| o.transform_at(f) == first)
        })
    }

    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, frame: usize) -> Option<SurfaceHit> {
        let mut best: Option<SurfaceHit> = None;
        for (index, obj) in self.objects.iter().chain(self.background.iter()).enumerate() {
            let tf = obj.transform_at(frame);
            let o = tf.inverse_apply(origin);
            let d = tf.inverse_rotate(dir);
            if let Some((s, local)) = obj.shape.intersect(&o, &d) {
                if best.map_or(true, |b| s < b.distance) {
                    best = Some(SurfaceHit {
                        distance: s,
                        object: index,
                        local,
                    });
                }
            }
        }
        best
    }

    pub fn world_point(&self, hit: &SurfaceHit, frame: usize) -> Vector3<f64> {
        self.object(hit.object).transform_at(frame).apply(&hit.local)
    }

    pub fn shade(&self, hit: &SurfaceHit) -> [f64; 3] {
        let obj = self.object(hit.object);
        obj.texture.color(obj.shape.surface_coords(&hit.local))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_nearest_root() {
        let s = Shape::Sphere {
            center: Vector3::new(0.0, 0.0, 3.0),
            radius: 1.0,
        };
        let (t, p) = s.intersect(&Vector3::zeros(), &Vector3::z()).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
        assert!((p - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        // from inside, the far root
        let (t, _) = s.intersect(&Vector3::new(0.0, 0.0, 3.0), &Vector3::z()).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!(s.intersect(&Vector3::zeros(), &Vector3::x()).is_none());
    }

    #[test]
    fn bounded_plane_misses_outside_extent() {
        let p = Shape::Plane {
            origin: Vector3::new(0.0, 0.0, 5.0),
            u_axis: Vector3::x(),
            v_axis: Vector3::y(),
            half_extent: Some([1.0, 1.0]),
        };
        assert!(p.intersect(&Vector3::zeros(), &Vector3::new(0.1, 0.0, 1.0)).is_some());
        assert!(p.intersect(&Vector3::zeros(), &Vector3::new(0.3, 0.0, 1.0)).is_none());
        assert!(p.intersect(&Vector3::zeros(), &Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn moving_object_follows_transform() {
        let obj = SceneObject {
            shape: Shape::Sphere {
                center: Vector3::zeros(),
                radius: 0.5,
            },
            texture: Texture::Solid { color: [1.0; 3] },
            motion: vec![
                RigidTransform::translation(Vector3::new(0.0, 0.0, 4.0)),
                RigidTransform::translation(Vector3::new(0.0, 0.0, 6.0)),
            ],
        };
        let scene = SceneSpec::new(vec![obj], None).unwrap();
        let h0 = scene.intersect(&Vector3::zeros(), &Vector3::z(), 0).unwrap();
        let h1 = scene.intersect(&Vector3::zeros(), &Vector3::z(), 1).unwrap();
        let h5 = scene.intersect(&Vector3::zeros(), &Vector3::z(), 5).unwrap();
        assert!((h0.distance - 3.5).abs() < 1e-12);
        assert!((h1.distance - 5.5).abs() < 1e-12);
        assert_eq!(h1, h5);
        assert!(!scene.is_static(2));
    }

    #[test]
    fn validation_rejects_bad_scenes() {
        assert!(SceneSpec::new(vec![], None).is_err());
        let bad_axes = SceneObject::fixed(
            Shape::Plane {
                origin: Vector3::zeros(),
                u_axis: Vector3::x(),
                v_axis: Vector3::new(1.0, 1.0, 0.0),
                half_extent: None,
            },
            Texture::Solid { color: [0.5; 3] },
        );
        assert!(SceneSpec::new(vec![bad_axes], None).is_err());
        let mut skewed = SceneObject::fixed(Shape::fronto_parallel(3.0), Texture::Solid { color: [0.5; 3] });
        skewed.motion.push(RigidTransform::new(Matrix3::identity() * 2.0, Vector3::zeros()));
        assert!(SceneSpec::new(vec![skewed], None).is_err());
    }

    #[test]
    fn textures_stay_in_unit_range() {
        let textures = [
            Texture::Smooth { seed: 3, wavelength: 2.0 },
            Texture::Noise { seed: 9, cell: 0.1 },
            Texture::Checker { period: 1.0, dark: [0.0; 3], light: [1.0; 3] },
        ];
        for t in &textures {
            for i in 0..200 {
                let uv = Vector2::new(i as f64 * 0.37 - 30.0, i as f64 * -0.11 + 4.0);
                assert!(t.color(uv).iter().all(|c| (0.0..=1.0).contains(c)));
            }
        }
    }

    #[test]
    fn scene_json_roundtrip() {
        let scene = SceneSpec::new(
            vec![SceneObject::fixed(
                Shape::Sphere { center: Vector3::new(0.0, 0.0, 3.0), radius: 1.0 },
                Texture::Checker { period: 0.5, dark: [0.1; 3], light: [0.9; 3] },
            )],
            Some(SceneObject::fixed(Shape::fronto_parallel(10.0), Texture::Smooth { seed: 1, wavelength: 3.0 })),
        )
        .unwrap();
        let text = serde_json::to_string(&scene).unwrap();
        assert!(text.contains("\"kind\":\"sphere\""));
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, scene);
    }
}
