//! Flow ↔ RGB encoding.
//!
//! Flow vectors are first compressed into the unit disk with a square-root
//! magnitude curve relative to a dataset-level scale factor `s_f`:
//!
//! ```text
//! f'(p) = min(1, sqrt(|f(p)| / s_f)) * f(p) / |f(p)|
//! ```
//!
//! The normalised magnitude becomes the HSV value, the angle
//! `atan2(f'_y, f'_x)` becomes the hue (0° = +x, increasing with angle) and
//! saturation is fixed to 1 before converting to RGB.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::stats::{check_percentile, nearest_rank};

pub const DEFAULT_SCALE_PERCENTILE: f64 = 99.0;

/// Allowed excess over unit magnitude when encoding normalised flow.
const MAGNITUDE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Dataset-level scale factor in pixels.
    pub s_f: f64,
    pub percentile: f64,
}

impl CodecConfig {
    pub fn new(s_f: f64, percentile: f64) -> Result<Self> {
        if !(s_f > 0.0) || !s_f.is_finite() {
            return Err(Error::invalid("scale factor must be positive"));
        }
        check_percentile(percentile)?;
        Ok(Self { s_f, percentile })
    }
}

/// RGB encoding of normalised flow; channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFlow {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl EncodedFlow {
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.data[y as usize * self.width + x as usize];
            Rgb(c.map(quantize))
        })
    }

    pub fn from_image(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect();
        Self {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    /// Round-trips every channel through 8 bits.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|c| c.map(|v| quantize(v) as f64 / 255.0))
                .collect(),
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Nearest-rank percentile of flow magnitudes over all valid pixels.
pub fn compute_scale_factor(flows: &[FlowField], percentile: f64) -> Result<f64> {
    check_percentile(percentile)?;
    let mags: Vec<f64> = flows
        .iter()
        .flat_map(|f| f.iter_valid().map(|(_, _, v)| v.norm()))
        .collect();
    if mags.is_empty() {
        return Err(Error::invalid("no valid flow pixels to derive a scale factor"));
    }
    let s_f = nearest_rank(&mags, percentile)?;
    if s_f <= 0.0 {
        return Err(Error::DegenerateScale);
    }
    Ok(s_f)
}

pub fn normalize_vector(v: Vector2<f64>, s_f: f64) -> Vector2<f64> {
    let mag = v.norm();
    if mag == 0.0 {
        return Vector2::zeros();
    }
    let scale = (mag / s_f).sqrt().min(1.0);
    v * (scale / mag)
}

pub fn normalize_flow(f: &FlowField, s_f: f64) -> Result<FlowField> {
    if !(s_f > 0.0) {
        return Err(Error::invalid("scale factor must be positive"));
    }
    Ok(f.map_valid(|v| normalize_vector(v, s_f)))
}

/// Standard sextant HSV → RGB with hue in degrees.
pub fn hsv_to_rgb(hue_deg: f64, sat: f64, val: f64) -> [f64; 3] {
    let c = val * sat;
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// RGB → (hue degrees in [0, 360), saturation, value).
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let hue = if c <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / c + 2.0)
    } else {
        60.0 * ((r - g) / c + 4.0)
    };
    let sat = if max > 0.0 { c / max } else { 0.0 };
    (hue.rem_euclid(360.0), sat, max)
}

pub fn encode_vector(v: Vector2<f64>) -> [f64; 3] {
    let m = v.norm().min(1.0);
    // zero vectors take angle 0; value 0 makes the hue irrelevant
    let alpha = if m > 0.0 { v.y.atan2(v.x) } else { 0.0 };
    hsv_to_rgb(alpha.to_degrees().rem_euclid(360.0), 1.0, m)
}

/// Encodes already-normalised flow. Invalid pixels encode as black.
pub fn flow_to_rgb(f_norm: &FlowField) -> Result<EncodedFlow> {
    let mut data = vec![[0.0; 3]; f_norm.width() * f_norm.height()];
    for (x, y, v) in f_norm.iter_valid() {
        if v.norm() > 1.0 + MAGNITUDE_SLACK {
            return Err(Error::invalid(format!(
                "normalised flow magnitude {} exceeds 1 at ({x}, {y})",
                v.norm()
            )));
        }
        data[y * f_norm.width() + x] = encode_vector(v);
    }
    Ok(EncodedFlow {
        width: f_norm.width(),
        height: f_norm.height(),
        data,
    })
}

/// Decodes one pixel back to a flow vector in pixels.
pub fn decode_vector(rgb: [f64; 3], s_f: f64) -> Vector2<f64> {
    let (hue, _, val) = rgb_to_hsv(rgb.map(|c| c.clamp(0.0, 1.0)));
    if val <= 0.0 {
        return Vector2::zeros();
    }
    let mut alpha = hue.to_radians();
    if alpha > PI {
        alpha -= 2.0 * PI;
    }
    // clipped magnitudes (value 1) decode to s_f
    let mag = val * val * s_f;
    Vector2::new(alpha.cos(), alpha.sin()) * mag
}

pub fn rgb_to_flow(e: &EncodedFlow, s_f: f64) -> Result<FlowField> {
    if !(s_f > 0.0) {
        return Err(Error::invalid("scale factor must be positive"));
    }
    let data = e.data.iter().map(|c| {
        let v = decode_vector(*c, s_f);
        [v.x, v.y]
    });
    FlowField::from_parts(e.width, e.height, data.collect(), vec![true; e.width * e.height])
}

pub fn encode_flow(f: &FlowField, s_f: f64) -> Result<EncodedFlow> {
    flow_to_rgb(&normalize_flow(f, s_f)?)
}

/// Disk legend: the encoding of every normalised vector in the unit disk.
pub fn color_wheel(size: usize) -> EncodedFlow {
    let c = (size as f64 - 1.0) / 2.0;
    let radius = c.max(1.0);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let v = Vector2::new(x as f64 - c, y as f64 - c) / radius;
            data.push(if v.norm() <= 1.0 { encode_vector(v) } else { [1.0; 3] });
        }
    }
    EncodedFlow {
        width: size,
        height: size,
        data,
    }
}
