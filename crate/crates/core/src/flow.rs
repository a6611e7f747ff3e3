use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Dense per-pixel displacement from frame n to frame n+1, row-major.
///
/// Invalid pixels always store a zero displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f64; 2]>,
    mask: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
            mask: vec![true; width * height],
        }
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
            mask: vec![false; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![[u, v]; width * height],
            mask: vec![true; width * height],
        }
    }

    pub fn from_parts(width: usize, height: usize, data: Vec<[f64; 2]>, mask: Vec<bool>) -> Result<Self> {
        if data.len() != width * height || mask.len() != width * height {
            return Err(Error::shape(
                format!("{} pixels", width * height),
                format!("{} vectors / {} mask entries", data.len(), mask.len()),
            ));
        }
        let mut field = Self {
            width,
            height,
            data,
            mask,
        };
        for i in 0..field.data.len() {
            if !field.mask[i] {
                field.data[i] = [0.0; 2];
            } else if !field.data[i].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("flow vector"));
            }
        }
        Ok(field)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        let i = self.index(x, y);
        self.mask[i].then(|| Vector2::new(self.data[i][0], self.data[i][1]))
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[self.index(x, y)]
    }

    /// Sets a valid vector; non-finite values are stored as invalid.
    pub fn set(&mut self, x: usize, y: usize, v: Vector2<f64>) {
        let i = self.index(x, y);
        if v.x.is_finite() && v.y.is_finite() {
            self.data[i] = [v.x, v.y];
            self.mask[i] = true;
        } else {
            self.data[i] = [0.0; 2];
            self.mask[i] = false;
        }
    }

    pub fn set_invalid(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.data[i] = [0.0; 2];
        self.mask[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Iterator over `(x, y, vector)` for valid pixels.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, Vector2<f64>)> + '_ {
        self.data
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter(|(_, (_, m))| **m)
            .map(move |(i, (d, _))| (i % self.width, i / self.width, Vector2::new(d[0], d[1])))
    }

    pub fn map_valid(&self, mut f: impl FnMut(Vector2<f64>) -> Vector2<f64>) -> FlowField {
        let mut out = self.clone();
        for i in 0..out.data.len() {
            if out.mask[i] {
                let v = f(Vector2::new(out.data[i][0], out.data[i][1]));
                out.data[i] = [v.x, v.y];
            }
        }
        out
    }

    pub fn check_same_dims(&self, other: &FlowField) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Bilinear sample at a sub-pixel position. Returns `None` if the position
    /// lies outside `[0, w-1] x [0, h-1]` or any contributing neighbour is
    /// invalid. Neighbour indices are clamped at the border.
    pub fn sample_bilinear(&self, pos: Vector2<f64>) -> Option<Vector2<f64>> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(pos.x >= 0.0 && pos.y >= 0.0 && pos.x <= w - 1.0 && pos.y <= h - 1.0) {
            return None;
        }
        let x0 = pos.x.floor() as usize;
        let y0 = pos.y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = pos.x - x0 as f64;
        let ay = pos.y - y0 as f64;
        let mut acc = Vector2::zeros();
        for (x, y, wgt) in [
            (x0, y0, (1.0 - ax) * (1.0 - ay)),
            (x1, y0, ax * (1.0 - ay)),
            (x0, y1, (1.0 - ax) * ay),
            (x1, y1, ax * ay),
        ] {
            let i = self.index(x, y);
            if wgt > 0.0 {
                if !self.mask[i] {
                    return None;
                }
                acc += Vector2::new(self.data[i][0], self.data[i][1]) * wgt;
            }
        }
        Some(acc)
    }

    pub fn max_magnitude(&self) -> f64 {
        self.iter_valid().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }
}
