//! Integer block matching on luma with parabolic sub-pixel refinement.
//!
//! Every pixel inherits the vector of the block that covers it. Candidates
//! that leave the frame are scored on the part of the block still inside it,
//! rescaled to the full block area, as long as at least three quarters of the block
//! overlaps on each axis. Blocks whose
//! cost surface is flat are reported invalid (low confidence). Sub-pixel
//! refinement is skipped on an axis where a neighbour of the minimum is
//! unavailable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::render::{Frame, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMatchParams {
    pub block: usize,
    pub search: usize,
}

impl Default for BlockMatchParams {
    fn default() -> Self {
        Self { block: 8, search: 7 }
    }
}

pub fn estimate_flow_naive(frames: &FrameSequence, block: usize, search: usize) -> Result<Vec<FlowField>> {
    if frames.len() < 2 {
        return Err(Error::invalid("flow estimation needs at least two frames"));
    }
    let params = BlockMatchParams { block, search };
    frames
        .frames
        .windows(2)
        .map(|pair| estimate_pair(&pair[0], &pair[1], params))
        .collect()
}

fn block_origins(len: usize, block: usize) -> Vec<usize> {
    let count = len.div_ceil(block);
    (0..count).map(|i| (i * block).min(len - block)).collect()
}

pub fn estimate_pair(a: &Frame, b: &Frame, params: BlockMatchParams) -> Result<FlowField> {
    let BlockMatchParams { block, search } = params;
    if block == 0 || search == 0 {
        return Err(Error::invalid("block size and search radius must be positive"));
    }
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::shape(
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    let (w, h) = (a.width, a.height);
    if w < block || h < block {
        return Err(Error::invalid(format!("frame {w}x{h} smaller than block {block}")));
    }
    let la = a.luma();
    let lb = b.luma();
    let xs = block_origins(w, block);
    let ys = block_origins(h, block);
    let side = 2 * search + 1;
    let s = search as isize;
    let mut flow = FlowField::invalid(w, h);

    for (byi, &y0) in ys.iter().enumerate() {
        for (bxi, &x0) in xs.iter().enumerate() {
            let mut costs = vec![f64::INFINITY; side * side];
            for dy in -s..=s {
                for dx in -s..=s {
                    let (tx, ty) = (x0 as isize + dx, y0 as isize + dy);
                    let (Some(cols), Some(rows)) = (overlap(tx, block, w), overlap(ty, block, h)) else {
                        continue;
                    };
                    let mut sad = 0.0;
                    for r in rows.clone() {
                        let ra = (y0 + r) * w + x0;
                        let rb = (ty + r as isize) as usize * w;
                        for c in cols.clone() {
                            sad += (la[ra + c] - lb[rb + (tx + c as isize) as usize]).abs();
                        }
                    }
                    let area = cols.len() * rows.len();
                    let sad = sad * (block * block) as f64 / area as f64;
                    costs[((dy + s) as usize) * side + (dx + s) as usize] = sad;
                }
            }
            let Some(vector) = pick_minimum(&costs, side, block) else {
                continue;
            };
            let y_end = if byi + 1 == ys.len() { h } else { ys[byi + 1] };
            let x_end = if bxi + 1 == xs.len() { w } else { xs[bxi + 1] };
            let y_start = if byi == 0 { 0 } else { y0.max(ys[byi - 1] + block) };
            let x_start = if bxi == 0 { 0 } else { x0.max(xs[bxi - 1] + block) };
            for y in y_start..y_end {
                for x in x_start..x_end {
                    flow.set(x, y, vector);
                }
            }
        }
    }
    Ok(flow)
}

/// Offsets within a block of `block` starting at `start` that land inside
/// `0..len`; `None` when fewer than three quarters of them do.
fn overlap(start: isize, block: usize, len: usize) -> Option<std::ops::Range<usize>> {
    let lo = (-start).max(0) as usize;
    let hi = (len as isize - start).clamp(0, block as isize) as usize;
    (hi > lo && 4 * (hi - lo) >= 3 * block).then_some(lo..hi)
}

fn parabola_offset(minus: f64, centre: f64, plus: f64) -> f64 {
    let denom = minus - 2.0 * centre + plus;
    if denom > 0.0 {
        (0.5 * (minus - plus) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

fn pick_minimum(costs: &[f64], side: usize, block: usize) -> Option<nalgebra::Vector2<f64>> {
    let s = (side / 2) as isize;
    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(*c), hi.max(*c)));
    if finite.is_empty() || hi - lo <= 1e-9 * (block * block) as f64 {
        return None;
    }
    // ties go to the smallest displacement
    let mut best = None::<(f64, isize, isize)>;
    for dy in -s..=s {
        for dx in -s..=s {
            let c = costs[((dy + s) as usize) * side + (dx + s) as usize];
            if !c.is_finite() {
                continue;
            }
            let better = match best {
                None => true,
                Some((bc, bx, by)) => c < bc || (c == bc && dx * dx + dy * dy < bx * bx + by * by),
            };
            if better {
                best = Some((c, dx, dy));
            }
        }
    }
    let (c0, bx, by) = best?;
    let at = |dx: isize, dy: isize| -> f64 {
        if dx.abs() > s || dy.abs() > s {
            return f64::NAN;
        }
        costs[((dy + s) as usize) * side + (dx + s) as usize]
    };
    let [xm, xp, ym, yp] = [at(bx - 1, by), at(bx + 1, by), at(bx, by - 1), at(bx, by + 1)];
    let mut v = nalgebra::Vector2::new(bx as f64, by as f64);
    if c0 > 0.0 {
        if xm.is_finite() && xp.is_finite() {
            v.x += parabola_offset(xm, c0, xp);
        }
        if ym.is_finite() && yp.is_finite() {
            v.y += parabola_offset(ym, c0, yp);
        }
    }
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraIntrinsics, CameraPose};
    use crate::render::render_frame;
    use crate::scene::{SceneObject, SceneSpec, Shape, Texture};
    use nalgebra::{Vector2, Vector3};

    fn noise_frame(w: usize, h: usize, shift: (f64, f64)) -> Frame {
        // plane at z = 1 with f = 1 px per world unit: 1 px cells
        let intr = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, w, h).unwrap();
        let scene = SceneSpec::new(
            vec![SceneObject::fixed(Shape::fronto_parallel(1.0), Texture::Noise { seed: 11, cell: 1.0 })],
            None,
        )
        .unwrap();
        let pose = CameraPose::from_position(Vector3::new(-shift.0 + 0.5, -shift.1 + 0.5, 0.0));
        render_frame(&scene, &intr, &pose, 0)
    }

    #[test]
    fn recovers_integer_shift() {
        let a = noise_frame(48, 40, (0.0, 0.0));
        let b = noise_frame(48, 40, (3.0, -2.0));
        let f = estimate_pair(&a, &b, BlockMatchParams::default()).unwrap();
        // interior blocks must be exact
        for y in 8..32 {
            for x in 8..40 {
                assert_eq!(f.get(x, y), Some(Vector2::new(3.0, -2.0)), "({x},{y})");
            }
        }
    }

    #[test]
    fn identical_frames_zero_flow() {
        let a = noise_frame(32, 32, (0.0, 0.0));
        let f = estimate_pair(&a, &a, BlockMatchParams::default()).unwrap();
        assert_eq!(f.valid_count(), 32 * 32);
        assert!(f.iter_valid().all(|(_, _, v)| v == Vector2::zeros()));
    }

    #[test]
    fn flat_frames_are_low_confidence() {
        let a = Frame::filled(32, 32, [0.4; 3]);
        let f = estimate_pair(&a, &a, BlockMatchParams::default()).unwrap();
        assert_eq!(f.valid_count(), 0);
    }

    #[test]
    fn rejects_tiny_frames_and_short_sequences() {
        let a = Frame::filled(4, 4, [0.4; 3]);
        assert!(estimate_pair(&a, &a, BlockMatchParams::default()).is_err());
        let seq = FrameSequence { frames: vec![a] };
        assert!(estimate_flow_naive(&seq, 2, 1).is_err());
    }

    #[test]
    fn subpixel_parabola() {
        assert_eq!(parabola_offset(2.0, 0.0, 2.0), 0.0);
        assert!((parabola_offset(1.0, 0.5, 3.0) + 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(parabola_offset(1.0, 1.0, 1.0), 0.0);
    }
}
