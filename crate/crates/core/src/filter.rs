//! Forward/backward cycle consistency and percentile-threshold filtering.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::manifest::DatasetManifest;
use crate::stats::{check_percentile, nearest_rank, Distribution};

pub const DEFAULT_FILTER_PERCENTILE: f64 = 90.0;

/// Threshold reported for large-scale real data at the 90th percentile (px).
pub const REFERENCE_THRESHOLD_PX: f64 = 1.19;
/// Largest cycle error reported for that data (px).
pub const REFERENCE_MAX_ERROR_PX: f64 = 1080.05;

/// Per-pixel cycle residual; `mask` marks pixels where it is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ErrorMap {
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(v, _)| *v)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// `e(p) = |fwd(p) + bwd(p + fwd(p))|`, with `bwd` sampled bilinearly.
/// Pixels are excluded where `fwd` is invalid, the warped position leaves
/// the image, or any contributing `bwd` neighbour is invalid.
pub fn cycle_error_map(fwd: &FlowField, bwd: &FlowField) -> Result<ErrorMap> {
    fwd.check_same_dims(bwd)?;
    let (w, h) = fwd.dims();
    let mut values = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    for (x, y, f) in fwd.iter_valid() {
        let target = Vector2::new(x as f64, y as f64) + f;
        if let Some(b) = bwd.sample_bilinear(target) {
            values[y * w + x] = (f + b).norm();
            mask[y * w + x] = true;
        }
    }
    Ok(ErrorMap {
        width: w,
        height: h,
        values,
        mask,
    })
}

/// Mean error over valid pixels.
pub fn clip_score(map: &ErrorMap) -> Result<f64> {
    pooled_clip_score(std::slice::from_ref(map)).map(|(score, _)| score)
}

/// Mean over the valid pixels of all frame pairs of a clip, plus the pixel count.
pub fn pooled_clip_score(maps: &[ErrorMap]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in maps {
        for v in m.valid_values() {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Unscorable);
    }
    Ok((sum / count as f64, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipConsistency {
    pub clip_id: String,
    pub error: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub per_clip: Vec<ClipConsistency>,
    pub distribution: Distribution,
}

impl ConsistencyReport {
    pub fn new(per_clip: Vec<ClipConsistency>) -> Result<Self> {
        if let Some(bad) = per_clip.iter().find(|c| !(c.error >= 0.0) || c.pixels == 0) {
            return Err(Error::invalid(format!("invalid score for clip {}", bad.clip_id)));
        }
        let errors: Vec<f64> = per_clip.iter().map(|c| c.error).collect();
        let distribution = Distribution::from_values(&errors)?;
        Ok(Self {
            per_clip,
            distribution,
        })
    }
}

/// Marks entries whose score exceeds the nearest-rank percentile of all
/// scored entries as not kept. Unscored entries are left untouched.
///
/// The threshold is computed over every scored entry, kept or not, which makes
/// re-filtering at the same percentile a no-op.
pub fn filter_dataset(manifest: &DatasetManifest, percentile: f64) -> Result<(DatasetManifest, f64)> {
    check_percentile(percentile)?;
    let scores: Vec<f64> = manifest.entries.iter().filter_map(|e| e.error).collect();
    if scores.is_empty() {
        return Err(Error::Unscorable);
    }
    let threshold = nearest_rank(&scores, percentile)?;
    let mut out = manifest.clone();
    for entry in &mut out.entries {
        if let Some(err) = entry.error {
            entry.kept = err <= threshold;
        }
    }
    Ok((out, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub percentile: f64,
    pub threshold_px: f64,
    pub max_error_px: f64,
}

impl Default for ReferenceValues {
    fn default() -> Self {
        Self {
            percentile: DEFAULT_FILTER_PERCENTILE,
            threshold_px: REFERENCE_THRESHOLD_PX,
            max_error_px: REFERENCE_MAX_ERROR_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub percentile: f64,
    pub threshold_px: f64,
    pub kept: usize,
    pub removed: usize,
    pub consistency: ConsistencyReport,
    pub reference: ReferenceValues,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{ManifestEntry, Source};
    use proptest::prelude::*;

    fn manifest(scores: &[f64]) -> DatasetManifest {
        let mut m = DatasetManifest::default();
        for (i, s) in scores.iter().enumerate() {
            let mut e = ManifestEntry::new(format!("clip{i:03}"), Source::Real);
            e.error = Some(*s);
            m.entries.push(e);
        }
        m
    }

    #[test]
    fn exact_inverse_has_zero_error() {
        let f = FlowField::constant(10, 8, 1.5, -0.5);
        let b = FlowField::constant(10, 8, -1.5, 0.5);
        let e = cycle_error_map(&f, &b).unwrap();
        assert!(e.valid_values().all(|v| v <= 1e-9));
        // positions warped out of bounds are excluded: x + 1.5 > 9 for x >= 8, y - 0.5 < 0 at y = 0
        assert_eq!(e.valid_count(), 8 * 7);
    }

    #[test]
    fn offset_backward_gives_delta() {
        let f = FlowField::constant(12, 12, 2.0, 1.0);
        let b = FlowField::constant(12, 12, -2.0, -1.0 + 0.3);
        let e = cycle_error_map(&f, &b).unwrap();
        assert!(e.valid_count() > 0);
        assert!(e.valid_values().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(cycle_error_map(&f, &FlowField::zeros(11, 12)).is_err());
    }

    #[test]
    fn clip_score_mean() {
        let map = |values: Vec<f64>, mask: Vec<bool>| ErrorMap {
            width: values.len(),
            height: 1,
            values,
            mask,
        };
        assert_eq!(clip_score(&map(vec![2.0; 4], vec![true; 4])).unwrap(), 2.0);
        assert_eq!(clip_score(&map(vec![0.0, 4.0, 0.0, 4.0], vec![true; 4])).unwrap(), 2.0);
        assert!(matches!(
            clip_score(&map(vec![1.0; 3], vec![false; 3])),
            Err(Error::Unscorable)
        ));
        let pooled = pooled_clip_score(&[
            map(vec![1.0, 9.0], vec![true, false]),
            map(vec![3.0], vec![true]),
        ])
        .unwrap();
        assert_eq!(pooled, (2.0, 2));
    }

    #[test]
    fn ten_clip_threshold() {
        let m = manifest(&[3.0, 1.0, 10.0, 2.0, 5.0, 4.0, 9.0, 6.0, 8.0, 7.0]);
        let (out, thr) = filter_dataset(&m, 90.0).unwrap();
        assert_eq!(thr, 9.0);
        let removed: Vec<_> = out.entries.iter().filter(|e| !e.kept).map(|e| e.error.unwrap()).collect();
        assert_eq!(removed, vec![10.0]);
        let (all, _) = filter_dataset(&m, 100.0).unwrap();
        assert!(all.entries.iter().all(|e| e.kept));
    }

    #[test]
    fn unscored_entries_untouched() {
        let mut m = manifest(&[1.0, 2.0]);
        m.entries.push(ManifestEntry::new("syn", Source::Synthetic));
        let (out, _) = filter_dataset(&m, 50.0).unwrap();
        assert!(out.entries[2].kept);
        assert!(filter_dataset(&DatasetManifest::default(), 50.0).is_err());
    }

    proptest! {
        #[test]
        fn idempotent_and_monotone(
            scores in proptest::collection::vec(0.0f64..50.0, 1..40),
            p_lo in 1.0f64..100.0,
            p_hi in 1.0f64..100.0,
        ) {
            let (p_lo, p_hi) = if p_lo <= p_hi { (p_lo, p_hi) } else { (p_hi, p_lo) };
            let m = manifest(&scores);
            let (once, t1) = filter_dataset(&m, p_hi).unwrap();
            let (twice, t2) = filter_dataset(&once, p_hi).unwrap();
            prop_assert_eq!(t1, t2);
            prop_assert_eq!(&once, &twice);
            let (lo, _) = filter_dataset(&m, p_lo).unwrap();
            for (a, b) in lo.entries.iter().zip(&once.entries) {
                prop_assert!(!a.kept || b.kept);
            }
            let kept = once.entries.iter().filter(|e| e.kept).count() as f64;
            let n = scores.len() as f64;
            prop_assert!(kept / n >= p_hi / 100.0 - 1.0 / n - 1e-12);
        }
    }
}
