//! On-disk formats: Middlebury `.flo`, 8-bit PNG frames and masks, JSON.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::codec::EncodedFlow;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::render::Frame;

/// "PIEH" read as a little-endian f32.
pub const FLO_MAGIC: [u8; 4] = *b"PIEH";
/// Components above this magnitude mean "unknown" in Middlebury files.
const FLO_UNKNOWN: f32 = 1e9;

pub fn flo_bytes(flow: &FlowField) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut buf = Vec::with_capacity(12 + w * h * 8);
    buf.extend_from_slice(&FLO_MAGIC);
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for v in flow.data() {
        buf.extend_from_slice(&(v[0] as f32).to_le_bytes());
        buf.extend_from_slice(&(v[1] as f32).to_le_bytes());
    }
    buf
}

pub fn parse_flo(bytes: &[u8], path: &Path) -> Result<FlowField> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 {
        return Err(bad("truncated header"));
    }
    if bytes[..4] != FLO_MAGIC {
        return Err(bad("missing PIEH magic"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16 {
        return Err(bad("implausible dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    let body = &bytes[12..];
    if body.len() != w * h * 8 {
        return Err(bad("payload size does not match dimensions"));
    }
    let mut data = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for chunk in body.chunks_exact(8) {
        let u = f32::from_le_bytes(chunk[..4].try_into().unwrap());
        let v = f32::from_le_bytes(chunk[4..].try_into().unwrap());
        let known = u.is_finite() && v.is_finite() && u.abs() < FLO_UNKNOWN && v.abs() < FLO_UNKNOWN;
        data.push(if known { [u as f64, v as f64] } else { [0.0; 2] });
        mask.push(known);
    }
    FlowField::from_parts(w, h, data, mask)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    fs::write(path, flo_bytes(flow)).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_flo(&bytes, path)
}

/// Sidecar mask path: `x.flo` -> `x_mask.png`.
pub fn mask_path(flo: &Path) -> std::path::PathBuf {
    let stem = flo.file_stem().and_then(|s| s.to_str()).unwrap_or("flow");
    flo.with_file_name(format!("{stem}_mask.png"))
}

/// Writes the `.flo` file and its validity mask (255 = valid).
pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    write_flo(path, flow)?;
    let (w, h) = flow.dims();
    let mask = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if flow.is_valid(x as usize, y as usize) { 255 } else { 0 }])
    });
    let mp = mask_path(path);
    mask.save(&mp).map_err(|source| Error::Image { path: mp, source })
}

/// Reads a `.flo` file and applies its sidecar mask when one exists.
pub fn read_flow(path: &Path) -> Result<FlowField> {
    let flow = read_flo(path)?;
    let mp = mask_path(path);
    if !mp.exists() {
        return Ok(flow);
    }
    let mask = image::open(&mp)
        .map_err(|source| Error::Image {
            path: mp.clone(),
            source,
        })?
        .to_luma8();
    if mask.dimensions() != (flow.width() as u32, flow.height() as u32) {
        return Err(Error::Format {
            path: mp,
            reason: "mask size differs from flow".into(),
        });
    }
    let valid: Vec<bool> = flow
        .mask()
        .iter()
        .zip(mask.pixels())
        .map(|(m, p)| *m && p.0[0] > 127)
        .collect();
    FlowField::from_parts(flow.width(), flow.height(), flow.data().to_vec(), valid)
}

pub fn frame_to_image(frame: &Frame) -> RgbImage {
    RgbImage::from_fn(frame.width as u32, frame.height as u32, |x, y| {
        let c = frame.at(x as usize, y as usize);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn image_to_frame(img: &RgbImage) -> Frame {
    let (w, h) = img.dimensions();
    Frame {
        width: w as usize,
        height: h as usize,
        data: img.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect(),
    }
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8())
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    write_png(path, &frame_to_image(frame))
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    read_rgb(path).map(|img| image_to_frame(&img))
}

pub fn write_encoded(path: &Path, enc: &EncodedFlow) -> Result<()> {
    write_png(path, &enc.to_image())
}

pub fn read_encoded(path: &Path) -> Result<EncodedFlow> {
    read_rgb(path).map(|img| EncodedFlow::from_image(&img))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    #[test]
    fn flo_header_is_middlebury() {
        let mut f = FlowField::zeros(3, 2);
        f.set(1, 0, Vector2::new(1.5, -2.25));
        let bytes = flo_bytes(&f);
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(f32::from_le_bytes(bytes[..4].try_into().unwrap()), 202021.25);
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 3 * 2 * 8);
        // pixel (1,0): second (u,v) pair
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1.5);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), -2.25);
    }

    #[test]
    fn flo_rejects_garbage() {
        let p = Path::new("x.flo");
        assert!(parse_flo(b"PIE", p).is_err());
        assert!(parse_flo(b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0", p).is_err());
        assert!(parse_flo(b"PIEH\x02\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0", p).is_err());
        let mut unknown = b"PIEH\x01\0\0\0\x01\0\0\0".to_vec();
        unknown.extend_from_slice(&1e10f32.to_le_bytes());
        unknown.extend_from_slice(&0f32.to_le_bytes());
        assert_eq!(parse_flo(&unknown, p).unwrap().valid_count(), 0);
    }

    #[test]
    fn flow_with_mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let mut f = FlowField::constant(4, 3, 0.5, -1.0);
        f.set_invalid(2, 1);
        write_flow(&path, &f).unwrap();
        assert!(mask_path(&path).exists());
        assert_eq!(read_flow(&path).unwrap(), f);
    }

    #[test]
    fn frame_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.png");
        let frame = Frame {
            width: 2,
            height: 1,
            data: vec![[0.0, 1.0, 128.0 / 255.0], [1.0, 0.0, 0.0]],
        };
        write_frame(&path, &frame).unwrap();
        assert_eq!(read_frame(&path).unwrap(), frame);
    }

    proptest! {
        #[test]
        fn flo_roundtrip_is_f32_exact(vals in proptest::collection::vec(-1e4f32..1e4, 12)) {
            let data: Vec<[f64; 2]> = vals.chunks(2).map(|c| [c[0] as f64, c[1] as f64]).collect();
            let f = FlowField::from_parts(3, 2, data, vec![true; 6]).unwrap();
            let back = parse_flo(&flo_bytes(&f), Path::new("mem")).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
