//! Binary grid files.
//!
//! Both kinds share a header and payload:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic (`XCAM` or `XCPI`)                |
//! | 4      | 2    | version, u16 (currently 1)              |
//! | 6      | 4    | height, u32                             |
//! | 10     | 4    | width, u32                              |
//! | 14     | 4    | channels, u32                           |
//! | 18     | 4·N  | N = H·W·C f32 values, (row, col, channel) order |
//!
//! followed by a fixed trailer.
//!
//! `XCAM` trailer (21 bytes): method tag u8 (0 backprop, 1 ig, 2 ig-nomult),
//! then box index, class index, output index, ig steps and baseline id, each u32.
//!
//! `XCPI` trailer (24 bytes): origin_x f64, origin_y f64, pixel_size f64.

use std::fs;
use std::path::Path;

use super::FormatError;
use crate::attribution::{AttributionMap, AttributionTarget, Method};
use crate::autodiff::Tensor;
use crate::geometry::GridMeta;
use crate::scene::PseudoImage;

pub const XCAM_MAGIC: [u8; 4] = *b"XCAM";
pub const XCPI_MAGIC: [u8; 4] = *b"XCPI";
pub const XCAM_VERSION: u16 = 1;
const HEADER: usize = 18;
const XCAM_TRAILER: usize = 21;
const XCPI_TRAILER: usize = 24;

fn encode_grid(magic: [u8; 4], values: &Tensor, trailer: &[u8]) -> Vec<u8> {
    let (h, w, c) = crate::attribution::grid_dims(values.shape());
    let mut out = Vec::with_capacity(HEADER + 4 * values.len() + trailer.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&XCAM_VERSION.to_le_bytes());
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(trailer);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::TruncatedPayload {
                offset: self.bytes.len(),
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos != self.bytes.len() {
            return Err(FormatError::TrailingBytes {
                offset: self.pos,
                extra: self.bytes.len() - self.pos,
            });
        }
        Ok(())
    }
}

/// Header and payload; returns the cursor positioned at the trailer.
fn decode_grid<'a>(magic: [u8; 4], bytes: &'a [u8]) -> Result<(Tensor, Cursor<'a>), FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let found = cur.take(4).map_err(|_| FormatError::BadMagic {
        expected: magic,
        found: bytes.to_vec(),
    })?;
    if found != magic {
        return Err(FormatError::BadMagic {
            expected: magic,
            found: found.to_vec(),
        });
    }
    let version = cur.u16()?;
    if version != XCAM_VERSION {
        return Err(FormatError::VersionUnsupported(version));
    }
    let (h, w, c) = (
        cur.u32()? as usize,
        cur.u32()? as usize,
        cur.u32()? as usize,
    );
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .filter(|&n| n.checked_mul(4).is_some())
        .ok_or(FormatError::BadValue {
            offset: 6,
            reason: format!("dimensions {h}x{w}x{c} overflow"),
        })?;
    let payload_start = cur.pos;
    let raw = cur.take(4 * n)?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::BadValue {
            offset: payload_start + 4 * i,
            reason: "non-finite value".into(),
        });
    }
    let tensor = Tensor::new(vec![h, w, c], data).expect("validated");
    Ok((tensor, cur))
}

pub fn encode_xcam(map: &AttributionMap) -> Vec<u8> {
    let mut trailer = Vec::with_capacity(XCAM_TRAILER);
    trailer.push(map.method.tag());
    for v in [
        map.target.box_index,
        map.target.class_index,
        map.target.output as u32,
        map.ig_steps,
        map.baseline_id,
    ] {
        trailer.extend_from_slice(&v.to_le_bytes());
    }
    encode_grid(XCAM_MAGIC, &map.values, &trailer)
}

pub fn decode_xcam(bytes: &[u8]) -> Result<AttributionMap, FormatError> {
    let (values, mut cur) = decode_grid(XCAM_MAGIC, bytes)?;
    let tag_offset = cur.pos;
    let method = Method::from_tag(cur.u8()?).ok_or(FormatError::BadValue {
        offset: tag_offset,
        reason: format!("unknown method tag {}", bytes[tag_offset]),
    })?;
    let box_index = cur.u32()?;
    let class_index = cur.u32()?;
    let output = cur.u32()? as usize;
    let ig_steps = cur.u32()?;
    let baseline_id = cur.u32()?;
    cur.finish()?;
    Ok(AttributionMap {
        values,
        target: AttributionTarget {
            box_index,
            class_index,
            output,
        },
        method,
        ig_steps,
        baseline_id,
    })
}

pub fn encode_pseudo_image(img: &PseudoImage) -> Vec<u8> {
    let mut trailer = Vec::with_capacity(XCPI_TRAILER);
    for v in [img.grid.origin_x, img.grid.origin_y, img.grid.pixel_size] {
        trailer.extend_from_slice(&v.to_le_bytes());
    }
    encode_grid(XCPI_MAGIC, &img.features, &trailer)
}

pub fn decode_pseudo_image(bytes: &[u8]) -> Result<PseudoImage, FormatError> {
    let (features, mut cur) = decode_grid(XCPI_MAGIC, bytes)?;
    let trailer_offset = cur.pos;
    let (origin_x, origin_y, pixel_size) = (cur.f64()?, cur.f64()?, cur.f64()?);
    cur.finish()?;
    let grid = GridMeta::new(
        features.shape()[0],
        features.shape()[1],
        origin_x,
        origin_y,
        pixel_size,
    )
    .map_err(|e| FormatError::BadValue {
        offset: trailer_offset,
        reason: e.to_string(),
    })?;
    Ok(PseudoImage { features, grid })
}

pub fn write_xcam(path: impl AsRef<Path>, map: &AttributionMap) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_xcam(map))?)
}

pub fn read_xcam(path: impl AsRef<Path>) -> Result<AttributionMap, FormatError> {
    decode_xcam(&fs::read(path)?)
}

pub fn write_pseudo_image(path: impl AsRef<Path>, img: &PseudoImage) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_pseudo_image(img))?)
}

pub fn read_pseudo_image(path: impl AsRef<Path>) -> Result<PseudoImage, FormatError> {
    decode_pseudo_image(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(v: f32) -> AttributionMap {
        AttributionMap {
            values: Tensor::new(vec![1, 1, 1], vec![v]).unwrap(),
            target: AttributionTarget {
                box_index: 3,
                class_index: 1,
                output: 7,
            },
            method: Method::IntegratedGradients,
            ig_steps: 32,
            baseline_id: 0,
        }
    }

    #[test]
    fn ieee_layout() {
        let bytes = encode_xcam(&one_pixel(0.5));
        assert_eq!(&bytes[..4], b"XCAM");
        assert_eq!(&bytes[HEADER..HEADER + 4], &[0x00, 0x00, 0x00, 0x3F]);
        assert_eq!(bytes.len(), HEADER + 4 + XCAM_TRAILER);
        assert_eq!(decode_xcam(&bytes).unwrap(), one_pixel(0.5));
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_xcam(&one_pixel(0.5));
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(
            decode_xcam(&bad),
            Err(FormatError::BadMagic { .. })
        ));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_xcam(&bad),
            Err(FormatError::VersionUnsupported(9))
        ));
        assert!(matches!(
            decode_xcam(&bytes[..bytes.len() - 1]),
            Err(FormatError::TruncatedPayload { needed: 1, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode_xcam(&long),
            Err(FormatError::TrailingBytes { extra: 1, .. })
        ));
        let mut tag = bytes;
        tag[HEADER + 4] = 42;
        assert!(matches!(
            decode_xcam(&tag),
            Err(FormatError::BadValue { offset, .. }) if offset == HEADER + 4
        ));
    }
}
