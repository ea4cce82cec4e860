//! Binary PPM (P6) decoding/encoding and PGM (P5) encoding for dumps.
//!
//! P6 with maxval 255 is the bit-exact interchange format: a decoded pixel
//! byte b becomes exactly b/255, and encoding rounds back to the same byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    /// Skip whitespace and `#` comment lines between header fields.
    fn skip_separators(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("malformed {what}")))
    }
}

/// Decode P6 bytes into a planar (3,H,W) tensor with values v/255.
pub fn decode_p6_bytes<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(cur.err("not a P6 file (bad magic)"));
    }
    cur.pos = 2;
    let width = cur.read_number("width")?;
    let height = cur.read_number("height")?;
    let maxval = cur.read_number("maxval")?;
    if maxval != 255 {
        return Err(cur.err(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the payload
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.err("missing separator before payload"));
    }
    cur.pos += 1;
    let need = 3 * width * height;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Decode {
            offset: bytes.len(),
            msg: format!("truncated payload: have {} bytes, need {need}", payload.len()),
        });
    }
    let inv = 1.0 / 255.0;
    let mut data = vec![T::zero(); need];
    let plane = width * height;
    for (i, px) in payload[..need].chunks_exact(3).enumerate() {
        data[i] = T::from_f64(px[0] as f64 * inv);
        data[plane + i] = T::from_f64(px[1] as f64 * inv);
        data[2 * plane + i] = T::from_f64(px[2] as f64 * inv);
    }
    Tensor::constant(&[3, height, width], data)
}

pub fn decode_p6<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Manifest(format!("cannot read image {}: {e}", path.display()))
    })?;
    decode_p6_bytes(&bytes)
}

fn to_byte<T: Scalar>(v: T) -> u8 {
    let x = v.to_f64().clamp(0.0, 1.0) * 255.0;
    x.round() as u8
}

/// Encode a planar (3,H,W) tensor as P6 bytes.
pub fn encode_p6<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(Error::dim(format!(
            "encode_p6: expected (3,H,W), got {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let data = img.data();
    for i in 0..plane {
        out.push(to_byte(data[i]));
        out.push(to_byte(data[plane + i]));
        out.push(to_byte(data[2 * plane + i]));
    }
    Ok(out)
}

pub fn write_p6<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    std::fs::write(path, encode_p6(img)?)?;
    Ok(())
}

/// Encode one grayscale plane as P5 bytes, min-max normalized; a constant
/// plane maps to mid-gray.
pub fn encode_p5_normalized<T: Scalar>(plane: &[T], h: usize, w: usize) -> Result<Vec<u8>> {
    if plane.len() != h * w {
        return Err(Error::dim(format!(
            "encode_p5: {} values for {h}x{w}",
            plane.len()
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in plane {
        let x = v.to_f64();
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    if hi > lo {
        let scale = 255.0 / (hi - lo);
        out.extend(plane.iter().map(|&v| ((v.to_f64() - lo) * scale).round() as u8));
    } else {
        out.extend(std::iter::repeat_n(128u8, h * w));
    }
    Ok(out)
}
