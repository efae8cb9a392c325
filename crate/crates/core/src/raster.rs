//! Image rasters and their binary containers.
//!
//! RGB uses the binary PPM layout (`P6`, maxval 255). Depth and instance
//! rasters use 16-bit binary PGM (`P5`, maxval 65535, big-endian samples).

use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (width, height, maxval, body) = parse_header(bytes, b"P6", path)?;
        if maxval != 255 {
            return Err(Error::format(path, format!("unsupported maxval {maxval}")));
        }
        let n = width as usize * height as usize * 3;
        if body.len() != n {
            return Err(Error::format(
                path,
                format!("expected {n} raster bytes, found {}", body.len()),
            ));
        }
        Ok(RgbImage {
            width,
            height,
            data: body.to_vec(),
        })
    }
}

/// Single-channel raster of 16-bit samples (depth codes or instance ids).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster16 {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl Raster16 {
    pub fn new(width: u32, height: u32) -> Self {
        Raster16 {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn filled(width: u32, height: u32, value: u16) -> Self {
        Raster16 {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, v: u16) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len() * 2);
        for v in &self.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (width, height, maxval, body) = parse_header(bytes, b"P5", path)?;
        if maxval != 65535 {
            return Err(Error::format(path, format!("unsupported maxval {maxval}")));
        }
        let n = width as usize * height as usize;
        if body.len() != 2 * n {
            return Err(Error::format(
                path,
                format!("expected {} raster bytes, found {}", 2 * n, body.len()),
            ));
        }
        let data = body
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        Ok(Raster16 {
            width,
            height,
            data,
        })
    }
}

/// Depth raster: code `v` stands for normalized depth `v / 65535`, and
/// normalized depth 1.0 stands for the maximum range (or no hit).
pub type DepthMap = Raster16;
/// Instance-id raster, 0 = background / void.
pub type InstanceMap = Raster16;

pub const DEPTH_CODE_MAX: u16 = u16::MAX;

pub fn depth_to_code(normalized: f64) -> u16 {
    (normalized.clamp(0.0, 1.0) * DEPTH_CODE_MAX as f64).round() as u16
}

pub fn code_to_depth(code: u16) -> f64 {
    code as f64 / DEPTH_CODE_MAX as f64
}

/// 8-bit grayscale, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, v: u8) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }
}

fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &[u8],
    path: &Path,
) -> Result<(u32, u32, u32, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::format(path, "bad magic"));
    }
    let mut pos = magic.len();
    let mut fields = [0u32; 3];
    for field in &mut fields {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| Error::format(path, "truncated or malformed header"))?;
    }
    // exactly one whitespace byte separates the header from the samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "truncated header"));
    }
    Ok((fields[0], fields[1], fields[2], &bytes[pos + 1..]))
}
