//! 8-bit images and binary netpbm (PPM/PGM) files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::map::Map;

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::Data(format!("bad image geometry {width}×{height}×{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::dim("image", "byte count", width * height * channels, data.len()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
    }

    /// Gray image with values `round(255 · v / max)`; an all-zero map
    /// stays black.
    pub fn from_map_scaled(map: &Map) -> Self {
        let m = map.max();
        let scale = if m > 0.0 { 255.0 / m } else { 0.0 };
        let data = map.data().iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
        Image {
            width: map.width(),
            height: map.height(),
            channels: 1,
            data,
        }
    }

    pub fn to_map(&self) -> Result<Map> {
        if self.channels != 1 {
            return Err(Error::Data(format!("expected a gray image, got {} channels", self.channels)));
        }
        Map::new(self.height, self.width, self.data.iter().map(|&v| v as f64).collect())
    }

    /// Mean of the RGB channels, per pixel, in [0, 255].
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks(self.channels)
            .map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / self.channels as f64)
            .collect()
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(path, "truncated netpbm header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format(path, "non-ASCII netpbm header"))
}

/// Parses a binary PGM (`P5`) or PPM (`P6`) file. 16-bit samples are
/// returned as big-endian pairs decoded to `u16`.
pub fn parse_netpbm(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, u16, Vec<u16>)> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos, path)? {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format(path, format!("unsupported netpbm magic {m}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos, path)?
            .parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad {what} in netpbm header")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "bad netpbm geometry"));
    }
    pos += 1;
    let n = width * height * channels;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if bytes.len() < pos + need {
        return Err(Error::format(path, format!("expected {need} payload bytes, found {}", bytes.len().saturating_sub(pos))));
    }
    let payload = &bytes[pos..pos + need];
    let samples = if wide {
        payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        payload.iter().map(|&v| v as u16).collect()
    };
    Ok((width, height, channels, maxval as u16, samples))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, c, maxval, samples) = parse_netpbm(&bytes, path)?;
    let data = if maxval == 255 {
        samples.into_iter().map(|v| v as u8).collect()
    } else {
        samples
            .into_iter()
            .map(|v| ((v as f64) * 255.0 / maxval as f64).round() as u8)
            .collect()
    };
    Image::new(w, h, c, data)
}

pub fn encode_image(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_image(img)).map_err(|e| Error::io(path, e))
}

/// Writes a 16-bit PGM holding `round(v · scale)` per sample.
pub fn write_pgm16(path: &Path, width: usize, height: usize, values: &[f32], scale: f32) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in values {
        let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a gray PGM (8 or 16 bit) and divides every sample by `scale`.
pub fn read_pgm_values(path: &Path, scale: f32) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, c, _, samples) = parse_netpbm(&bytes, path)?;
    if c != 1 {
        return Err(Error::format(path, "expected a gray (P5) image"));
    }
    Ok((w, h, samples.into_iter().map(|v| v as f32 / scale).collect()))
}
