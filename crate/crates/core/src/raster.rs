//! Image and label-mask containers with binary PPM (P6) / PGM (P5) I/O.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Label value for pixels that belong to no class.
pub const VOID: u8 = 255;

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "image",
                format!(
                    "{width}x{height}x3 needs {} values, got {}",
                    width * height * 3,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Values in `[H, W, 3]` order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn write_ppm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: Read>(input: R) -> Result<Self> {
        let (width, height, bytes) = read_pnm(input, b"P6", 3)?;
        let data = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        Self::new(width, height, data)
    }
}

/// Maps `[0, 1]` onto `0..=255` by rounding.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major per-pixel class indices; [`VOID`] marks unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!(
                    "{width}x{height} needs {} labels, got {}",
                    width * height,
                    labels.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn write_pgm<W: Write>(&self, out: W) -> Result<()> {
        write_pgm(out, self.width, self.height, &self.labels)
    }

    pub fn read_pgm<R: Read>(input: R) -> Result<Self> {
        let (width, height, labels) = read_pnm(input, b"P5", 1)?;
        Self::new(width, height, labels)
    }
}

/// Writes raw 8-bit gray values as a binary PGM with maxval 255.
pub fn write_pgm<W: Write>(mut out: W, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    debug_assert_eq!(bytes.len(), width * height);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(bytes)?;
    Ok(())
}

fn read_pnm<R: Read>(
    mut input: R,
    magic: &[u8; 2],
    channels: usize,
) -> Result<(usize, usize, Vec<u8>)> {
    let kind = if channels == 3 { "PPM" } else { "PGM" };
    let bad = |detail: &str| Error::Format {
        kind,
        detail: detail.to_string(),
    };
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(bad("wrong magic number"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < buf.len() && buf[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&buf[start..pos]).map_err(|_| bad("bad header"))?;
        *field = text.parse().map_err(|_| bad("bad header field"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(bad("missing header terminator"));
    }
    pos += 1;
    let n = width * height * channels;
    if buf.len() - pos != n {
        return Err(bad("pixel payload has the wrong length"));
    }
    Ok((width, height, buf[pos..].to_vec()))
}
