//! Binary Netpbm: PGM (`P5`) and PPM (`P6`), 8 bits per sample.
//! <https://netpbm.sourceforge.net/doc/pgm.html>

use std::io::Write;

use super::DatasetError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

impl RawImage {
    /// One luma value per pixel in `[0, 1]`. RGB is reduced with the BT.601
    /// weights `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_gray_f32(&self) -> Vec<f32> {
        let scale = 1.0 / self.maxval as f32;
        match self.channels {
            1 => self.data.iter().map(|&v| v as f32 * scale).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|px| (0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32) * scale)
                .collect(),
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, DatasetError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                DatasetError::Truncated(format!("header ends before {what}"))
            } else {
                DatasetError::Malformed(format!("expected {what}"))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| DatasetError::Malformed(format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawImage, DatasetError> {
    if bytes.len() < 2 {
        return Err(DatasetError::Truncated("missing magic number".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(DatasetError::UnsupportedFormat(format!(
                "magic {:?}; only binary PGM (P5) and PPM (P6) are read",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(DatasetError::UnsupportedFormat(format!(
            "maxval {maxval}; only 8-bit samples are supported"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(h.pos) {
        Some(c) if c.is_ascii_whitespace() => h.pos += 1,
        Some(_) => return Err(DatasetError::Malformed("no separator after maxval".into())),
        None => return Err(DatasetError::Truncated("header ends before raster".into())),
    }
    let need = width * height * channels;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(DatasetError::Truncated(format!(
            "raster has {} of {need} bytes",
            raster.len()
        )));
    }
    Ok(RawImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        data: raster[..need].to_vec(),
    })
}

/// Writes an 8-bit binary PGM.
pub fn encode_pgm(width: usize, height: usize, data: &[u8], mut out: impl Write) -> std::io::Result<()> {
    assert_eq!(data.len(), width * height);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(data)
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8], mut out: impl Write) -> std::io::Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    write!(out, "P6\n{width} {height}\n255\n")?;
    out.write_all(rgb)
}
