//! 8-bit raster images and the netpbm formats used for all image I/O:
//! binary PPM (`P6`), PGM (`P5`) and PAM (`P7`, RGBA overlays).

use std::path::Path;

use crate::error::{Error, Result};
use crate::textfmt::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triplets.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbImage { width, height, data: rgb.repeat(width * height) }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = 3 * (y * self.width + x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Rec. 601 luma in `[0, 1]`.
    pub fn to_gray(&self) -> GrayImage {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect();
        GrayImage { width: self.width, height: self.height, data }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbaImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbaImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let o = 4 * (y * self.width + x);
        [self.data[o], self.data[o + 1], self.data[o + 2], self.data[o + 3]]
    }
}

/// Grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn to_rgb(&self) -> RgbImage {
        let data = self.to_bytes().into_iter().flat_map(|g| [g, g, g]).collect();
        RgbImage { width: self.width, height: self.height, data }
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn encode_pam(img: &RgbaImage) -> Vec<u8> {
    let mut out = format!(
        "P7\nWIDTH {}\nHEIGHT {}\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n",
        img.width, img.height
    )
    .into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | b'\x0b' | b'\x0c' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map(|s| (start, s))
            .map_err(|_| Error::parse(start, "non-ASCII header token"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let (at, tok) = self.token()?;
        tok.parse().map_err(|_| Error::parse(at, format!("invalid {what} '{tok}'")))
    }

    /// Exactly one whitespace byte separates the header from the raster.
    fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::parse(self.pos, "missing whitespace after header")),
        }
    }
}

fn magic(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::parse(0, "not a netpbm file"));
    }
    Ok(&bytes[..2])
}

/// Parses `P5`/`P6` headers: returns (width, height, payload offset).
fn parse_pnm_header(bytes: &[u8], expected: &[u8]) -> Result<(usize, usize, usize)> {
    let m = magic(bytes)?;
    if m != expected {
        return Err(Error::Unsupported(format!(
            "expected {}, found {}",
            String::from_utf8_lossy(expected),
            String::from_utf8_lossy(m)
        )));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let (at, tok) = cur.token()?;
    let maxval: usize = tok.parse().map_err(|_| Error::parse(at, format!("invalid maxval '{tok}'")))?;
    if maxval != 255 {
        return Err(Error::Unsupported(format!("maxval {maxval} at byte {at} (only 255 is supported)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "zero image dimension"));
    }
    Ok((width, height, cur.end_of_header()?))
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start.checked_add(len).ok_or_else(|| Error::parse(start, "image too large"))?;
    if bytes.len() < end {
        return Err(Error::parse(
            bytes.len(),
            format!("short payload: expected {len} bytes, found {}", bytes.len() - start),
        ));
    }
    if bytes.len() > end {
        return Err(Error::parse(end, "trailing bytes after raster"));
    }
    Ok(&bytes[start..end])
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let (width, height, start) = parse_pnm_header(bytes, b"P6")?;
    let data = payload(bytes, start, 3 * width * height)?.to_vec();
    Ok(RgbImage { width, height, data })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let (width, height, start) = parse_pnm_header(bytes, b"P5")?;
    let data = payload(bytes, start, width * height)?.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(GrayImage { width, height, data })
}

pub fn decode_pam(bytes: &[u8]) -> Result<RgbaImage> {
    if magic(bytes)? != b"P7" {
        return Err(Error::Unsupported("expected P7".into()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let (mut width, mut height, mut depth, mut maxval) = (0, 0, 0, 0);
    loop {
        let (at, key) = cur.token()?;
        match key {
            "WIDTH" => width = cur.number("width")?,
            "HEIGHT" => height = cur.number("height")?,
            "DEPTH" => depth = cur.number("depth")?,
            "MAXVAL" => maxval = cur.number("maxval")?,
            "TUPLTYPE" => {
                cur.token()?;
            }
            "ENDHDR" => break,
            other => return Err(Error::parse(at, format!("unknown PAM header field '{other}'"))),
        }
    }
    if depth != 4 || maxval != 255 {
        return Err(Error::Unsupported(format!("PAM depth {depth} maxval {maxval} (need 4 and 255)")));
    }
    let start = cur.end_of_header()?;
    let data = payload(bytes, start, 4 * width * height)?.to_vec();
    Ok(RgbaImage { width, height, data })
}

pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(img))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(img))
}

pub fn write_pam(img: &RgbaImage, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pam(img))
}

/// Reads a `P5` or `P6` file as grayscale.
pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    match magic(&bytes)? {
        b"P5" => decode_pgm(&bytes),
        b"P6" => Ok(decode_ppm(&bytes)?.to_gray()),
        m => Err(Error::Unsupported(format!("netpbm type {}", String::from_utf8_lossy(m)))),
    }
}

/// Reads a `P5` or `P6` file as RGB.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let bytes = std::fs::read(path)?;
    match magic(&bytes)? {
        b"P5" => Ok(decode_pgm(&bytes)?.to_rgb()),
        b"P6" => decode_ppm(&bytes),
        m => Err(Error::Unsupported(format!("netpbm type {}", String::from_utf8_lossy(m)))),
    }
}
