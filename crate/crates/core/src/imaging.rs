//! Grayscale raster model, PGM/PNG file I/O, bilinear sampling and polygon
//! rasterization.
//!
//! Pixel centers sit at integer coordinates: pixel `(i, j)` is the point
//! `x = i, y = j`. Ray geometry, sampling and rasterization share this frame.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Row-major grayscale image with gray values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    spacing_mm: Option<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} intensities for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0, 255]")));
        }
        Ok(Self {
            width,
            height,
            data,
            spacing_mm: None,
        })
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(width, height, data.iter().map(|&v| v as f64).collect())
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn with_spacing(mut self, spacing_mm: Option<f64>) -> Result<Self> {
        if let Some(s) = spacing_mm {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidImage(format!("spacing_mm must be positive, got {s}")));
            }
        }
        self.spacing_mm = spacing_mm;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing_mm(&self) -> Option<f64> {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// True when `p` lies in `[0, width−1] × [0, height−1]`.
    pub fn contains(&self, p: Point2D) -> bool {
        p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Applies `f` to every intensity, e.g. for contrast remapping.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.width, self.height, data)?.with_spacing(self.spacing_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point2D>,
}

impl Polygon {
    /// Implicitly closed polygon; needs ≥ 3 finite vertices with no two
    /// consecutive (cyclically) vertices equal.
    pub fn new(vertices: Vec<Point2D>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidPolygon(format!(
                    "vertices {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2D] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point2D, Point2D)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area (absolute value).
    pub fn area(&self) -> f64 {
        let twice: f64 = self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
        twice.abs() / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.bits[y * width + x] = f(x, y);
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k % self.width, k / self.width))
    }
}

pub fn mask_area(mask: &BinaryMask) -> usize {
    mask.bits.iter().filter(|&&b| b).count()
}

/// Bilinear interpolation of the four pixel centers around `p`.
pub fn sample_bilinear(img: &GrayImage, p: Point2D) -> Result<f64> {
    if !img.contains(p) {
        return Err(Error::OutOfBounds {
            x: p.x,
            y: p.y,
            width: img.width,
            height: img.height,
        });
    }
    let x0 = p.x.floor() as usize;
    let y0 = p.y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = p.x - x0 as f64;
    let fy = p.y - y0 as f64;

    let top = img.get(x0, y0) + fx * (img.get(x1, y0) - img.get(x0, y0));
    let bottom = img.get(x0, y1) + fx * (img.get(x1, y1) - img.get(x0, y1));
    Ok(top + fy * (bottom - top))
}

/// Even-odd scanline fill. A pixel is foreground when its center lies inside
/// the polygon; edges are half-open so that top/left boundaries count as
/// inside and bottom/right boundaries as outside.
pub fn rasterize_polygon(poly: &Polygon, width: usize, height: usize) -> Result<BinaryMask> {
    if poly.len() < 3 {
        return Err(Error::InvalidPolygon("fewer than 3 vertices".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameter(format!(
            "raster size must be positive, got {width}x{height}"
        )));
    }
    let mut mask = BinaryMask::new(width, height);
    let mut crossings = Vec::with_capacity(poly.len());
    for row in 0..height {
        let y = row as f64;
        crossings.clear();
        for (a, b) in poly.edges() {
            if (a.y <= y && y < b.y) || (b.y <= y && y < a.y) {
                crossings.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        crossings.sort_by(|p, q| p.total_cmp(q));
        for span in crossings.chunks_exact(2) {
            let start = span[0].ceil().max(0.0);
            let end = (span[1].ceil() - 1.0).min((width - 1) as f64);
            if start > end {
                continue;
            }
            for col in start as usize..=end as usize {
                mask.set(col, row, true);
            }
        }
    }
    Ok(mask)
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Reads `spacing_mm=<value>` from the `<image>.meta` sidecar, if present.
pub fn read_spacing(path: &Path) -> Result<Option<f64>> {
    let meta = meta_path(path);
    let text = match fs::read_to_string(&meta) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(meta, e)),
    };
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == "spacing_mm" {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(&meta, format!("bad spacing_mm '{}'", value.trim())))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::format(&meta, "spacing_mm must be positive"));
                }
                return Ok(Some(v));
            }
        }
    }
    Ok(None)
}

pub fn write_meta(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let meta = meta_path(path);
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(&meta, text).map_err(|e| Error::io(meta, e))
}

/// Loads a PGM (P2/P5, maxval 255) or 8-bit grayscale PNG image, picking up
/// pixel spacing from the `.meta` sidecar.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, pixels) = decode_raster(path, &bytes)?;
    GrayImage::from_u8(w, h, &pixels)?.with_spacing(read_spacing(path)?)
}

/// Loads a mask written by [`save_mask`]; any nonzero pixel is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, pixels) = decode_raster(path, &bytes)?;
    BinaryMask::from_bits(w, h, pixels.iter().map(|&v| v != 0).collect())
}

fn decode_raster(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(path, bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(path, bytes)
    } else {
        Err(Error::format(path, "not a PGM (P2/P5) or PNG file"))
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            Ok((w as usize, h as usize, gray.into_raw()))
        }
        other => Err(Error::format(
            path,
            format!("unsupported PNG color type {:?}, need 8-bit grayscale", other.color()),
        )),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<usize> {
        let tok = self
            .token()
            .ok_or_else(|| Error::format(path, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::format(path, format!("bad {what} '{tok}'")))
    }
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let binary = bytes.starts_with(b"P5");
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let w = cur.number(path, "width")?;
    let h = cur.number(path, "height")?;
    let maxval = cur.number(path, "maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {maxval}, only 255 is accepted"),
        ));
    }
    let n = w * h;
    if binary {
        // exactly one whitespace byte separates maxval from the raster
        let start = cur.pos + 1;
        let raster = bytes
            .get(start..start + n)
            .ok_or_else(|| Error::format(path, format!("truncated raster, expected {n} bytes")))?;
        Ok((w, h, raster.to_vec()))
    } else {
        let mut pixels = Vec::with_capacity(n);
        for _ in 0..n {
            let v = cur.number(path, "pixel value")?;
            if v > 255 {
                return Err(Error::format(path, format!("pixel value {v} exceeds maxval")));
            }
            pixels.push(v as u8);
        }
        Ok((w, h, pixels))
    }
}

fn write_p5(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("write to Vec");
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a binary PGM; intensities are rounded to the nearest integer.
pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = img.data.iter().map(|&v| v.round() as u8).collect();
    write_p5(path, img.width, img.height, &pixels)?;
    if let Some(s) = img.spacing_mm {
        write_meta(path, &[("spacing_mm", s.to_string())])?;
    }
    Ok(())
}

/// Writes a mask as a binary PGM with values {0, 255}.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let pixels: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_p5(path, mask.width, mask.height, &pixels)
}
