//! Synthetic hypoechoic lesion phantoms with exact ground truth.
//!
//! A phantom is a rotated ellipse of mean gray `fg_mean` on a `bg_mean`
//! background, optionally wrapped in an elliptical halo ring, with
//! multiplicative Gaussian speckle.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{save_mask, save_pgm, write_meta, BinaryMask, GrayImage, Point2D};

/// Pixel spacing assumed for generated suites. Not a measured value.
pub const ASSUMED_SPACING_MM: f64 = 0.5;
pub const SUITE_SIZE: usize = 512;
pub const SUITE_MIN_DIAMETER: f64 = 12.0;
pub const SUITE_MAX_DIAMETER: f64 = 230.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub center: Point2D,
    /// Semi-axes (along the rotated x axis, along the rotated y axis) in pixels.
    pub semi_axes: (f64, f64),
    pub rotation: f64,
    pub fg_mean: f64,
    pub bg_mean: f64,
    pub halo_width: f64,
    pub halo_mean: f64,
    pub speckle_sigma: f64,
    pub rng_seed: u64,
    /// Count the halo ring as lesion in the truth mask.
    #[serde(default)]
    pub halo_in_truth: bool,
    #[serde(default)]
    pub spacing_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Lesion,
    Halo,
    Background,
}

impl PhantomSpec {
    /// Noise-free, halo-free ellipse centered in a `width × height` image.
    pub fn ellipse(width: usize, height: usize, a: f64, b: f64, fg_mean: f64, bg_mean: f64) -> Self {
        Self {
            width,
            height,
            center: Point2D::new((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0),
            semi_axes: (a, b),
            rotation: 0.0,
            fg_mean,
            bg_mean,
            halo_width: 0.0,
            halo_mean: bg_mean,
            speckle_sigma: 0.0,
            rng_seed: 0,
            halo_in_truth: false,
            spacing_mm: None,
        }
    }

    /// Half extents of the axis-aligned box around the outer (halo) ellipse.
    pub fn half_extent(&self) -> (f64, f64) {
        let (a, b) = self.outer_axes();
        let (s, c) = self.rotation.sin_cos();
        ((a * c).hypot(b * s), (a * s).hypot(b * c))
    }

    fn outer_axes(&self) -> (f64, f64) {
        (self.semi_axes.0 + self.halo_width, self.semi_axes.1 + self.halo_width)
    }

    pub fn validate(&self) -> Result<()> {
        let gray = |v: f64| v.is_finite() && (0.0..=255.0).contains(&v);
        let (a, b) = self.semi_axes;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("phantom image must be non-empty".into()));
        }
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "semi-axes must be positive, got ({a}, {b})"
            )));
        }
        if !(gray(self.fg_mean) && gray(self.bg_mean) && gray(self.halo_mean)) {
            return Err(Error::InvalidParameter("region means must lie in [0, 255]".into()));
        }
        if !(self.halo_width >= 0.0 && self.halo_width.is_finite()) {
            return Err(Error::InvalidParameter("halo_width must be ≥ 0".into()));
        }
        if !(self.speckle_sigma >= 0.0 && self.speckle_sigma.is_finite()) {
            return Err(Error::InvalidParameter("speckle_sigma must be ≥ 0".into()));
        }
        if !(self.center.is_finite() && self.rotation.is_finite()) {
            return Err(Error::InvalidParameter("non-finite center or rotation".into()));
        }
        let (ex, ey) = self.half_extent();
        let (cx, cy) = (self.center.x, self.center.y);
        if cx - ex < 0.0 || cy - ey < 0.0 || cx + ex > (self.width - 1) as f64 || cy + ey > (self.height - 1) as f64 {
            return Err(Error::InvalidParameter(format!(
                "lesion at ({cx}, {cy}) with extent ({ex:.1}, {ey:.1}) exceeds the {}x{} image",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.center.x, y - self.center.y);
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Whether `(x, y)` lies inside the ellipse with semi-axes `axes`.
    fn inside(&self, x: f64, y: f64, axes: (f64, f64)) -> bool {
        let (u, v) = self.local(x, y);
        (u / axes.0).powi(2) + (v / axes.1).powi(2) <= 1.0
    }

    fn region(&self, x: f64, y: f64) -> Region {
        if self.inside(x, y, self.semi_axes) {
            Region::Lesion
        } else if self.halo_width > 0.0 && self.inside(x, y, self.outer_axes()) {
            Region::Halo
        } else {
            Region::Background
        }
    }

    /// Lesion membership under this spec's ground-truth convention.
    pub fn in_truth(&self, x: f64, y: f64) -> bool {
        match self.region(x, y) {
            Region::Lesion => true,
            Region::Halo => self.halo_in_truth,
            Region::Background => false,
        }
    }

    pub fn major_diameter(&self) -> f64 {
        2.0 * self.semi_axes.0.max(self.semi_axes.1)
    }

    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        let mut kv = vec![
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("center_x", self.center.x.to_string()),
            ("center_y", self.center.y.to_string()),
            ("semi_axis_a", self.semi_axes.0.to_string()),
            ("semi_axis_b", self.semi_axes.1.to_string()),
            ("rotation", self.rotation.to_string()),
            ("fg_mean", self.fg_mean.to_string()),
            ("bg_mean", self.bg_mean.to_string()),
            ("halo_width", self.halo_width.to_string()),
            ("halo_mean", self.halo_mean.to_string()),
            ("speckle_sigma", self.speckle_sigma.to_string()),
            ("rng_seed", self.rng_seed.to_string()),
            ("halo_in_truth", self.halo_in_truth.to_string()),
        ];
        if let Some(s) = self.spacing_mm {
            kv.push(("spacing_mm", s.to_string()));
            kv.push(("spacing_assumed", "true".into()));
        }
        kv
    }
}

/// Renders the phantom image and its ground-truth mask. Gray values are
/// rounded to integers so the image survives a PGM round trip unchanged.
pub fn generate(spec: &PhantomSpec) -> Result<(GrayImage, BinaryMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let img = GrayImage::from_fn(spec.width, spec.height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let mean = match spec.region(x, y) {
            Region::Lesion => spec.fg_mean,
            Region::Halo => spec.halo_mean,
            Region::Background => spec.bg_mean,
        };
        let factor = if spec.speckle_sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            1.0 + spec.speckle_sigma * z
        } else {
            1.0
        };
        (mean * factor).clamp(0.0, 255.0).round()
    })?
    .with_spacing(spec.spacing_mm)?;
    let mask = BinaryMask::from_fn(spec.width, spec.height, |x, y| spec.in_truth(x as f64, y as f64));
    Ok((img, mask))
}

/// Random specs on 512×512 images. Major diameters are stratified over
/// 12–230 px, so any suite of two or more covers the whole range.
pub fn suite_specs(count: usize, rng_seed: u64) -> Vec<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let size = SUITE_SIZE;
    (0..count)
        .map(|k| {
            let frac = if count == 1 {
                rng.random::<f64>()
            } else {
                (k as f64 + rng.random_range(0.0..1.0)) / count as f64
            };
            let frac = if count > 1 && k == 0 {
                0.0
            } else if count > 1 && k + 1 == count {
                1.0
            } else {
                frac
            };
            let major = SUITE_MIN_DIAMETER + frac * (SUITE_MAX_DIAMETER - SUITE_MIN_DIAMETER);
            let a = major / 2.0;
            let b = a * rng.random_range(0.5..=1.0);
            let fg_mean: f64 = rng.random_range(10.0..70.0);
            let bg_mean = (fg_mean + rng.random_range(60.0..150.0)).min(250.0);
            let with_halo = rng.random_bool(0.3);
            let halo_width = if with_halo { rng.random_range(2.0..6.0) } else { 0.0 };
            let mut spec = PhantomSpec {
                width: size,
                height: size,
                center: Point2D::new(0.0, 0.0),
                semi_axes: (a, b),
                rotation: rng.random_range(0.0..PI),
                fg_mean,
                bg_mean,
                halo_width,
                halo_mean: (fg_mean + bg_mean) / 2.0,
                speckle_sigma: rng.random_range(0.0..0.15),
                rng_seed: rng.random(),
                halo_in_truth: false,
                spacing_mm: Some(ASSUMED_SPACING_MM),
            };
            // leave the ray template room beyond the lesion edge
            let margin = (1.25 * a + 5.0).max(25.0);
            let hi = (size - 1) as f64;
            let cx = rng.random_range(margin..(hi - margin));
            let cy = rng.random_range(margin..(hi - margin));
            spec.center = Point2D::new(cx, cy);
            spec
        })
        .collect()
}

pub fn generate_suite(count: usize, rng_seed: u64) -> Result<Vec<(PhantomSpec, GrayImage, BinaryMask)>> {
    suite_specs(count, rng_seed)
        .into_iter()
        .map(|spec| {
            let (img, mask) = generate(&spec)?;
            Ok((spec, img, mask))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomFiles {
    pub image: PathBuf,
    pub truth: PathBuf,
}

/// Writes `<id>.pgm` (spec in the `.meta` sidecar) and `<id>_truth.pgm`.
pub fn write_phantom(
    dir: &Path,
    id: &str,
    spec: &PhantomSpec,
    img: &GrayImage,
    mask: &BinaryMask,
) -> Result<PhantomFiles> {
    let image = dir.join(format!("{id}.pgm"));
    let truth = dir.join(format!("{id}_truth.pgm"));
    save_pgm(img, &image)?;
    write_meta(&image, &spec.to_key_values())?;
    save_mask(mask, &truth)?;
    Ok(PhantomFiles { image, truth })
}
