use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{load_image, save_mask, GrayImage};
use crate::segmenter::{segment, SeedInput, SegmentParams, SegmentationResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutputs {
    pub contour: PathBuf,
    pub mask: PathBuf,
    pub result: PathBuf,
}

/// Loads `image` (optionally overriding its pixel spacing) and segments it.
pub fn run_segment(
    image: &Path,
    input: &SeedInput,
    params: &SegmentParams,
    spacing_mm: Option<f64>,
) -> Result<(GrayImage, SegmentationResult)> {
    let mut img = load_image(image)?;
    if spacing_mm.is_some() {
        img = img.with_spacing(spacing_mm)?;
    }
    let result = segment(&img, input, params)?;
    Ok((img, result))
}

/// Result record as `key=value` lines. Field order is fixed and `elapsed_s`
/// is always last so callers can diff everything above it.
pub fn format_result(image: &Path, input: &SeedInput, params: &SegmentParams, res: &SegmentationResult) -> String {
    let mut s = String::new();
    let d = &res.diameters;
    let helpers: Vec<String> = input.helpers.iter().map(|h| format!("{} {}", h.x, h.y)).collect();
    let cuts: Vec<String> = res.cut_index.iter().map(|k| k.to_string()).collect();
    let dropped: Vec<String> = res.dropped_helpers.iter().map(|k| k.to_string()).collect();
    let mm = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    let _ = writeln!(s, "image={}", image.display());
    let _ = writeln!(s, "seed_x={}", input.seed.x);
    let _ = writeln!(s, "seed_y={}", input.seed.y);
    let _ = writeln!(s, "helpers={}", helpers.join(";"));
    let _ = writeln!(s, "rays={}", params.rays);
    let _ = writeln!(s, "nodes_per_ray={}", params.nodes_per_ray);
    let _ = writeln!(s, "max_radius={}", params.max_radius);
    let _ = writeln!(s, "rho={}", params.rho);
    let _ = writeln!(s, "delta_r={}", params.delta_r);
    let _ = writeln!(s, "radial_step={}", res.radial_step);
    let _ = writeln!(s, "g0={}", res.g0);
    let _ = writeln!(s, "spacing_mm={}", mm(res.spacing_mm));
    let _ = writeln!(s, "diameter_a_px={}", d.a);
    let _ = writeln!(s, "diameter_b_px={}", d.b);
    let _ = writeln!(s, "diameter_a_mm={}", mm(res.diameter_a_mm()));
    let _ = writeln!(s, "diameter_b_mm={}", mm(res.diameter_b_mm()));
    let _ = writeln!(
        s,
        "endpoints_a={} {} {} {}",
        d.endpoints_a.0.x, d.endpoints_a.0.y, d.endpoints_a.1.x, d.endpoints_a.1.y
    );
    let _ = writeln!(
        s,
        "endpoints_b={} {} {} {}",
        d.endpoints_b.0.x, d.endpoints_b.0.y, d.endpoints_b.1.x, d.endpoints_b.1.y
    );
    let _ = writeln!(s, "dropped_helpers={}", dropped.join(";"));
    let _ = writeln!(s, "cut_index={}", cuts.join(","));
    let _ = writeln!(s, "elapsed_s={}", res.elapsed);
    s
}

/// Writes `contour.csv`, `mask.pgm` and `result.txt` into `out_dir`.
pub fn write_segmentation(
    out_dir: &Path,
    image: &Path,
    input: &SeedInput,
    params: &SegmentParams,
    res: &SegmentationResult,
) -> Result<SegmentOutputs> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = SegmentOutputs {
        contour: out_dir.join("contour.csv"),
        mask: out_dir.join("mask.pgm"),
        result: out_dir.join("result.txt"),
    };
    let mut csv = String::from("x,y\n");
    for v in res.contour.vertices() {
        let _ = writeln!(csv, "{},{}", v.x, v.y);
    }
    fs::write(&out.contour, csv).map_err(|e| Error::io(&out.contour, e))?;
    save_mask(&res.mask, &out.mask)?;
    fs::write(&out.result, format_result(image, input, params, res)).map_err(|e| Error::io(&out.result, e))?;
    Ok(out)
}
