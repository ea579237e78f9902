use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;

use super::manifest::{write_manifest, ManifestRow};
use crate::error::{Error, Result};
use crate::imaging::{save_mask, Point2D};
use crate::phantom::{generate, suite_specs, write_phantom};
use crate::segmenter::{segment, SeedInput, SegmentParams};

/// Simulated human interaction times (log-normal, seconds). These are
/// placeholders for studies without recorded timings.
const MANUAL_MEDIAN_S: f64 = 17.0;
const SEMI_MEDIAN_S: f64 = 9.5;
const TIME_LOG_SD: f64 = 0.45;
const SATISFIED_RATE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub count: usize,
    pub seed: u64,
    pub params: SegmentParams,
    /// Also segment from a jittered seed as a second examiner.
    pub second_examiner: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            count: 105,
            seed: 1,
            params: SegmentParams::default(),
            second_examiner: true,
        }
    }
}

/// Generates a phantom suite in `dir`, segments every phantom from its
/// center and writes `manifest.csv` pairing truth masks (as the manual
/// outline) with the semiautomatic masks. Returns the manifest path.
pub fn build_phantom_study(dir: &Path, opts: &StudyOptions) -> Result<PathBuf> {
    if opts.count == 0 {
        return Err(Error::InvalidParameter("phantom count must be ≥ 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let specs = suite_specs(opts.count, opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let manual_t =
        LogNormal::new(MANUAL_MEDIAN_S.ln(), TIME_LOG_SD).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let semi_t = LogNormal::new(SEMI_MEDIAN_S.ln(), TIME_LOG_SD).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    // per-lesion draws happen up front so the parallel part is order-free
    let draws: Vec<(f64, f64, bool, Point2D)> = specs
        .iter()
        .map(|s| {
            let r = 0.2 * s.semi_axes.0.min(s.semi_axes.1) * rng.random::<f64>().sqrt();
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            (
                manual_t.sample(&mut rng),
                semi_t.sample(&mut rng),
                rng.random_bool(SATISFIED_RATE),
                Point2D::new(s.center.x + r * t.cos(), s.center.y + r * t.sin()),
            )
        })
        .collect();

    let rows = specs
        .par_iter()
        .zip(draws.par_iter())
        .enumerate()
        .map(|(k, (spec, &(tm, ts, satisfied, jittered)))| {
            let id = format!("lesion_{k:03}");
            let (img, truth) = generate(spec)?;
            let files = write_phantom(dir, &id, spec, &img, &truth)?;
            let semi = segment(&img, &SeedInput::new(spec.center), &opts.params)?;
            let semi_path = dir.join(format!("{id}_semi.pgm"));
            save_mask(&semi.mask, &semi_path)?;
            let second = if opts.second_examiner {
                let res = segment(&img, &SeedInput::new(jittered), &opts.params)?;
                let path = dir.join(format!("{id}_semi2.pgm"));
                save_mask(&res.mask, &path)?;
                Some((files.truth.clone(), path))
            } else {
                None
            };
            Ok(ManifestRow {
                lesion_id: id,
                manual_mask: files.truth,
                semi_mask: semi_path,
                time_manual: tm,
                time_semi: ts,
                satisfied,
                second,
                spacing_mm: spec.spacing_mm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}
