//! Segmentation comparison metrics and the statistics used in study reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// Total sample size up to which the rank-sum p-value is computed exactly.
pub const EXACT_RANK_SUM_LIMIT: usize = 12;

/// One lesion's manual vs semiautomatic comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub lesion_id: String,
    pub dsc: f64,
    pub hd: f64,
    pub diam_a_diff: f64,
    pub diam_b_diff: f64,
    pub time_manual: f64,
    pub time_semi: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn check_shapes(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )))
    }
}

/// Dice similarity `2|A∩B| / (|A| + |B|)`; two empty masks agree perfectly.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_shapes(a, b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Foreground pixels touching a background 4-neighbour or the image edge.
pub fn boundary_pixels(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width(), mask.height());
    mask.foreground()
        .filter(|&(x, y)| {
            x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1)
        })
        .collect()
}

/// 1-D lower envelope of parabolas, squared distances in place.
fn edt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if f[v[k]] == f64::INFINITY {
            v[k] = q;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if f[v[0]] == f64::INFINITY {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest feature.
fn squared_distance_map(width: usize, height: usize, features: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; width * height];
    for &(x, y) in features {
        grid[y * width + x] = 0.0;
    }
    let len = width.max(height);
    let mut f = vec![0.0; len];
    let mut out = vec![0.0; len];
    let mut v = vec![0usize; len];
    let mut z = vec![0.0; len + 1];
    for x in 0..width {
        for y in 0..height {
            f[y] = grid[y * width + x];
        }
        edt_1d(&mut f[..height], &mut v, &mut z, &mut out[..height]);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        f[..width].copy_from_slice(&grid[y * width..(y + 1) * width]);
        edt_1d(&mut f[..width], &mut v, &mut z, &mut out[..width]);
        grid[y * width..(y + 1) * width].copy_from_slice(&out[..width]);
    }
    grid
}

/// Symmetric Hausdorff distance between the boundary pixel sets, in pixels.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_shapes(a, b)?;
    let ba = boundary_pixels(a);
    let bb = boundary_pixels(b);
    if ba.is_empty() || bb.is_empty() {
        return Err(Error::UndefinedDistance("Hausdorff distance of an empty mask".into()));
    }
    // Distances are exact inside any window holding every boundary pixel.
    let all = ba.iter().chain(&bb);
    let x0 = all.clone().map(|p| p.0).min().unwrap_or(0);
    let y0 = all.clone().map(|p| p.1).min().unwrap_or(0);
    let w = all.clone().map(|p| p.0).max().unwrap_or(0) - x0 + 1;
    let h = all.map(|p| p.1).max().unwrap_or(0) - y0 + 1;
    let shift =
        |pts: &[(usize, usize)]| -> Vec<(usize, usize)> { pts.iter().map(|&(x, y)| (x - x0, y - y0)).collect() };
    let (ba, bb) = (shift(&ba), shift(&bb));
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        let dist = squared_distance_map(w, h, to);
        from.iter().map(|&(x, y)| dist[y * w + x]).fold(0.0, f64::max)
    };
    Ok(directed(&ba, &bb).max(directed(&bb, &ba)).sqrt())
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (left, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = left.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

pub fn median(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("median of no samples".into()));
    }
    Ok(median_in_place(&mut samples.to_vec()))
}

/// Five-number summary plus a percentile-bootstrap 95% interval for the
/// median (ChaCha8 stream seeded with `rng_seed`). The interval is widened
/// to contain the sample median if the percentiles miss it.
pub fn summarize(samples: &[f64], rng_seed: u64) -> Result<SummaryStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("cannot summarize zero samples".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let med = quantile_sorted(&sorted, 0.5);

    let (ci_low, ci_high) = if n < 2 {
        (med, med)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut resample = vec![0.0; n];
        let mut medians: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                for slot in resample.iter_mut() {
                    *slot = sorted[rng.random_range(0..n)];
                }
                median_in_place(&mut resample)
            })
            .collect();
        medians.sort_by(f64::total_cmp);
        (
            quantile_sorted(&medians, 0.025).min(med),
            quantile_sorted(&medians, 0.975).max(med),
        )
    };
    Ok(SummaryStats {
        n,
        median: med,
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        min: sorted[0],
        max: sorted[n - 1],
        ci_low,
        ci_high,
    })
}

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    /// Mann–Whitney U of the first sample.
    pub u: f64,
    pub p: f64,
    pub exact: bool,
}

/// Number of rank arrangements giving each U value for sample sizes (m, n).
fn u_distribution(m: usize, n: usize) -> Vec<f64> {
    // counts[j][u] for the current i, built up one x-observation at a time
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = (0..=n)
        .map(|_| {
            let mut row = vec![0.0; max_u + 1];
            row[0] = 1.0;
            row
        })
        .collect();
    for _i in 1..=m {
        let mut cur = vec![vec![0.0; max_u + 1]; n + 1];
        for j in 0..=n {
            for u in 0..=max_u {
                // largest observation is an x (beats all j y's) or a y
                let from_x = if u >= j { prev[j][u - j] } else { 0.0 };
                let from_y = if j > 0 { cur[j - 1][u] } else { 0.0 };
                cur[j][u] = from_x + from_y;
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Wilcoxon rank-sum (Mann–Whitney U) test, two-sided.
pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<RankSumTest> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("rank-sum test needs two non-empty samples".into()));
    }
    let (m, n) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_x: f64 = ranks[..m].iter().sum();
    let u = rank_sum_x - (m * (m + 1)) as f64 / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut has_ties = false;
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        if group.len() > 1 {
            has_ties = true;
        }
        tie_term += t * t * t - t;
    }

    let total = m + n;
    if total <= EXACT_RANK_SUM_LIMIT && !has_ties {
        let counts = u_distribution(m, n);
        let all: f64 = counts.iter().sum();
        let k = u.round() as usize;
        let lower: f64 = counts[..=k].iter().sum::<f64>() / all;
        let upper: f64 = counts[k..].iter().sum::<f64>() / all;
        return Ok(RankSumTest {
            u,
            p: (2.0 * lower.min(upper)).min(1.0),
            exact: true,
        });
    }

    let (mf, nf, nt) = (m as f64, n as f64, total as f64);
    let mean = mf * nf / 2.0;
    let var = mf * nf / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(RankSumTest { u, p, exact: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided one-sample Student t-test of `diffs` against `mu0`.
pub fn one_sample_ttest(diffs: &[f64], mu0: f64) -> Result<TTest> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("t-test needs n ≥ 2, got {n}")));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateSample("zero sample variance".into()));
    }
    let t = (mean - mu0) / (var / nf).sqrt();
    let df = nf - 1.0;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::DegenerateSample(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater, for
/// two raters. Constant ratings return 1.
pub fn icc_absolute_agreement(ratings: &[[f64; 2]]) -> Result<f64> {
    let n = ratings.len();
    if n < 3 {
        return Err(Error::DegenerateSample(format!("ICC needs ≥ 3 subjects, got {n}")));
    }
    if ratings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite rating".into()));
    }
    let k = 2.0;
    let nf = n as f64;
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * k);
    let ss_rows: f64 = ratings.iter().map(|r| k * ((r[0] + r[1]) / k - grand).powi(2)).sum();
    let ss_cols: f64 = (0..2)
        .map(|j| {
            let mean = ratings.iter().map(|r| r[j]).sum::<f64>() / nf;
            nf * (mean - grand).powi(2)
        })
        .sum();
    let ss_total: f64 = ratings.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_err = (ss_total - ss_rows - ss_cols).max(0.0);

    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (k - 1.0);
    let ms_err = ss_err / ((nf - 1.0) * (k - 1.0));
    let denom = ms_rows + (k - 1.0) * ms_err + k / nf * (ms_cols - ms_err);
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((ms_rows - ms_err) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        for &(x, y) in on {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn dice_cases() {
        let a = BinaryMask::from_fn(10, 10, |x, _| x < 5);
        let b = BinaryMask::from_fn(10, 10, |x, _| x >= 5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let empty = BinaryMask::new(10, 10);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        // |A| = |B| = 100, overlap 50
        let a = BinaryMask::from_fn(20, 20, |x, y| x < 10 && y < 10);
        let b = BinaryMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && y < 10);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(
            dice(&a, &BinaryMask::new(3, 3)).unwrap_err().reason(),
            "dimension-mismatch"
        );
    }

    #[test]
    fn hausdorff_cases() {
        let a = mask_from(10, 10, &[(0, 0)]);
        let b = mask_from(10, 10, &[(3, 4)]);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        let disk = BinaryMask::from_fn(30, 30, |x, y| (x as f64 - 15.0).hypot(y as f64 - 15.0) < 8.0);
        assert_eq!(hausdorff(&disk, &disk).unwrap(), 0.0);
        let e = hausdorff(&a, &BinaryMask::new(10, 10)).unwrap_err();
        assert_eq!(e.reason(), "undefined-distance");
    }

    #[test]
    fn boundary_of_filled_square() {
        let m = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y));
        assert_eq!(boundary_pixels(&m).len(), 12);
        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        assert_eq!(boundary_pixels(&full).len(), 12);
    }

    #[test]
    fn quartiles_and_singleton() {
        let s = summarize(&[5.0], 1).unwrap();
        assert_eq!((s.median, s.min, s.max, s.ci_low, s.ci_high), (5.0, 5.0, 5.0, 5.0, 5.0));
        let s = summarize(&[3.0, 1.0, 5.0, 2.0, 4.0], 1).unwrap();
        assert_eq!((s.median, s.q1, s.q3, s.min, s.max), (3.0, 2.0, 4.0, 1.0, 5.0));
        assert!(s.ci_low <= s.median && s.median <= s.ci_high);
        let s = summarize(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (2.5, 1.75, 3.25));
        assert_eq!(summarize(&[], 1).unwrap_err().reason(), "empty-input");
    }

    #[test]
    fn bootstrap_is_seeded() {
        let data: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 + (i as f64).sqrt()).collect();
        assert_eq!(summarize(&data, 9).unwrap(), summarize(&data, 9).unwrap());
        assert_ne!(summarize(&data, 9).unwrap(), summarize(&data, 10).unwrap());
    }

    #[test]
    fn midranks_with_ties() {
        assert_eq!(midranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(midranks(&[3.0, 3.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn rank_sum_examples() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p - 0.1).abs() < 1e-15);
        let same = [4.0, 1.0, 7.0, 3.0];
        let r = wilcoxon_rank_sum(&same, &same).unwrap();
        assert!(!r.exact);
        assert!(r.p > 0.99);
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
    }

    #[test]
    fn u_distribution_totals_binomial() {
        let counts = u_distribution(4, 5);
        assert_eq!(counts.iter().sum::<f64>(), 126.0);
        assert_eq!(counts.len(), 21);
        // symmetric about m·n/2
        for u in 0..=20 {
            assert_eq!(counts[u], counts[20 - u]);
        }
    }

    #[test]
    fn ttest_examples() {
        let r = one_sample_ttest(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // df = 2 closed form: p = 1 − t / sqrt(t² + 2)
        let expect = 1.0 - r.t / (r.t * r.t + 2.0).sqrt();
        assert!((r.p - expect).abs() < 1e-10);
        assert!((r.p - 0.0742).abs() < 1e-4);

        let r = one_sample_ttest(&[1.0, 3.0, 2.0, 2.0], 2.0).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);

        assert_eq!(
            one_sample_ttest(&[0.0, 0.0], 0.0).unwrap_err().reason(),
            "degenerate-sample"
        );
        assert!(one_sample_ttest(&[1.0], 0.0).is_err());
    }

    #[test]
    fn icc_cases() {
        let same: Vec<[f64; 2]> = [0.7, 0.8, 0.9, 0.85, 0.6].iter().map(|&v| [v, v]).collect();
        assert!((icc_absolute_agreement(&same).unwrap() - 1.0).abs() < 1e-12);

        let offset: Vec<[f64; 2]> = [0.80, 0.82, 0.81, 0.83, 0.80].iter().map(|&v| [v, v + 0.1]).collect();
        assert!(icc_absolute_agreement(&offset).unwrap() < 0.2);

        let flat = vec![[0.5, 0.5]; 4];
        assert_eq!(icc_absolute_agreement(&flat).unwrap(), 1.0);
        assert!(icc_absolute_agreement(&[[1.0, 2.0], [2.0, 3.0]]).is_err());
    }

    #[test]
    fn icc_offset_invariance() {
        let base = [[0.8, 0.7], [0.6, 0.65], [0.9, 0.85], [0.75, 0.8], [0.5, 0.58]];
        let icc = icc_absolute_agreement(&base).unwrap();
        let all: Vec<[f64; 2]> = base.iter().map(|r| [r[0] + 3.0, r[1] + 3.0]).collect();
        assert!((icc_absolute_agreement(&all).unwrap() - icc).abs() < 1e-9);
        let one: Vec<[f64; 2]> = base.iter().map(|r| [r[0], r[1] + 0.2]).collect();
        assert!((icc_absolute_agreement(&one).unwrap() - icc).abs() > 1e-3);
    }
}
