//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::io::Cursor;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde_json::{json, Value};

use raycut::evaluation::{
    boundary_pixels, dice, hausdorff, icc_absolute_agreement, one_sample_ttest, summarize, wilcoxon_rank_sum,
};
use raycut::harness::{
    build_phantom_study, serve, Session, SessionConfig, SessionLog, StudyOptions, OVERLAP_COLUMNS, TIMES_COLUMNS,
};
use raycut::imaging::{load_mask, BinaryMask, GrayImage, Point2D, Polygon};
use raycut::maxflow::max_flow_min_cut;
use raycut::phantom::{generate, write_phantom, PhantomSpec};
use raycut::raygraph::{build_graph, build_template, compute_cost_profile, sample_mean_gray, Capacity, FlowNetwork};
use raycut::segmenter::compute_diameters;
use raycut::{segment, SeedInput, SegmentParams};

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- max-flow

fn random_network(rng: &mut ChaCha8Rng) -> FlowNetwork {
    let inner = rng.random_range(0..=10);
    let n = inner + 2;
    let (s, t) = (inner, inner + 1);
    let mut g = FlowNetwork::new(n, s, t).unwrap();
    let density = rng.random_range(0.1..0.7);
    for from in 0..n {
        for to in 0..n {
            if from != to && to != s && from != t && rng.random_bool(density) {
                g.add_arc(from, to, Capacity::Finite(rng.random_range(0..=10) as f64))
                    .unwrap();
            }
        }
    }
    g
}

fn brute_min_cut(g: &FlowNetwork) -> f64 {
    let inner: Vec<usize> = (0..g.node_count())
        .filter(|&v| v != g.source() && v != g.sink())
        .collect();
    let mut best = f64::INFINITY;
    let mut side = vec![false; g.node_count()];
    for mask in 0u32..(1 << inner.len()) {
        side.fill(false);
        side[g.source()] = true;
        for (k, &v) in inner.iter().enumerate() {
            side[v] = mask & (1 << k) != 0;
        }
        let cost: f64 = g
            .arcs()
            .iter()
            .filter(|a| side[a.from] && !side[a.to])
            .map(|a| a.capacity.finite().unwrap())
            .sum();
        best = best.min(cost);
    }
    best
}

fn maxflow_exactness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..500 {
        let g = random_network(&mut rng);
        let flow = max_flow_min_cut(&g).map_err(|e| e.to_string())?.flow_value;
        let oracle = brute_min_cut(&g);
        ensure(flow == oracle, || {
            format!("network {k}: flow {flow} vs enumeration {oracle}")
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("500 networks exact, {secs:.2} s"))
}

// ---------------------------------------------------------------- phantoms

fn random_spec(rng: &mut ChaCha8Rng, size: usize, max_sigma: f64) -> PhantomSpec {
    let a = rng.random_range(15.0..60.0);
    let b = a * rng.random_range(0.5..=1.0);
    let fg: f64 = rng.random_range(10.0..80.0);
    let bg = (fg + rng.random_range(40.0..150.0)).min(250.0);
    let margin = a + 25.0;
    let hi = size as f64 - 1.0 - margin;
    PhantomSpec {
        center: Point2D::new(rng.random_range(margin..hi), rng.random_range(margin..hi)),
        rotation: rng.random_range(0.0..PI),
        speckle_sigma: rng.random_range(0.0..=max_sigma),
        rng_seed: rng.random(),
        ..PhantomSpec::ellipse(size, size, a, b, fg, bg)
    }
}

fn star_shape_invariant() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let specs: Vec<(PhantomSpec, usize)> = (0..200)
        .map(|_| (random_spec(&mut rng, 256, 0.2), rng.random_range(0..=3)))
        .collect();
    let failures: Vec<String> = specs
        .par_iter()
        .enumerate()
        .filter_map(|(k, (spec, delta))| {
            let check = || -> std::result::Result<(), String> {
                let (img, _) = generate(spec).map_err(|e| e.to_string())?;
                let params = SegmentParams {
                    delta_r: *delta,
                    max_radius: 100.0,
                    ..SegmentParams::default()
                };
                let tpl = build_template(spec.center, &img, params.rays, params.nodes_per_ray, params.max_radius)
                    .map_err(|e| e.to_string())?;
                let g0 = sample_mean_gray(&img, spec.center, params.rho).map_err(|e| e.to_string())?;
                let profile = compute_cost_profile(&img, &tpl, g0).map_err(|e| e.to_string())?;
                let cut = max_flow_min_cut(&build_graph(&profile, *delta)).map_err(|e| e.to_string())?;
                let layout = tpl.layout();
                let mut cuts = Vec::new();
                for r in 0..layout.rays {
                    let side: Vec<bool> = (0..layout.nodes_per_ray)
                        .map(|i| cut.in_source_set[layout.node(r, i)])
                        .collect();
                    let transitions = side.windows(2).filter(|w| w[0] != w[1]).count();
                    let single = side.last() == Some(&false) && (transitions == 0 || (side[0] && transitions == 1));
                    ensure(single, || format!("ray {r} cut pattern {side:?}"))?;
                    cuts.push(side.iter().take_while(|&&b| b).count() as i32 - 1);
                }
                for r in 0..layout.rays {
                    let d = (cuts[r] - cuts[(r + 1) % layout.rays]).unsigned_abs() as usize;
                    ensure(d <= *delta, || format!("rays {r},{} differ by {d} > {delta}", r + 1))?;
                }
                let res = segment(&img, &SeedInput::new(spec.center), &params).map_err(|e| e.to_string())?;
                ensure(res.cut_index == cuts, || "segment() disagrees with the raw cut".into())
            };
            check().err().map(|e| format!("phantom {k}: {e}"))
        })
        .collect();
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok("200/200 phantoms, one cut per ray within the delta band".into())
}

fn phantom_accuracy() -> Check {
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for (label, sigma, halo, target) in [
        ("noise-free", 0.0, 0.0, 0.95),
        ("speckle 0.10", 0.10, 0.0, 0.90),
        ("speckle 0.10 + halo", 0.10, 3.0, 0.85),
    ] {
        let mut min_dsc = f64::INFINITY;
        for k in 0..10u64 {
            let spec = PhantomSpec {
                speckle_sigma: sigma,
                halo_width: halo,
                halo_mean: 70.0,
                rng_seed: 100 + k,
                rotation: k as f64 * PI / 10.0,
                ..PhantomSpec::ellipse(512, 512, 40.0, 20.0, 20.0, 120.0)
            };
            let (img, truth) = generate(&spec).map_err(|e| e.to_string())?;
            let res =
                segment(&img, &SeedInput::new(spec.center), &SegmentParams::default()).map_err(|e| e.to_string())?;
            min_dsc = min_dsc.min(dice(&res.mask, &truth).map_err(|e| e.to_string())?);
        }
        lines.push(format!("{label} min DSC {min_dsc:.4} (≥ {target})"));
        if min_dsc < target {
            failed.push(label);
        }
    }
    ensure(failed.is_empty(), || {
        format!("{} | failed: {failed:?}", lines.join(", "))
    })?;
    Ok(lines.join(", "))
}

fn helper_contract() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = SegmentParams::default();
    for k in 0..50 {
        let spec = random_spec(&mut rng, 256, 0.15);
        let (img, _) = generate(&spec).map_err(|e| e.to_string())?;
        let tpl = build_template(spec.center, &img, params.rays, params.nodes_per_ray, params.max_radius)
            .map_err(|e| e.to_string())?;
        let r = rng.random_range(0..params.rays);
        let i = rng.random_range(0..params.nodes_per_ray - 1);
        let helper = tpl.node(r, i);
        let res = segment(&img, &SeedInput::with_helpers(spec.center, vec![helper]), &params)
            .map_err(|e| format!("case {k}: {e}"))?;
        ensure(res.cut_index[r] == i as i32, || {
            format!("case {k}: helper at node ({r},{i}) gave cut {}", res.cut_index[r])
        })?;
        for q in 0..params.rays {
            let d = (res.cut_index[q] - res.cut_index[(q + 1) % params.rays]).unsigned_abs() as usize;
            ensure(d <= params.delta_r, || {
                format!("case {k}: rays {q}/{} differ by {d}", q + 1)
            })?;
        }
    }
    Ok("50/50 helpers pin their node, delta band kept".into())
}

// ---------------------------------------------------------------- geometry

fn diameter_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = rng.random_range(10.0..120.0);
        let b = a * rng.random_range(0.2..=1.0);
        let rot = rng.random_range(0.0..PI);
        let (s, c) = rot.sin_cos();
        let (cx, cy) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let verts = (0..64)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 64.0;
                let (u, v) = (a * t.cos(), b * t.sin());
                Point2D::new(cx + u * c - v * s, cy + u * s + v * c)
            })
            .collect();
        let d = compute_diameters(&Polygon::new(verts).map_err(|e| e.to_string())?);
        let ea = (d.a - 2.0 * a).abs() / (2.0 * a);
        let eb = (d.b - 2.0 * b).abs() / (2.0 * b);
        worst = (worst.0.max(ea), worst.1.max(eb));
        ensure(ea <= 0.01 && eb <= 0.02, || {
            format!("axes ({a:.2},{b:.2}): a err {ea:.4}, b err {eb:.4}")
        })?;
    }
    for k in 0..200 {
        let n = rng.random_range(3..40);
        let verts: Vec<Point2D> = (0..n)
            .map(|_| Point2D::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)))
            .collect();
        let Ok(poly) = Polygon::new(verts.clone()) else {
            continue;
        };
        let mut brute = 0.0f64;
        for p in &verts {
            for q in &verts {
                brute = brute.max(p.distance(q));
            }
        }
        let got = compute_diameters(&poly).a;
        ensure(got == brute, || format!("polygon {k}: a {got} vs brute force {brute}"))?;
    }
    Ok(format!(
        "64-gons: max rel err a {:.5}, b {:.5}; 200 random polygons match brute force",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------- metrics

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    // blobs of random rectangles and disks, occasionally sparse noise
    let mut m = BinaryMask::new(w, h);
    if rng.random_bool(0.2) {
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, rng.random_bool(0.1));
            }
        }
    }
    for _ in 0..rng.random_range(1..4) {
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let r = rng.random_range(1.0..w as f64 / 3.0);
        for y in 0..h {
            for x in 0..w {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    m.set(x, y, true);
                }
            }
        }
    }
    if m.foreground().next().is_none() {
        m.set(0, 0, true);
    }
    m
}

fn brute_dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut i, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.get(x, y), b.get(x, y));
            i += (p && q) as usize;
            sa += p as usize;
            sb += q as usize;
        }
    }
    2.0 * i as f64 / (sa + sb) as f64
}

fn brute_boundary(m: &BinaryMask) -> Vec<(f64, f64)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let edge = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if on(x, y) && (edge || !on(x - 1, y) || !on(x + 1, y) || !on(x, y - 1) || !on(x, y + 1)) {
                out.push((x as f64, y as f64));
            }
        }
    }
    out
}

fn brute_hausdorff(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (pa, pb) = (brute_boundary(a), brute_boundary(b));
    let directed = |p: &[(f64, f64)], q: &[(f64, f64)]| {
        p.iter()
            .map(|u| {
                q.iter()
                    .map(|v| (u.0 - v.0).hypot(u.1 - v.1))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

/// Two-sided p by enumerating every assignment of ranks to the first sample.
fn permutation_p(x: &[f64], y: &[f64]) -> f64 {
    let mut pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let rank = |v: f64| pooled.iter().position(|&p| p == v).unwrap() as f64 + 1.0;
    let m = x.len();
    let n_all = pooled.len();
    let u_of = |ranks_sum: f64| ranks_sum - (m * (m + 1)) as f64 / 2.0;
    let observed = u_of(x.iter().map(|&v| rank(v)).sum());
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << n_all) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let s: f64 = (0..n_all)
            .filter(|k| mask & (1 << k) != 0)
            .map(|k| k as f64 + 1.0)
            .sum();
        let u = u_of(s);
        total += 1;
        le += (u <= observed) as u64;
        ge += (u >= observed) as u64;
    }
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

/// Two-sided p of Student's t for integer df via the classical finite series.
fn t_two_sided_p(t: f64, df: u32) -> f64 {
    let theta = (t.abs() / (df as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    let inside = if df.is_multiple_of(2) {
        let (mut term, mut sum) = (1.0, 1.0);
        for j in 1..df / 2 {
            term *= (2 * j - 1) as f64 / (2 * j) as f64 * c2;
            sum += term;
        }
        s * sum
    } else if df == 1 {
        2.0 * theta / PI
    } else {
        let (mut term, mut sum) = (1.0, 1.0);
        for j in 1..=(df - 3) / 2 {
            term *= (2 * j) as f64 / (2 * j + 1) as f64 * c2;
            sum += term;
        }
        2.0 / PI * (theta + s * c * sum)
    };
    1.0 - inside
}

fn anova_icc(r: &[[f64; 2]]) -> f64 {
    let n = r.len() as f64;
    let total: f64 = r.iter().flatten().sum();
    let corr = total * total / (2.0 * n);
    let sum_sq: f64 = r.iter().flatten().map(|v| v * v).sum();
    let ss_t = sum_sq - corr;
    let ss_r = r.iter().map(|row| (row[0] + row[1]).powi(2)).sum::<f64>() / 2.0 - corr;
    let c0: f64 = r.iter().map(|row| row[0]).sum();
    let c1: f64 = r.iter().map(|row| row[1]).sum();
    let ss_c = (c0 * c0 + c1 * c1) / n - corr;
    let ss_e = ss_t - ss_r - ss_c;
    let (ms_r, ms_c, ms_e) = (ss_r / (n - 1.0), ss_c, ss_e / (n - 1.0));
    (ms_r - ms_e) / (ms_r + ms_e + 2.0 / n * (ms_c - ms_e))
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hd_err = 0.0f64;
    for k in 0..100 {
        let (w, h) = (rng.random_range(5..40), rng.random_range(5..40));
        let a = random_mask(&mut rng, w, h);
        let b = random_mask(&mut rng, w, h);
        let d = dice(&a, &b).map_err(|e| e.to_string())?;
        ensure(d == brute_dice(&a, &b), || {
            format!("pair {k}: dice {d} vs {}", brute_dice(&a, &b))
        })?;
        let hd = hausdorff(&a, &b).map_err(|e| e.to_string())?;
        let oracle = brute_hausdorff(&a, &b);
        hd_err = hd_err.max((hd - oracle).abs());
        ensure((hd - oracle).abs() <= 1e-9, || {
            format!("pair {k}: hausdorff {hd} vs {oracle}")
        })?;
        ensure(boundary_pixels(&a).len() == brute_boundary(&a).len(), || {
            "boundary size".into()
        })?;
    }

    let mut wil_err = 0.0f64;
    for k in 0..200 {
        let m = rng.random_range(1..=6);
        let n = rng.random_range(1..=(12 - m));
        let mut vals: Vec<f64> = Vec::new();
        while vals.len() < m + n {
            let v = (rng.random_range(0.0..100.0f64) * 1000.0).round() / 1000.0;
            if !vals.contains(&v) {
                vals.push(v);
            }
        }
        let (x, y) = vals.split_at(m);
        let got = wilcoxon_rank_sum(x, y).map_err(|e| e.to_string())?;
        let oracle = permutation_p(x, y);
        wil_err = wil_err.max((got.p - oracle).abs());
        ensure(got.exact && (got.p - oracle).abs() <= 1e-12, || {
            format!("case {k}: p {} vs enumeration {oracle}", got.p)
        })?;
    }

    let mut t_err = 0.0f64;
    for k in 0..200 {
        let n = rng.random_range(2..30);
        let shift = rng.random_range(-2.0..2.0);
        let diffs: Vec<f64> = (0..n).map(|_| shift + rng.random_range(-3.0..3.0)).collect();
        let got = one_sample_ttest(&diffs, 0.0).map_err(|e| e.to_string())?;
        let oracle = t_two_sided_p(got.t, n as u32 - 1);
        t_err = t_err.max((got.p - oracle).abs());
        ensure((got.p - oracle).abs() <= 1e-8, || {
            format!("case {k} (n={n}): p {} vs series {oracle}", got.p)
        })?;
    }

    let mut icc_err = 0.0f64;
    for k in 0..100 {
        let rows: Vec<[f64; 2]> = (0..10)
            .map(|_| {
                let base = rng.random_range(0.5..1.0);
                [base + rng.random_range(-0.1..0.1), base + rng.random_range(-0.1..0.1)]
            })
            .collect();
        let got = icc_absolute_agreement(&rows).map_err(|e| e.to_string())?;
        let oracle = anova_icc(&rows);
        icc_err = icc_err.max((got - oracle).abs());
        ensure((got - oracle).abs() <= 1e-9, || {
            format!("matrix {k}: icc {got} vs anova {oracle}")
        })?;
    }

    let exp = Exp::new(1.0).unwrap();
    let true_median = 2f64.ln();
    let covered: usize = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let mut r = ChaCha8Rng::seed_from_u64(10_000 + rep);
            let sample: Vec<f64> = (0..500).map(|_| exp.sample(&mut r)).collect();
            let s = summarize(&sample, rep).unwrap();
            (s.ci_low <= true_median && true_median <= s.ci_high) as usize
        })
        .sum();
    let coverage = covered as f64 / 200.0;
    ensure(coverage >= 0.93, || format!("bootstrap coverage {coverage:.3}"))?;
    Ok(format!(
        "DSC exact, HD err {hd_err:.1e}, Wilcoxon err {wil_err:.1e}, t err {t_err:.1e}, ICC err {icc_err:.1e}, coverage {coverage:.3}"
    ))
}

// ---------------------------------------------------------------- invariance / latency

fn contrast_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = SegmentParams::default();
    for k in 0..20 {
        let spec = random_spec(&mut rng, 256, if k % 4 == 0 { 0.0 } else { 0.15 });
        let (img, _) = generate(&spec).map_err(|e| e.to_string())?;
        let alpha = rng.random_range(0.3..=1.0);
        let beta = rng.random_range(0.0..=255.0 * (1.0 - alpha));
        let remapped: GrayImage = img.map(|v| alpha * v + beta).map_err(|e| e.to_string())?;
        let a = segment(&img, &SeedInput::new(spec.center), &params).map_err(|e| e.to_string())?;
        let b = segment(&remapped, &SeedInput::new(spec.center), &params).map_err(|e| e.to_string())?;
        ensure(a.cut_index == b.cut_index, || {
            format!("phantom {k}: remap {alpha:.3}·v + {beta:.2} changed the cut")
        })?;
    }
    Ok("20/20 phantoms unchanged under positive affine remaps".into())
}

fn latency() -> Check {
    let spec = PhantomSpec {
        speckle_sigma: 0.1,
        rng_seed: 3,
        ..PhantomSpec::ellipse(512, 512, 60.0, 35.0, 30.0, 130.0)
    };
    let (img, _) = generate(&spec).map_err(|e| e.to_string())?;
    let params = SegmentParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ms: Vec<f64> = (0..100)
        .map(|_| {
            let seed = Point2D::new(
                spec.center.x + rng.random_range(-10.0..10.0),
                spec.center.y + rng.random_range(-10.0..10.0),
            );
            let t = Instant::now();
            segment(&img, &SeedInput::new(seed), &params).unwrap();
            t.elapsed().as_secs_f64() * 1000.0
        })
        .collect();
    ms.sort_by(f64::total_cmp);
    let (median, p99) = ((ms[49] + ms[50]) / 2.0, ms[98]);
    ensure(median < 100.0 && p99 < 250.0, || {
        format!("median {median:.1} ms, p99 {p99:.1} ms")
    })?;
    Ok(format!("median {median:.1} ms, p99 {p99:.1} ms"))
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .next()
        .unwrap_or("")
        .to_string()
}

fn batch_throughput() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = build_phantom_study(
        dir.path(),
        &StudyOptions {
            count: 105,
            seed: 105,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let out = dir.path().join("report");
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_raycut"))
        .args([
            "evaluate",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--rng-seed",
            "3",
        ])
        .output()
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(status.status.success(), || {
        String::from_utf8_lossy(&status.stderr).into_owned()
    })?;
    ensure(secs < 5.0, || format!("evaluate took {secs:.2} s"))?;
    ensure(header(&out.join("times.csv")) == TIMES_COLUMNS.join(","), || {
        "times.csv columns".into()
    })?;
    let overlap = OVERLAP_COLUMNS.map(|c| {
        if c.contains(' ') {
            format!("\"{c}\"")
        } else {
            c.to_string()
        }
    });
    let got = header(&out.join("overlap.csv"));
    ensure(got == OVERLAP_COLUMNS.join(",") || got == overlap.join(","), || {
        format!("overlap.csv columns {got}")
    })?;
    let records = fs::read_to_string(out.join("records.csv")).map_err(|e| e.to_string())?;
    ensure(records.lines().count() == 106, || "records.csv rows".into())?;
    Ok(format!(
        "105 lesions evaluated in {secs:.2} s, Median/Q1/Q3/Min/Max and Median/95% CI/Min/Max tables"
    ))
}

// ---------------------------------------------------------------- replay

fn scripted_session(img: &Path, spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let c = spec.center;
    let mut lines = vec![json!({"type": "load_image", "path": img}).to_string()];
    lines.push(json!({"type": "set_seed", "x": c.x + 3.0, "y": c.y - 2.0}).to_string());
    for _ in 0..rng.random_range(3..12) {
        let p = (c.x + rng.random_range(-6.0..6.0), c.y + rng.random_range(-6.0..6.0));
        lines.push(json!({"type": "drag_seed", "x": p.0, "y": p.1}).to_string());
    }
    let a = spec.semi_axes.0;
    let t = rng.random_range(0.0..PI);
    let (s, co) = (spec.rotation + t).sin_cos();
    lines.push(json!({"type": "add_helper", "x": c.x + a * 0.9 * co, "y": c.y + a * 0.9 * s}).to_string());
    if rng.random_bool(0.3) {
        lines.push(json!({"type": "clear_helpers"}).to_string());
    }
    lines.push(
        json!({"type": "add_helper", "x": c.x - spec.semi_axes.1 * co, "y": c.y - spec.semi_axes.1 * s}).to_string(),
    );
    lines.push(json!({"type": "drag_seed", "x": c.x + rng.random_range(-4.0..4.0), "y": c.y}).to_string());
    lines.push(json!({"type": "finalize", "satisfied": true}).to_string());
    lines
}

fn replay_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..10 {
        let spec = random_spec(&mut rng, 512, 0.12);
        let (img, truth) = generate(&spec).map_err(|e| e.to_string())?;
        let files = write_phantom(dir.path(), &format!("s{k}"), &spec, &img, &truth).map_err(|e| e.to_string())?;
        let script = scripted_session(&files.image, &spec, &mut rng);
        let mut out = Vec::new();
        let mut session = Session::new(SessionConfig::default());
        serve(Cursor::new(script.join("\n").into_bytes()), &mut out, &mut session).map_err(|e| e.to_string())?;
        let replies: Vec<Value> = String::from_utf8_lossy(&out)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let fin = replies.last().ok_or("no replies")?;
        ensure(fin["type"] == "finalized", || format!("session {k}: {fin}"))?;
        let before_final = &replies[replies.len() - 2];
        ensure(before_final["vertices"] == fin["contour"], || {
            format!("session {k}: finalize contour")
        })?;
        let log: SessionLog = serde_json::from_value(fin["session_log"].clone()).map_err(|e| e.to_string())?;
        let log_path = dir.path().join(format!("s{k}.session.json"));
        log.write(&log_path).map_err(|e| e.to_string())?;

        let replay_dir = dir.path().join(format!("replay{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_raycut"))
            .args([
                "segment",
                "--replay",
                log_path.to_str().unwrap(),
                "--out",
                replay_dir.to_str().unwrap(),
            ])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        let csv = fs::read_to_string(replay_dir.join("contour.csv")).map_err(|e| e.to_string())?;
        let replayed: Vec<Value> = csv
            .lines()
            .skip(1)
            .map(|l| {
                let (x, y) = l.split_once(',').unwrap();
                json!([x.parse::<f64>().unwrap(), y.parse::<f64>().unwrap()])
            })
            .collect();
        ensure(json!(replayed) == fin["contour"], || {
            format!("session {k}: replayed contour differs")
        })?;
        let live_cut = &before_final["cut_index"];
        let result = fs::read_to_string(replay_dir.join("result.txt")).map_err(|e| e.to_string())?;
        let cut_line = result.lines().find(|l| l.starts_with("cut_index=")).unwrap_or("");
        let replay_cut: Vec<i64> = cut_line["cut_index=".len()..]
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        ensure(json!(replay_cut) == *live_cut, || {
            format!("session {k}: cut indices differ")
        })?;
        let a_line = result.lines().find(|l| l.starts_with("diameter_a_px=")).unwrap_or("");
        ensure(
            a_line[14..].parse::<f64>().ok() == fin["record"]["diameter_a"].as_f64(),
            || format!("session {k}: diameter a differs"),
        )?;
        // mask matches a rasterization of the live contour
        let mask = load_mask(&replay_dir.join("mask.pgm")).map_err(|e| e.to_string())?;
        let live = raycut::imaging::rasterize_polygon(
            &Polygon::new(
                fin["contour"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|p| Point2D::new(p[0].as_f64().unwrap(), p[1].as_f64().unwrap()))
                    .collect(),
            )
            .unwrap(),
            512,
            512,
        )
        .unwrap();
        ensure(mask == live, || format!("session {k}: mask differs"))?;
    }
    Ok("10/10 sessions replay bit-exactly".into())
}

fn main() {
    let checks: [Criterion; 10] = [
        ("max-flow exactness", maxflow_exactness),
        ("star-shape invariant", star_shape_invariant),
        ("phantom accuracy", phantom_accuracy),
        ("helper-seed contract", helper_contract),
        ("diameter oracle", diameter_oracle),
        ("metric oracles", metric_oracles),
        ("monotone-contrast invariance", contrast_invariance),
        ("latency", latency),
        ("batch throughput", batch_throughput),
        ("replay determinism", replay_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
