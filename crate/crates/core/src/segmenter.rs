//! Seed → contour pipeline: template, costs, network, helper constraints,
//! min-cut, contour, mask and diameters.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{rasterize_polygon, BinaryMask, GrayImage, Point2D, Polygon};
use crate::maxflow::max_flow_min_cut;
use crate::raygraph::{
    build_graph, build_template, compute_cost_profile, sample_mean_gray, Capacity, FlowNetwork, RayTemplate,
    DEFAULT_DELTA_R, DEFAULT_MAX_RADIUS, DEFAULT_NODES_PER_RAY, DEFAULT_RAYS, DEFAULT_RHO,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub rays: usize,
    pub nodes_per_ray: usize,
    pub max_radius: f64,
    pub rho: f64,
    pub delta_r: usize,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self {
            rays: DEFAULT_RAYS,
            nodes_per_ray: DEFAULT_NODES_PER_RAY,
            max_radius: DEFAULT_MAX_RADIUS,
            rho: DEFAULT_RHO,
            delta_r: DEFAULT_DELTA_R,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeedInput {
    pub seed: Point2D,
    /// Border points, oldest first.
    pub helpers: Vec<Point2D>,
}

impl SeedInput {
    pub fn new(seed: Point2D) -> Self {
        Self {
            seed,
            helpers: Vec::new(),
        }
    }

    pub fn with_helpers(seed: Point2D, helpers: Vec<Point2D>) -> Self {
        Self { seed, helpers }
    }
}

/// A helper seed pinned to a ray: the cut on `ray` falls between node
/// `index` and `index + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HelperConstraint {
    /// Position of the helper in the input list.
    pub helper: usize,
    pub ray: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diameters {
    pub a: f64,
    pub endpoints_a: (Point2D, Point2D),
    pub b: f64,
    pub endpoints_b: (Point2D, Point2D),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Last source-side node per ray; −1 when the ray's innermost node is
    /// already background.
    pub cut_index: Vec<i32>,
    pub contour: Polygon,
    pub mask: BinaryMask,
    pub diameters: Diameters,
    pub radial_step: f64,
    pub g0: f64,
    pub spacing_mm: Option<f64>,
    /// Helpers (input positions) discarded because they conflicted with a
    /// newer helper.
    pub dropped_helpers: Vec<usize>,
    /// Compute time in seconds.
    pub elapsed: f64,
}

impl SegmentationResult {
    pub fn diameter_a(&self) -> f64 {
        self.diameters.a
    }

    pub fn diameter_b(&self) -> f64 {
        self.diameters.b
    }

    pub fn diameter_a_mm(&self) -> Option<f64> {
        self.spacing_mm.map(|s| s * self.diameters.a)
    }

    pub fn diameter_b_mm(&self) -> Option<f64> {
        self.spacing_mm.map(|s| s * self.diameters.b)
    }
}

/// Ray index nearest to the direction of `p` from the template center
/// (ties toward the lower index) and node index nearest to its distance.
pub fn locate_on_template(tpl: &RayTemplate, p: Point2D) -> (usize, usize) {
    let c = tpl.center();
    let rays = tpl.rays();
    let theta = (p.y - c.y).atan2(p.x - c.x).rem_euclid(2.0 * PI);
    let pos = theta * rays as f64 / (2.0 * PI);
    let lo = pos.floor();
    let frac = pos - lo;
    let lo_ray = (lo as usize) % rays;
    let hi_ray = (lo as usize + 1) % rays;
    let ray = if frac < 0.5 {
        lo_ray
    } else if frac > 0.5 {
        hi_ray
    } else {
        lo_ray.min(hi_ray)
    };
    let dist = p.distance(&c);
    let nearest = (dist / tpl.radial_step()).round() - 1.0;
    let index = nearest.clamp(0.0, (tpl.nodes_per_ray() - 2) as f64) as usize;
    (ray, index)
}

fn ray_distance(a: usize, b: usize, rays: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(rays - d)
}

/// Maps helpers onto rays and keeps a mutually satisfiable subset, newest
/// first: a helper is dropped when it shares a ray with a newer one or breaks
/// the `delta_r` band against one.
pub fn resolve_helpers(
    tpl: &RayTemplate,
    helpers: &[Point2D],
    delta_r: usize,
) -> Result<(Vec<HelperConstraint>, Vec<usize>)> {
    let mut located = Vec::with_capacity(helpers.len());
    for (k, &h) in helpers.iter().enumerate() {
        let dist = h.distance(&tpl.center());
        if !h.is_finite() || dist > tpl.radius() + 1e-9 {
            return Err(Error::HelperOutOfRange {
                x: h.x,
                y: h.y,
                distance: dist,
                max_radius: tpl.radius(),
            });
        }
        let (ray, index) = locate_on_template(tpl, h);
        located.push(HelperConstraint { helper: k, ray, index });
    }
    let mut kept: Vec<HelperConstraint> = Vec::new();
    let mut dropped = Vec::new();
    for c in located.into_iter().rev() {
        let compatible = kept
            .iter()
            .all(|k| k.ray != c.ray && k.index.abs_diff(c.index) <= delta_r * ray_distance(k.ray, c.ray, tpl.rays()));
        if compatible {
            kept.push(c);
        } else {
            log::warn!(
                "dropping helper {} (ray {}, node {}): conflicts with a newer helper",
                c.helper,
                c.ray,
                c.index
            );
            dropped.push(c.helper);
        }
    }
    kept.reverse();
    dropped.sort_unstable();
    Ok((kept, dropped))
}

/// Adds infinite `s → (r, i)` and `(r, i + 1) → t` arcs for every resolved
/// helper. Returns the constrained network, the constraints and the helpers
/// that were dropped.
pub fn apply_helper_constraints(
    net: &FlowNetwork,
    tpl: &RayTemplate,
    helpers: &[Point2D],
    delta_r: usize,
) -> Result<(FlowNetwork, Vec<HelperConstraint>, Vec<usize>)> {
    let (constraints, dropped) = resolve_helpers(tpl, helpers, delta_r)?;
    let mut out = net.clone();
    let layout = tpl.layout();
    for c in &constraints {
        out.add_arc(out.source(), layout.node(c.ray, c.index), Capacity::Infinite)?;
        out.add_arc(layout.node(c.ray, c.index + 1), out.sink(), Capacity::Infinite)?;
    }
    Ok((out, constraints, dropped))
}

/// Contour vertex per ray at distance `(cut + 1.5) · step`, midway between the
/// last source-side node and the first sink-side one.
pub fn extract_contour(cut_index: &[i32], tpl: &RayTemplate) -> Result<Polygon> {
    if cut_index.len() != tpl.rays() {
        return Err(Error::InvalidParameter(format!(
            "{} cut indices for {} rays",
            cut_index.len(),
            tpl.rays()
        )));
    }
    let n = tpl.nodes_per_ray() as i32;
    let vertices = cut_index
        .iter()
        .enumerate()
        .map(|(r, &k)| {
            if !(-1..n - 1).contains(&k) {
                return Err(Error::InvalidParameter(format!("cut index {k} on ray {r}")));
            }
            Ok(tpl.point_at(r, (k as f64 + 1.5) * tpl.radial_step()))
        })
        .collect::<Result<Vec<_>>>()?;
    Polygon::new(vertices)
}

/// Largest pairwise distance (diameter a) and the widest extent perpendicular
/// to it (diameter b). `endpoints_b` is drawn as a chord perpendicular to a.
pub fn diameters_of_points(points: &[Point2D]) -> Diameters {
    let origin = Point2D::new(0.0, 0.0);
    let mut best = (0.0, 0usize, 0usize);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = points[i].distance(&points[j]);
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    let (a, i, j) = best;
    if points.is_empty() || a == 0.0 {
        let p = points.first().copied().unwrap_or(origin);
        return Diameters {
            a: 0.0,
            endpoints_a: (p, p),
            b: 0.0,
            endpoints_b: (p, p),
        };
    }
    let (p, q) = (points[i], points[j]);
    let u = ((q.x - p.x) / a, (q.y - p.y) / a);
    let n = (-u.1, u.0);
    let along = |v: &Point2D| v.x * u.0 + v.y * u.1;
    let across = |v: &Point2D| v.x * n.0 + v.y * n.1;
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(across(v)), hi.max(across(v)))
    });
    let t = (along(&p) + along(&q)) / 2.0;
    let at = |s: f64| Point2D::new(t * u.0 + s * n.0, t * u.1 + s * n.1);
    Diameters {
        a,
        endpoints_a: (p, q),
        b: hi - lo,
        endpoints_b: (at(lo), at(hi)),
    }
}

pub fn compute_diameters(poly: &Polygon) -> Diameters {
    diameters_of_points(poly.vertices())
}

/// Runs the full pipeline for one seed (and optional helpers).
pub fn segment(img: &GrayImage, input: &SeedInput, params: &SegmentParams) -> Result<SegmentationResult> {
    let start = Instant::now();
    let seed = input.seed;
    if !img.contains(seed) {
        return Err(Error::SeedOutOfBounds {
            x: seed.x,
            y: seed.y,
            width: img.width(),
            height: img.height(),
        });
    }
    if let Some(h) = input.helpers.iter().find(|h| !img.contains(**h)) {
        return Err(Error::OutOfBounds {
            x: h.x,
            y: h.y,
            width: img.width(),
            height: img.height(),
        });
    }

    let tpl = build_template(seed, img, params.rays, params.nodes_per_ray, params.max_radius)?;
    let g0 = sample_mean_gray(img, seed, params.rho)?;
    let profile = compute_cost_profile(img, &tpl, g0)?;
    let base = build_graph(&profile, params.delta_r);
    let (net, _, dropped_helpers) = apply_helper_constraints(&base, &tpl, &input.helpers, params.delta_r)?;
    let cut = max_flow_min_cut(&net)?;

    let layout = tpl.layout();
    let cut_index: Vec<i32> = (0..layout.rays)
        .map(|r| {
            let on_source = (0..layout.nodes_per_ray)
                .take_while(|&i| cut.in_source_set[layout.node(r, i)])
                .count();
            on_source as i32 - 1
        })
        .collect();
    let contour = extract_contour(&cut_index, &tpl)?;
    let mask = rasterize_polygon(&contour, img.width(), img.height())?;
    let diameters = compute_diameters(&contour);

    Ok(SegmentationResult {
        cut_index,
        contour,
        mask,
        diameters,
        radial_step: tpl.radial_step(),
        g0,
        spacing_mm: img.spacing_mm(),
        dropped_helpers,
        elapsed: start.elapsed().as_secs_f64(),
    })
}
