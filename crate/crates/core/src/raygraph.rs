//! Circular ray template around the seed, gray-deviation costs, and the s-t
//! flow network built from them.
//!
//! Nodes sit on `R` rays spread clockwise (image y axis points down) at equal
//! angles around the seed; node `(r, i)` lies at distance `(i + 1) · step`.
//! Arcs:
//! * intra: `(r, i) → (r, i − 1)`, infinite, so each ray's source side is a
//!   prefix and the cut severs the ray exactly once;
//! * inter: `(r, i) → (r ± 1, max(i − Δr, 0))`, infinite, bounding the index
//!   jump between neighbouring rays by `Δr`;
//! * terminal: from the signed weights of [`terminal_weights`]; the outermost
//!   node of every ray is tied to the sink with infinite capacity.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, GrayImage, Point2D};

pub const DEFAULT_RAYS: usize = 60;
pub const DEFAULT_NODES_PER_RAY: usize = 40;
pub const DEFAULT_MAX_RADIUS: f64 = 150.0;
pub const DEFAULT_RHO: f64 = 3.0;
pub const DEFAULT_DELTA_R: usize = 2;

/// Smallest radial step a template may shrink to near the image border.
pub const MIN_RADIAL_STEP: f64 = 0.5;

/// Node numbering shared by the template, the cost profile and the network.
/// Ray nodes come first (`r · N + i`), then source and sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RayLayout {
    pub rays: usize,
    pub nodes_per_ray: usize,
}

impl RayLayout {
    #[inline]
    pub fn node(&self, ray: usize, index: usize) -> usize {
        ray * self.nodes_per_ray + index
    }

    pub fn source(&self) -> usize {
        self.rays * self.nodes_per_ray
    }

    pub fn sink(&self) -> usize {
        self.source() + 1
    }

    pub fn node_count(&self) -> usize {
        self.source() + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayTemplate {
    center: Point2D,
    layout: RayLayout,
    radial_step: f64,
    directions: Vec<(f64, f64)>,
    bounds: (f64, f64),
}

impl RayTemplate {
    pub fn center(&self) -> Point2D {
        self.center
    }

    pub fn layout(&self) -> RayLayout {
        self.layout
    }

    pub fn rays(&self) -> usize {
        self.layout.rays
    }

    pub fn nodes_per_ray(&self) -> usize {
        self.layout.nodes_per_ray
    }

    pub fn radial_step(&self) -> f64 {
        self.radial_step
    }

    /// Effective template radius after any border shrink.
    pub fn radius(&self) -> f64 {
        self.radial_step * self.layout.nodes_per_ray as f64
    }

    pub fn angle(&self, ray: usize) -> f64 {
        2.0 * PI * ray as f64 / self.layout.rays as f64
    }

    pub fn direction(&self, ray: usize) -> (f64, f64) {
        self.directions[ray]
    }

    /// Point on `ray` at radial distance `dist` from the center.
    pub fn point_at(&self, ray: usize, dist: f64) -> Point2D {
        let (c, s) = self.directions[ray];
        Point2D::new(
            (self.center.x + dist * c).clamp(0.0, self.bounds.0),
            (self.center.y + dist * s).clamp(0.0, self.bounds.1),
        )
    }

    pub fn node(&self, ray: usize, index: usize) -> Point2D {
        self.point_at(ray, (index + 1) as f64 * self.radial_step)
    }
}

fn exit_distance(center: Point2D, dir: (f64, f64), max_x: f64, max_y: f64) -> f64 {
    let axis = |p: f64, d: f64, hi: f64| {
        if d > 1e-12 {
            (hi - p) / d
        } else if d < -1e-12 {
            p / -d
        } else {
            f64::INFINITY
        }
    };
    axis(center.x, dir.0, max_x).min(axis(center.y, dir.1, max_y))
}

/// Lays out `rays × nodes_per_ray` nodes around `center`. When any ray would
/// leave the image the radius shrinks uniformly for all rays.
pub fn build_template(
    center: Point2D,
    img: &GrayImage,
    rays: usize,
    nodes_per_ray: usize,
    max_radius: f64,
) -> Result<RayTemplate> {
    if rays < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 rays, got {rays}")));
    }
    if nodes_per_ray < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 nodes per ray, got {nodes_per_ray}"
        )));
    }
    if !(max_radius.is_finite() && max_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "max_radius must be positive, got {max_radius}"
        )));
    }
    if !img.contains(center) {
        return Err(Error::SeedOutOfBounds {
            x: center.x,
            y: center.y,
            width: img.width(),
            height: img.height(),
        });
    }
    let max_x = (img.width() - 1) as f64;
    let max_y = (img.height() - 1) as f64;
    let directions: Vec<(f64, f64)> = (0..rays)
        .map(|r| {
            let theta = 2.0 * PI * r as f64 / rays as f64;
            (theta.cos(), theta.sin())
        })
        .collect();
    let radius = directions
        .iter()
        .map(|&d| exit_distance(center, d, max_x, max_y))
        .fold(max_radius, f64::min);
    let radial_step = radius / nodes_per_ray as f64;
    if radial_step < MIN_RADIAL_STEP {
        return Err(Error::SeedTooCloseToBorder {
            x: center.x,
            y: center.y,
            radial_step,
        });
    }
    Ok(RayTemplate {
        center,
        layout: RayLayout { rays, nodes_per_ray },
        radial_step,
        directions,
        bounds: (max_x, max_y),
    })
}

/// Mean gray value of the pixels whose centers lie within `rho` of `seed`.
/// Falls back to the nearest pixel when the disk contains no center.
pub fn sample_mean_gray(img: &GrayImage, seed: Point2D, rho: f64) -> Result<f64> {
    if !img.contains(seed) {
        return Err(Error::SeedOutOfBounds {
            x: seed.x,
            y: seed.y,
            width: img.width(),
            height: img.height(),
        });
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let x_lo = (seed.x - rho).ceil().max(0.0) as usize;
    let x_hi = ((seed.x + rho).floor() as usize).min(img.width() - 1);
    let y_lo = (seed.y - rho).ceil().max(0.0) as usize;
    let y_hi = ((seed.y + rho).floor() as usize).min(img.height() - 1);
    let rho2 = rho * rho;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let (dx, dy) = (x as f64 - seed.x, y as f64 - seed.y);
            if dx * dx + dy * dy <= rho2 {
                sum += img.get(x, y);
                count += 1;
            }
        }
    }
    if count == 0 {
        let x = seed.x.round() as usize;
        let y = seed.y.round() as usize;
        return Ok(img.get(x.min(img.width() - 1), y.min(img.height() - 1)));
    }
    Ok(sum / count as f64)
}

/// Per-node gray deviation `d(r, i) = |g(r, i) − g0|`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostProfile {
    layout: RayLayout,
    g0: f64,
    d: Vec<f64>,
}

impl CostProfile {
    pub fn new(layout: RayLayout, g0: f64, d: Vec<f64>) -> Result<Self> {
        if layout.rays < 3 || layout.nodes_per_ray < 2 {
            return Err(Error::InvalidParameter(format!(
                "profile needs ≥ 3 rays and ≥ 2 nodes, got {}x{}",
                layout.rays, layout.nodes_per_ray
            )));
        }
        if d.len() != layout.rays * layout.nodes_per_ray {
            return Err(Error::InvalidParameter(format!(
                "{} costs for {}x{} nodes",
                d.len(),
                layout.rays,
                layout.nodes_per_ray
            )));
        }
        if let Some(v) = d.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("cost {v} outside [0, 255]")));
        }
        Ok(Self { layout, g0, d })
    }

    /// Replicates one ray's costs onto `rays` rays.
    pub fn uniform(rays: usize, ray_costs: &[f64]) -> Result<Self> {
        let layout = RayLayout {
            rays,
            nodes_per_ray: ray_costs.len(),
        };
        let d = (0..rays).flat_map(|_| ray_costs.iter().copied()).collect();
        Self::new(layout, 0.0, d)
    }

    pub fn layout(&self) -> RayLayout {
        self.layout
    }

    pub fn g0(&self) -> f64 {
        self.g0
    }

    pub fn get(&self, ray: usize, index: usize) -> f64 {
        self.d[self.layout.node(ray, index)]
    }

    pub fn ray(&self, ray: usize) -> &[f64] {
        let n = self.layout.nodes_per_ray;
        &self.d[ray * n..(ray + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }
}

pub fn compute_cost_profile(img: &GrayImage, tpl: &RayTemplate, g0: f64) -> Result<CostProfile> {
    let layout = tpl.layout();
    let mut d = Vec::with_capacity(layout.rays * layout.nodes_per_ray);
    for r in 0..layout.rays {
        for i in 0..layout.nodes_per_ray {
            let g = sample_bilinear(img, tpl.node(r, i))?;
            d.push((g - g0).abs());
        }
    }
    CostProfile::new(layout, g0, d)
}

/// Signed terminal weight for nodes `0..N−1` of one ray (the outermost node is
/// handled separately).
///
/// The outward rises `ρ_k = d(k+1) − d(k)` of adjacent deviations are the
/// boundary evidence, with the seed acting as node −1 (`d = 0`). Each node's
/// weight is the difference of adjacent boundary costs `−ρ`, i.e.
/// `w_k = ρ_{k−1} − ρ_k`. Summed over a source prefix `0..=k` the weights
/// telescope to `ρ_{−1} − ρ_k`, so the minimum cut severs each ray where the
/// deviation rises the most, subject to the inter-ray band.
pub fn terminal_weights(d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let at = |k: isize| if k < 0 { 0.0 } else { d[k as usize] };
    (0..n.saturating_sub(1) as isize)
        .map(|k| {
            let inner_rise = at(k) - at(k - 1);
            let outer_rise = at(k + 1) - at(k);
            inner_rise - outer_rise
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Finite(f64),
    Infinite,
}

impl Capacity {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Capacity::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Capacity::Finite(c) => Some(c),
            Capacity::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub capacity: Capacity,
}

/// Directed capacitated graph with distinguished source and sink. Arcs never
/// enter the source or leave the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNetwork {
    node_count: usize,
    source: usize,
    sink: usize,
    arcs: Vec<Arc>,
}

impl FlowNetwork {
    pub fn new(node_count: usize, source: usize, sink: usize) -> Result<Self> {
        if source >= node_count || sink >= node_count || source == sink {
            return Err(Error::InvalidParameter(format!(
                "bad terminals s={source}, t={sink} for {node_count} nodes"
            )));
        }
        Ok(Self {
            node_count,
            source,
            sink,
            arcs: Vec::new(),
        })
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: Capacity) -> Result<()> {
        if from >= self.node_count || to >= self.node_count || from == to {
            return Err(Error::InvalidParameter(format!("bad arc {from} → {to}")));
        }
        if to == self.source || from == self.sink {
            return Err(Error::InvalidParameter(format!(
                "arc {from} → {to} enters the source or leaves the sink"
            )));
        }
        if let Capacity::Finite(c) = capacity {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParameter(format!("capacity {c} on {from} → {to}")));
            }
        }
        self.arcs.push(Arc { from, to, capacity });
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }
}

/// Assembles the ray network for `profile` with smoothness band `delta_r`.
pub fn build_graph(profile: &CostProfile, delta_r: usize) -> FlowNetwork {
    let layout = profile.layout();
    let (rays, n) = (layout.rays, layout.nodes_per_ray);
    let (s, t) = (layout.source(), layout.sink());
    let mut net = FlowNetwork::new(layout.node_count(), s, t).expect("layout terminals are distinct");
    let mut push = |from, to, capacity| net.add_arc(from, to, capacity).expect("ray arcs are well-formed");

    for r in 0..rays {
        for i in 1..n {
            push(layout.node(r, i), layout.node(r, i - 1), Capacity::Infinite);
        }
    }
    for r in 0..rays {
        let next = (r + 1) % rays;
        let prev = (r + rays - 1) % rays;
        for neighbor in [next, prev] {
            for i in 0..n {
                push(
                    layout.node(r, i),
                    layout.node(neighbor, i.saturating_sub(delta_r)),
                    Capacity::Infinite,
                );
            }
        }
    }
    for r in 0..rays {
        for (i, w) in terminal_weights(profile.ray(r)).into_iter().enumerate() {
            let v = layout.node(r, i);
            if w < 0.0 {
                push(s, v, Capacity::Finite(-w));
            } else if w > 0.0 {
                push(v, t, Capacity::Finite(w));
            }
        }
        push(layout.node(r, n - 1), t, Capacity::Infinite);
    }
    net
}
