//! Exact max-flow / min-cut over a [`FlowNetwork`] using shortest augmenting
//! paths in level graphs (Dinic). Capacities are real; infinite arcs are
//! tracked explicitly instead of being approximated by a large constant.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::raygraph::{Capacity, FlowNetwork};

/// Safety bound on the number of augmenting paths per solve.
pub const MAX_AUGMENTATIONS: usize = 10_000_000;

/// Residual capacities below `SATURATION_RTOL × (largest finite capacity)`
/// count as saturated.
const SATURATION_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CutResult {
    pub flow_value: f64,
    /// Source side of the canonical minimum cut (nodes reachable from the
    /// source in the final residual graph).
    pub in_source_set: Vec<bool>,
    /// Flow on each input arc, in insertion order.
    pub arc_flows: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    flow: f64,
}

impl Edge {
    #[inline]
    fn residual(&self) -> f64 {
        self.cap - self.flow
    }
}

struct Solver {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    level: Vec<u32>,
    next: Vec<usize>,
    eps: f64,
}

const UNSEEN: u32 = u32::MAX;

impl Solver {
    fn new(net: &FlowNetwork) -> Self {
        let n = net.node_count();
        let mut edges = Vec::with_capacity(net.arcs().len() * 2);
        let mut adj = vec![Vec::new(); n];
        let mut max_cap = 0.0f64;
        for arc in net.arcs() {
            let cap = match arc.capacity {
                Capacity::Finite(c) => {
                    max_cap = max_cap.max(c);
                    c
                }
                Capacity::Infinite => f64::INFINITY,
            };
            adj[arc.from].push(edges.len());
            edges.push(Edge {
                to: arc.to,
                cap,
                flow: 0.0,
            });
            adj[arc.to].push(edges.len());
            edges.push(Edge {
                to: arc.from,
                cap: 0.0,
                flow: 0.0,
            });
        }
        Self {
            edges,
            adj,
            level: vec![UNSEEN; n],
            next: vec![0; n],
            eps: max_cap * SATURATION_RTOL,
        }
    }

    fn open(&self, e: usize) -> bool {
        self.edges[e].residual() > self.eps
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(UNSEEN);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let to = self.edges[e].to;
                if self.level[to] == UNSEEN && self.open(e) {
                    self.level[to] = self.level[v] + 1;
                    queue.push_back(to);
                }
            }
        }
        self.level[t] != UNSEEN
    }

    fn dfs(&mut self, v: usize, t: usize, limit: f64) -> f64 {
        if v == t {
            return limit;
        }
        while self.next[v] < self.adj[v].len() {
            let e = self.adj[v][self.next[v]];
            let to = self.edges[e].to;
            if self.level[to] == self.level[v] + 1 && self.open(e) {
                let pushed = self.dfs(to, t, limit.min(self.edges[e].residual()));
                if pushed > 0.0 {
                    self.edges[e].flow += pushed;
                    self.edges[e ^ 1].flow -= pushed;
                    return pushed;
                }
            }
            self.next[v] += 1;
        }
        0.0
    }

    fn reachable(&self, s: usize, open: impl Fn(usize) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let to = self.edges[e].to;
                if !seen[to] && open(e) {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        seen
    }
}

/// Solves max-flow from source to sink and returns the canonical minimum cut.
pub fn max_flow_min_cut(net: &FlowNetwork) -> Result<CutResult> {
    let (s, t) = (net.source(), net.sink());
    let mut solver = Solver::new(net);

    let infinite_reach = solver.reachable(s, |e| e % 2 == 0 && solver.edges[e].cap.is_infinite());
    if infinite_reach[t] {
        return Err(Error::UnboundedFlow);
    }

    let mut augmentations = 0usize;
    while solver.bfs(s, t) {
        solver.next.fill(0);
        loop {
            let pushed = solver.dfs(s, t, f64::INFINITY);
            if pushed <= 0.0 {
                break;
            }
            augmentations += 1;
            if augmentations > MAX_AUGMENTATIONS {
                return Err(Error::IterationLimit(MAX_AUGMENTATIONS));
            }
        }
    }

    let in_source_set = solver.reachable(s, |e| solver.open(e));
    let arc_flows: Vec<f64> = solver.edges.iter().step_by(2).map(|e| e.flow).collect();
    let flow_value = solver.adj[s]
        .iter()
        .filter(|&&e| e % 2 == 0)
        .map(|&e| solver.edges[e].flow)
        .sum();
    Ok(CutResult {
        flow_value,
        in_source_set,
        arc_flows,
    })
}
