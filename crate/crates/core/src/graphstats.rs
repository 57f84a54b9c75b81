//! Metric and cycle analytics of single components, and whole-sample
//! aggregates.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::geometry::VertexId;
use crate::rng::{RngPolicy, StreamTag};
use crate::sampler::PercolationSample;
use crate::stats::mean_se;

/// Default surplus cap for the longest-cycle search.
pub const DEFAULT_SURPLUS_CAP: i64 = 12;
/// Components up to this many vertices get exact all-source BFS.
pub const DEFAULT_EXACT_CAP: usize = 4096;
pub const FALLBACK_SOURCES: usize = 64;
pub const FALLBACK_TARGETS: usize = 64;

/// One connected component in compressed adjacency form with local ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentGraph {
    vertices: Vec<VertexId>,
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl ComponentGraph {
    /// Extracts the component of rank `rank`.
    pub fn from_sample(sample: &PercolationSample, rank: usize) -> Self {
        let members = sample.component_members(rank);
        let local = |v: u32| members.binary_search(&v).expect("neighbor in component") as u32;
        let mut offsets = Vec::with_capacity(members.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for &v in members {
            targets.extend(sample.neighbors(v).iter().map(|&w| local(w)));
            offsets.push(targets.len() as u32);
        }
        let vertices = members.iter().map(|&v| VertexId(v as u64)).collect();
        Self { vertices, offsets, targets }
    }

    /// Builds a graph on `0..k` from an edge list; rejects loops,
    /// multi-edges and disconnected input.
    pub fn from_edges(k: usize, edges: &[(u32, u32)]) -> Result<Self> {
        if k == 0 {
            return param("a component needs at least one vertex");
        }
        let mut adj = vec![Vec::new(); k];
        let mut seen = HashSet::new();
        for &(a, b) in edges {
            if a == b || a as usize >= k || b as usize >= k {
                return param(format!("invalid edge ({a}, {b})"));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return param(format!("duplicate edge ({a}, {b})"));
            }
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let mut offsets = vec![0u32];
        let mut targets = Vec::new();
        for mut list in adj {
            list.sort_unstable();
            targets.extend(list);
            offsets.push(targets.len() as u32);
        }
        let g = Self { vertices: (0..k as u64).map(VertexId).collect(), offsets, targets };
        if bfs_distances(&g, 0).contains(&u32::MAX) {
            return param("graph is not connected");
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.targets[self.offsets[v as usize] as usize..self.offsets[v as usize + 1] as usize]
    }

    pub fn degree(&self, v: u32) -> usize {
        self.neighbors(v).len()
    }
}

/// Reusable BFS scratch space.
struct Bfs {
    dist: Vec<u32>,
    queue: Vec<u32>,
}

impl Bfs {
    fn new(n: usize) -> Self {
        Self { dist: vec![u32::MAX; n], queue: Vec::with_capacity(n) }
    }

    /// Runs BFS from `source`; returns (eccentricity, distance sum).
    fn run(&mut self, g: &ComponentGraph, source: u32) -> (u32, u64) {
        for &v in &self.queue {
            self.dist[v as usize] = u32::MAX;
        }
        self.queue.clear();
        self.dist[source as usize] = 0;
        self.queue.push(source);
        let (mut head, mut sum, mut ecc) = (0, 0u64, 0u32);
        while head < self.queue.len() {
            let v = self.queue[head];
            head += 1;
            let dv = self.dist[v as usize];
            sum += dv as u64;
            ecc = dv;
            for &w in g.neighbors(v) {
                if self.dist[w as usize] == u32::MAX {
                    self.dist[w as usize] = dv + 1;
                    self.queue.push(w);
                }
            }
        }
        (ecc, sum)
    }
}

/// Hop distances from `source`; `u32::MAX` marks unreachable vertices.
pub fn bfs_distances(g: &ComponentGraph, source: u32) -> Vec<u32> {
    let mut b = Bfs::new(g.len());
    b.run(g, source);
    b.dist
}

/// `𝒟(source) = Σ_y d(source, y)`.
pub fn distance_sum(g: &ComponentGraph, source: u32) -> u64 {
    Bfs::new(g.len()).run(g, source).1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diameter {
    pub value: u32,
    /// `false` when only the double-sweep lower bound was computed.
    pub exact: bool,
}

/// Exact diameter by all-source BFS up to `exact_cap` vertices, else the
/// double-sweep lower bound.
pub fn diameter_with_cap(g: &ComponentGraph, exact_cap: usize) -> Diameter {
    let mut b = Bfs::new(g.len());
    if g.len() <= exact_cap {
        let value = (0..g.len() as u32).map(|s| b.run(g, s).0).max().unwrap_or(0);
        return Diameter { value, exact: true };
    }
    b.run(g, 0);
    let far = *b.queue.last().expect("nonempty");
    let (value, _) = b.run(g, far);
    Diameter { value, exact: false }
}

pub fn diameter(g: &ComponentGraph) -> Diameter {
    diameter_with_cap(g, DEFAULT_EXACT_CAP)
}

/// `|E| − |V| + 1`.
pub fn surplus(g: &ComponentGraph) -> i64 {
    g.edge_count() as i64 - g.len() as i64 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelEdge {
    pub a: usize,
    pub b: usize,
    pub weight: u64,
}

/// Contracted 2-core: branch vertices (or one vertex of a pure cycle) joined
/// by weighted edges standing for the chains between them.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CycleKernel {
    /// Local vertex ids of the kernel nodes.
    pub nodes: Vec<u32>,
    pub edges: Vec<KernelEdge>,
}

impl CycleKernel {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn cyclomatic_number(&self) -> i64 {
        if self.nodes.is_empty() {
            0
        } else {
            self.edges.len() as i64 - self.nodes.len() as i64 + 1
        }
    }
}

pub fn cycle_kernel(g: &ComponentGraph) -> CycleKernel {
    let n = g.len();
    let mut deg: Vec<usize> = (0..n as u32).map(|v| g.degree(v)).collect();
    let mut removed = vec![false; n];
    let mut stack: Vec<u32> = (0..n as u32).filter(|&v| deg[v as usize] <= 1).collect();
    while let Some(v) = stack.pop() {
        if removed[v as usize] {
            continue;
        }
        removed[v as usize] = true;
        for &w in g.neighbors(v) {
            if !removed[w as usize] {
                deg[w as usize] -= 1;
                if deg[w as usize] == 1 {
                    stack.push(w);
                }
            }
        }
    }
    let in_core = |v: u32| !removed[v as usize];
    let mut nodes: Vec<u32> = (0..n as u32).filter(|&v| in_core(v) && deg[v as usize] >= 3).collect();
    if nodes.is_empty() {
        // The 2-core of a connected graph is connected: at most one pure cycle.
        match (0..n as u32).find(|&v| in_core(v)) {
            Some(v) => nodes.push(v),
            None => return CycleKernel::default(),
        }
    }
    let mut node_index = vec![usize::MAX; n];
    for (i, &v) in nodes.iter().enumerate() {
        node_index[v as usize] = i;
    }
    let mut used: HashSet<(u32, u32)> = HashSet::new();
    let mut edges = Vec::new();
    for (ia, &start) in nodes.iter().enumerate() {
        for &first in g.neighbors(start) {
            if !in_core(first) || used.contains(&(start, first)) {
                continue;
            }
            used.insert((start, first));
            let (mut prev, mut cur, mut weight) = (start, first, 1u64);
            while node_index[cur as usize] == usize::MAX {
                let next = g
                    .neighbors(cur)
                    .iter()
                    .copied()
                    .find(|&w| in_core(w) && w != prev)
                    .expect("chain vertex has two core neighbors");
                prev = cur;
                cur = next;
                weight += 1;
            }
            used.insert((cur, prev));
            edges.push(KernelEdge { a: ia, b: node_index[cur as usize], weight });
        }
    }
    CycleKernel { nodes, edges }
}

/// Shortest path weight between kernel nodes avoiding edge `skip`.
fn kernel_dijkstra(k: &CycleKernel, adj: &[Vec<(usize, usize)>], from: usize, to: usize, skip: usize) -> Option<u64> {
    let mut dist = vec![u64::MAX; k.nodes.len()];
    let mut heap = BinaryHeap::new();
    dist[from] = 0;
    heap.push(Reverse((0u64, from)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if v == to {
            return Some(d);
        }
        if d > dist[v] {
            continue;
        }
        for &(w, e) in &adj[v] {
            if e == skip {
                continue;
            }
            let nd = d + k.edges[e].weight;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(Reverse((nd, w)));
            }
        }
    }
    None
}

fn kernel_adjacency(k: &CycleKernel) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); k.nodes.len()];
    for (e, ke) in k.edges.iter().enumerate() {
        adj[ke.a].push((ke.b, e));
        if ke.a != ke.b {
            adj[ke.b].push((ke.a, e));
        }
    }
    adj
}

/// Girth: minimum over kernel edges of its weight plus the shortest
/// detour between its endpoints. `None` on trees.
pub fn shortest_cycle(g: &ComponentGraph) -> Option<u64> {
    shortest_cycle_in(&cycle_kernel(g))
}

pub fn shortest_cycle_in(k: &CycleKernel) -> Option<u64> {
    let adj = kernel_adjacency(k);
    k.edges
        .iter()
        .enumerate()
        .filter_map(|(e, ke)| {
            if ke.a == ke.b {
                Some(ke.weight)
            } else {
                kernel_dijkstra(k, &adj, ke.a, ke.b, e).map(|d| d + ke.weight)
            }
        })
        .min()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleValue {
    Acyclic,
    Length(u64),
    /// Surplus above the search cap.
    NotComputed,
}

impl CycleValue {
    pub fn length(&self) -> Option<u64> {
        match self {
            CycleValue::Length(l) => Some(*l),
            _ => None,
        }
    }
}

impl std::fmt::Display for CycleValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CycleValue::Acyclic => write!(f, "none"),
            CycleValue::Length(l) => write!(f, "{l}"),
            CycleValue::NotComputed => write!(f, "not_computed"),
        }
    }
}

/// Longest simple cycle by exhaustive search over kernel cycles.
pub fn longest_cycle(g: &ComponentGraph, surplus_cap: i64) -> CycleValue {
    if surplus(g) > surplus_cap {
        return CycleValue::NotComputed;
    }
    longest_cycle_in(&cycle_kernel(g))
}

pub fn longest_cycle_in(k: &CycleKernel) -> CycleValue {
    if k.is_empty() {
        return CycleValue::Acyclic;
    }
    let adj = kernel_adjacency(k);
    let mut best = 0u64;
    let mut on_path = vec![false; k.nodes.len()];
    let mut edge_used = vec![false; k.edges.len()];
    for s in 0..k.nodes.len() {
        on_path[s] = true;
        extend_cycles(k, &adj, s, s, 0, &mut on_path, &mut edge_used, &mut best);
        on_path[s] = false;
    }
    CycleValue::Length(best)
}

/// Extends simple paths from `start` through nodes above `start`,
/// recording every closure back to `start`.
#[allow(clippy::too_many_arguments)]
fn extend_cycles(
    k: &CycleKernel,
    adj: &[Vec<(usize, usize)>],
    start: usize,
    v: usize,
    weight: u64,
    on_path: &mut [bool],
    edge_used: &mut [bool],
    best: &mut u64,
) {
    for &(w, e) in &adj[v] {
        if edge_used[e] {
            continue;
        }
        let total = weight + k.edges[e].weight;
        if w == start {
            *best = (*best).max(total);
            continue;
        }
        if w < start || on_path[w] {
            continue;
        }
        edge_used[e] = true;
        on_path[w] = true;
        extend_cycles(k, adj, start, w, total, on_path, edge_used, best);
        on_path[w] = false;
        edge_used[e] = false;
    }
}

/// Mean pairwise distance `u` within a component, with its standard error
/// (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDistance {
    pub mean: f64,
    pub se: f64,
    pub exact: bool,
    /// `Σ_{x,y} d(x, y)` over ordered pairs when exact.
    pub total: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub rank: usize,
    pub size: u64,
    pub edges: u64,
    pub surplus: i64,
    pub diameter: Diameter,
    pub girth: Option<u64>,
    pub longest_cycle: CycleValue,
    pub u: MeanDistance,
}

impl ComponentReport {
    pub const CSV_HEADER: &'static str = "component_rank,size,edges,surplus,diameter,girth,longest_cycle,u_mean,u_se";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.rank + 1,
            self.size,
            self.edges,
            self.surplus,
            self.diameter.value,
            self.girth.map_or("none".to_string(), |g| g.to_string()),
            self.longest_cycle,
            self.u.mean,
            self.u.se
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub exact_cap: usize,
    pub surplus_cap: i64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { exact_cap: DEFAULT_EXACT_CAP, surplus_cap: DEFAULT_SURPLUS_CAP }
    }
}

/// Diameter and mean distance in one pass of all-source BFS (exact), or
/// double sweep plus sampled pairs above the cap.
fn metric_summary<R: Rng + ?Sized>(g: &ComponentGraph, exact_cap: usize, rng: &mut R) -> (Diameter, MeanDistance) {
    let k = g.len();
    if k == 1 {
        return (Diameter { value: 0, exact: true }, MeanDistance { mean: 0.0, se: 0.0, exact: true, total: Some(0) });
    }
    let mut b = Bfs::new(k);
    if k <= exact_cap {
        let (mut diam, mut total) = (0u32, 0u64);
        for s in 0..k as u32 {
            let (ecc, sum) = b.run(g, s);
            diam = diam.max(ecc);
            total += sum;
        }
        let mean = total as f64 / (k as f64 * k as f64);
        return (Diameter { value: diam, exact: true }, MeanDistance { mean, se: 0.0, exact: true, total: Some(total) });
    }
    let diameter = diameter_with_cap(g, 0);
    let per_source: Vec<f64> = (0..FALLBACK_SOURCES)
        .map(|_| {
            let s = rng.random_range(0..k as u32);
            b.run(g, s);
            let hits: u64 = (0..FALLBACK_TARGETS).map(|_| b.dist[rng.random_range(0..k)] as u64).sum();
            hits as f64 / FALLBACK_TARGETS as f64
        })
        .collect();
    let (mean, se) = mean_se(&per_source);
    (diameter, MeanDistance { mean, se, exact: false, total: None })
}

pub fn analyze_component<R: Rng + ?Sized>(
    sample: &PercolationSample,
    rank: usize,
    opts: &AnalysisOptions,
    rng: &mut R,
) -> ComponentReport {
    let g = ComponentGraph::from_sample(sample, rank);
    let (diameter, u) = metric_summary(&g, opts.exact_cap, rng);
    let kernel = cycle_kernel(&g);
    let s = surplus(&g);
    let longest = if s > opts.surplus_cap { CycleValue::NotComputed } else { longest_cycle_in(&kernel) };
    let c = sample.components()[rank];
    ComponentReport {
        rank,
        size: c.size,
        edges: c.edges,
        surplus: s,
        diameter,
        girth: shortest_cycle_in(&kernel),
        longest_cycle: longest,
        u,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAggregates {
    pub sbar2: f64,
    pub sbar3: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub x_max: f64,
    pub x_min: f64,
    pub diam_max: u32,
    /// Whether every component diameter entering `diam_max` is exact.
    pub diam_exact: bool,
    pub tau: f64,
    /// Standard error of `τ` from sampled mean distances (0 when exact).
    pub tau_se: f64,
    pub tau_exact: bool,
    /// `x_i = V^{−2/3}|C_i|`, decreasing.
    pub masses: Vec<f64>,
    pub mean_distances: Vec<MeanDistance>,
}

/// Susceptibilities, rescaled masses and their moments, `diam_max`, `τ`.
/// `V` is the vertex count (`L^{nd}` on `Λ_n`).
pub fn aggregates(sample: &PercolationSample, opts: &AnalysisOptions, rng: &RngPolicy) -> Result<SampleAggregates> {
    let v = sample.vertex_count() as f64;
    let mut r = rng.stream(sample.seed_trace().replicate, StreamTag::PairSampling, 0)?;
    let scale = v.powf(-2.0 / 3.0);
    let sizes = sample.component_sizes();
    let masses: Vec<f64> = sizes.iter().map(|&s| s as f64 * scale).collect();
    let moment = |k: i32| crate::numeric::compensated_sum(sizes.iter().map(|&s| (s as f64).powi(k)));
    let xmoment = |k: i32| crate::numeric::compensated_sum(masses.iter().map(|&x| x.powi(k)));

    let mut diam_max = 0;
    let mut diam_exact = true;
    let mut exact_total: u128 = 0;
    let mut approx = 0.0;
    let mut approx_var = 0.0;
    let mut tau_exact = true;
    let mut mean_distances = Vec::with_capacity(sizes.len());
    for (rank, &size) in sizes.iter().enumerate() {
        if size == 1 {
            mean_distances.push(MeanDistance { mean: 0.0, se: 0.0, exact: true, total: Some(0) });
            continue;
        }
        let g = ComponentGraph::from_sample(sample, rank);
        let (d, u) = metric_summary(&g, opts.exact_cap, &mut r);
        diam_max = diam_max.max(d.value);
        diam_exact &= d.exact;
        match u.total {
            Some(t) => exact_total += t as u128,
            None => {
                tau_exact = false;
                let w = masses[rank] * masses[rank];
                approx += w * u.mean;
                approx_var += w * w * u.se * u.se;
            }
        }
        mean_distances.push(u);
    }
    // Σ x_i² u_i with exact u_i = total_i / |C_i|² collapses to V^{−4/3} Σ total_i.
    let tau = exact_total as f64 * v.powf(-4.0 / 3.0) + approx;
    Ok(SampleAggregates {
        sbar2: moment(2) / v,
        sbar3: moment(3) / v,
        sigma1: xmoment(1),
        sigma2: xmoment(2),
        sigma3: xmoment(3),
        x_max: masses.first().copied().unwrap_or(0.0),
        x_min: masses.last().copied().unwrap_or(0.0),
        diam_max,
        diam_exact,
        tau,
        tau_se: approx_var.sqrt(),
        tau_exact,
        masses,
        mean_distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LatticeSpec;
    use crate::kernel::{KernelSpec, ModelParams};
    use crate::sampler::{sample_stratified, SampleGeometry, SeedTrace, Stage};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(k: usize, edges: &[(u32, u32)]) -> ComponentGraph {
        ComponentGraph::from_edges(k, edges).unwrap()
    }

    fn path(k: u32) -> ComponentGraph {
        let e: Vec<_> = (0..k - 1).map(|i| (i, i + 1)).collect();
        graph(k as usize, &e)
    }

    fn cycle(k: u32) -> ComponentGraph {
        let e: Vec<_> = (0..k).map(|i| (i, (i + 1) % k)).collect();
        graph(k as usize, &e)
    }

    /// Theta graph: nodes 0 and 1 joined by internally disjoint paths.
    fn theta(lengths: &[u32]) -> ComponentGraph {
        let mut edges = Vec::new();
        let mut next = 2u32;
        for &len in lengths {
            let mut prev = 0;
            for _ in 0..len - 1 {
                edges.push((prev, next));
                prev = next;
                next += 1;
            }
            edges.push((prev, 1));
        }
        graph(next as usize, &edges)
    }

    fn floyd_warshall(g: &ComponentGraph) -> Vec<Vec<u32>> {
        let n = g.len();
        let inf = u32::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for v in 0..n {
            d[v][v] = 0;
            for &w in g.neighbors(v as u32) {
                d[v][w as usize] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
        d
    }

    /// All simple-cycle lengths by DFS from each cycle's smallest vertex.
    fn brute_cycles(g: &ComponentGraph) -> Vec<u64> {
        fn dfs(g: &ComponentGraph, start: u32, v: u32, depth: u64, on: &mut Vec<bool>, out: &mut Vec<u64>) {
            for &w in g.neighbors(v) {
                if w == start && depth >= 2 {
                    out.push(depth + 1);
                } else if w > start && !on[w as usize] {
                    on[w as usize] = true;
                    dfs(g, start, w, depth + 1, on, out);
                    on[w as usize] = false;
                }
            }
        }
        let mut out = Vec::new();
        for s in 0..g.len() as u32 {
            let mut on = vec![false; g.len()];
            on[s as usize] = true;
            dfs(g, s, s, 0, &mut on, &mut out);
        }
        out
    }

    fn random_connected(rng: &mut ChaCha8Rng, max_k: usize) -> ComponentGraph {
        let k = rng.random_range(1..=max_k);
        let mut edges = HashSet::new();
        for v in 1..k as u32 {
            edges.insert((rng.random_range(0..v), v));
        }
        let extra = rng.random_range(0..=k + 3);
        for _ in 0..extra {
            let (a, b) = (rng.random_range(0..k as u32), rng.random_range(0..k as u32));
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let e: Vec<_> = edges.into_iter().collect();
        graph(k, &e)
    }

    #[test]
    fn bfs_examples() {
        assert_eq!(bfs_distances(&graph(1, &[]), 0), vec![0]);
        assert_eq!(bfs_distances(&path(3), 0), vec![0, 1, 2]);
        assert_eq!(distance_sum(&path(3), 0), 3);
        let star = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        assert_eq!(diameter(&star), Diameter { value: 2, exact: true });
        assert_eq!(distance_sum(&star, 0), 3);
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(ComponentGraph::from_edges(3, &[(0, 1)]).is_err());
        assert!(ComponentGraph::from_edges(2, &[(0, 1), (1, 0)]).is_err());
        assert!(ComponentGraph::from_edges(2, &[(1, 1)]).is_err());
    }

    #[test]
    fn bfs_matches_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let g = random_connected(&mut rng, 12);
            let fw = floyd_warshall(&g);
            for s in 0..g.len() {
                let d = bfs_distances(&g, s as u32);
                assert_eq!(d, fw[s]);
            }
            let want = fw.iter().flatten().copied().max().unwrap();
            assert_eq!(diameter(&g).value, want);
        }
    }

    #[test]
    fn double_sweep_brackets_diameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let g = random_connected(&mut rng, 30);
            let exact = diameter(&g).value;
            let lower = diameter_with_cap(&g, 0);
            assert!(!lower.exact || g.is_empty());
            assert!(lower.value <= exact && exact <= 2 * lower.value.max(1));
            let ecc0 = *bfs_distances(&g, 0).iter().max().unwrap();
            assert!(exact <= 2 * ecc0 && ecc0 <= exact);
        }
    }

    #[test]
    fn surplus_examples() {
        assert_eq!(surplus(&path(5)), 0);
        assert_eq!(surplus(&cycle(3)), 1);
        assert_eq!(surplus(&graph(4, &[(0, 1), (1, 2), (2, 0), (2, 3)])), 1);
    }

    #[test]
    fn kernel_examples() {
        assert!(cycle_kernel(&path(6)).is_empty());
        let k = cycle_kernel(&cycle(7));
        assert_eq!(k.nodes, vec![0]);
        assert_eq!(k.edges, vec![KernelEdge { a: 0, b: 0, weight: 7 }]);
        let th = theta(&[2, 3, 4]);
        let k = cycle_kernel(&th);
        assert_eq!(k.nodes, vec![0, 1]);
        let mut w: Vec<u64> = k.edges.iter().map(|e| e.weight).collect();
        w.sort_unstable();
        assert_eq!(w, vec![2, 3, 4]);
        assert_eq!(k.cyclomatic_number(), surplus(&th));
        // pendant trees are stripped
        let g = graph(6, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (3, 5)]);
        let k = cycle_kernel(&g);
        assert_eq!(k.edges, vec![KernelEdge { a: 0, b: 0, weight: 3 }]);
    }

    #[test]
    fn cycle_lengths_examples() {
        assert_eq!(shortest_cycle(&path(4)), None);
        assert_eq!(longest_cycle(&path(4), 12), CycleValue::Acyclic);
        let th = theta(&[2, 3, 4]);
        assert_eq!(shortest_cycle(&th), Some(5));
        assert_eq!(longest_cycle(&th, 12), CycleValue::Length(7));
        assert_eq!(longest_cycle(&th, 1), CycleValue::NotComputed);
        assert_eq!(shortest_cycle(&cycle(9)), Some(9));
    }

    #[test]
    fn cycles_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let g = random_connected(&mut rng, 12);
            let all = brute_cycles(&g);
            let k = cycle_kernel(&g);
            assert_eq!(k.cyclomatic_number(), surplus(&g));
            assert_eq!(shortest_cycle(&g), all.iter().copied().min());
            let longest = longest_cycle(&g, 64);
            match all.iter().copied().max() {
                None => assert_eq!(longest, CycleValue::Acyclic),
                Some(m) => assert_eq!(longest, CycleValue::Length(m)),
            }
            if let (Some(s), Some(l)) = (shortest_cycle(&g), longest.length()) {
                assert!(3 <= s && s <= l);
            }
        }
    }

    fn sample(n: u32, stage: Stage<'_>, rep: u64) -> PercolationSample {
        let p = ModelParams::new(LatticeSpec::new(2, 1, n).unwrap(), KernelSpec::new(0.5, 1.0, 0.6, 0.0).unwrap()).unwrap();
        sample_stratified(&p, stage, &RngPolicy::new(3), rep).unwrap()
    }

    #[test]
    fn all_singletons_aggregates() {
        let l = LatticeSpec::new(2, 1, 6).unwrap();
        let s = PercolationSample::from_edges(SampleGeometry::Lattice(l), vec![vec![]; 6], SeedTrace::new(0, 0)).unwrap();
        let a = aggregates(&s, &AnalysisOptions::default(), &RngPolicy::new(0)).unwrap();
        assert_eq!(a.sbar2, 1.0);
        assert!((a.sigma2 - 64f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(a.tau, 0.0);
        assert_eq!(a.diam_max, 0);
    }

    #[test]
    fn aggregate_identities() {
        for rep in 0..40 {
            let s = sample(9, Stage::Scaled(0.3), rep);
            let a = aggregates(&s, &AnalysisOptions::default(), &RngPolicy::new(0)).unwrap();
            let v = 512f64;
            assert!((a.sigma1 - v.powf(1.0 / 3.0)).abs() < 1e-12);
            for (k, sbar, sigma) in [(2, a.sbar2, a.sigma2), (3, a.sbar3, a.sigma3)] {
                let want = v.powf(-(2.0 * k as f64 - 3.0) / 3.0) * sbar;
                assert!((sigma - want).abs() <= 1e-12 * want);
            }
            // susceptibility as mean cluster size seen from each vertex
            let direct: f64 = (0..512u64).map(|x| s.components()[s.component_rank(VertexId(x))].size as f64).sum::<f64>() / v;
            assert!((a.sbar2 - direct).abs() < 1e-12 * direct);
            // tau identity
            let mut total = 0u64;
            for rank in 0..s.components().len() {
                let g = ComponentGraph::from_sample(&s, rank);
                total += (0..g.len() as u32).map(|x| distance_sum(&g, x)).sum::<u64>();
            }
            let rhs = v.powf(-1.0 / 3.0) * total as f64 / v;
            assert!(a.tau_exact);
            assert!((a.tau - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }
    }

    #[test]
    fn sampled_mean_distance_is_close() {
        let s = sample(12, Stage::Scaled(0.6), 1);
        let exact = aggregates(&s, &AnalysisOptions::default(), &RngPolicy::new(0)).unwrap();
        let opts = AnalysisOptions { exact_cap: 20, ..Default::default() };
        let approx = aggregates(&s, &opts, &RngPolicy::new(0)).unwrap();
        assert!(!approx.tau_exact);
        let err = (approx.tau - exact.tau).abs();
        assert!(err <= 5.0 * approx.tau_se + 1e-12, "{} vs {} (se {})", approx.tau, exact.tau, approx.tau_se);
        let again = aggregates(&s, &opts, &RngPolicy::new(0)).unwrap();
        assert_eq!(approx, again);
    }

    #[test]
    fn component_report_csv() {
        let s = sample(8, Stage::Scaled(0.8), 2);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let rep = analyze_component(&s, 0, &AnalysisOptions::default(), &mut r);
        assert_eq!(rep.size, s.components()[0].size);
        let row = rep.csv_row();
        assert_eq!(row.split(',').count(), ComponentReport::CSV_HEADER.split(',').count());
        assert!(row.starts_with("1,"));
    }

    proptest! {
        #[test]
        fn kernel_cyclomatic_equals_surplus(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_connected(&mut rng, 40);
            prop_assert_eq!(cycle_kernel(&g).cyclomatic_number(), surplus(&g));
        }
    }
}
