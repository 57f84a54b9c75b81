//! Percolation configurations on `Λ_n` and on the torus.
//!
//! The stratified samplers visit the open pairs of each distance shell by
//! geometric jumps over the pair index space and decode each index into a
//! vertex pair, so the cost is proportional to vertices plus open edges.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::{LatticeSpec, TorusSpec, VertexId};
use crate::kernel::ModelParams;
use crate::rng::{RngPolicy, StreamRng, StreamTag};
use crate::unionfind::UnionFind;

/// Vertex-count guard for the all-pairs reference sampler.
pub const NAIVE_MAX_VOLUME: u64 = 1 << 16;
/// Vertex-count guard for materialized samples.
pub const MAX_MATERIALIZED: u64 = u32::MAX as u64;

/// Below this the rand_distr geometric constructor loses precision, so
/// jumps are drawn by inversion instead.
const TINY_P: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub enum Stage<'a> {
    /// Barely-subcritical kernel `κ^{(n,−)}`.
    Minus,
    /// Critical-window kernel `κ_λ^{(n)}`.
    Critical,
    /// Scaled kernel `(1+ε)ρ/ζ_n`.
    Scaled(f64),
    /// Every pair closed in `base` opens independently with probability `t_n`.
    SprinkleOn(&'a PercolationSample),
}

impl Stage<'_> {
    pub fn tag(&self) -> StreamTag {
        match self {
            Stage::Minus => StreamTag::Minus,
            Stage::Critical => StreamTag::Critical,
            Stage::Scaled(_) => StreamTag::Scaled,
            Stage::SprinkleOn(_) => StreamTag::Sprinkle,
        }
    }

    /// Per-shell probabilities for the direct stages.
    pub fn table(&self, params: &ModelParams) -> Result<Vec<f64>> {
        match *self {
            Stage::Minus => Ok(params.prob_minus().to_vec()),
            Stage::Critical => Ok(params.prob_critical().to_vec()),
            Stage::Scaled(eps) => params.prob_scaled(eps),
            Stage::SprinkleOn(_) => Ok(vec![params.sprinkle_prob()?; params.lattice().n() as usize]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleGeometry {
    Lattice(LatticeSpec),
    Torus(TorusSpec),
}

impl SampleGeometry {
    pub fn volume(&self) -> u64 {
        match self {
            SampleGeometry::Lattice(l) => l.volume(),
            SampleGeometry::Torus(t) => t.volume(),
        }
    }

    /// Number of distance classes (shells on `Λ_n`, L∞ classes on the torus).
    pub fn classes(&self) -> usize {
        match self {
            SampleGeometry::Lattice(l) => l.n() as usize,
            SampleGeometry::Torus(t) => t.max_class() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTrace {
    pub master_seed: u64,
    pub replicate: u64,
    /// `(stage tag, shell)` of every stream consumed, in order of use.
    pub streams: Vec<(StreamTag, u32)>,
}

impl SeedTrace {
    pub fn new(master_seed: u64, replicate: u64) -> Self {
        Self { master_seed, replicate, streams: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub size: u64,
    pub edges: u64,
    /// Smallest vertex id in the component.
    pub representative: VertexId,
}

impl ComponentSummary {
    pub fn surplus(&self) -> i64 {
        self.edges as i64 - self.size as i64 + 1
    }
}

/// A finalized percolation configuration with its component structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PercolationSample {
    geometry: SampleGeometry,
    /// Sorted edges per distance class, class `i` at index `i − 1`.
    edges: Vec<Vec<(VertexId, VertexId)>>,
    seed_trace: SeedTrace,
    components: Vec<ComponentSummary>,
    /// Component rank of each vertex.
    component_of: Vec<u32>,
    /// Vertices grouped by component rank, ascending within each group.
    members: Vec<u32>,
    member_offsets: Vec<u32>,
    adj_offsets: Vec<u32>,
    adj: Vec<u32>,
}

impl PercolationSample {
    /// Builds the component structure for an explicit edge set. Edges are
    /// sorted and deduplicated per class; self-loops are rejected.
    pub fn from_edges(
        geometry: SampleGeometry,
        mut edges: Vec<Vec<(VertexId, VertexId)>>,
        seed_trace: SeedTrace,
    ) -> Result<Self> {
        let volume = geometry.volume();
        if volume > MAX_MATERIALIZED {
            return Err(Error::Guard(format!("{volume} vertices exceed the materialization limit")));
        }
        if edges.len() != geometry.classes() {
            return param(format!("expected {} edge classes, got {}", geometry.classes(), edges.len()));
        }
        for class in edges.iter_mut() {
            for e in class.iter_mut() {
                if e.0 == e.1 || e.0 .0 >= volume || e.1 .0 >= volume {
                    return param(format!("invalid edge ({}, {})", e.0 .0, e.1 .0));
                }
                if e.0 > e.1 {
                    *e = (e.1, e.0);
                }
            }
            class.sort_unstable();
            class.dedup();
        }
        let n = volume as usize;
        let mut uf = UnionFind::new(n);
        let mut degree = vec![0u32; n + 1];
        for &(a, b) in edges.iter().flatten() {
            uf.union(a.0 as u32, b.0 as u32);
            degree[a.0 as usize] += 1;
            degree[b.0 as usize] += 1;
        }

        // Roots in order of first appearance give representatives for free.
        let mut root_slot = vec![u32::MAX; n];
        let mut raw: Vec<ComponentSummary> = Vec::new();
        let mut slot_of = vec![0u32; n];
        for v in 0..n as u32 {
            let r = uf.find(v) as usize;
            if root_slot[r] == u32::MAX {
                root_slot[r] = raw.len() as u32;
                raw.push(ComponentSummary { size: 0, edges: 0, representative: VertexId(v as u64) });
            }
            let s = root_slot[r];
            slot_of[v as usize] = s;
            raw[s as usize].size += 1;
        }
        for &(a, _) in edges.iter().flatten() {
            raw[slot_of[a.0 as usize] as usize].edges += 1;
        }
        let mut order: Vec<u32> = (0..raw.len() as u32).collect();
        order.sort_by(|&x, &y| {
            let (cx, cy) = (&raw[x as usize], &raw[y as usize]);
            cy.size.cmp(&cx.size).then(cx.representative.cmp(&cy.representative))
        });
        let mut rank_of_slot = vec![0u32; raw.len()];
        for (rank, &s) in order.iter().enumerate() {
            rank_of_slot[s as usize] = rank as u32;
        }
        let components: Vec<ComponentSummary> = order.iter().map(|&s| raw[s as usize]).collect();
        let component_of: Vec<u32> = slot_of.iter().map(|&s| rank_of_slot[s as usize]).collect();

        let mut member_offsets = vec![0u32; components.len() + 1];
        for (rank, c) in components.iter().enumerate() {
            member_offsets[rank + 1] = member_offsets[rank] + c.size as u32;
        }
        let mut cursor = member_offsets.clone();
        let mut members = vec![0u32; n];
        for v in 0..n {
            let r = component_of[v] as usize;
            members[cursor[r] as usize] = v as u32;
            cursor[r] += 1;
        }

        let mut adj_offsets = vec![0u32; n + 1];
        for v in 0..n {
            adj_offsets[v + 1] = adj_offsets[v] + degree[v];
        }
        let mut fill = adj_offsets.clone();
        let mut adj = vec![0u32; adj_offsets[n] as usize];
        for &(a, b) in edges.iter().flatten() {
            let (a, b) = (a.0 as usize, b.0 as usize);
            adj[fill[a] as usize] = b as u32;
            fill[a] += 1;
            adj[fill[b] as usize] = a as u32;
            fill[b] += 1;
        }
        for v in 0..n {
            adj[adj_offsets[v] as usize..adj_offsets[v + 1] as usize].sort_unstable();
        }

        Ok(Self { geometry, edges, seed_trace, components, component_of, members, member_offsets, adj_offsets, adj })
    }

    pub fn geometry(&self) -> &SampleGeometry {
        &self.geometry
    }

    pub fn lattice(&self) -> Option<&LatticeSpec> {
        match &self.geometry {
            SampleGeometry::Lattice(l) => Some(l),
            SampleGeometry::Torus(_) => None,
        }
    }

    pub fn vertex_count(&self) -> u64 {
        self.geometry.volume()
    }

    pub fn seed_trace(&self) -> &SeedTrace {
        &self.seed_trace
    }

    /// Edges of distance class `i` (one-based).
    pub fn shell_edges(&self, i: u32) -> &[(VertexId, VertexId)] {
        &self.edges[i as usize - 1]
    }

    pub fn edges_by_shell(&self) -> &[Vec<(VertexId, VertexId)>] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn shell_counts(&self) -> Vec<u64> {
        self.edges.iter().map(|e| e.len() as u64).collect()
    }

    pub fn has_edge(&self, a: VertexId, b: VertexId) -> bool {
        self.neighbors(a.0 as u32).binary_search(&(b.0 as u32)).is_ok()
    }

    /// Components sorted by size descending, ties by representative.
    pub fn components(&self) -> &[ComponentSummary] {
        &self.components
    }

    pub fn component_sizes(&self) -> Vec<u64> {
        self.components.iter().map(|c| c.size).collect()
    }

    pub fn component_rank(&self, v: VertexId) -> usize {
        self.component_of[v.0 as usize] as usize
    }

    /// Vertices of the component of rank `rank`, ascending.
    pub fn component_members(&self, rank: usize) -> &[u32] {
        &self.members[self.member_offsets[rank] as usize..self.member_offsets[rank + 1] as usize]
    }

    #[inline]
    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adj[self.adj_offsets[v as usize] as usize..self.adj_offsets[v as usize + 1] as usize]
    }

    /// Writes one `shell,vertex_a,vertex_b` line per edge after a `#` header.
    pub fn write_edge_list<W: Write>(&self, header: &str, out: &mut W) -> Result<()> {
        for line in header.lines() {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "# seed_trace: {}", serde_json::to_string(&self.seed_trace).expect("serializable"))?;
        writeln!(out, "shell,vertex_a,vertex_b")?;
        for (i, class) in self.edges.iter().enumerate() {
            for (a, b) in class {
                writeln!(out, "{},{},{}", i + 1, a.0, b.0)?;
            }
        }
        Ok(())
    }
}

/// Calls `visit` with each index in `[0, count)` selected independently
/// with probability `p`, in increasing order, using geometric jumps.
pub fn skip_sample<R: Rng + ?Sized>(count: u64, p: f64, rng: &mut R, mut visit: impl FnMut(u64)) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return param(format!("skip sampling needs p in [0, 1), got {p}"));
    }
    if p == 0.0 || count == 0 {
        return Ok(());
    }
    let geo = if p >= TINY_P { Some(Geometric::new(p).expect("p checked")) } else { None };
    let log_q = (-p).ln_1p();
    let mut next: u64 = 0;
    loop {
        let jump = match &geo {
            Some(g) => g.sample(rng),
            None => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let j = (u.ln() / log_q).floor();
                if j >= u64::MAX as f64 { u64::MAX } else { j as u64 }
            }
        };
        let Some(pos) = next.checked_add(jump) else { break };
        if pos >= count {
            break;
        }
        visit(pos);
        next = pos + 1;
    }
    Ok(())
}

fn check_table(table: &[f64], allow_one: bool) -> Result<()> {
    for (i, &p) in table.iter().enumerate() {
        let ok = if allow_one { (0.0..=1.0).contains(&p) } else { (0.0..1.0).contains(&p) };
        if !ok {
            return param(format!("edge probability {p} on class {} is outside the admissible range", i + 1));
        }
    }
    Ok(())
}

fn stream(rng: &RngPolicy, trace: &mut SeedTrace, tag: StreamTag, shell: u32) -> Result<StreamRng> {
    trace.streams.push((tag, shell));
    rng.stream(trace.replicate, tag, shell)
}

/// Open pairs per shell for a direct probability table.
fn stratified_edges(
    lattice: &LatticeSpec,
    table: &[f64],
    tag: StreamTag,
    rng: &RngPolicy,
    trace: &mut SeedTrace,
) -> Result<Vec<Vec<(VertexId, VertexId)>>> {
    check_table(table, false)?;
    let mut out = Vec::with_capacity(table.len());
    for (idx, &p) in table.iter().enumerate() {
        let i = idx as u32 + 1;
        let mut shell = Vec::new();
        let mut r = stream(rng, trace, tag, i)?;
        skip_sample(lattice.pair_count(i)?, p, &mut r, |k| shell.push(lattice.decode_pair_unchecked(i, k)))?;
        out.push(shell);
    }
    Ok(out)
}

/// Samples a configuration on `Λ_n` by shell-stratified geometric skips.
pub fn sample_stratified(params: &ModelParams, stage: Stage<'_>, rng: &RngPolicy, replicate: u64) -> Result<PercolationSample> {
    let lattice = *params.lattice();
    if lattice.volume() > MAX_MATERIALIZED {
        return Err(Error::Guard(format!("{} vertices exceed the materialization limit", lattice.volume())));
    }
    let mut trace = SeedTrace::new(rng.master_seed, replicate);
    let edges = match stage {
        Stage::SprinkleOn(base) => {
            check_base(params, base)?;
            let t = params.sprinkle_prob()?;
            let table = vec![t; lattice.n() as usize];
            let extra = stratified_edges(&lattice, &table, StreamTag::Sprinkle, rng, &mut trace)?;
            merge_sprinkle(base, extra)
        }
        _ => stratified_edges(&lattice, &stage.table(params)?, stage.tag(), rng, &mut trace)?,
    };
    if let Stage::SprinkleOn(base) = stage {
        let mut streams = base.seed_trace.streams.clone();
        streams.extend(trace.streams);
        trace.streams = streams;
    }
    PercolationSample::from_edges(SampleGeometry::Lattice(lattice), edges, trace)
}

fn check_base(params: &ModelParams, base: &PercolationSample) -> Result<()> {
    match base.geometry {
        SampleGeometry::Lattice(l) if l == *params.lattice() => Ok(()),
        _ => Err(Error::Stage("sprinkle base must be a sample on the same lattice".into())),
    }
}

/// Union of base edges and sprinkled candidates; candidates already open in
/// the base are dropped, which leaves each closed pair open with
/// probability exactly `t_n`.
fn merge_sprinkle(base: &PercolationSample, extra: Vec<Vec<(VertexId, VertexId)>>) -> Vec<Vec<(VertexId, VertexId)>> {
    base.edges
        .iter()
        .zip(extra)
        .map(|(b, mut e)| {
            e.retain(|pair| b.binary_search(pair).is_err());
            e.extend_from_slice(b);
            e
        })
        .collect()
}

/// All-pairs reference sampler. Consumes exactly one uniform per unordered
/// pair in lexicographic order, so equal seeds couple different kernels
/// monotonically.
pub fn sample_naive(params: &ModelParams, stage: Stage<'_>, rng: &RngPolicy, replicate: u64) -> Result<PercolationSample> {
    let lattice = *params.lattice();
    let volume = lattice.volume();
    if volume > NAIVE_MAX_VOLUME {
        return Err(Error::Guard(format!("naive sampler limited to {NAIVE_MAX_VOLUME} vertices, got {volume}")));
    }
    let table = stage.table(params)?;
    check_table(&table, true)?;
    let base = match stage {
        Stage::SprinkleOn(b) => {
            check_base(params, b)?;
            Some(b)
        }
        _ => None,
    };
    let mut trace = SeedTrace::new(rng.master_seed, replicate);
    let mut r = stream(rng, &mut trace, StreamTag::Naive, stage.tag() as u32)?;
    let mut edges = vec![Vec::new(); lattice.n() as usize];
    for x in 0..volume {
        for y in x + 1..volume {
            let (a, b) = (VertexId(x), VertexId(y));
            let i = lattice.level(a, b) as usize;
            let u: f64 = r.random();
            let in_base = base.is_some_and(|s| s.has_edge(a, b));
            if in_base || u < table[i - 1] {
                edges[i - 1].push((a, b));
            }
        }
    }
    PercolationSample::from_edges(SampleGeometry::Lattice(lattice), edges, trace)
}

/// Enumerates unordered torus pairs of each L∞ class by index.
///
/// Each offset pair `{o, −o}` with `o ≠ −o` is represented once and pairs
/// with every base point; a self-inverse offset pairs only with base points
/// whose coordinate at the offset's highest nonzero axis is below `m/2`.
#[derive(Debug, Clone)]
pub struct TorusPairIndex {
    spec: TorusSpec,
    /// Per class: generic representative offsets.
    generic: Vec<Vec<Vec<u64>>>,
    /// Per class: self-inverse offsets with their highest nonzero axis.
    involutive: Vec<Vec<(Vec<u64>, usize)>>,
}

impl TorusPairIndex {
    pub fn new(spec: &TorusSpec) -> Result<Self> {
        if spec.volume() > MAX_MATERIALIZED {
            return Err(Error::Guard("torus too large to index".into()));
        }
        let classes = spec.max_class() as usize;
        let mut generic = vec![Vec::new(); classes];
        let mut involutive = vec![Vec::new(); classes];
        let m = spec.m();
        for idx in 1..spec.volume() {
            let o = spec.coords(idx);
            let neg: Vec<u64> = o.iter().map(|&c| (m - c) % m).collect();
            let neg_idx = spec.index(&neg);
            let k = crate::geometry::torus_index_distance(0, idx, spec) as usize;
            if neg_idx == idx {
                let axis = o.iter().rposition(|&c| c != 0).expect("nonzero offset");
                involutive[k - 1].push((o, axis));
            } else if idx < neg_idx {
                generic[k - 1].push(o);
            }
        }
        Ok(Self { spec: *spec, generic, involutive })
    }

    pub fn pair_count(&self, k: u64) -> u64 {
        let v = self.spec.volume();
        let c = k as usize - 1;
        v * self.generic[c].len() as u64 + v / 2 * self.involutive[c].len() as u64
    }

    pub fn decode(&self, k: u64, idx: u64) -> (u64, u64) {
        let c = k as usize - 1;
        let v = self.spec.volume();
        let m = self.spec.m();
        let g = v * self.generic[c].len() as u64;
        let (x, o): (Vec<u64>, &Vec<u64>) = if idx < g {
            (self.spec.coords(idx % v), &self.generic[c][(idx / v) as usize])
        } else {
            let rest = idx - g;
            let (o, axis) = &self.involutive[c][(rest / (v / 2)) as usize];
            let h = rest % (v / 2);
            let half = m / 2;
            // axis coordinate ranges over [0, m/2), the others freely
            let mut coords = Vec::with_capacity(self.spec.d() as usize);
            let mut others = h / half;
            for j in 0..self.spec.d() as usize {
                if j == *axis {
                    coords.push(h % half);
                } else {
                    coords.push(others % m);
                    others /= m;
                }
            }
            (coords, o)
        };
        let y: Vec<u64> = x.iter().zip(o).map(|(&a, &b)| (a + b) % m).collect();
        let (a, b) = (self.spec.index(&x), self.spec.index(&y));
        (a.min(b), a.max(b))
    }
}

/// Samples the torus graph with per-class probabilities (index `k − 1`).
pub fn sample_torus(spec: &TorusSpec, class_probs: &[f64], rng: &RngPolicy, replicate: u64) -> Result<PercolationSample> {
    if class_probs.len() != spec.max_class() as usize {
        return param(format!("expected {} class probabilities, got {}", spec.max_class(), class_probs.len()));
    }
    check_table(class_probs, false)?;
    let index = TorusPairIndex::new(spec)?;
    let mut trace = SeedTrace::new(rng.master_seed, replicate);
    let mut edges = Vec::with_capacity(class_probs.len());
    for (c, &p) in class_probs.iter().enumerate() {
        let k = c as u64 + 1;
        let mut r = stream(rng, &mut trace, StreamTag::Torus, k as u32)?;
        let mut class = Vec::new();
        skip_sample(index.pair_count(k), p, &mut r, |i| {
            let (a, b) = index.decode(k, i);
            class.push((VertexId(a), VertexId(b)));
        })?;
        edges.push(class);
    }
    PercolationSample::from_edges(SampleGeometry::Torus(*spec), edges, trace)
}

/// Component summaries of a sample (already computed at finalization).
pub fn components(sample: &PercolationSample) -> &[ComponentSummary] {
    sample.components()
}
