//! Dominating branching processes and their coupling with cluster
//! exploration in the barely-subcritical graph.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::VertexId;
use crate::graphstats::{diameter_with_cap, ComponentGraph};
use crate::kernel::ModelParams;
use crate::rng::{RngPolicy, StreamTag};
use crate::sampler::NAIVE_MAX_VOLUME;

pub const DEFAULT_SIZE_CAP: u64 = 10_000_000;
pub const DEFAULT_HEIGHT_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingRun {
    pub total_size: u64,
    pub height: u64,
    pub generation_sizes: Vec<u64>,
    pub truncated: bool,
}

/// Offspring law parameters `(L^{id} − L^{(i−1)d}, 𝔭⁻_i)` for `i ≤ j`.
fn offspring_law(j: u32, params: &ModelParams) -> Result<Vec<(u64, f64)>> {
    let lattice = params.lattice();
    lattice.shell_size(j)?;
    Ok((1..=j).map(|i| (lattice.shell_size(i).unwrap(), params.prob_minus()[i as usize - 1])).collect())
}

#[inline]
fn binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    Binomial::new(trials, p).expect("valid binomial").sample(rng)
}

/// Number of offspring of one vertex in `T_j^{(n)}`.
pub fn sample_offspring<R: Rng + ?Sized>(j: u32, params: &ModelParams, rng: &mut R) -> Result<u64> {
    Ok(offspring_law(j, params)?.iter().map(|&(s, p)| binomial(s, p, rng)).sum())
}

/// Total offspring of `parents` vertices, drawn shell-wise as one Binomial.
fn generation<R: Rng + ?Sized>(parents: u64, law: &[(u64, f64)], rng: &mut R) -> u64 {
    let mut total = 0u64;
    for &(s, p) in law {
        match parents.checked_mul(s) {
            Some(trials) => total = total.saturating_add(binomial(trials, p, rng)),
            None => {
                for _ in 0..parents {
                    total = total.saturating_add(binomial(s, p, rng));
                }
            }
        }
    }
    total
}

/// Simulates `T_j^{(n)}` generation by generation until extinction or a cap.
pub fn sample_tree<R: Rng + ?Sized>(
    j: u32,
    params: &ModelParams,
    rng: &mut R,
    size_cap: u64,
    height_cap: u64,
) -> Result<BranchingRun> {
    if size_cap == 0 || height_cap == 0 {
        return Err(Error::Param("tree caps must be positive".into()));
    }
    let law = offspring_law(j, params)?;
    let mut generation_sizes = vec![1u64];
    let mut total = 1u64;
    let mut truncated = false;
    let mut current = 1u64;
    loop {
        let next = generation(current, &law, rng);
        if next == 0 {
            break;
        }
        total = total.saturating_add(next);
        generation_sizes.push(next);
        current = next;
        if total > size_cap || generation_sizes.len() as u64 > height_cap {
            truncated = true;
            break;
        }
    }
    Ok(BranchingRun { total_size: total, height: generation_sizes.len() as u64 - 1, generation_sizes, truncated })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub replicates: u64,
    pub size_violations: u64,
    pub diameter_violations: u64,
    /// Replicates in which a ghost subtree hit a cap.
    pub truncated: u64,
    pub mean_cluster_size: f64,
    pub mean_tree_size: f64,
    pub mean_slack: f64,
}

/// One coupled draw of `(C⁻(0), T_n^{(n)})`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoupledDraw {
    pub cluster_size: u64,
    pub cluster_diameter: u32,
    pub tree_size: u64,
    pub tree_height: u64,
    pub truncated: bool,
}

/// Explores the cluster of vertex 0 in `G⁻` breadth first. Each explored
/// `y` flips a coin for every `z ≠ y`: undiscovered `z` join the cluster on
/// success, already discovered `z` instead yield a ghost child rooting an
/// independent copy of `T_n^{(n)}`. Pairs inside the cluster that the
/// exploration never examined are then filled with fresh coins so that the
/// diameter is that of the full induced subgraph.
pub fn coupled_draw<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R, size_cap: u64, height_cap: u64) -> Result<CoupledDraw> {
    let lattice = *params.lattice();
    let volume = lattice.volume();
    if volume > NAIVE_MAX_VOLUME {
        return Err(Error::Guard(format!("coupling check limited to {NAIVE_MAX_VOLUME} vertices, got {volume}")));
    }
    let n = lattice.n();
    let probs = params.prob_minus();
    const UNSEEN: u32 = u32::MAX;
    // exploration step during which each vertex was discovered; root before all
    let mut found_at = vec![UNSEEN; volume as usize];
    let mut depth = vec![0u64; volume as usize];
    let mut order: Vec<u32> = vec![0];
    found_at[0] = 0;
    let mut edges: Vec<(u32, u32)> = Vec::new();
    let mut tree_size = 0u64;
    let mut height = 0u64;
    let mut truncated = false;
    let mut head = 0usize;
    while head < order.len() {
        let y = order[head];
        let step = head as u32 + 1;
        head += 1;
        for z in 0..volume as u32 {
            if z == y {
                continue;
            }
            let i = lattice.level(VertexId(y as u64), VertexId(z as u64));
            let open = rng.random::<f64>() < probs[i as usize - 1];
            if !open {
                continue;
            }
            if found_at[z as usize] == UNSEEN {
                found_at[z as usize] = step;
                depth[z as usize] = depth[y as usize] + 1;
                height = height.max(depth[z as usize]);
                order.push(z);
                edges.push((y, z));
            } else {
                let ghost = sample_tree(n, params, rng, size_cap, height_cap)?;
                truncated |= ghost.truncated;
                tree_size += ghost.total_size;
                height = height.max(depth[y as usize] + 1 + ghost.height);
            }
        }
    }
    let cluster = order.len() as u64;
    tree_size += cluster;

    // y explored at step s examined z iff z was still unseen then, i.e. found_at[z] >= s
    let mut local = vec![UNSEEN; volume as usize];
    for (k, &v) in order.iter().enumerate() {
        local[v as usize] = k as u32;
    }
    let mut local_edges: Vec<(u32, u32)> = edges.iter().map(|&(a, b)| (local[a as usize], local[b as usize])).collect();
    for (a_pos, &a) in order.iter().enumerate() {
        let step = a_pos as u32 + 1;
        for &b in &order[a_pos + 1..] {
            let examined = found_at[b as usize] >= step;
            if examined {
                continue;
            }
            let i = lattice.level(VertexId(a as u64), VertexId(b as u64));
            if rng.random::<f64>() < probs[i as usize - 1] {
                local_edges.push((local[a as usize], local[b as usize]));
            }
        }
    }
    let g = ComponentGraph::from_edges(order.len(), &local_edges)?;
    let diam = diameter_with_cap(&g, usize::MAX).value;
    Ok(CoupledDraw { cluster_size: cluster, cluster_diameter: diam, tree_size, tree_height: height, truncated })
}

/// Runs `replicates` coupled draws and counts violations of
/// `|C⁻(0)| ≤ |T|` and `diam(C⁻(0)) ≤ 2·height(T)`.
pub fn coupling_check(params: &ModelParams, rng: &RngPolicy, replicates: u64) -> Result<CouplingReport> {
    let mut report = CouplingReport {
        replicates,
        size_violations: 0,
        diameter_violations: 0,
        truncated: 0,
        mean_cluster_size: 0.0,
        mean_tree_size: 0.0,
        mean_slack: 0.0,
    };
    let (mut sc, mut st) = (0f64, 0f64);
    for rep in 0..replicates {
        let mut r = rng.stream(rep, StreamTag::Coupling, 0)?;
        let d = coupled_draw(params, &mut r, DEFAULT_SIZE_CAP, DEFAULT_HEIGHT_CAP)?;
        report.size_violations += (d.cluster_size > d.tree_size) as u64;
        report.diameter_violations += (d.cluster_diameter as u64 > 2 * d.tree_height) as u64;
        report.truncated += d.truncated as u64;
        sc += d.cluster_size as f64;
        st += d.tree_size as f64;
    }
    if replicates > 0 {
        report.mean_cluster_size = sc / replicates as f64;
        report.mean_tree_size = st / replicates as f64;
        report.mean_slack = report.mean_tree_size - report.mean_cluster_size;
    }
    Ok(report)
}
