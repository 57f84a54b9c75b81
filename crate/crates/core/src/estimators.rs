//! Monte-Carlo pipelines for the two-point function, the Δ sums, the
//! criticality diagnostics and the phase-transition order parameters.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::geometry::{LatticeSpec, VertexId};
use crate::graphstats::{aggregates, AnalysisOptions};
use crate::kernel::{KernelSpec, ModelParams};
use crate::numeric::compensated_sum;
use crate::rng::{RngPolicy, StreamTag};
use crate::sampler::{sample_stratified, skip_sample, Stage};
use crate::stats::{iqr, linear_fit, median, LinearFit};

/// Per-shell connection probability estimates `P(0 ↔ x)`, `‖x‖ = L^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellEstimate {
    pub replicates: u64,
    pub shell_sizes: Vec<u64>,
    pub hits: Vec<u64>,
    pub p_hat: Vec<f64>,
    pub se: Vec<f64>,
}

impl ShellEstimate {
    pub fn from_hits(lattice: &LatticeSpec, hits: Vec<u64>, replicates: u64) -> Self {
        let shell_sizes: Vec<u64> = (1..=lattice.n()).map(|i| lattice.shell_size(i).unwrap()).collect();
        let p_hat: Vec<f64> = hits.iter().zip(&shell_sizes).map(|(&h, &s)| h as f64 / (replicates as f64 * s as f64)).collect();
        let se = p_hat.iter().map(|&p| (p * (1.0 - p) / replicates as f64).sqrt()).collect();
        Self { replicates, shell_sizes, hits, p_hat, se }
    }

    /// Least-squares fit of `ln p̂_i` on `i·ln L` over shells `1..=max_shell`
    /// with a positive estimate.
    pub fn decay_fit(&self, l: u64, max_shell: u32) -> Result<LinearFit> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .p_hat
            .iter()
            .enumerate()
            .take(max_shell as usize)
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| ((i + 1) as f64 * (l as f64).ln(), p.ln()))
            .unzip();
        linear_fit(&x, &y)
    }
}

/// `a_0 = 2 − θ/α`.
pub fn plateau_exponent(kernel: &KernelSpec) -> f64 {
    2.0 - kernel.theta / kernel.alpha
}

/// Breadth-first exploration of the cluster of `base` in the graph with
/// per-shell edge probabilities `probs`. Coins are drawn only for pairs with
/// an undiscovered endpoint, so every pair is tested at most once.
pub fn explore_cluster<R: Rng + ?Sized>(lattice: &LatticeSpec, probs: &[f64], base: VertexId, rng: &mut R) -> Result<Vec<VertexId>> {
    let mut seen: HashSet<u64> = HashSet::from([base.0]);
    let mut queue = vec![base.0];
    let mut head = 0;
    while head < queue.len() {
        let y = VertexId(queue[head]);
        head += 1;
        for i in 1..=lattice.n() {
            let s = lattice.shell_size(i)?;
            skip_sample(s, probs[i as usize - 1], rng, |k| {
                let z = lattice.shell_member(y, i, k).0;
                if seen.insert(z) {
                    queue.push(z);
                }
            })?;
        }
    }
    Ok(queue.into_iter().map(VertexId).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basepoint {
    Origin,
    Uniform,
}

/// Shell-resolved cluster hit counts of a basepoint over `replicates`
/// independent graphs with edge probabilities `probs`.
pub fn two_point_with(
    lattice: &LatticeSpec,
    probs: &[f64],
    basepoint: Basepoint,
    replicates: u64,
    rng: &RngPolicy,
) -> Result<ShellEstimate> {
    if probs.len() != lattice.n() as usize {
        return param(format!("expected {} shell probabilities, got {}", lattice.n(), probs.len()));
    }
    let n = lattice.n() as usize;
    let hits = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<u64>> {
            let mut r = rng.stream(rep, StreamTag::Exploration, 0)?;
            let base = match basepoint {
                Basepoint::Origin => VertexId(0),
                Basepoint::Uniform => VertexId(r.random_range(0..lattice.volume())),
            };
            let mut h = vec![0u64; n];
            for y in explore_cluster(lattice, probs, base, &mut r)? {
                if y != base {
                    h[lattice.level(base, y) as usize - 1] += 1;
                }
            }
            Ok(h)
        })
        .try_reduce(|| vec![0u64; n], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
    Ok(ShellEstimate::from_hits(lattice, hits, replicates))
}

/// Two-point function of the barely-subcritical graph `G⁻` from vertex 0.
pub fn two_point(params: &ModelParams, replicates: u64, rng: &RngPolicy) -> Result<ShellEstimate> {
    two_point_with(params.lattice(), params.prob_minus(), Basepoint::Origin, replicates, rng)
}

/// Plug-in estimates `(Δ̂_n, Δ̃̂_n)` from shell estimates. Pairs in distinct
/// shells are at the larger shell's distance; pairs in the same shell use the
/// exact same-shell census.
pub fn delta_estimates(est: &ShellEstimate, params: &ModelParams) -> Result<(f64, f64)> {
    let lattice = params.lattice();
    let n = lattice.n() as usize;
    if est.p_hat.len() != n {
        return param("shell estimate does not match the lattice depth");
    }
    let z = params.zeta();
    let j: Vec<f64> = (1..=n as u32).map(|i| params.rho_shell(i) / z).collect();
    let mass: Vec<f64> = (0..n).map(|i| est.shell_sizes[i] as f64 * est.p_hat[i]).collect();
    let delta_tilde = compensated_sum((0..n).map(|i| mass[i] * j[i]));
    let mut terms = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                terms.push(mass[a] * mass[b] * j[a.max(b)]);
            }
        }
        let census = lattice.same_shell_census(a as u32 + 1)?;
        let inner = compensated_sum(census.iter().enumerate().map(|(k, &c)| c as f64 * j[k]));
        terms.push(mass[a] * est.p_hat[a] * inner);
    }
    Ok((compensated_sum(terms), delta_tilde))
}

/// Median and interquartile range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let (q25, q75) = iqr(xs);
        Self { median: median(xs), q25, q75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: u32,
    pub lambda: f64,
    pub replicates: u64,
    pub master_seed: u64,
    /// `q − 1/σ₂` at `lambda`.
    pub q_minus_inv_sigma2: Vec<f64>,
    /// `σ₃/σ₂³`.
    pub sigma_ratio: Vec<f64>,
    /// `τ·ζ_n^{−2}·L^{n(7d/3 − 2θ)}`.
    pub tau_rescaled: Vec<f64>,
    /// Replicates whose `τ` used only exact mean distances.
    pub tau_exact: u64,
    /// `|C_1|/L^{nd}` in `G⁻`.
    pub order_parameter: Vec<f64>,
    pub delta: Option<(f64, f64)>,
}

impl DiagnosticsReport {
    /// `q − 1/σ₂` samples at another `λ`; the graph `G⁻` does not depend on `λ`.
    pub fn at_lambda(&self, lambda: f64) -> Vec<f64> {
        self.q_minus_inv_sigma2.iter().map(|v| v + lambda - self.lambda).collect()
    }

    pub fn summaries(&self) -> [(&'static str, Summary); 4] {
        [
            ("q_minus_inv_sigma2", Summary::of(&self.q_minus_inv_sigma2)),
            ("sigma3_over_sigma2_cubed", Summary::of(&self.sigma_ratio)),
            ("tau_rescaled", Summary::of(&self.tau_rescaled)),
            ("order_parameter", Summary::of(&self.order_parameter)),
        ]
    }
}

/// Per replicate: sample `G⁻`, compute the aggregates and the three
/// criticality statistics.
pub fn criticality_diagnostics(params: &ModelParams, replicates: u64, rng: &RngPolicy) -> Result<DiagnosticsReport> {
    let lattice = params.lattice();
    let (n, d) = (lattice.n() as f64, lattice.d() as f64);
    let l = lattice.l() as f64;
    let theta = params.kernel().theta;
    let tau_scale = l.powf(n * (7.0 * d / 3.0 - 2.0 * theta)) / (params.zeta() * params.zeta());
    let q = params.q();
    let volume = lattice.volume() as f64;
    let opts = AnalysisOptions::default();
    let rows = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<(f64, f64, f64, bool, f64)> {
            let s = sample_stratified(params, Stage::Minus, rng, rep)?;
            let a = aggregates(&s, &opts, rng)?;
            let c1 = s.components()[0].size as f64;
            Ok((q - 1.0 / a.sigma2, a.sigma3 / a.sigma2.powi(3), a.tau * tau_scale, a.tau_exact, c1 / volume))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiagnosticsReport {
        n: lattice.n(),
        lambda: params.kernel().lambda,
        replicates,
        master_seed: rng.master_seed,
        q_minus_inv_sigma2: rows.iter().map(|r| r.0).collect(),
        sigma_ratio: rows.iter().map(|r| r.1).collect(),
        tau_rescaled: rows.iter().map(|r| r.2).collect(),
        tau_exact: rows.iter().filter(|r| r.3).count() as u64,
        order_parameter: rows.iter().map(|r| r.4).collect(),
        delta: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub n: u32,
    pub epsilon: f64,
    pub replicate: u64,
    pub c1: u64,
    /// `|C_1|/(n ε^{−2})`.
    pub subcritical_ratio: f64,
    /// `|C_1|/L^{nd}`.
    pub supercritical_fraction: f64,
}

/// Largest component under the scaled kernels `(1+ε)ζ_n^{−1}J` over an
/// `(ε, n)` grid. Replicate `r` at grid point `(ε, n)` uses replicate index
/// `r` of a policy whose seed is derived from the grid point.
pub fn phase_sweep(
    lattice_l: u64,
    d: u32,
    kernel: &KernelSpec,
    epsilons: &[f64],
    n_values: &[u32],
    replicates: u64,
    rng: &RngPolicy,
) -> Result<Vec<PhaseRow>> {
    let mut rows = Vec::new();
    for (gi, &n) in n_values.iter().enumerate() {
        let params = ModelParams::new(LatticeSpec::new(lattice_l, d, n)?, *kernel)?;
        let volume = params.lattice().volume() as f64;
        for (ei, &eps) in epsilons.iter().enumerate() {
            params.prob_scaled(eps)?;
            let policy = RngPolicy::new(grid_seed(rng.master_seed, gi as u64, ei as u64));
            let chunk = (0..replicates)
                .into_par_iter()
                .map(|rep| -> Result<PhaseRow> {
                    let s = sample_stratified(&params, Stage::Scaled(eps), &policy, rep)?;
                    let c1 = s.components()[0].size;
                    Ok(PhaseRow {
                        n,
                        epsilon: eps,
                        replicate: rep,
                        c1,
                        subcritical_ratio: c1 as f64 * eps * eps / n as f64,
                        supercritical_fraction: c1 as f64 / volume,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.extend(chunk);
        }
    }
    Ok(rows)
}

/// Derives an independent master seed for one cell of a parameter grid.
pub fn grid_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut r = RngPolicy::new(master).stream_unchecked(a, StreamTag::Misc, b as u32);
    r.random()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailProfile {
    /// `fraction[s − 1]` is the mean of `L^{−nd}#{y : |C(y)| ≥ s}`.
    pub fraction: Vec<f64>,
    /// Fit of `ln fraction` on `s` over the well-sampled range.
    pub fit: Option<LinearFit>,
    pub fit_range: (u64, u64),
}

/// Minimum number of supporting vertices (summed over replicates) for a
/// tail point to enter the exponential fit.
pub const TAIL_FIT_MIN_SUPPORT: f64 = 50.0;

pub fn cluster_tail_profile(params: &ModelParams, stage: Stage<'_>, replicates: u64, rng: &RngPolicy) -> Result<TailProfile> {
    if replicates == 0 {
        return param("cluster_tail_profile needs at least one replicate");
    }
    let samples = (0..replicates)
        .into_par_iter()
        .map(|rep| sample_stratified(params, stage, rng, rep).map(|s| s.component_sizes()))
        .collect::<Result<Vec<_>>>()?;
    let max = samples.iter().flat_map(|s| s.first().copied()).max().unwrap_or(1) as usize;
    // vertices in components of size exactly s, then suffix sums
    let mut at = vec![0u64; max + 1];
    for sizes in &samples {
        for &s in sizes {
            at[s as usize] += s;
        }
    }
    let mut support = vec![0u64; max + 2];
    for s in (1..=max).rev() {
        support[s] = support[s + 1] + at[s];
    }
    let denom = params.lattice().volume() as f64 * replicates as f64;
    let fraction: Vec<f64> = (1..=max).map(|s| support[s] as f64 / denom).collect();
    let hi = (1..=max).take_while(|&s| support[s] as f64 >= TAIL_FIT_MIN_SUPPORT).last().unwrap_or(0) as u64;
    let fit = if hi >= 3 {
        let xs: Vec<f64> = (1..=hi).map(|s| s as f64).collect();
        let ys: Vec<f64> = (1..=hi).map(|s| fraction[s as usize - 1].ln()).collect();
        Some(linear_fit(&xs, &ys)?)
    } else {
        None
    };
    Ok(TailProfile { fraction, fit, fit_range: (1, hi) })
}
