//! Erdős–Rényi-class reference laws: the weighted random graph `G(x, q)`,
//! the exponential-clock exploration forest, size-biased orderings, and the
//! excursion limit of Brownian motion with parabolic drift.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::numeric::{compensated_sum, one_minus_exp_neg};
use crate::unionfind::UnionFind;

/// Excursions retained per limit sample, longest first.
pub const LIMIT_KEEP: usize = 64;
pub const DEFAULT_GRID_DT: f64 = 1e-4;
/// Open excursions at the horizon only count if they would rank this high.
pub const OPEN_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedConfig {
    weights: Vec<f64>,
    q: f64,
    /// Vertex indices by decreasing weight, ties by index.
    order: Vec<usize>,
}

impl WeightedConfig {
    pub fn new(weights: Vec<f64>, q: f64) -> Result<Self> {
        if weights.is_empty() {
            return param("weighted config needs at least one weight");
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return param(format!("weights must be positive and finite, got {w}"));
        }
        if !(q.is_finite() && q >= 0.0) {
            return param(format!("rate q must be finite and nonnegative, got {q}"));
        }
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        Ok(Self { weights, q, order })
    }

    /// Equal weights `n^{−2/3}` with `q = −n^{4/3}ln(1 − p)`, `p = 1/n + λn^{−4/3}`,
    /// so that every pair is open with probability exactly `p`.
    pub fn erdos_renyi(n: usize, lambda: f64) -> Result<Self> {
        let nf = n as f64;
        let p = 1.0 / nf + lambda * nf.powf(-4.0 / 3.0);
        if !(p > 0.0 && p < 1.0) {
            return param(format!("Erdős–Rényi edge probability {p} outside (0, 1)"));
        }
        Self::new(vec![nf.powf(-2.0 / 3.0); n], -nf.powf(4.0 / 3.0) * (-p).ln_1p())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sorted_weights(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.weights[i]).collect()
    }

    /// `σ_k = Σ x_i^k`.
    pub fn sigma(&self, k: i32) -> f64 {
        compensated_sum(self.weights.iter().map(|x| x.powi(k)))
    }

    pub fn x_max(&self) -> f64 {
        self.weights[self.order[0]]
    }

    /// Edge probability `1 − exp(−q x_i x_j)`.
    pub fn edge_prob(&self, i: usize, j: usize) -> f64 {
        one_minus_exp_neg(self.q * self.weights[i] * self.weights[j])
    }

    /// `(σ₃/σ₂³, q − 1/σ₂, x_max/σ₂)`.
    pub fn condition_stats(&self) -> (f64, f64, f64) {
        let s2 = self.sigma(2);
        (self.sigma(3) / (s2 * s2 * s2), self.q - 1.0 / s2, self.x_max() / s2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedComponent {
    /// Vertex indices in increasing order.
    pub members: Vec<usize>,
    pub mass: f64,
    pub edges: u64,
}

impl WeightedComponent {
    pub fn surplus(&self) -> i64 {
        self.edges as i64 - self.members.len() as i64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPartition {
    /// Components by decreasing mass, ties by smallest member.
    pub components: Vec<WeightedComponent>,
}

impl WeightedPartition {
    /// Canonical form: blocks sorted by smallest member.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut b: Vec<Vec<usize>> = self.components.iter().map(|c| c.members.clone()).collect();
        b.sort();
        b
    }

    pub fn masses(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mass).collect()
    }
}

fn sorted_components<K: Ord>(weights: &[f64], blocks: Vec<(Vec<usize>, u64)>, key: impl Fn(&[usize]) -> K) -> Vec<WeightedComponent> {
    let mut comps: Vec<(K, WeightedComponent)> = blocks
        .into_iter()
        .map(|(mut members, edges)| {
            members.sort_unstable();
            let mass = compensated_sum(members.iter().map(|&i| weights[i]));
            (key(&members), WeightedComponent { members, mass, edges })
        })
        .collect();
    comps.sort_by(|a, b| b.1.mass.total_cmp(&a.1.mass).then_with(|| a.0.cmp(&b.0)));
    comps.into_iter().map(|(_, c)| c).collect()
}

/// Samples `G(x, q)`. Rows are processed in decreasing-weight order so that
/// edge probabilities along a row are nonincreasing; candidates are skipped
/// geometrically at the current bound and thinned to the exact probability.
pub fn sample_gxq<R: Rng + ?Sized>(cfg: &WeightedConfig, rng: &mut R) -> WeightedPartition {
    let n = cfg.len();
    let order = &cfg.order;
    let mut uf = UnionFind::new(n);
    let mut edge_list: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        let u = order[a];
        let mut b = a + 1;
        if b >= n {
            break;
        }
        let mut bound = cfg.edge_prob(u, order[b]);
        while b < n && bound > 0.0 {
            if bound < 1.0 {
                let uni: f64 = 1.0 - rng.random::<f64>();
                let skip = (uni.ln() / (-bound).ln_1p()).floor();
                if skip >= (n - b) as f64 {
                    break;
                }
                b += skip as usize;
            }
            let v = order[b];
            let p = cfg.edge_prob(u, v);
            if rng.random::<f64>() * bound < p {
                uf.union(u as u32, v as u32);
                edge_list.push((u, v));
            }
            bound = p;
            b += 1;
        }
    }
    let mut root_block = vec![usize::MAX; n];
    let mut blocks: Vec<(Vec<usize>, u64)> = Vec::new();
    for v in 0..n {
        let r = uf.find(v as u32) as usize;
        if root_block[r] == usize::MAX {
            root_block[r] = blocks.len();
            blocks.push((Vec::new(), 0));
        }
        blocks[root_block[r]].0.push(v);
    }
    for (u, _) in edge_list {
        blocks[root_block[uf.find(u as u32) as usize]].1 += 1;
    }
    WeightedPartition { components: sorted_components(cfg.weights(), blocks, |m| m[0]) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationForest {
    /// Exploration order `v(1), …, v(n)` (0-based vertex indices).
    pub order: Vec<usize>,
    /// Parent of each vertex in the forest.
    pub parent: Vec<Option<usize>>,
    /// Start positions in `order` of each tree, followed by `n`.
    pub boundaries: Vec<usize>,
    /// Vertices explored when the maximal-mass tree closes.
    pub n_max: usize,
}

impl ExplorationForest {
    pub fn partition(&self, cfg: &WeightedConfig) -> WeightedPartition {
        let blocks: Vec<(Vec<usize>, u64)> = self
            .boundaries
            .windows(2)
            .map(|w| (self.order[w[0]..w[1]].to_vec(), (w[1] - w[0]) as u64 - 1))
            .collect();
        let pos = {
            let mut pos = vec![0usize; self.order.len()];
            for (k, &v) in self.order.iter().enumerate() {
                pos[v] = k;
            }
            pos
        };
        WeightedPartition {
            components: sorted_components(cfg.weights(), blocks, |m| m.iter().map(|&v| pos[v]).min().unwrap()),
        }
    }
}

fn pick_proportional<R: Rng + ?Sized>(candidates: &[usize], weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = candidates.iter().map(|&i| weights[i]).sum();
    let mut t = rng.random::<f64>() * total;
    for (k, &i) in candidates.iter().enumerate() {
        t -= weights[i];
        if t < 0.0 {
            return k;
        }
    }
    candidates.len() - 1
}

/// Breadth-first exploration with clocks `ξ_{v,i} ~ Exp(q x_i)`: the
/// children of `v` are the unseen `i` with `ξ_{v,i} ≤ x_v`, queued by clock
/// value. New trees start from a weight-proportional unseen vertex.
pub fn exploration_forest<R: Rng + ?Sized>(cfg: &WeightedConfig, rng: &mut R) -> ExplorationForest {
    let n = cfg.len();
    let x = cfg.weights();
    let mut unseen: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![None; n];
    let mut boundaries = Vec::new();
    let mut head = 0usize;
    let mut children: Vec<(f64, usize)> = Vec::new();
    while order.len() < n {
        if head == order.len() {
            let k = pick_proportional(&unseen, x, rng);
            boundaries.push(order.len());
            order.push(unseen.swap_remove(k));
        }
        let v = order[head];
        head += 1;
        children.clear();
        let mut k = 0;
        while k < unseen.len() {
            let i = unseen[k];
            let rate = cfg.q() * x[i];
            let clock = if rate > 0.0 { Exp::new(rate).expect("positive rate").sample(rng) } else { f64::INFINITY };
            if clock <= x[v] {
                children.push((clock, i));
                unseen.swap_remove(k);
            } else {
                k += 1;
            }
        }
        children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, c) in &children {
            parent[c] = Some(v);
            order.push(c);
        }
    }
    boundaries.push(n);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for w in boundaries.windows(2) {
        let mass = compensated_sum(order[w[0]..w[1]].iter().map(|&v| x[v]));
        if mass > best.0 {
            best = (mass, w[1]);
        }
    }
    ExplorationForest { order, parent, boundaries, n_max: best.1 }
}

/// Size-biased permutation of `0..weights.len()` via exponential arrival keys.
pub fn size_biased_permutation<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let e: f64 = rng.sample(rand_distr::Exp1);
            (e / w, i)
        })
        .collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.into_iter().map(|(_, i)| i).collect()
}

/// `sup_{k≤ℓ} |Σ_{i≤k} a_{v(i)}/(ℓ c_n) − k/ℓ|` for a size-biased order `v`
/// with `c_n = Σ y_i a_i / Σ y_i`.
pub fn size_biased_partial_sums<R: Rng + ?Sized>(weights: &[f64], a: &[f64], ell: usize, rng: &mut R) -> Result<f64> {
    if weights.len() != a.len() {
        return param("weights and a must have equal length");
    }
    if ell == 0 || ell > weights.len() {
        return param(format!("ell must lie in 1..={}, got {ell}", weights.len()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) || a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return param("weights must be positive and a nonnegative");
    }
    let c_n = compensated_sum(weights.iter().zip(a).map(|(y, a)| y * a)) / compensated_sum(weights.iter().copied());
    if c_n <= 0.0 {
        return param("c_n must be positive");
    }
    let perm = size_biased_permutation(weights, rng);
    let scale = ell as f64 * c_n;
    let mut partial = 0.0;
    let mut sup = 0.0f64;
    for (k, &v) in perm[..ell].iter().enumerate() {
        partial += a[v];
        sup = sup.max((partial / scale - (k + 1) as f64 / ell as f64).abs());
    }
    Ok(sup)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSample {
    pub lambda: f64,
    /// Longest excursion lengths of the reflected process, decreasing.
    pub gamma: Vec<f64>,
    pub areas: Vec<f64>,
    pub surplus_counts: Vec<u64>,
    pub grid_dt: f64,
    pub horizon: f64,
    /// Horizon was doubled once because a top-ranked excursion was open at the end.
    pub extended: bool,
    /// A top-ranked excursion was still open at the extended horizon.
    pub open_at_horizon: bool,
}

impl LimitSample {
    pub fn gamma1(&self) -> f64 {
        self.gamma.first().copied().unwrap_or(0.0)
    }

    pub fn surplus1(&self) -> u64 {
        self.surplus_counts.first().copied().unwrap_or(0)
    }
}

pub fn default_horizon(lambda: f64) -> f64 {
    f64::max(10.0, 4.0 * (1.0 + lambda.abs()))
}

struct Walk {
    w: f64,
    min: f64,
    start: usize,
    area: f64,
    step: usize,
    found: Vec<(f64, f64)>,
}

impl Walk {
    /// An excursion open at the horizon long enough to rank among the
    /// `OPEN_RANK` longest.
    fn open_matters(&mut self, dt: f64) -> bool {
        if self.w <= self.min {
            return false;
        }
        prune(&mut self.found);
        let len = (self.step - self.start) as f64 * dt;
        len > self.found.get(OPEN_RANK - 1).map_or(0.0, |f| f.0)
    }

    fn close(&mut self, dt: f64) {
        if self.area > 0.0 {
            self.found.push(((self.step - self.start) as f64 * dt, self.area));
            if self.found.len() > 4 * LIMIT_KEEP {
                prune(&mut self.found);
            }
        }
    }

    fn advance<R: Rng + ?Sized>(&mut self, lambda: f64, dt: f64, steps: usize, rng: &mut R) {
        let sd = dt.sqrt();
        for _ in 0..steps {
            let t0 = self.step as f64 * dt;
            let t1 = t0 + dt;
            let z: f64 = StandardNormal.sample(rng);
            let prev = self.w - self.min;
            self.w += sd * z + lambda * dt - 0.5 * (t1 * t1 - t0 * t0);
            self.step += 1;
            if self.w <= self.min {
                self.min = self.w;
                self.area += 0.5 * prev * dt;
                self.close(dt);
                self.start = self.step;
                self.area = 0.0;
            } else {
                self.area += 0.5 * (prev + self.w - self.min) * dt;
            }
        }
    }
}

fn prune(found: &mut Vec<(f64, f64)>) {
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    found.truncate(LIMIT_KEEP);
}

/// Simulates `W_λ(t) = B(t) + λt − t²/2` on a grid, reflects it at its running
/// minimum and records the longest excursions with Poisson surplus counts of
/// mean equal to the excursion area.
pub fn sample_limit<R: Rng + ?Sized>(lambda: f64, grid_dt: f64, horizon: Option<f64>, rng: &mut R) -> Result<LimitSample> {
    if !lambda.is_finite() {
        return param(format!("lambda must be finite, got {lambda}"));
    }
    let horizon = horizon.unwrap_or_else(|| default_horizon(lambda));
    if !(grid_dt > 0.0 && grid_dt.is_finite() && horizon.is_finite() && horizon > grid_dt) {
        return param(format!("need 0 < grid_dt < horizon, got dt={grid_dt}, T={horizon}"));
    }
    let steps = (horizon / grid_dt).round() as usize;
    let mut walk = Walk { w: 0.0, min: 0.0, start: 0, area: 0.0, step: 0, found: Vec::new() };
    walk.advance(lambda, grid_dt, steps, rng);
    let mut extended = false;
    let mut horizon_used = horizon;
    if walk.open_matters(grid_dt) {
        extended = true;
        horizon_used = 2.0 * horizon;
        walk.advance(lambda, grid_dt, steps, rng);
    }
    let open_at_horizon = walk.open_matters(grid_dt);
    walk.close(grid_dt);
    prune(&mut walk.found);
    let mut surplus_counts = Vec::with_capacity(walk.found.len());
    for &(_, area) in &walk.found {
        let k = if area > 0.0 {
            Poisson::new(area).map_err(|e| Error::Solver(format!("poisson mean {area}: {e}")))?.sample(rng) as u64
        } else {
            0
        };
        surplus_counts.push(k);
    }
    Ok(LimitSample {
        lambda,
        gamma: walk.found.iter().map(|f| f.0).collect(),
        areas: walk.found.iter().map(|f| f.1).collect(),
        surplus_counts,
        grid_dt,
        horizon: horizon_used,
        extended,
        open_at_horizon,
    })
}
