//! Ultrametric addressing for the hierarchical ball `Λ_n` and L∞ geometry
//! on the discrete torus.
//!
//! A vertex of `Λ_n` is a flat index in `[0, L^{nd})` read as `n` base-`L^d`
//! digits, level 1 least significant. Two vertices are at distance `L^i`
//! where `i` is the highest level at which their digits differ.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Largest admissible vertex count (exclusive).
pub const MAX_VOLUME: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub u64);

impl VertexId {
    #[inline]
    pub fn index(self) -> u64 {
        self.0
    }
}

impl From<u64> for VertexId {
    fn from(v: u64) -> Self {
        VertexId(v)
    }
}

/// Parameters of the ball `Λ_n ⊂ H_L^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    l: u64,
    d: u32,
    n: u32,
    /// `L^d`, the number of digit values per level.
    base: u64,
    /// `L^{nd}`.
    volume: u64,
}

impl LatticeSpec {
    pub fn new(l: u64, d: u32, n: u32) -> Result<Self> {
        if l < 2 {
            return param(format!("L must be at least 2, got {l}"));
        }
        if d < 1 {
            return param("d must be at least 1");
        }
        if n < 1 {
            return param("ball level n must be at least 1");
        }
        let base = checked_pow(l, d).filter(|&b| b < MAX_VOLUME);
        let Some(base) = base else {
            return param(format!("L^d = {l}^{d} exceeds the index width"));
        };
        match checked_pow(base, n) {
            Some(v) if v < MAX_VOLUME => Ok(Self { l, d, n, base, volume: v }),
            _ => param(format!("L^(nd) = {l}^({n}*{d}) exceeds 2^63")),
        }
    }

    #[inline]
    pub fn l(&self) -> u64 {
        self.l
    }

    #[inline]
    pub fn d(&self) -> u32 {
        self.d
    }

    #[inline]
    pub fn n(&self) -> u32 {
        self.n
    }

    /// `L^d`.
    #[inline]
    pub fn base(&self) -> u64 {
        self.base
    }

    /// `|Λ_n| = L^{nd}`.
    #[inline]
    pub fn volume(&self) -> u64 {
        self.volume
    }

    /// `L^{(i-1)d}`, the number of free lower-digit patterns below level `i`.
    #[inline]
    fn block(&self, i: u32) -> u64 {
        self.base.pow(i - 1)
    }

    #[inline]
    pub fn contains(&self, v: VertexId) -> bool {
        v.0 < self.volume
    }

    /// Digit of `v` at level `i ∈ [1, n]`.
    #[inline]
    pub fn digit(&self, v: VertexId, i: u32) -> u64 {
        (v.0 / self.block(i)) % self.base
    }

    pub fn digits(&self, v: VertexId) -> Vec<u64> {
        (1..=self.n).map(|i| self.digit(v, i)).collect()
    }

    /// Highest level at which `a` and `b` differ; `0` when `a == b`.
    #[inline]
    pub fn level(&self, a: VertexId, b: VertexId) -> u32 {
        let (mut x, mut y) = (a.0, b.0);
        let mut level = 0;
        while x != y {
            x /= self.base;
            y /= self.base;
            level += 1;
        }
        level
    }

    fn check_level(&self, i: u32) -> Result<()> {
        if i < 1 || i > self.n {
            return param(format!("level {i} outside [1, {}]", self.n));
        }
        Ok(())
    }

    /// Cardinality of the index range of unordered pairs at level `i`.
    pub fn pair_count(&self, i: u32) -> Result<u64> {
        self.check_level(i)?;
        let shell = (self.base - 1) as u128 * self.block(i) as u128;
        let pairs = self.volume as u128 * shell / 2;
        u64::try_from(pairs).map_err(|_| crate::Error::Param(format!("pair count at level {i} overflows")))
    }

    pub fn shell_size(&self, i: u32) -> Result<u64> {
        self.check_level(i)?;
        Ok((self.base - 1) * self.block(i))
    }

    /// For fixed `x` with `‖x‖ = L^i`, entry `k − 1` counts the `y ≠ x` with
    /// `‖y‖ = L^i` and `‖x − y‖ = L^k`, for `k = 1..=i`.
    pub fn same_shell_census(&self, i: u32) -> Result<Vec<u64>> {
        self.check_level(i)?;
        let mut census: Vec<u64> = (1..i).map(|k| self.shell_size(k).unwrap()).collect();
        census.push((self.base - 2) * self.block(i));
        Ok(census)
    }

    /// Decodes pair index `k ∈ [0, N_i)` into an unordered pair at distance
    /// exactly `L^i`, returned with the smaller index first.
    ///
    /// Mixed radix, outermost first: shared digits above level `i`, the
    /// lexicographic index of the distinct digit pair `a < b` at level `i`,
    /// the lower digits of the `a` endpoint, then those of the `b` endpoint.
    #[inline]
    pub fn decode_pair_unchecked(&self, i: u32, k: u64) -> (VertexId, VertexId) {
        let s = self.block(i);
        let mut rest = k;
        let low_b = rest % s;
        rest /= s;
        let low_a = rest % s;
        rest /= s;
        let digit_pairs = self.base * (self.base - 1) / 2;
        let pair_idx = rest % digit_pairs;
        let high = rest / digit_pairs;
        let (a, b) = digit_pair(self.base, pair_idx);
        let top = high * s * self.base;
        (VertexId(top + a * s + low_a), VertexId(top + b * s + low_b))
    }

    pub fn decode_pair(&self, i: u32, k: u64) -> Result<(VertexId, VertexId)> {
        let count = self.pair_count(i)?;
        if k >= count {
            return param(format!("pair index {k} outside [0, {count}) at level {i}"));
        }
        Ok(self.decode_pair_unchecked(i, k))
    }

    /// Inverse of [`decode_pair`](Self::decode_pair). Returns the level and
    /// the pair index; endpoint order is irrelevant.
    pub fn encode_pair(&self, x: VertexId, y: VertexId) -> Result<(u32, u64)> {
        if !self.contains(x) || !self.contains(y) {
            return param("vertex outside the ball");
        }
        let i = self.level(x, y);
        if i == 0 {
            return param("a pair needs two distinct vertices");
        }
        let s = self.block(i);
        let (mut da, mut db) = (self.digit(x, i), self.digit(y, i));
        let (mut la, mut lb) = (x.0 % s, y.0 % s);
        if da > db {
            std::mem::swap(&mut da, &mut db);
            std::mem::swap(&mut la, &mut lb);
        }
        let high = x.0 / (s * self.base);
        let digit_pairs = self.base * (self.base - 1) / 2;
        let pair_idx = digit_pair_index(self.base, da, db);
        Ok((i, ((high * digit_pairs + pair_idx) * s + la) * s + lb))
    }

    /// The `k`-th vertex at distance exactly `L^i` from `y`,
    /// `k ∈ [0, shell_size(i))`.
    #[inline]
    pub fn shell_member(&self, y: VertexId, i: u32, k: u64) -> VertexId {
        let s = self.block(i);
        let shift = 1 + k / s;
        let low = k % s;
        let above = s * self.base;
        let digit = (self.digit(y, i) + shift) % self.base;
        VertexId(y.0 / above * above + digit * s + low)
    }
}

/// `a < b` for the `idx`-th pair in lexicographic order over `[0, base)`.
#[inline]
fn digit_pair(base: u64, mut idx: u64) -> (u64, u64) {
    let mut a = 0;
    loop {
        let row = base - 1 - a;
        if idx < row {
            return (a, a + 1 + idx);
        }
        idx -= row;
        a += 1;
    }
}

#[inline]
fn digit_pair_index(base: u64, a: u64, b: u64) -> u64 {
    // rows before a: sum_{r<a} (base - 1 - r)
    a * (base - 1) - a * a.saturating_sub(1) / 2 + (b - a - 1)
}

fn checked_pow(b: u64, e: u32) -> Option<u64> {
    let mut acc: u64 = 1;
    for _ in 0..e {
        acc = acc.checked_mul(b)?;
    }
    Some(acc)
}

/// Hierarchical distance `‖a − b‖`: `L^i` for the highest differing level
/// `i`, or `0`.
pub fn hier_distance(a: VertexId, b: VertexId, spec: &LatticeSpec) -> u64 {
    match spec.level(a, b) {
        0 => 0,
        i => spec.l.pow(i),
    }
}

pub fn shell_size(i: u32, spec: &LatticeSpec) -> Result<u64> {
    spec.shell_size(i)
}

pub fn pair_count(i: u32, spec: &LatticeSpec) -> Result<u64> {
    spec.pair_count(i)
}

pub fn decode_pair(i: u32, k: u64, spec: &LatticeSpec) -> Result<(VertexId, VertexId)> {
    spec.decode_pair(i, k)
}

/// Side length `m` and dimension `d` of the discrete torus `(Z/mZ)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusSpec {
    m: u64,
    d: u32,
    volume: u64,
}

impl TorusSpec {
    pub fn new(m: u64, d: u32) -> Result<Self> {
        if m < 2 {
            return param(format!("torus side must be at least 2, got {m}"));
        }
        if d < 1 {
            return param("d must be at least 1");
        }
        match checked_pow(m, d) {
            Some(v) if v < MAX_VOLUME => Ok(Self { m, d, volume: v }),
            _ => param(format!("m^d = {m}^{d} exceeds 2^63")),
        }
    }

    #[inline]
    pub fn m(&self) -> u64 {
        self.m
    }

    #[inline]
    pub fn d(&self) -> u32 {
        self.d
    }

    #[inline]
    pub fn volume(&self) -> u64 {
        self.volume
    }

    /// Largest L∞ distance, `floor(m/2)`.
    #[inline]
    pub fn max_class(&self) -> u64 {
        self.m / 2
    }

    /// Coordinates of a flat index, coordinate 0 least significant.
    pub fn coords(&self, idx: u64) -> Vec<u64> {
        let mut rest = idx;
        (0..self.d)
            .map(|_| {
                let c = rest % self.m;
                rest /= self.m;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[u64]) -> u64 {
        coords.iter().rev().fold(0, |acc, &c| acc * self.m + c % self.m)
    }

    /// `|{x : ‖x‖_T ≤ k}| = min(2k+1, m)^d`.
    fn ball_count(&self, k: u64) -> u64 {
        (2 * k + 1).min(self.m).pow(self.d)
    }

    pub fn class_count(&self, k: u64) -> Result<u64> {
        if k < 1 || k > self.max_class() {
            return param(format!("distance class {k} outside [1, {}]", self.max_class()));
        }
        Ok(self.ball_count(k) - self.ball_count(k - 1))
    }
}

#[inline]
fn circular(a: u64, b: u64, m: u64) -> u64 {
    let diff = a.abs_diff(b) % m;
    diff.min(m - diff)
}

/// L∞ distance on the torus.
pub fn torus_distance(a: &[u64], b: &[u64], spec: &TorusSpec) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| circular(x, y, spec.m))
        .max()
        .unwrap_or(0)
}

/// L∞ distance between two flat torus indices.
pub fn torus_index_distance(a: u64, b: u64, spec: &TorusSpec) -> u64 {
    let (mut x, mut y) = (a, b);
    let mut best = 0;
    for _ in 0..spec.d {
        best = best.max(circular(x % spec.m, y % spec.m, spec.m));
        x /= spec.m;
        y /= spec.m;
    }
    best
}

pub fn torus_class_count(k: u64, spec: &TorusSpec) -> Result<u64> {
    spec.class_count(k)
}
