//! Power-law kernel, the normalization `ζ_n`, and every per-shell edge
//! probability table derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::{LatticeSpec, TorusSpec};
use crate::numeric::{compensated_sum, one_minus_exp_neg};

const MAX_BISECTION_STEPS: usize = 200;
const MAX_BRACKET_DOUBLINGS: usize = 1100;

/// `ρ(r) = A·r^{−α}` together with the window exponent `θ` and the
/// critical-window location `λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    pub a: f64,
    pub theta: f64,
    pub lambda: f64,
}

impl KernelSpec {
    pub fn new(alpha: f64, a: f64, theta: f64, lambda: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return param(format!("alpha must be positive and finite, got {alpha}"));
        }
        if !(a.is_finite() && a > 0.0) {
            return param(format!("A must be positive and finite, got {a}"));
        }
        if !theta.is_finite() || !lambda.is_finite() {
            return param("theta and lambda must be finite");
        }
        Ok(Self { alpha, a, theta, lambda })
    }

    #[inline]
    pub fn rho(&self, r: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else {
            self.a * r.powf(-self.alpha)
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    /// Checks `θ` against the admissible window for this `α` in dimension `d`.
    pub fn validate_theta(&self, d: u32) -> Result<()> {
        let (lo, hi) = theta_window(self.alpha, d)?;
        if self.theta > lo && self.theta < hi {
            Ok(())
        } else {
            param(format!("theta = {} outside the open window ({lo}, {hi}) for alpha = {}", self.theta, self.alpha))
        }
    }
}

/// Open interval of admissible `θ` for a given `α` and `d`.
pub fn theta_window(alpha: f64, d: u32) -> Result<(f64, f64)> {
    let d = d as f64;
    let hi = if alpha <= d / 2.0 {
        4.0 * alpha / 3.0
    } else if alpha <= 2.0 * d / 3.0 {
        2.0 * alpha - d / 2.0
    } else if alpha < 5.0 * d / 6.0 {
        2.5 * alpha - d
    } else {
        return param(format!("no theta window for alpha = {alpha} >= 5d/6"));
    };
    Ok((alpha, hi))
}

fn check_alpha(alpha: f64, d: u32) -> Result<()> {
    if alpha >= d as f64 {
        return param(format!("alpha = {alpha} must lie in (0, d) with d = {d}"));
    }
    Ok(())
}

/// Bisection for the unique root of a strictly decreasing `g` with
/// `g(ζ) = 1`, starting from a bracket around `center`.
fn solve_decreasing(center: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
    let mut z = 2.0;
    let (mut lo, mut hi) = (center / z, center * z);
    let mut doublings = 0;
    while !(g(lo) > 1.0 && g(hi) < 1.0) {
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !lo.is_normal() || !hi.is_finite() {
            return Err(Error::Solver(format!("could not bracket zeta around {center}")));
        }
        z *= 2.0;
        lo = center / z;
        hi = center * z;
    }
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = if hi / lo > 2.0 { (lo * hi).sqrt() } else { lo + (hi - lo) / 2.0 };
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Both endpoints are within one ulp; keep the one with the smaller residual.
    Ok(if (g(lo) - 1.0).abs() <= (g(hi) - 1.0).abs() { lo } else { hi })
}

/// `ρ(L^i)` for `i = 1..=n`.
fn shell_rho(lattice: &LatticeSpec, kernel: &KernelSpec) -> Vec<f64> {
    (1..=lattice.n()).map(|i| kernel.rho((lattice.l() as f64).powi(i as i32))).collect()
}

fn shell_sizes(lattice: &LatticeSpec) -> Vec<f64> {
    (1..=lattice.n()).map(|i| lattice.shell_size(i).expect("level in range") as f64).collect()
}

/// `Σ_i s_i (1 − e^{−ρ_i/ζ})`; equals 1 exactly at `ζ_n`.
fn open_mass(sizes: &[f64], rho: &[f64], zeta: f64) -> f64 {
    compensated_sum(sizes.iter().zip(rho).map(|(&s, &r)| s * one_minus_exp_neg(r / zeta)))
}

/// Solves for `ζ_n`.
///
/// Uses the equivalent form `Σ_i s_i (1 − e^{−ρ(L^i)/ζ}) = 1`, obtained by
/// subtracting the defining equation from `Σ_i s_i = L^{nd} − 1`.
pub fn solve_zeta(lattice: &LatticeSpec, kernel: &KernelSpec) -> Result<f64> {
    check_alpha(kernel.alpha, lattice.d())?;
    if lattice.volume() == 2 {
        return param("a two-point ball has no positive zeta solution");
    }
    let rho = shell_rho(lattice, kernel);
    if rho.iter().any(|&r| !(r > 0.0)) {
        return param("rho must be strictly positive on every shell");
    }
    let sizes = shell_sizes(lattice);
    let center = (lattice.l() as f64).powf(lattice.n() as f64 * (lattice.d() as f64 - kernel.alpha));
    solve_decreasing(center, |z| open_mass(&sizes, &rho, z))
}

/// Relative residual of the defining equation,
/// `|Σ_{x≠0} e^{−ρ(‖x‖)/ζ} − (L^{nd} − 2)| / (L^{nd} − 2)`.
pub fn zeta_residual(lattice: &LatticeSpec, kernel: &KernelSpec, zeta: f64) -> f64 {
    let rho = shell_rho(lattice, kernel);
    let sizes = shell_sizes(lattice);
    (open_mass(&sizes, &rho, zeta) - 1.0).abs() / (lattice.volume() as f64 - 2.0)
}

/// Lattice, kernel, `ζ_n` and all per-shell probability tables. Immutable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    lattice: LatticeSpec,
    kernel: KernelSpec,
    zeta: f64,
    rho: Vec<f64>,
    prob_minus: Vec<f64>,
    prob_critical: Vec<f64>,
    /// `ζ^{−1}L^{−nθ} + λL^{−4nd/3}`.
    sprinkle_exponent: f64,
}

impl ModelParams {
    pub fn new(lattice: LatticeSpec, kernel: KernelSpec) -> Result<Self> {
        let zeta = solve_zeta(&lattice, &kernel)?;
        Self::with_zeta(lattice, kernel, zeta)
    }

    /// Builds the tables for a precomputed `ζ_n` (e.g. to share one solve
    /// across several `λ`).
    pub fn with_zeta(lattice: LatticeSpec, kernel: KernelSpec, zeta: f64) -> Result<Self> {
        check_alpha(kernel.alpha, lattice.d())?;
        if !(zeta.is_finite() && zeta > 0.0) {
            return param(format!("zeta must be positive, got {zeta}"));
        }
        let n = lattice.n() as f64;
        let d = lattice.d() as f64;
        let l = lattice.l() as f64;
        let cut = l.powf(-n * kernel.theta);
        let window = kernel.lambda * l.powf(-4.0 * n * d / 3.0);
        let rho = shell_rho(&lattice, &kernel);
        let prob_minus: Vec<f64> = rho.iter().map(|&r| one_minus_exp_neg((r - cut).max(0.0) / zeta)).collect();
        let mut prob_critical = Vec::with_capacity(rho.len());
        for (i, &r) in rho.iter().enumerate() {
            let kappa = r / zeta + window;
            if kappa < 0.0 {
                return param(format!(
                    "lambda = {} makes the critical kernel negative at shell {}; increase n or lambda",
                    kernel.lambda,
                    i + 1
                ));
            }
            prob_critical.push(one_minus_exp_neg(kappa));
        }
        Ok(Self { lattice, kernel, zeta, rho, prob_minus, prob_critical, sprinkle_exponent: cut / zeta + window })
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// `ρ(L^i)`, `i` one-based.
    pub fn rho_shell(&self, i: u32) -> f64 {
        self.rho[i as usize - 1]
    }

    pub fn prob_minus(&self) -> &[f64] {
        &self.prob_minus
    }

    pub fn prob_critical(&self) -> &[f64] {
        &self.prob_critical
    }

    pub fn edge_prob_minus(&self, i: u32) -> Result<f64> {
        self.lattice.shell_size(i)?;
        Ok(self.prob_minus[i as usize - 1])
    }

    pub fn edge_prob_critical(&self, i: u32) -> Result<f64> {
        self.lattice.shell_size(i)?;
        Ok(self.prob_critical[i as usize - 1])
    }

    /// Exponent of the sprinkling probability; negative values make the
    /// two-stage construction invalid.
    pub fn sprinkle_exponent(&self) -> f64 {
        self.sprinkle_exponent
    }

    pub fn sprinkle_prob(&self) -> Result<f64> {
        if self.sprinkle_exponent < 0.0 {
            return param(format!(
                "sprinkling exponent {} is negative (lambda = {}); use direct critical sampling",
                self.sprinkle_exponent, self.kernel.lambda
            ));
        }
        Ok(one_minus_exp_neg(self.sprinkle_exponent))
    }

    /// Table for the scaled kernel `(1+ε)ρ/ζ_n`.
    pub fn prob_scaled(&self, eps: f64) -> Result<Vec<f64>> {
        if !(eps > -1.0) || !eps.is_finite() {
            return param(format!("epsilon must lie in (-1, inf), got {eps}"));
        }
        Ok(self.rho.iter().map(|&r| one_minus_exp_neg((1.0 + eps) * r / self.zeta)).collect())
    }

    /// `m_j^{(n)} = Σ_{i≤j} s_i 𝔭⁻_i`.
    pub fn branching_mean(&self, j: u32) -> Result<f64> {
        self.lattice.shell_size(j)?;
        Ok(compensated_sum(
            (1..=j).map(|i| self.lattice.shell_size(i).unwrap() as f64 * self.prob_minus[i as usize - 1]),
        ))
    }

    /// `q = λ + ζ_n^{−1}L^{n(4d/3 − θ)}`.
    pub fn q(&self) -> f64 {
        let n = self.lattice.n() as f64;
        let d = self.lattice.d() as f64;
        self.kernel.lambda + (self.lattice.l() as f64).powf(n * (4.0 * d / 3.0 - self.kernel.theta)) / self.zeta
    }

    /// Right side of the exact identity for `1 − m_n^{(n)}`.
    pub fn one_minus_mn_identity(&self) -> f64 {
        let n = self.lattice.n() as f64;
        let cut = (self.lattice.l() as f64).powf(-n * self.kernel.theta);
        (self.lattice.volume() as f64 - 2.0) * (cut / self.zeta).exp_m1()
    }

    /// Whether every shell has a strictly positive barely-subcritical kernel.
    pub fn minus_positive_everywhere(&self) -> bool {
        self.prob_minus.iter().all(|&p| p > 0.0)
    }

    pub fn n0(&self) -> Option<u32> {
        n0_threshold(&self.kernel, self.lattice.l())
    }
}

/// Smallest `n ≥ 1` with `A·L^{n(θ−α)} > 1`, past which `ρ(L^i) > L^{−nθ}`
/// on every shell `i ≤ n`. `None` if no such `n` exists.
pub fn n0_threshold(kernel: &KernelSpec, l: u64) -> Option<u32> {
    let gap = kernel.theta - kernel.alpha;
    let l = l as f64;
    let ok = |n: u32| kernel.a * l.powf(n as f64 * gap) > 1.0;
    if gap < 0.0 || (gap == 0.0 && !ok(1)) {
        return None;
    }
    (1..=u32::MAX).find(|&n| ok(n))
}

/// `ζ^T` on the torus: `Σ_k c_k (1 − e^{−ρ(k)/ζ}) = 1` over L∞ classes.
pub fn solve_zeta_torus(spec: &TorusSpec, kernel: &KernelSpec) -> Result<f64> {
    check_alpha(kernel.alpha, spec.d())?;
    if spec.m() < 3 {
        return param("torus zeta needs side length at least 3");
    }
    let (counts, rho) = torus_classes(spec, kernel);
    let center = (spec.m() as f64).powf(spec.d() as f64 - kernel.alpha);
    solve_decreasing(center, |z| open_mass(&counts, &rho, z))
}

pub fn torus_zeta_residual(spec: &TorusSpec, kernel: &KernelSpec, zeta: f64) -> f64 {
    let (counts, rho) = torus_classes(spec, kernel);
    (open_mass(&counts, &rho, zeta) - 1.0).abs() / (spec.volume() as f64 - 2.0)
}

fn torus_classes(spec: &TorusSpec, kernel: &KernelSpec) -> (Vec<f64>, Vec<f64>) {
    (1..=spec.max_class())
        .map(|k| (spec.class_count(k).unwrap() as f64, kernel.rho(k as f64)))
        .unzip()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TorusStage {
    /// `max{ρ/ζ^T + λ m^{−4d/3}, 0}`.
    Critical { lambda: f64 },
    /// `max{ρ − m^{−θ'}, 0}/ζ^T` with `θ' ∈ (α, d)`.
    BarelySubcritical { theta_prime: f64 },
}

/// Per-class edge probabilities, index `k − 1` for L∞ class `k`.
pub fn torus_probs(spec: &TorusSpec, kernel: &KernelSpec, zeta: f64, stage: TorusStage) -> Result<Vec<f64>> {
    let m = spec.m() as f64;
    let d = spec.d() as f64;
    let rho = (1..=spec.max_class()).map(|k| kernel.rho(k as f64));
    match stage {
        TorusStage::Critical { lambda } => {
            let shift = lambda * m.powf(-4.0 * d / 3.0);
            Ok(rho.map(|r| one_minus_exp_neg((r / zeta + shift).max(0.0))).collect())
        }
        TorusStage::BarelySubcritical { theta_prime } => {
            if !(theta_prime > kernel.alpha && theta_prime < d) {
                return param(format!("theta' = {theta_prime} must lie in (alpha, d)"));
            }
            let cut = m.powf(-theta_prime);
            Ok(rho.map(|r| one_minus_exp_neg((r - cut).max(0.0) / zeta)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lat(l: u64, d: u32, n: u32) -> LatticeSpec {
        LatticeSpec::new(l, d, n).unwrap()
    }

    fn ker(alpha: f64, theta: f64, lambda: f64) -> KernelSpec {
        KernelSpec::new(alpha, 1.0, theta, lambda).unwrap()
    }

    /// Plain bisection on the literal defining sum, no compensation.
    fn literal_zeta(lattice: &LatticeSpec, kernel: &KernelSpec) -> f64 {
        let lhs = |z: f64| -> f64 {
            (1..=lattice.n())
                .map(|i| {
                    let r = (lattice.l() as f64).powi(i as i32);
                    lattice.shell_size(i).unwrap() as f64 * (-kernel.rho(r) / z).exp()
                })
                .sum()
        };
        let target = lattice.volume() as f64 - 2.0;
        let (mut lo, mut hi) = (1e-6, 1e9);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if lhs(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn rho_convention() {
        let k = ker(0.5, 0.6, 0.0);
        assert_eq!(k.rho(0.0), 0.0);
        assert_eq!(k.rho(4.0), 0.5);
    }

    #[test]
    fn zeta_small_example() {
        let l = lat(2, 1, 2);
        let k = ker(0.5, 0.6, 0.0);
        let z = solve_zeta(&l, &k).unwrap();
        let lhs = (-1.0 / (2f64.sqrt() * z)).exp() + 2.0 * (-0.5 / z).exp();
        assert!((lhs - 2.0).abs() < 1e-12, "lhs = {lhs}");
        assert!((z - literal_zeta(&l, &k)).abs() < 1e-9 * z);
        assert!(zeta_residual(&l, &k, z) <= 1e-12);
    }

    #[test]
    fn zeta_residual_over_grid() {
        for (l, d, n, alpha) in [(2, 1, 3, 0.5), (2, 1, 12, 0.5), (3, 1, 8, 0.3), (2, 2, 6, 1.2), (4, 1, 10, 0.7)] {
            let (l, k) = (lat(l, d, n), ker(alpha, alpha * 1.1, 0.0));
            let z = solve_zeta(&l, &k).unwrap();
            assert!(zeta_residual(&l, &k, z) <= 1e-12);
            let oracle = literal_zeta(&l, &k);
            assert!((z - oracle).abs() <= 1e-9 * z, "{z} vs {oracle}");
        }
    }

    #[test]
    fn zeta_rejects_degenerate_inputs() {
        assert!(solve_zeta(&lat(2, 1, 1), &ker(0.5, 0.6, 0.0)).is_err());
        assert!(solve_zeta(&lat(2, 1, 4), &ker(1.0, 1.1, 0.0)).is_err());
        assert!(solve_zeta(&lat(3, 1, 1), &ker(0.5, 0.6, 0.0)).is_ok());
    }

    #[test]
    fn zeta_scales_linearly_in_a() {
        let l = lat(2, 1, 9);
        let z1 = solve_zeta(&l, &KernelSpec::new(0.5, 1.0, 0.6, 0.0).unwrap()).unwrap();
        let z2 = solve_zeta(&l, &KernelSpec::new(0.5, 2.0, 0.6, 0.0).unwrap()).unwrap();
        assert!((z2 / z1 - 2.0).abs() < 1e-13);
    }

    #[test]
    fn zeta_sandwich_constants_stable() {
        let k = ker(0.5, 0.6, 0.0);
        let ratios: Vec<f64> = (4..=12)
            .map(|n| solve_zeta(&lat(2, 1, n), &k).unwrap() / 2f64.powf(n as f64 * 0.5))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi / lo < 1.5, "{ratios:?}");
    }

    #[test]
    fn theta_windows() {
        assert_eq!(theta_window(0.5, 1).unwrap(), (0.5, 2.0 / 3.0));
        let (_, hi) = theta_window(0.6, 1).unwrap();
        assert!((hi - 0.7).abs() < 1e-15);
        let (_, hi) = theta_window(0.75, 1).unwrap();
        assert!((hi - 0.875).abs() < 1e-15);
        assert!(theta_window(0.9, 1).is_err());
        assert!(ker(0.5, 0.6, 0.0).validate_theta(1).is_ok());
        assert!(ker(0.5, 0.7, 0.0).validate_theta(1).is_err());
        assert!(ker(0.5, 0.5, 0.0).validate_theta(1).is_err());
    }

    #[test]
    fn prob_minus_direct_formula() {
        let p = ModelParams::new(lat(2, 1, 6), ker(0.5, 0.6, 0.0)).unwrap();
        let rho3 = 8f64.powf(-0.5);
        let cut = 2f64.powf(-3.6);
        let direct = 1.0 - (-(rho3 - cut) / p.zeta()).exp();
        let got = p.edge_prob_minus(3).unwrap();
        assert!((got - direct).abs() < 1e-15, "{got} vs {direct}");
        for i in 1..=6 {
            assert!(p.edge_prob_minus(i).unwrap() <= p.rho_shell(i) / p.zeta());
            assert!(p.edge_prob_minus(i).unwrap() <= p.edge_prob_critical(i).unwrap());
        }
        assert!(p.edge_prob_minus(7).is_err());
    }

    #[test]
    fn prob_minus_vanishes_below_cut() {
        // A tiny: rho below the cut on every shell
        let k = KernelSpec::new(0.5, 1e-9, 0.6, 0.0).unwrap();
        let p = ModelParams::new(lat(2, 1, 4), k).unwrap();
        assert!(p.prob_minus().iter().all(|&x| x == 0.0));
        assert_eq!(p.branching_mean(4).unwrap(), 0.0);
    }

    #[test]
    fn critical_at_zero_lambda() {
        let p = ModelParams::new(lat(2, 1, 8), ker(0.5, 0.6, 0.0)).unwrap();
        for i in 1..=8 {
            let want = 1.0 - (-p.rho_shell(i) / p.zeta()).exp();
            assert!((p.edge_prob_critical(i).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_lambda_clamp() {
        // inactive for moderate n
        assert!(ModelParams::new(lat(2, 1, 12), ker(0.5, 0.6, -1.0)).is_ok());
        // forced active: rejected as a whole
        assert!(ModelParams::new(lat(2, 1, 3), ker(0.5, 0.6, -1e6)).is_err());
    }

    #[test]
    fn composition_identity_per_shell() {
        for lambda in [-1.0, 0.0, 2.0] {
            for n in [4, 9, 12, 15] {
                let p = ModelParams::new(lat(2, 1, n), ker(0.5, 0.6, lambda)).unwrap();
                let t = p.sprinkle_prob().unwrap();
                for i in 1..=n {
                    let lhs = (1.0 - p.edge_prob_minus(i).unwrap()) * (1.0 - t);
                    let kappa = p.rho_shell(i) / p.zeta() + lambda * 2f64.powf(-4.0 * n as f64 / 3.0);
                    let rhs = (-kappa).exp();
                    assert!(((lhs - rhs) / rhs).abs() <= 1e-15, "n={n} i={i}");
                }
            }
        }
    }

    #[test]
    fn sprinkle_bounds() {
        // window shift between -rho_n/zeta and -L^{-n theta}/zeta
        let base = ModelParams::new(lat(2, 1, 3), ker(0.5, 0.6, 0.0)).unwrap();
        let cut = 2f64.powf(-1.8);
        let shift = -(cut + base.rho_shell(3)) / (2.0 * base.zeta());
        let lambda = shift * 2f64.powf(4.0);
        let p = ModelParams::with_zeta(*base.lattice(), ker(0.5, 0.6, lambda), base.zeta()).unwrap();
        assert!(p.sprinkle_exponent() < 0.0);
        assert!(p.sprinkle_prob().is_err());
        for n in 4..=16 {
            for lambda in [-1.0, 0.0, 3.0] {
                let p = ModelParams::new(lat(2, 1, n), ker(0.5, 0.6, lambda)).unwrap();
                let Ok(t) = p.sprinkle_prob() else { continue };
                let bound = (1.0 + lambda.abs()) * 2f64.powf(-0.6 * n as f64) / p.zeta();
                assert!(t <= bound, "n={n} lambda={lambda}");
            }
        }
        let p = ModelParams::new(lat(2, 1, 10), ker(0.5, 40.0, 0.0)).unwrap();
        assert!(p.sprinkle_prob().unwrap() < 1e-100);
    }

    #[test]
    fn branching_mean_identity_and_monotonicity() {
        for n in 2..=12 {
            let p = ModelParams::new(lat(2, 1, n), ker(0.5, 0.6, 0.0)).unwrap();
            assert!(p.minus_positive_everywhere());
            let mn = p.branching_mean(n).unwrap();
            let lhs = 1.0 - mn;
            let rhs = p.one_minus_mn_identity();
            assert!(((lhs - rhs) / rhs).abs() <= 1e-12, "n={n}: {lhs} vs {rhs}");
            let means: Vec<f64> = (1..=n).map(|j| p.branching_mean(j).unwrap()).collect();
            assert!(means.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn branching_mean_gap_below_top_level() {
        let gaps: Vec<f64> = (4..=14)
            .map(|n| {
                let p = ModelParams::new(lat(2, 1, n), ker(0.5, 0.6, 0.0)).unwrap();
                1.0 - p.branching_mean(n - 1).unwrap()
            })
            .collect();
        let delta = gaps.iter().cloned().fold(f64::MAX, f64::min);
        assert!(delta > 0.1, "{gaps:?}");
    }

    #[test]
    fn n0_threshold_values() {
        assert_eq!(n0_threshold(&ker(0.5, 0.6, 0.0), 2), Some(1));
        let k = KernelSpec::new(0.5, 0.5, 0.6, 0.0).unwrap();
        // 0.5 * 2^{0.1 n} > 1 first at n = 11
        assert_eq!(n0_threshold(&k, 2), Some(11));
        assert_eq!(n0_threshold(&KernelSpec::new(0.5, 0.5, 0.4, 0.0).unwrap(), 2), None);
        for n in 2..=14 {
            let p = ModelParams::new(lat(2, 1, n), k).unwrap();
            assert_eq!(p.minus_positive_everywhere(), n >= 11, "n={n}");
        }
    }

    #[test]
    fn q_formula() {
        let p = ModelParams::new(lat(2, 1, 9), ker(0.5, 0.6, 2.0)).unwrap();
        let want = 2.0 + 2f64.powf(9.0 * (4.0 / 3.0 - 0.6)) / p.zeta();
        assert!((p.q() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn torus_zeta_closed_form() {
        let t = TorusSpec::new(3, 1).unwrap();
        let z = solve_zeta_torus(&t, &ker(0.5, 0.6, 0.0)).unwrap();
        assert!((z - 1.0 / std::f64::consts::LN_2).abs() < 1e-14);
        assert!(solve_zeta_torus(&TorusSpec::new(2, 1).unwrap(), &ker(0.5, 0.6, 0.0)).is_err());
    }

    #[test]
    fn torus_zeta_residual_and_sandwich() {
        let k = ker(0.5, 0.6, 0.0);
        let ratios: Vec<f64> = [16u64, 32, 64, 128, 256, 512, 1024, 2048]
            .iter()
            .map(|&m| {
                let t = TorusSpec::new(m, 1).unwrap();
                let z = solve_zeta_torus(&t, &k).unwrap();
                assert!(torus_zeta_residual(&t, &k, z) <= 1e-12);
                z / (m as f64).powf(0.5)
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 2.0, "{ratios:?}");
        // successive increments shrink, so the ratio converges
        let steps: Vec<f64> = ratios.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.windows(2).all(|w| w[1] < w[0]), "{steps:?}");
        let t = TorusSpec::new(9, 2).unwrap();
        let z1 = solve_zeta_torus(&t, &KernelSpec::new(1.0, 1.0, 1.1, 0.0).unwrap()).unwrap();
        let z3 = solve_zeta_torus(&t, &KernelSpec::new(1.0, 3.0, 1.1, 0.0).unwrap()).unwrap();
        assert!((z3 / z1 - 3.0).abs() < 1e-13);
    }

    #[test]
    fn torus_tables() {
        let t = TorusSpec::new(11, 1).unwrap();
        let k = ker(0.5, 0.6, 0.0);
        let z = solve_zeta_torus(&t, &k).unwrap();
        let crit = torus_probs(&t, &k, z, TorusStage::Critical { lambda: 0.0 }).unwrap();
        let sub = torus_probs(&t, &k, z, TorusStage::BarelySubcritical { theta_prime: 0.7 }).unwrap();
        assert_eq!(crit.len(), 5);
        for (idx, (&c, &s)) in crit.iter().zip(&sub).enumerate() {
            let kk = (idx + 1) as f64;
            assert!((c - (1.0 - (-k.rho(kk) / z).exp())).abs() < 1e-15);
            assert!(s <= c);
        }
        assert!(torus_probs(&t, &k, z, TorusStage::BarelySubcritical { theta_prime: 1.0 }).is_err());
    }

    proptest! {
        #[test]
        fn zeta_residual_random(n in 2u32..16, alpha in 0.05f64..0.95, a in 0.1f64..10.0) {
            let l = lat(2, 1, n);
            let k = KernelSpec::new(alpha, a, alpha, 0.0).unwrap();
            let z = solve_zeta(&l, &k).unwrap();
            prop_assert!(zeta_residual(&l, &k, z) <= 1e-12);
        }
    }
}
