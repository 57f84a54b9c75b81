//! Goodness-of-fit tests, two-sample distances and summary statistics used
//! by the estimators, the experiment harness and the test suites.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Minimum expected count per pooled cell.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

/// Pools consecutive bins until each group carries at least
/// [`MIN_EXPECTED`]; a short tail joins the last group.
fn pool_bins(observed: &[f64], expected: &[f64]) -> Vec<(f64, f64)> {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= MIN_EXPECTED {
            groups.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => groups.push((o, e)),
        }
    }
    groups
}

/// Pearson goodness-of-fit of integer counts against cell probabilities.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareTest> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(Error::Param("observed and probability vectors must have equal nonzero length".into()));
    }
    let total: u64 = observed.iter().sum();
    let obs: Vec<f64> = observed.iter().map(|&o| o as f64).collect();
    let exp: Vec<f64> = probs.iter().map(|&p| p * total as f64).collect();
    let groups = pool_bins(&obs, &exp);
    let statistic: f64 = groups
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = groups.len().saturating_sub(1);
    Ok(ChiSquareTest { statistic, dof, p_value: chi_square_p(statistic, dof) })
}

/// 2×K homogeneity test between two count vectors over the same categories.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<ChiSquareTest> {
    if a.len() != b.len() {
        return Err(Error::Param("count vectors must cover the same categories".into()));
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = na + nb;
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut cols: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64, y as f64))
        .filter(|(x, y)| x + y > 0.0)
        .collect();
    cols.sort_by(|p, q| (q.0 + q.1).total_cmp(&(p.0 + p.1)));
    let min_share = na.min(nb) / total;
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (x, y) in cols {
        acc.0 += x;
        acc.1 += y;
        if (acc.0 + acc.1) * min_share >= MIN_EXPECTED {
            groups.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => groups.push(acc),
        }
    }
    let mut statistic = 0.0;
    for &(x, y) in &groups {
        let col = x + y;
        let (ea, eb) = (col * na / total, col * nb / total);
        statistic += (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb;
    }
    let dof = groups.len().saturating_sub(1);
    Ok(ChiSquareTest { statistic, dof, p_value: chi_square_p(statistic, dof) })
}

/// Homogeneity test between two samples of hashable categories.
pub fn categorical_homogeneity<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<ChiSquareTest> {
    let mut table: BTreeMap<T, (u64, u64)> = BTreeMap::new();
    for x in a {
        table.entry(x.clone()).or_default().0 += 1;
    }
    for x in b {
        table.entry(x.clone()).or_default().1 += 1;
    }
    let (ca, cb): (Vec<u64>, Vec<u64>) = table.values().cloned().unzip();
    chi_square_homogeneity(&ca, &cb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Largest gap between the two empirical distribution functions.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut x: Vec<f64> = a.to_vec();
    let mut y: Vec<f64> = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let d = ks_distance(a, b);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    Ok(KsTest { statistic: d, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d) })
}

/// Total variation distance between the empirical laws of two integer samples.
pub fn tv_distance(a: &[u64], b: &[u64]) -> f64 {
    let mut table: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for &x in a {
        table.entry(x).or_default().0 += 1.0 / a.len() as f64;
    }
    for &x in b {
        table.entry(x).or_default().1 += 1.0 / b.len() as f64;
    }
    0.5 * table.values().map(|(p, q)| (p - q).abs()).sum::<f64>()
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn iqr(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: x.len().min(y.len()) });
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Param("regressor has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(LinearFit { slope, intercept, r_squared, slope_se })
}

/// Percentile bootstrap interval for a two-sample statistic.
pub fn bootstrap_ci<R, F>(a: &[f64], b: &[f64], stat: F, reps: usize, level: f64, rng: &mut R) -> (f64, f64)
where
    R: Rng + ?Sized,
    F: Fn(&[f64], &[f64]) -> f64,
{
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    let mut values: Vec<f64> = (0..reps)
        .map(|_| {
            for slot in ra.iter_mut() {
                *slot = a[rng.random_range(0..a.len())];
            }
            for slot in rb.iter_mut() {
                *slot = b[rng.random_range(0..b.len())];
            }
            stat(&ra, &rb)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&values, tail), quantile_sorted(&values, 1.0 - tail))
}
