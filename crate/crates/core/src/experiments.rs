//! Configuration, suite orchestration, reproducible outputs and law
//! comparison.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::branching::{coupling_check, sample_tree};
use crate::coalescent::{sample_limit, LimitSample};
use crate::error::{Error, Result};
use crate::estimators::{criticality_diagnostics, delta_estimates, grid_seed, phase_sweep, plateau_exponent, two_point, Summary};
use crate::geometry::{LatticeSpec, TorusSpec};
use crate::graphstats::{analyze_component, AnalysisOptions, CycleValue};
use crate::kernel::{solve_zeta_torus, torus_probs, KernelSpec, ModelParams, TorusStage};
use crate::rng::{RngPolicy, StreamTag};
use crate::sampler::{sample_stratified, sample_torus, PercolationSample, Stage, NAIVE_MAX_VOLUME};
use crate::stats::{bootstrap_ci, ks_distance, quantile, tv_distance};

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_COMPARE_SAMPLES: usize = 100;
pub const BOOTSTRAP_REPS: usize = 200;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    PhaseSweep,
    CriticalWindow,
    SurplusGirth,
    Diagnostics,
    TwoPoint,
    Branching,
    CoalescentReference,
    Torus,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::PhaseSweep,
        Suite::CriticalWindow,
        Suite::SurplusGirth,
        Suite::Diagnostics,
        Suite::TwoPoint,
        Suite::Branching,
        Suite::CoalescentReference,
        Suite::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::PhaseSweep => "phase-sweep",
            Suite::CriticalWindow => "critical-window",
            Suite::SurplusGirth => "surplus-girth",
            Suite::Diagnostics => "diagnostics",
            Suite::TwoPoint => "two-point",
            Suite::Branching => "branching",
            Suite::CoalescentReference => "coalescent-reference",
            Suite::Torus => "torus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Flat key-value experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub l: u64,
    pub d: u32,
    pub alpha: f64,
    pub a: f64,
    pub theta: f64,
    pub lambda: f64,
    pub n_values: Vec<u32>,
    pub replicates: u64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub size_cap: u64,
    pub height_cap: u64,
    pub surplus_cap: i64,
    pub exact_cap: usize,
    pub epsilons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub grid_dt: f64,
    pub limit_replicates: u64,
    pub torus_m: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: Suite::CriticalWindow,
            l: 2,
            d: 1,
            alpha: 0.5,
            a: 1.0,
            theta: 0.6,
            lambda: 0.0,
            n_values: vec![9, 12, 15],
            replicates: 500,
            master_seed: 1,
            output_dir: PathBuf::from("out"),
            size_cap: crate::branching::DEFAULT_SIZE_CAP,
            height_cap: crate::branching::DEFAULT_HEIGHT_CAP,
            surplus_cap: crate::graphstats::DEFAULT_SURPLUS_CAP,
            exact_cap: crate::graphstats::DEFAULT_EXACT_CAP,
            epsilons: vec![-0.5, 0.5],
            lambdas: vec![-1.0, 0.0, 2.0],
            grid_dt: crate::coalescent::DEFAULT_GRID_DT,
            limit_replicates: 2000,
            torus_m: vec![64, 256],
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|s| s.trim().parse::<T>().map_err(|_| format!("cannot parse list element '{}'", s.trim()))).collect()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let cerr = |msg: String| Error::Config { line: line_no, msg };
            let (key, value) = line.split_once('=').ok_or_else(|| cerr("expected 'key = value'".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(cerr(format!("duplicate key '{key}'")));
            }
            macro_rules! scalar {
                ($field:expr) => {
                    $field = value.parse().map_err(|_| cerr(format!("cannot parse value '{value}' for '{key}'")))?
                };
            }
            macro_rules! list {
                ($field:expr) => {
                    $field = parse_list(value).map_err(cerr)?
                };
            }
            match key {
                "suite" => cfg.suite = Suite::parse(value).ok_or_else(|| cerr(format!("unknown suite '{value}'")))?,
                "L" => scalar!(cfg.l),
                "d" => scalar!(cfg.d),
                "alpha" => scalar!(cfg.alpha),
                "A" => scalar!(cfg.a),
                "theta" => scalar!(cfg.theta),
                "lambda" => scalar!(cfg.lambda),
                "n" => list!(cfg.n_values),
                "replicates" => scalar!(cfg.replicates),
                "master_seed" => scalar!(cfg.master_seed),
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "size_cap" => scalar!(cfg.size_cap),
                "height_cap" => scalar!(cfg.height_cap),
                "surplus_cap" => scalar!(cfg.surplus_cap),
                "exact_cap" => scalar!(cfg.exact_cap),
                "epsilons" => list!(cfg.epsilons),
                "lambdas" => list!(cfg.lambdas),
                "grid_dt" => scalar!(cfg.grid_dt),
                "limit_replicates" => scalar!(cfg.limit_replicates),
                "torus_m" => list!(cfg.torus_m),
                _ => return Err(cerr(format!("unknown key '{key}'"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("suite", self.suite.name().into());
        kv("L", self.l.to_string());
        kv("d", self.d.to_string());
        kv("alpha", self.alpha.to_string());
        kv("A", self.a.to_string());
        kv("theta", self.theta.to_string());
        kv("lambda", self.lambda.to_string());
        kv("n", join(&self.n_values));
        kv("replicates", self.replicates.to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("size_cap", self.size_cap.to_string());
        kv("height_cap", self.height_cap.to_string());
        kv("surplus_cap", self.surplus_cap.to_string());
        kv("exact_cap", self.exact_cap.to_string());
        kv("epsilons", join(&self.epsilons));
        kv("lambdas", join(&self.lambdas));
        kv("grid_dt", self.grid_dt.to_string());
        kv("limit_replicates", self.limit_replicates.to_string());
        kv("torus_m", join(&self.torus_m));
        s
    }

    /// Canonical text without `output_dir`; outputs depend only on this.
    pub fn reproducible_text(&self) -> String {
        self.to_text().lines().filter(|l| !l.starts_with("output_dir =")).map(|l| format!("{l}\n")).collect()
    }

    /// SHA-256 of [`Self::reproducible_text`].
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.reproducible_text().as_bytes()))
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.alpha, self.a, self.theta, self.lambda)
    }

    pub fn params(&self, n: u32) -> Result<ModelParams> {
        ModelParams::new(LatticeSpec::new(self.l, self.d, n)?, self.kernel()?)
    }

    /// Checks every constraint the selected suite relies on before sampling.
    pub fn validate(&self) -> Result<()> {
        let p = |m: String| Err(Error::Param(m));
        if self.replicates == 0 {
            return p("replicates must be positive".into());
        }
        if self.exact_cap == 0 || self.size_cap == 0 || self.height_cap == 0 {
            return p("caps must be positive".into());
        }
        if self.surplus_cap < 0 {
            return p("surplus_cap must be nonnegative".into());
        }
        let kernel = self.kernel()?;
        if self.suite == Suite::Torus {
            if self.torus_m.is_empty() {
                return p("torus suite needs torus_m".into());
            }
            for &m in &self.torus_m {
                let spec = TorusSpec::new(m, self.d)?;
                solve_zeta_torus(&spec, &kernel)?;
            }
            return Ok(());
        }
        if self.suite == Suite::CoalescentReference {
            if self.lambdas.is_empty() || !(self.grid_dt > 0.0) {
                return p("coalescent-reference needs lambdas and grid_dt > 0".into());
            }
            return Ok(());
        }
        if self.n_values.is_empty() {
            return p("n grid must be nonempty".into());
        }
        kernel.validate_theta(self.d)?;
        for &n in &self.n_values {
            let params = self.params(n)?;
            if self.suite == Suite::PhaseSweep {
                for &eps in &self.epsilons {
                    params.prob_scaled(eps)?;
                }
            }
        }
        match self.suite {
            Suite::PhaseSweep if self.epsilons.is_empty() => p("phase-sweep needs epsilons".into()),
            Suite::SurplusGirth if !(self.grid_dt > 0.0) || self.limit_replicates == 0 => {
                p("surplus-girth needs grid_dt > 0 and limit_replicates > 0".into())
            }
            _ => Ok(()),
        }
    }

    /// Derived quantities per `n`: `ζ_n`, `m_n^{(n)}`, `t_n`, `q`, plus `n_0`.
    pub fn derived_report(&self) -> Result<String> {
        let mut s = String::new();
        let kernel = self.kernel()?;
        let n0 = crate::kernel::n0_threshold(&kernel, self.l);
        writeln!(s, "n0_threshold = {}", n0.map_or("none".into(), |v| v.to_string())).unwrap();
        writeln!(s, "n,volume,zeta,m_n,one_minus_m_n,t_n,q").unwrap();
        for &n in &self.n_values {
            let p = self.params(n)?;
            let m = p.branching_mean(n)?;
            writeln!(
                s,
                "{n},{},{},{},{},{},{}",
                p.lattice().volume(),
                p.zeta(),
                m,
                p.one_minus_mn_identity(),
                p.sprinkle_prob()?,
                p.q()
            )
            .unwrap();
        }
        Ok(s)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

/// Header block: schema, config hash, seed, then the config verbatim
/// (output location omitted).
pub fn header_block(cfg: &ExperimentConfig, schema: &str) -> String {
    let mut s = format!(
        "# hierperc schema_version={SCHEMA_VERSION} schema={schema}\n# config_sha256={}\n# master_seed={}\n",
        cfg.hash(),
        cfg.master_seed
    );
    for line in cfg.reproducible_text().lines() {
        writeln!(s, "# {line}").unwrap();
    }
    s
}

/// Write-once output file.
pub struct OutputFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl OutputFile {
    pub fn create(dir: &Path, name: &str, header: &str) -> Result<Self> {
        let path = dir.join(name);
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        out.write_all(header.as_bytes())?;
        Ok(Self { path, out })
    }

    pub fn line(&mut self, row: &str) -> Result<()> {
        self.out.write_all(row.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// Seeds of one grid cell: replicate `r` draws from streams keyed by
/// `(master_seed, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub label: String,
    pub master_seed: u64,
    pub replicates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub config: String,
    pub seeds: Vec<SeedRecord>,
    pub wall_clock_secs: f64,
    pub outputs: Vec<OutputRecord>,
    pub summary: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn wrap(rep: u64, seed: u64) -> impl Fn(Error) -> Error {
    move |e| Error::Replicate { replicate: rep, seed, source: Box::new(e) }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    seeds: Vec<SeedRecord>,
    outputs: Vec<PathBuf>,
    summary: Vec<String>,
}

impl Run<'_> {
    fn policy(&mut self, label: String, cell: u64) -> RngPolicy {
        let seed = grid_seed(self.cfg.master_seed, self.cfg.suite as u64, cell);
        self.seeds.push(SeedRecord { label, master_seed: seed, replicates: self.cfg.replicates });
        RngPolicy::new(seed)
    }

    fn file(&self, name: &str, schema: &str, columns: Option<&str>) -> Result<OutputFile> {
        let mut header = header_block(self.cfg, schema);
        if let Some(c) = columns {
            header.push_str(c);
            header.push('\n');
        }
        OutputFile::create(&self.dir, name, &header)
    }

    fn done(&mut self, f: OutputFile) -> Result<()> {
        self.outputs.push(f.finish()?);
        Ok(())
    }
}

/// Scaled statistics of the largest components of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub n: u32,
    pub replicate: u64,
    /// `V^{−2/3}|C_i|` for `i ≤ 4`, zero when absent.
    pub masses: [f64; 4],
    pub diam1: f64,
    pub diam1_exact: bool,
    pub surplus1: i64,
    pub girth1: Option<f64>,
    pub longest1: Option<f64>,
    /// `true` if the longest cycle exceeded the surplus cap.
    pub longest1_skipped: bool,
    pub girth1_raw: Option<u64>,
}

impl WindowRow {
    pub const CSV_HEADER: &'static str = "n,replicate,x1,x2,x3,x4,diam1_scaled,diam1_exact,surplus1,girth1_scaled,longest1_scaled,girth1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.replicate,
            self.masses[0],
            self.masses[1],
            self.masses[2],
            self.masses[3],
            self.diam1,
            self.diam1_exact,
            self.surplus1,
            na(self.girth1),
            if self.longest1_skipped { "not_computed".to_string() } else { na(self.longest1) },
            self.girth1_raw.map_or("NA".to_string(), |g| g.to_string())
        )
    }
}

/// Scaled component statistics from a sample; distances are scaled by `V^{−1/3}`.
pub fn window_row(sample: &PercolationSample, n: u32, opts: &AnalysisOptions, rng: &RngPolicy) -> Result<WindowRow> {
    let v = sample.vertex_count() as f64;
    let (ms, ds) = (v.powf(-2.0 / 3.0), v.powf(-1.0 / 3.0));
    let mut masses = [0.0; 4];
    for (slot, c) in masses.iter_mut().zip(sample.components()) {
        *slot = c.size as f64 * ms;
    }
    let replicate = sample.seed_trace().replicate;
    let mut r = rng.stream(replicate, StreamTag::PairSampling, 1)?;
    let rep = analyze_component(sample, 0, opts, &mut r);
    let (longest1, skipped) = match rep.longest_cycle {
        CycleValue::Length(l) => (Some(l as f64 * ds), false),
        CycleValue::Acyclic => (None, false),
        CycleValue::NotComputed => (None, true),
    };
    Ok(WindowRow {
        n,
        replicate,
        masses,
        diam1: rep.diameter.value as f64 * ds,
        diam1_exact: rep.diameter.exact,
        surplus1: rep.surplus,
        girth1: rep.girth.map(|g| g as f64 * ds),
        longest1,
        longest1_skipped: skipped,
        girth1_raw: rep.girth,
    })
}

/// Samples the critical-window graph at each `n` and returns per-replicate rows.
pub fn critical_window_rows(params: &ModelParams, replicates: u64, opts: &AnalysisOptions, rng: &RngPolicy) -> Result<Vec<WindowRow>> {
    let n = params.lattice().n();
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            sample_stratified(params, Stage::Critical, rng, rep)
                .and_then(|s| window_row(&s, n, opts, rng))
                .map_err(wrap(rep, rng.master_seed))
        })
        .collect()
}

/// Independent draws from the excursion limit at `lambda`.
pub fn limit_samples(lambda: f64, grid_dt: f64, replicates: u64, rng: &RngPolicy) -> Result<Vec<LimitSample>> {
    (0..replicates)
        .into_par_iter()
        .map(|rep| {
            rng.stream(rep, StreamTag::Limit, 0)
                .and_then(|mut r| sample_limit(lambda, grid_dt, None, &mut r))
                .map_err(wrap(rep, rng.master_seed))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    /// Kolmogorov–Smirnov distance of scalar samples.
    Ks,
    /// Total variation of integer-valued samples.
    Tv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub statistic: Statistic,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn integers(xs: &[f64]) -> Result<Vec<u64>> {
    xs.iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x < u64::MAX as f64 {
                Ok(x as u64)
            } else {
                Err(Error::Param(format!("total variation needs nonnegative integers, got {x}")))
            }
        })
        .collect()
}

fn tv_of(a: &[f64], b: &[f64]) -> f64 {
    tv_distance(&integers(a).unwrap(), &integers(b).unwrap())
}

/// Distance between two empirical laws with a 95% bootstrap interval.
pub fn compare_laws<R: Rng + ?Sized>(a: &[f64], b: &[f64], statistic: Statistic, rng: &mut R) -> Result<DistanceReport> {
    for s in [a, b] {
        if s.len() < MIN_COMPARE_SAMPLES {
            return Err(Error::InsufficientSamples { needed: MIN_COMPARE_SAMPLES, got: s.len() });
        }
    }
    let (value, (ci_low, ci_high)) = match statistic {
        Statistic::Ks => (ks_distance(a, b), bootstrap_ci(a, b, ks_distance, BOOTSTRAP_REPS, 0.95, rng)),
        Statistic::Tv => {
            integers(a)?;
            integers(b)?;
            (tv_of(a, b), bootstrap_ci(a, b, tv_of, BOOTSTRAP_REPS, 0.95, rng))
        }
    };
    Ok(DistanceReport { statistic, value, ci_low, ci_high, n_a: a.len(), n_b: b.len() })
}

/// Numeric values of `column` in a CSV written by this crate; `#` lines
/// are skipped and non-numeric cells (`NA`, `none`) are dropped.
pub fn read_csv_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Io(format!("{}: no header row", path.display())))?;
    let idx = header
        .split(',')
        .position(|c| c == column)
        .ok_or_else(|| Error::Param(format!("{}: no column '{column}'", path.display())))?;
    Ok(lines.filter_map(|l| l.split(',').nth(idx).and_then(|v| v.parse::<f64>().ok())).filter(|v| v.is_finite()).collect())
}

fn window_suite(run: &mut Run, with_reference: bool) -> Result<()> {
    let cfg = run.cfg;
    let opts = AnalysisOptions { exact_cap: cfg.exact_cap, surplus_cap: cfg.surplus_cap };
    let mut out = run.file("critical_window.csv", "critical-window/1", Some(WindowRow::CSV_HEADER))?;
    let mut per_n = Vec::new();
    for (i, &n) in cfg.n_values.iter().enumerate() {
        let params = cfg.params(n)?;
        let policy = run.policy(format!("n={n}"), i as u64);
        let rows = critical_window_rows(&params, cfg.replicates, &opts, &policy)?;
        for r in &rows {
            out.line(&r.csv_row())?;
        }
        let x1: Vec<f64> = rows.iter().map(|r| r.masses[0]).collect();
        let d1: Vec<f64> = rows.iter().map(|r| r.diam1).collect();
        let cyc = rows.iter().filter(|r| r.surplus1 > 0).count();
        run.summary.push(format!(
            "n={n}: median x1 = {:.4}, median diam1 = {:.4}, P(C1 has a cycle) = {:.3}",
            Summary::of(&x1).median,
            Summary::of(&d1).median,
            cyc as f64 / rows.len() as f64
        ));
        per_n.push((n, rows));
    }
    run.done(out)?;
    if !with_reference {
        return Ok(());
    }
    let policy = {
        let seed = grid_seed(cfg.master_seed, cfg.suite as u64, u32::MAX as u64);
        run.seeds.push(SeedRecord { label: "limit".into(), master_seed: seed, replicates: cfg.limit_replicates });
        RngPolicy::new(seed)
    };
    let limit = limit_samples(cfg.lambda, cfg.grid_dt, cfg.limit_replicates, &policy)?;
    let mut jl = run.file("limit_reference.jsonl", "limit/1", None)?;
    for s in &limit {
        jl.line(&limit_json(s))?;
    }
    run.done(jl)?;
    let g1: Vec<f64> = limit.iter().map(LimitSample::gamma1).collect();
    let p1: Vec<f64> = limit.iter().map(|s| s.surplus1() as f64).collect();
    let mut cmp = run.file("comparison.csv", "comparison/1", Some("n,statistic,distance,value,ci_low,ci_high,n_graph,n_limit"))?;
    let mut boot = policy.stream(0, StreamTag::Bootstrap, 0)?;
    for (n, rows) in &per_n {
        let x1: Vec<f64> = rows.iter().map(|r| r.masses[0]).collect();
        let s1: Vec<f64> = rows.iter().map(|r| r.surplus1 as f64).collect();
        for (name, stat, a, b) in [("x1_vs_gamma1", Statistic::Ks, &x1, &g1), ("surplus1_vs_poisson", Statistic::Tv, &s1, &p1)] {
            match compare_laws(a, b, stat, &mut boot) {
                Ok(r) => {
                    cmp.line(&format!("{n},{name},{stat:?},{},{},{},{},{}", r.value, r.ci_low, r.ci_high, r.n_a, r.n_b))?;
                    run.summary.push(format!("n={n}: {name} {stat:?} = {:.4} [{:.4}, {:.4}]", r.value, r.ci_low, r.ci_high));
                }
                Err(Error::InsufficientSamples { .. }) => {
                    cmp.line(&format!("{n},{name},{stat:?},NA,NA,NA,{},{}", a.len(), b.len()))?;
                }
                Err(e) => return Err(e),
            }
        }
    }
    run.done(cmp)
}

pub fn limit_json(s: &LimitSample) -> String {
    serde_json::json!({
        "lambda": s.lambda,
        "gamma": s.gamma,
        "surplus": s.surplus_counts,
        "open_at_horizon": s.open_at_horizon,
    })
    .to_string()
}

fn phase_suite(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let policy = run.policy("grid".into(), 0);
    let rows = phase_sweep(cfg.l, cfg.d, &cfg.kernel()?, &cfg.epsilons, &cfg.n_values, cfg.replicates, &policy)?;
    let mut out = run.file("phase_sweep.csv", "phase-sweep/1", Some("n,epsilon,replicate,c1,subcritical_ratio,supercritical_fraction"))?;
    for r in &rows {
        out.line(&format!("{},{},{},{},{},{}", r.n, r.epsilon, r.replicate, r.c1, r.subcritical_ratio, r.supercritical_fraction))?;
    }
    run.done(out)?;
    for &n in &cfg.n_values {
        for &eps in &cfg.epsilons {
            let cell: Vec<_> = rows.iter().filter(|r| r.n == n && r.epsilon == eps).collect();
            let sub = cell.iter().map(|r| r.subcritical_ratio).fold(0.0, f64::max);
            let sup: Vec<f64> = cell.iter().map(|r| r.supercritical_fraction).collect();
            run.summary.push(format!("n={n} eps={eps}: max |C1|/(n eps^-2) = {sub:.4}, p05 |C1|/V = {:.4}", quantile(&sup, 0.05)));
        }
    }
    Ok(())
}

fn diagnostics_suite(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let mut samples = run.file(
        "diagnostics.csv",
        "diagnostics/1",
        Some("n,replicate,q_minus_inv_sigma2,sigma3_over_sigma2_cubed,tau_rescaled,order_parameter"),
    )?;
    let mut summary = run.file("diagnostics_summary.csv", "diagnostics-summary/1", Some("n,lambda,statistic,q25,median,q75"))?;
    let mut delta = run.file("delta.csv", "delta/1", Some("n,delta,delta_tilde,delta_scaled"))?;
    for (i, &n) in cfg.n_values.iter().enumerate() {
        let params = cfg.params(n)?;
        let policy = run.policy(format!("n={n}"), i as u64);
        let rep = criticality_diagnostics(&params, cfg.replicates, &policy)?;
        for k in 0..rep.q_minus_inv_sigma2.len() {
            samples.line(&format!(
                "{n},{k},{},{},{},{}",
                rep.q_minus_inv_sigma2[k], rep.sigma_ratio[k], rep.tau_rescaled[k], rep.order_parameter[k]
            ))?;
        }
        let lambdas = if cfg.lambdas.is_empty() { vec![cfg.lambda] } else { cfg.lambdas.clone() };
        for &lam in &lambdas {
            let rows = [
                ("q_minus_inv_sigma2", Summary::of(&rep.at_lambda(lam))),
                ("sigma3_over_sigma2_cubed", Summary::of(&rep.sigma_ratio)),
                ("tau_rescaled", Summary::of(&rep.tau_rescaled)),
            ];
            for (name, s) in rows {
                summary.line(&format!("{n},{lam},{name},{},{},{}", s.q25, s.median, s.q75))?;
            }
            run.summary.push(format!(
                "n={n} lambda={lam}: median q-1/sigma2 = {:.4}, median s3/s2^3 = {:.4}, median tau* = {:.4}",
                Summary::of(&rep.at_lambda(lam)).median,
                Summary::of(&rep.sigma_ratio).median,
                Summary::of(&rep.tau_rescaled).median
            ));
        }
        let tp_policy = RngPolicy::new(grid_seed(policy.master_seed, 1, 0));
        let est = two_point(&params, cfg.replicates, &tp_policy)?;
        let (dn, dtn) = delta_estimates(&est, &params)?;
        let k = params.kernel();
        let scale = (cfg.l as f64).powf(n as f64 * (cfg.d as f64 + 2.0 * k.alpha - 2.0 * k.theta));
        delta.line(&format!("{n},{dn},{dtn},{}", dn * scale))?;
    }
    run.done(samples)?;
    run.done(summary)?;
    run.done(delta)
}

fn two_point_suite(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let mut out = run.file("two_point.csv", "two-point/1", Some("n,shell,distance,p_hat,se,edge_prob,hits,replicates"))?;
    for (i, &n) in cfg.n_values.iter().enumerate() {
        let params = cfg.params(n)?;
        let policy = run.policy(format!("n={n}"), i as u64);
        let est = two_point(&params, cfg.replicates, &policy)?;
        for s in 0..n as usize {
            out.line(&format!(
                "{n},{},{},{},{},{},{},{}",
                s + 1,
                cfg.l.pow(s as u32 + 1),
                est.p_hat[s],
                est.se[s],
                params.prob_minus()[s],
                est.hits[s],
                est.replicates
            ))?;
        }
        let a0 = plateau_exponent(params.kernel());
        let max_shell = (a0 * n as f64).floor().max(0.0) as u32;
        match est.decay_fit(cfg.l, max_shell) {
            Ok(fit) => run.summary.push(format!(
                "n={n}: slope of ln p_hat over shells <= {max_shell} = {:.4} (alpha = {})",
                fit.slope, cfg.alpha
            )),
            Err(_) => run.summary.push(format!("n={n}: too few positive shells for a decay fit")),
        }
    }
    run.done(out)
}

fn branching_suite(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let mut out = run.file("branching.jsonl", "branching/1", None)?;
    let mut coupling = run.file(
        "coupling.csv",
        "coupling/1",
        Some("n,replicates,size_violations,diameter_violations,truncated,mean_cluster,mean_tree,mean_slack"),
    )?;
    for (i, &n) in cfg.n_values.iter().enumerate() {
        let params = cfg.params(n)?;
        let policy = run.policy(format!("n={n}"), i as u64);
        let runs = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                policy
                    .stream(rep, StreamTag::Branching, 0)
                    .and_then(|mut r| sample_tree(n, &params, &mut r, cfg.size_cap, cfg.height_cap))
                    .map_err(wrap(rep, policy.master_seed))
            })
            .collect::<Result<Vec<_>>>()?;
        for (rep, t) in runs.iter().enumerate() {
            out.line(
                &serde_json::json!({
                    "n": n, "replicate": rep, "total_size": t.total_size, "height": t.height,
                    "truncated": t.truncated, "generation_sizes": t.generation_sizes,
                })
                .to_string(),
            )?;
        }
        let mean = runs.iter().map(|t| t.total_size as f64).sum::<f64>() / runs.len() as f64;
        run.summary.push(format!(
            "n={n}: mean |T| = {mean:.4}, 1/(1-m_n) = {:.4}",
            1.0 / params.one_minus_mn_identity()
        ));
        if params.lattice().volume() <= NAIVE_MAX_VOLUME {
            let c = coupling_check(&params, &policy, cfg.replicates)?;
            coupling.line(&format!(
                "{n},{},{},{},{},{},{},{}",
                c.replicates, c.size_violations, c.diameter_violations, c.truncated, c.mean_cluster_size, c.mean_tree_size, c.mean_slack
            ))?;
            run.summary.push(format!("n={n}: coupling violations size={} diam={}", c.size_violations, c.diameter_violations));
        }
    }
    run.done(out)?;
    run.done(coupling)
}

fn coalescent_suite(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let mut out = run.file("limit.jsonl", "limit/1", None)?;
    for (i, &lam) in cfg.lambdas.iter().enumerate() {
        let policy = run.policy(format!("lambda={lam}"), i as u64);
        let samples = limit_samples(lam, cfg.grid_dt, cfg.replicates, &policy)?;
        for s in &samples {
            out.line(&limit_json(s))?;
        }
        let g: Vec<f64> = samples.iter().map(LimitSample::gamma1).collect();
        run.summary.push(format!("lambda={lam}: median gamma1 = {:.4}", Summary::of(&g).median));
    }
    run.done(out)
}

fn torus_suite(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let kernel = cfg.kernel()?;
    let opts = AnalysisOptions { exact_cap: cfg.exact_cap, surplus_cap: cfg.surplus_cap };
    let mut out = run.file("torus.csv", "torus/1", Some(&format!("m,{}", WindowRow::CSV_HEADER)))?;
    for (i, &m) in cfg.torus_m.iter().enumerate() {
        let spec = TorusSpec::new(m, cfg.d)?;
        let zeta = solve_zeta_torus(&spec, &kernel)?;
        let probs = torus_probs(&spec, &kernel, zeta, TorusStage::Critical { lambda: cfg.lambda })?;
        let policy = run.policy(format!("m={m}"), i as u64);
        let rows = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                sample_torus(&spec, &probs, &policy, rep)
                    .and_then(|s| window_row(&s, 0, &opts, &policy))
                    .map_err(wrap(rep, policy.master_seed))
            })
            .collect::<Result<Vec<_>>>()?;
        for r in &rows {
            out.line(&format!("{m},{}", r.csv_row()))?;
        }
        let x1: Vec<f64> = rows.iter().map(|r| r.masses[0]).collect();
        run.summary.push(format!("m={m}: zeta_T = {zeta:.6}, median x1 = {:.4}", Summary::of(&x1).median));
    }
    run.done(out)
}

/// Validates the config, runs its suite into `output_dir` (created if
/// missing; existing files are never overwritten) and writes the manifest.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir)?;
    let mut run = Run { cfg, dir: cfg.output_dir.clone(), seeds: Vec::new(), outputs: Vec::new(), summary: Vec::new() };
    match cfg.suite {
        Suite::PhaseSweep => phase_suite(&mut run)?,
        Suite::CriticalWindow => window_suite(&mut run, false)?,
        Suite::SurplusGirth => window_suite(&mut run, true)?,
        Suite::Diagnostics => diagnostics_suite(&mut run)?,
        Suite::TwoPoint => two_point_suite(&mut run)?,
        Suite::Branching => branching_suite(&mut run)?,
        Suite::CoalescentReference => coalescent_suite(&mut run)?,
        Suite::Torus => torus_suite(&mut run)?,
    }
    let outputs = run
        .outputs
        .iter()
        .map(|p| {
            Ok(OutputRecord {
                file: p.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: file_sha256(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.to_text(),
        seeds: run.seeds,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        outputs,
        summary: run.summary,
    };
    let path = cfg.output_dir.join(MANIFEST_FILE);
    let mut f = OutputFile::create(&cfg.output_dir, MANIFEST_FILE, "")?;
    f.line(&serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?)?;
    f.finish()?;
    debug_assert!(path.exists());
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub manifest: RunManifest,
    /// Files whose digest differs from the original run.
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-runs the config recorded in a manifest into `output_dir` and compares
/// output digests.
pub fn replay(manifest: &RunManifest, output_dir: &Path) -> Result<ReplayReport> {
    let mut cfg = ExperimentConfig::parse(&manifest.config)?;
    cfg.output_dir = output_dir.to_path_buf();
    if cfg.hash() != manifest.config_hash {
        return Err(Error::Param("manifest config does not match its hash".into()));
    }
    let fresh = run_suite(&cfg)?;
    let mismatches = manifest
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.iter().any(|f| f.file == o.file && f.sha256 == o.sha256))
        .map(|o| o.file.clone())
        .collect();
    Ok(ReplayReport { manifest: fresh, mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_round_trip_and_errors() {
        let text = "# demo\nsuite = two-point\nL = 3\nd = 1\nalpha = 0.5\ntheta = 0.6 # trailing\nn = 4,5\nreplicates = 10\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!((cfg.suite, cfg.l, cfg.n_values.clone(), cfg.replicates), (Suite::TwoPoint, 3, vec![4, 5], 10));
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let bad = |t: &str| match ExperimentConfig::parse(t) {
            Err(Error::Config { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(bad("L = 2\nfoo = 1"), 2);
        assert_eq!(bad("L = 2\nL = 3"), 2);
        assert_eq!(bad("n = 1,x"), 1);
        assert_eq!(bad("novalue"), 1);
        assert_eq!(bad("suite = nope"), 1);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output_dir: PathBuf::from("elsewhere"), ..a.clone() };
        let c = ExperimentConfig { replicates: 7, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_rejects_bad_kernels() {
        let ok = ExperimentConfig { n_values: vec![4], ..Default::default() };
        assert!(ok.validate().is_ok());
        assert!(ExperimentConfig { theta: 0.3, ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { alpha: 1.5, ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { replicates: 0, ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { n_values: vec![], ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { suite: Suite::PhaseSweep, epsilons: vec![-1.0], ..ok }.validate().is_err());
    }

    #[test]
    fn compare_laws_basics() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let same = compare_laws(&a, &a, Statistic::Ks, &mut r).unwrap();
        assert_eq!(same.value, 0.0);
        assert_eq!(compare_laws(&a, &a, Statistic::Tv, &mut r).unwrap().value, 0.0);
        let zeros = vec![0.0; 150];
        let mixed: Vec<f64> = (0..150).map(|i| if i < 30 { 1.0 } else { 0.0 }).collect();
        let ks = compare_laws(&zeros, &mixed, Statistic::Ks, &mut r).unwrap();
        assert!((ks.value - 0.2).abs() < 1e-12);
        assert!(ks.ci_low <= ks.value + 1e-12 && ks.value <= ks.ci_high + 0.1);
        assert!(matches!(
            compare_laws(&a[..50], &a, Statistic::Ks, &mut r),
            Err(Error::InsufficientSamples { needed: 100, got: 50 })
        ));
        assert!(compare_laws(&vec![0.5; 100], &a, Statistic::Tv, &mut r).is_err());
        let half: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert!((compare_laws(&vec![0.0; 100], &half, Statistic::Tv, &mut r).unwrap().value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn header_contains_config() {
        let cfg = ExperimentConfig::default();
        let h = header_block(&cfg, "x/1");
        assert!(h.lines().all(|l| l.starts_with('#')));
        assert!(h.contains(&cfg.hash()));
        assert!(h.contains("# suite = critical-window"));
    }

    #[test]
    fn outputs_are_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let f = OutputFile::create(dir.path(), "a.csv", "# h\n").unwrap();
        f.finish().unwrap();
        assert!(OutputFile::create(dir.path(), "a.csv", "").is_err());
    }

    #[test]
    fn every_suite_runs_and_replays() {
        for suite in Suite::ALL {
            let dir = tempfile::tempdir().unwrap();
            let cfg = ExperimentConfig {
                suite,
                n_values: vec![4, 5],
                replicates: 12,
                limit_replicates: 12,
                grid_dt: 1e-2,
                torus_m: vec![8],
                lambdas: vec![0.0],
                output_dir: dir.path().join("a"),
                ..Default::default()
            };
            let m = run_suite(&cfg).unwrap();
            assert!(!m.outputs.is_empty(), "{suite:?}");
            for o in &m.outputs {
                let text = fs::read_to_string(cfg.output_dir.join(&o.file)).unwrap();
                assert!(text.starts_with("# hierperc schema_version=1"), "{}", o.file);
            }
            assert!(run_suite(&cfg).is_err(), "outputs must not be overwritten");
            let loaded = RunManifest::load(&cfg.output_dir.join(MANIFEST_FILE)).unwrap();
            assert_eq!(loaded.outputs, m.outputs);
            let rep = replay(&loaded, &dir.path().join("b")).unwrap();
            assert!(rep.identical(), "{suite:?}: {:?}", rep.mismatches);
        }
    }

    #[test]
    fn csv_column_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "# c\na,b\n1,NA\n2,3.5\n").unwrap();
        assert_eq!(read_csv_column(&p, "a").unwrap(), vec![1.0, 2.0]);
        assert_eq!(read_csv_column(&p, "b").unwrap(), vec![3.5]);
        assert!(read_csv_column(&p, "c").is_err());
    }
}
