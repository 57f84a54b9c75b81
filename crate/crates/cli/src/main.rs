use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hierperc::experiments::{compare_laws, header_block, read_csv_column, replay, run_suite, Statistic, MANIFEST_FILE};
use hierperc::sampler::sample_stratified;
use hierperc::{ExperimentConfig, RngPolicy, RunManifest, Stage};

/// Worker count for replicate-parallel suites; defaults to all cores.
const WORKERS_ENV: &str = "HIERPERC_WORKERS";

#[derive(Parser)]
#[command(name = "hierperc", version, about = "Critical long-range percolation on the hierarchical lattice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print derived quantities.
    Validate { config: PathBuf },
    /// Run the suite selected by a config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Re-run a manifest and check that every output is byte-identical.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Distance between the laws of one column in two result files.
    Compare {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long)]
        column: String,
        /// Column in the second file, if named differently.
        #[arg(long)]
        column_b: Option<String>,
        #[arg(long, value_enum, default_value = "ks")]
        statistic: StatArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the edge list of one sample.
    DumpEdges {
        config: PathBuf,
        /// Lattice depth; defaults to the first value of the config's n grid.
        #[arg(long)]
        n: Option<u32>,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// `minus`, `critical` or `scaled:<epsilon>`.
        #[arg(long, default_value = "critical")]
        stage: String,
        /// Output file; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    Ks,
    Tv,
}

fn parse_stage(s: &str) -> Result<Stage<'static>> {
    Ok(match s {
        "minus" => Stage::Minus,
        "critical" => Stage::Critical,
        _ => match s.strip_prefix("scaled:") {
            Some(eps) => Stage::Scaled(eps.parse().with_context(|| format!("bad epsilon in '{s}'"))?),
            None => bail!("unknown stage '{s}' (expected minus, critical or scaled:<epsilon>)"),
        },
    })
}

fn init_workers() -> Result<()> {
    if let Some(v) = std::env::var_os(WORKERS_ENV) {
        let v = v.to_string_lossy();
        let k: usize = v.parse().with_context(|| format!("{WORKERS_ENV} must be a positive integer, got '{v}'"))?;
        if k == 0 {
            bail!("{WORKERS_ENV} must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_workers()?;
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            println!("config ok: suite {} (sha256 {})", cfg.suite.name(), cfg.hash());
            print!("{}", cfg.derived_report()?);
        }
        Command::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let manifest = run_suite(&cfg)?;
            for line in &manifest.summary {
                println!("{line}");
            }
            println!("{} file(s) written to {}", manifest.outputs.len(), cfg.output_dir.display());
            println!("manifest: {}", cfg.output_dir.join(MANIFEST_FILE).display());
        }
        Command::Replay { manifest, output_dir } => {
            let m = RunManifest::load(&manifest)?;
            let report = replay(&m, &output_dir)?;
            if !report.identical() {
                bail!("outputs differ from the manifest: {}", report.mismatches.join(", "));
            }
            println!("replay identical: {} file(s)", m.outputs.len());
        }
        Command::Compare { file_a, file_b, column, column_b, statistic, seed } => {
            let a = read_csv_column(&file_a, &column)?;
            let b = read_csv_column(&file_b, column_b.as_deref().unwrap_or(&column))?;
            let stat = match statistic {
                StatArg::Ks => Statistic::Ks,
                StatArg::Tv => Statistic::Tv,
            };
            let r = compare_laws(&a, &b, stat, &mut ChaCha8Rng::seed_from_u64(seed))?;
            println!("statistic,value,ci_low,ci_high,n_a,n_b");
            println!("{stat:?},{},{},{},{},{}", r.value, r.ci_low, r.ci_high, r.n_a, r.n_b);
        }
        Command::DumpEdges { config, n, replicate, stage, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let n = match n.or_else(|| cfg.n_values.first().copied()) {
                Some(n) => n,
                None => bail!("no n given and the config n grid is empty"),
            };
            let params = cfg.params(n)?;
            let sample = sample_stratified(&params, parse_stage(&stage)?, &RngPolicy::new(cfg.master_seed), replicate)?;
            let header = format!("{}stage={stage} n={n} replicate={replicate}\n", header_block(&cfg, "edges/1"))
                .lines()
                .map(|l| l.trim_start_matches("# ").to_string() + "\n")
                .collect::<String>();
            let mut sink: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(&p).with_context(|| p.display().to_string())?)),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            sample.write_edge_list(&header, &mut sink)?;
            sink.flush()?;
        }
    }
    Ok(())
}
