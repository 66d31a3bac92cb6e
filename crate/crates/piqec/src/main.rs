//! Command-line entry point: configuration-driven experiments, model
//! verification, code search, and coefficient-table export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use piqec::codes::{code_search, CatalogEntry, CodeCatalog, ErrorSet};
use piqec::coeff::CoefficientTable;
use piqec::config::{Overrides, RunConfig};
use piqec::degeneracy;
use piqec::error::{Error, Result};
use piqec::half::Half;
use piqec::{oracle, output, recovery, sensing};

#[derive(Parser)]
#[command(name = "piqec", version, about = "Collective-control error correction and sensing simulator for spin ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOverrides {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the global random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the trajectory count.
    #[arg(long)]
    n_traj: Option<u32>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the simulated duration.
    #[arg(long)]
    t_max: Option<f64>,
    /// Override the integration step.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Memory-lifetime experiment: logical fidelity of stored qubits.
    Memory(MemoryArgs),
    /// Ramsey-sensing experiment: signal distinguishability of probes.
    Sensing(SensingArgs),
    /// Run every exact-model self-check up to a given ensemble size.
    Verify(VerifyArgs),
    /// Search for codes and export the catalog.
    Codes(CodesArgs),
    /// Build (or import) and export the jump-amplitude table.
    Coeffs(CoeffsArgs),
}

#[derive(Args)]
struct MemoryArgs {
    #[command(flatten)]
    common: CommonOverrides,
}

#[derive(Args)]
struct SensingArgs {
    #[command(flatten)]
    common: CommonOverrides,
    /// Override the signal strength.
    #[arg(long)]
    omega: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest ensemble size to verify (full sweeps cap at 8).
    #[arg(long, default_value_t = 6)]
    n_max: u32,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CodesArgs {
    /// Smallest block to search (half-integers accepted, e.g. "9/2").
    #[arg(long, default_value = "2")]
    j_min: Half,
    /// Largest block to search.
    #[arg(long, default_value = "10")]
    j_max: Half,
    /// Channel set: all, dephasing, decay, collective-decay.
    #[arg(long, default_value = "all")]
    channels: String,
    /// Levels per logical branch.
    #[arg(long, default_value_t = 2)]
    budget: usize,
    /// Recoverability tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Catalog output path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoeffsArgs {
    /// Largest ensemble size to tabulate.
    #[arg(long, default_value_t = 12)]
    n_max: u32,
    /// Export path (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Import an existing cache instead of building.
    #[arg(long)]
    import: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Memory(args) => cmd_memory(args),
        Command::Sensing(args) => cmd_sensing(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Codes(args) => cmd_codes(args),
        Command::Coeffs(args) => cmd_coeffs(args),
    }
}

fn load_config(common: &CommonOverrides, omega: Option<f64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        n_traj: common.n_traj,
        threads: common.threads,
        out: common.out.clone(),
        t_max: common.t_max,
        dt: common.dt,
        omega,
    });
    Ok(cfg)
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn table_for(cfg: &RunConfig) -> Result<CoefficientTable> {
    match &cfg.coeff_cache {
        Some(path) if path.exists() => {
            let table = CoefficientTable::import(path)?;
            if table.n_max() < cfg.n_spins {
                return Err(Error::Config(format!(
                    "cache {} covers N <= {}, need {}",
                    path.display(),
                    table.n_max(),
                    cfg.n_spins
                )));
            }
            Ok(table)
        }
        Some(path) => {
            let table = CoefficientTable::build(cfg.n_spins)?;
            table.export(path)?;
            Ok(table)
        }
        None => CoefficientTable::build(cfg.n_spins),
    }
}

fn out_dir(cfg: &RunConfig, fallback: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn cmd_memory(args: MemoryArgs) -> Result<()> {
    let cfg = load_config(&args.common, None)?;
    let table = table_for(&cfg)?;
    let setup = cfg.to_memory_setup(&table)?;
    let dir = out_dir(&cfg, "out/memory");
    std::fs::create_dir_all(&dir)?;
    output::write_provenance(&dir, &cfg.to_toml()?, setup.seed)?;
    let pool = build_pool(cfg.threads)?;
    let result = pool.install(|| recovery::run_memory_experiment(&setup, &table))?;
    let csv_path = dir.join("curves.csv");
    output::write_memory_csv(&csv_path, &result)?;
    println!("memory experiment complete: {}", csv_path.display());
    for curve in &result.curves {
        if let Some(last) = curve.points.last() {
            println!(
                "  {:<18} F({:.3}) = {:.4} +- {:.4}",
                curve.curve.id(),
                last.t,
                last.mean_fidelity,
                last.stderr
            );
        }
    }
    Ok(())
}

fn cmd_sensing(args: SensingArgs) -> Result<()> {
    let cfg = load_config(&args.common, args.omega)?;
    let table = table_for(&cfg)?;
    let setup = cfg.to_sensing_setup(&table)?;
    let dir = out_dir(&cfg, "out/sensing");
    std::fs::create_dir_all(&dir)?;
    output::write_provenance(&dir, &cfg.to_toml()?, setup.seed)?;
    let pool = build_pool(cfg.threads)?;
    let result = pool.install(|| sensing::run_sensing_experiment(&setup, &table))?;
    let csv_path = dir.join("curves.csv");
    output::write_sensing_csv(&csv_path, &result)?;
    println!("sensing experiment complete: {}", csv_path.display());
    for curve in &result.curves {
        if let Some(last) = curve.points.last() {
            println!(
                "  {:<18} infidelity({:.3}) = {:.4} +- {:.4}",
                curve.id, last.t, last.mean_infidelity, last.stderr
            );
        }
    }
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<()> {
    if args.n_max > oracle::MAX_ORACLE_SPINS {
        return Err(Error::Resource(format!(
            "verification supports N <= {}, got {}",
            oracle::MAX_ORACLE_SPINS,
            args.n_max
        )));
    }
    // Dimension sum rule first: exact integers.
    for n in 1..=30 {
        if !degeneracy::sum_rule_holds(n) {
            return Err(Error::Verification(format!(
                "dimension sum rule failed at N={n}"
            )));
        }
    }
    println!("dimension sum rule: exact for N <= 30");

    let mut reports = Vec::new();
    let sweep_max = args.n_max.min(8);
    for n in 1..=sweep_max {
        let report = oracle::run_report(n)?;
        println!(
            "N={n}: unitarity {:.2e}, angular momentum {:.2e}, trace {:.2e}, multiplicities {}",
            report.unitarity_deviation,
            report.angular_momentum_deviation,
            report.trace_preservation_deviation,
            if report.multiplicities_match { "ok" } else { "MISMATCH" }
        );
        for sweep in &report.channel_sweeps {
            println!(
                "  {:<16} residual {:.2e} over {} elements",
                sweep.channel, sweep.max_residual, sweep.inputs_checked
            );
        }
        if let Some(eq) = &report.loss_dephasing {
            println!(
                "  loss+re-append vs dephasing: raw {:.2e}, normalized {:.2e} (factor 1/{}, spread {:.2e})",
                eq.raw_max_deviation,
                eq.normalized_max_deviation,
                2 * n,
                eq.rate_factor_spread
            );
        }
        let ok = report.multiplicities_match
            && report.unitarity_deviation < 1e-12
            && report.angular_momentum_deviation < 1e-11
            && report.trace_preservation_deviation < 1e-10
            && report.channel_sweeps.iter().all(|s| s.max_residual < 1e-10)
            && report
                .loss_dephasing
                .as_ref()
                .map(|e| e.normalized_max_deviation < 1e-10)
                .unwrap_or(true);
        if !ok {
            return Err(Error::Verification(format!("oracle checks failed at N={n}")));
        }
        reports.push(report);
    }
    // Coefficient tables verify themselves against the exact model on build.
    let _ = CoefficientTable::build(args.n_max.max(2))?;
    println!("coefficient tables verified for N <= {}", args.n_max.max(2));
    if let Some(path) = args.out {
        let json = serde_json::to_string_pretty(&reports)
            .map_err(|e| Error::Config(format!("serializing report: {e}")))?;
        std::fs::write(&path, json)?;
        println!("report written to {}", path.display());
    }
    println!("all verifications passed");
    Ok(())
}

fn cmd_codes(args: CodesArgs) -> Result<()> {
    let channels = match args.channels.as_str() {
        "all" => ErrorSet::all(),
        "dephasing" => ErrorSet::dephasing_only(),
        "decay" => ErrorSet::individual_decay_only(),
        "collective-decay" => ErrorSet::collective_decay_only(),
        other => {
            return Err(Error::Config(format!(
                "unknown channel set '{other}' (expected all, dephasing, decay, collective-decay)"
            )))
        }
    };
    if args.j_max < args.j_min {
        return Err(Error::Config("j_max must be at least j_min".into()));
    }
    // Search with both branches of the single-spin channel active.
    let n_table = (args.j_max.doubled() + 4).max(4) as u32;
    let table = CoefficientTable::build(n_table)?;
    let mut entries = Vec::new();
    let mut j2 = args.j_min.doubled().max(1);
    while j2 <= args.j_max.doubled() {
        let j = Half::new(j2);
        let n = (j2 + 4) as u32;
        let found = code_search(n, j, channels, args.budget, args.tol, &table)?;
        println!("J={j}: {} code(s)", found.len());
        for code in found {
            entries.push(CatalogEntry {
                total_j: code.total_j(),
                branch0: code.branch_levels(0).to_vec(),
                branch1: code.branch_levels(1).to_vec(),
                m1: code.m1,
                m2: code.m2,
                channels,
                kl_residual: 0.0,
            });
        }
        j2 += 1;
    }
    let catalog = CodeCatalog { entries };
    if let Some(path) = &args.out {
        catalog.export(path)?;
        println!("catalog written to {}", path.display());
    }
    println!("total codes found: {}", catalog.entries.len());
    Ok(())
}

fn cmd_coeffs(args: CoeffsArgs) -> Result<()> {
    let table = match &args.import {
        Some(path) => {
            let t = CoefficientTable::import(path)?;
            println!("imported table covering N <= {}", t.n_max());
            t
        }
        None => {
            let t = CoefficientTable::build(args.n_max)?;
            println!("built and verified table for N <= {}", t.n_max());
            t
        }
    };
    if let Some(path) = &args.out {
        table.export(path)?;
        println!("table exported to {}", path.display());
    }
    // A short dump so the command is useful on its own.
    let n_dump = table.n_max().min(4);
    let j = Half::new(n_dump as i32);
    let block = table.individual_block(n_dump, j)?;
    println!("sample single-spin decay amplitudes at N={n_dump}, J={j}:");
    for (idx, m) in j.levels().enumerate() {
        println!(
            "  M={m:>4}: down {:+.6}, stay {:+.6}, up {:+.6}",
            block.amp(-1, -1)[idx],
            block.amp(0, -1)[idx],
            block.amp(1, -1)[idx]
        );
    }
    Ok(())
}
