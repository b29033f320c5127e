mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use celsim_core::powerflow::LvNetwork;
use celsim_core::scenario::{
    ratio_sweep, run_scenario, select_members, Dataset, DatasetSpec, KpiReport, TariffSet,
};
use celsim_core::tariff::{audit_table, check_grid_reduction};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use config::RunConfig;

/// Techno-economic simulator for local electricity communities.
#[derive(Parser)]
#[command(name = "celsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "CELSIM_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    /// Seed for random allocations; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check tariffs, network, profiles and scenario files.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the component audit of a tariff file and check the grid reduction.
    ValidateTariff {
        file: PathBuf,
        /// Expected reduction of the internal grid components.
        #[arg(long, default_value_t = 0.4)]
        reduction: f64,
    },
    /// Run every scenario of the batch.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Internal exchange against the PV-to-load ratio.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep definition; overrides the config.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::ValidateTariff { file, reduction } => validate_tariff(&file, reduction),
        Command::Run { common } => run(&common),
        Command::Sweep { common, sweep: over } => run_sweep(&common, over.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Library errors already carry their causes in the message.
fn flat(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("{e}")
}

fn read_tariffs(path: Option<&Path>) -> Result<TariffSet> {
    let set: TariffSet = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{}: invalid tariff file", p.display()))?
        }
        None => TariffSet::default(),
    };
    for (name, s) in [
        ("external", &set.external),
        ("internal_double", &set.internal_double),
        ("internal_dynamic", &set.internal_dynamic),
    ] {
        s.validate().map_err(|e| anyhow!("{name}: {e}"))?;
    }
    Ok(set)
}

fn tariff_report(set: &TariffSet, reduction: f64) {
    print!("{}", audit_table(&[&set.external, &set.internal_double, &set.internal_dynamic]));
    for (name, s) in [("internal_double", &set.internal_double), ("internal_dynamic", &set.internal_dynamic)] {
        for w in check_grid_reduction(&set.external.components, &s.components, reduction) {
            eprintln!("warning: tariffs: {name}: {w}");
        }
    }
}

fn validate_tariff(file: &Path, reduction: f64) -> Result<ExitCode> {
    let set = read_tariffs(Some(file))?;
    tariff_report(&set, reduction);
    Ok(ExitCode::SUCCESS)
}

fn check<T>(name: &str, r: Result<T>) -> std::result::Result<T, ExitCode> {
    r.map_err(|e| {
        eprintln!("validate: {name} check failed: {e:#}");
        ExitCode::FAILURE
    })
}

fn validate(config: &Path) -> Result<ExitCode> {
    match validate_steps(config) {
        Ok(()) => {
            println!("all checks passed");
            Ok(ExitCode::SUCCESS)
        }
        Err(code) => Ok(code),
    }
}

fn validate_steps(config: &Path) -> std::result::Result<(), ExitCode> {
    let cfg = check("config", RunConfig::load(config))?;
    let (spec, base) = check(
        "dataset",
        (|| {
            let text = std::fs::read_to_string(&cfg.dataset)
                .with_context(|| format!("cannot read {}", cfg.dataset.display()))?;
            let spec: DatasetSpec =
                serde_json::from_str(&text).with_context(|| format!("{}: invalid dataset", cfg.dataset.display()))?;
            Ok((spec, cfg.dataset.parent().unwrap_or(Path::new("")).to_path_buf()))
        })(),
    )?;
    let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };

    let tariffs = check("tariffs", read_tariffs(spec.tariffs.as_deref().map(resolve).as_deref()))?;
    tariff_report(&tariffs, 0.4);

    let net_path = resolve(&spec.network);
    let net = check(
        "network",
        LvNetwork::load(&net_path).map_err(|e| anyhow!("{}: {e}", net_path.display())),
    )?;
    for w in net.warnings() {
        eprintln!("warning: network: {w}");
    }
    let far = net.farthest_bus();
    println!(
        "network: {} buses, {} lines, radial, slack {}, farthest bus {} (|Z| = {:.4} Ω)",
        net.n_buses(),
        net.n_lines(),
        net.slack_bus(),
        far,
        net.electrical_distance(far).unwrap_or(0.0)
    );

    let ds = check("profiles", Dataset::from_spec(spec, &base).map_err(flat))?;
    let load: f64 = ds.buildings.iter().map(|b| b.annual_load_mwh()).sum();
    println!(
        "profiles: {} buildings x {} steps of {} min, annual load {:.1} MWh, unit PV yield {:.0} kWh/module",
        ds.buildings.len(),
        ds.axis.len(),
        ds.axis.step_minutes(),
        load,
        ds.unit_pv.integral()
    );
    for d in ds.diagnostics() {
        if !d.starts_with("network:") {
            eprintln!("warning: {d}");
        }
    }

    if cfg.scenarios.is_some() {
        let list = check("scenarios", cfg.scenarios())?;
        for s in &list {
            check("scenarios", select_members(&ds, s, cfg.seed).map_err(|e| anyhow!("scenario {}: {e}", s.id)))?;
        }
        println!("scenarios: {} valid", list.len());
    }
    if cfg.sweep.is_some() {
        check("sweep", cfg.sweep(None))?;
        println!("sweep: valid");
    }
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    dataset: Dataset,
    out: PathBuf,
    seed: u64,
    pool: rayon::ThreadPool,
}

fn prepare(common: &Common) -> Result<Prepared> {
    let cfg = RunConfig::load(&common.config)?;
    let dataset = Dataset::load(&cfg.dataset).map_err(flat)?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let jobs = common.jobs.map(usize::from).or(cfg.jobs).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok(Prepared {
        cfg,
        dataset,
        out,
        seed,
        pool,
    })
}

fn run(common: &Common) -> Result<ExitCode> {
    let p = prepare(common)?;
    let scenarios = p.cfg.scenarios()?;
    let results: Vec<Result<KpiReport>> = p.pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let o = run_scenario(&p.dataset, s, p.seed).map_err(flat)?;
                output::write_scenario(&p.out.join(&s.id), &o).with_context(|| format!("scenario {}", s.id))?;
                Ok(o.report)
            })
            .collect()
    });
    let mut reports = Vec::with_capacity(results.len());
    let mut failed = 0;
    for r in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                failed += 1;
                eprintln!("error: {e:#}");
            }
        }
    }
    output::write_summary(&p.out.join("summary.csv"), &reports)?;
    if failed > 0 {
        eprintln!("{failed} of {} scenarios failed", scenarios.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_sweep(common: &Common, over: Option<&Path>) -> Result<ExitCode> {
    let p = prepare(common)?;
    let spec = p.cfg.sweep(over)?;
    if spec.id.is_empty() || spec.id.contains(['/', '\\']) || spec.id == "." || spec.id == ".." {
        return Err(anyhow!("sweep id {:?} is not a valid directory name", spec.id));
    }
    let points = p
        .pool
        .install(|| ratio_sweep(&p.dataset, &spec, p.seed))
        .map_err(|e| anyhow!("sweep {}: {e}", spec.id))?;
    output::write_sweep(&p.out.join(&spec.id).join("sweep.csv"), &points)?;
    Ok(ExitCode::SUCCESS)
}
