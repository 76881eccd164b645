// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hfog::baselines::PolicyKind;
use hfog::experiment::{self, Matrix};
use hfog::scenario::Scenario;
use hfog::sim::RunOptions;

#[derive(Parser)]
#[command(name = "hfog", version, about = "Hierarchical fog placement and migration simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario, or a sweep when any axis lists several values.
    Run(RunArgs),
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file or bundled scenario name.
    scenario: String,
    /// proposed, maas, urmila or all; comma separated.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<String>,
    /// Application template names; comma separated.
    #[arg(long, value_delimiter = ',')]
    app: Vec<String>,
    /// Simulated seconds; comma separated.
    #[arg(long, value_delimiter = ',')]
    horizon: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Number of devices; comma separated.
    #[arg(long, value_delimiter = ',')]
    devices: Vec<u32>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Solve each device placement exactly and report the gap.
    #[arg(long)]
    optimality: bool,
    /// Probability that a migration attempt fails.
    #[arg(long)]
    failure_p: Option<f64>,
    /// Disable migration failure recovery.
    #[arg(long)]
    no_recovery: bool,
    /// Skip writing events.log.
    #[arg(long)]
    no_events: bool,
    /// Print the scenario with every default filled in and exit.
    #[arg(long)]
    print_effective_config: bool,
}

fn parse_policies(v: &[String]) -> Result<Vec<PolicyKind>> {
    let mut out = Vec::new();
    for p in v {
        if p.eq_ignore_ascii_case("all") {
            out.extend(PolicyKind::ALL);
        } else {
            out.push(p.parse().map_err(anyhow::Error::msg)?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let base = Scenario::load(&args.scenario).with_context(|| format!("loading scenario `{}`", args.scenario))?;
    if args.print_effective_config {
        print!("{}", base.effective_config());
        return Ok(ExitCode::SUCCESS);
    }
    let matrix = Matrix {
        policies: parse_policies(&args.policy)?,
        apps: args.app,
        horizons: args.horizon,
        seeds: args.seed,
        devices: args.devices,
        failure_p: args.failure_p,
        recovery: args.no_recovery.then_some(false),
        options: RunOptions { optimality: args.optimality, event_log: !args.no_events, ..Default::default() },
    };
    for cell in experiment::cells(&base, &matrix) {
        experiment::configure(&base, &matrix, &cell)
            .validate()
            .with_context(|| format!("invalid cell {cell:?}"))?;
    }
    let results = experiment::run_matrix(&base, &matrix);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv_path = args.out.join("metrics.csv");
    experiment::write_csv(&results, BufWriter::new(File::create(&csv_path)?))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    if !args.no_events {
        let log_path = args.out.join("events.log");
        experiment::write_events(&results, BufWriter::new(File::create(&log_path)?))
            .with_context(|| format!("writing {}", log_path.display()))?;
    }
    let mut failed = 0;
    for r in &results {
        match &r.outcome {
            Ok(o) => {
                let m = &o.metrics;
                eprintln!(
                    "{} {} h={} seed={} n={}: pdt={:.4}s artt={:.4}s aect={:.4}J migrations={} cmwc={:.3} tit={}{}",
                    m.technique,
                    m.app,
                    m.horizon_s,
                    m.seed,
                    m.devices,
                    m.pdt_s,
                    m.artt_s,
                    m.aect_j,
                    m.migrations,
                    m.cmwc,
                    m.tit,
                    m.oracle_gap.map(|g| format!(" gap={:.2}%", 100.0 * g)).unwrap_or_default()
                );
            }
            Err(e) => {
                failed += 1;
                eprintln!("error in {:?}: {e}", r.cell);
            }
        }
    }
    eprintln!("wrote {}", csv_path.display());
    Ok(if failed > 0 { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Scenarios => {
            for n in Scenario::bundled_names() {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
