use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slicelab::cli::{self, Overrides};
use slicelab::{Error, Statistic, TransferRule};

#[derive(Parser)]
#[command(name = "slicelab", version, about = "Online network slice reconfiguration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the reconfiguration once per seed and write per-iteration traces.
    Run(RunArgs),
    /// Compare the M/M/1 baseline with the reconfigured allocation.
    Compare(RunArgs),
    /// Check a scenario file and report every violated invariant.
    Validate(ScenarioArg),
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario TOML file; the built-in reference scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Output directory.
    #[arg(long, env = "SLICELAB_OUT", default_value = "out")]
    out: PathBuf,
    /// Seeds: `a..b`, `a..=b` or a comma-separated list.
    #[arg(long, default_value = "0..10", value_parser = parse_seeds)]
    seeds: Seeds,
    /// algorithm1, conservative or exchange.
    #[arg(long)]
    transfer_rule: Option<TransferRule>,
    /// Delay statistic fed to the penalty: max, mean or pNN.
    #[arg(long)]
    statistic: Option<Statistic>,
    /// Validate and print the resolved configuration without simulating.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    cli::parse_seeds(s).map(Seeds)
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if cli::is_input_error(&e) { 2 } else { 1 })
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match args.command {
        Command::Validate(a) => match cli::load_config(a.scenario.as_deref(), Overrides::default()) {
            Ok(cfg) => {
                println!(
                    "ok: {} slices, {} resources, new slice {}",
                    cfg.scenario.slices().len(),
                    cfg.scenario.dim(),
                    cfg.new_slice()
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run(a) | Command::Compare(a) if a.dry_run => {
            let ov = Overrides {
                transfer_rule: a.transfer_rule,
                statistic: a.statistic,
            };
            match cli::load_config(a.scenario.scenario.as_deref(), ov).and_then(|c| cli::dry_run(&c)) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Run(a) => {
            let ov = Overrides {
                transfer_rule: a.transfer_rule,
                statistic: a.statistic,
            };
            let res = cli::load_config(a.scenario.scenario.as_deref(), ov)
                .and_then(|cfg| cli::cmd_run(&cfg, &a.out, &a.seeds.0));
            match res {
                Ok(r) => {
                    for o in &r.outcomes {
                        println!(
                            "seed {}: {} iterations, {}",
                            o.run_seed,
                            o.iterations(),
                            if o.converged { "converged" } else { "max_iters reached" }
                        );
                    }
                    println!("wrote {}", a.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Compare(a) => {
            let ov = Overrides {
                transfer_rule: a.transfer_rule,
                statistic: a.statistic,
            };
            let res = cli::load_config(a.scenario.scenario.as_deref(), ov)
                .and_then(|cfg| cli::cmd_compare(&cfg, &a.out, &a.seeds.0));
            match res {
                Ok(c) => {
                    for (b, o) in c.baseline.pooled.iter().zip(&c.osra.pooled) {
                        println!(
                            "slice {}: violation fraction baseline {:.4}, reconfigured {:.4}",
                            b.slice, b.violation_fraction, o.violation_fraction
                        );
                    }
                    println!("wrote {}", a.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
