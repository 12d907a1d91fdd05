//! `reluver` command-line front end.
//!
//! Exit codes: 0 UNSAT (property holds), 1 SAT, 2 UNK, 3 parse error,
//! 4 fingerprint mismatch, 5 any other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use reluver::bench::{run_bench, BenchConfig};
use reluver::incremental::reverify_compressed;
use reluver::network::{prune_by_magnitude, quantize};
use reluver::property::PropertyFile;
use reluver::{reverify, solve, Budget, Error, Network, ProofArtifact, ReuseReport, Verdict};

const BUDGET_ENV: &str = "MUCG4_BUDGET_MS";

#[derive(Parser)]
#[command(name = "reluver", version, about = "Complete ReLU network verification with proof reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide a property from scratch.
    Verify {
        net: PathBuf,
        prop: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Write the proof artifact here.
        #[arg(long)]
        proof_out: Option<PathBuf>,
    },
    /// Quantize or prune a network.
    Compress {
        net: PathBuf,
        out: PathBuf,
        #[arg(long, conflicts_with = "prune_ratio", required_unless_present = "prune_ratio")]
        quantize_step: Option<f64>,
        #[arg(long)]
        prune_ratio: Option<f64>,
    },
    /// Re-decide a property for a compressed network, reusing an old proof.
    Reverify {
        net_prime: PathBuf,
        prop: PathBuf,
        proof: PathBuf,
        /// The network the proof was produced for; enables the compatibility check.
        #[arg(long)]
        original: Option<PathBuf>,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        proof_out: Option<PathBuf>,
    },
    /// Generate a seeded suite and compare scratch and incremental runs.
    Bench {
        #[arg(long, default_value_t = 20)]
        suite_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Zero wall times and use LP-call ratios as speedups.
        #[arg(long)]
        deterministic: bool,
        #[command(flatten)]
        budget: BudgetArgs,
    },
}

#[derive(Args)]
struct BudgetArgs {
    /// Wall-clock budget per problem in milliseconds.
    #[arg(long = "budget", value_name = "MS")]
    budget_ms: Option<u64>,
    /// LP-call budget per problem.
    #[arg(long)]
    max_lp_calls: Option<u64>,
}

impl BudgetArgs {
    fn resolve(&self) -> anyhow::Result<Budget> {
        let default = Budget::default();
        let ms = match self.budget_ms {
            Some(ms) => Some(ms),
            None => match std::env::var(BUDGET_ENV) {
                Ok(v) => Some(v.trim().parse().with_context(|| format!("{BUDGET_ENV}={v} is not a number of milliseconds"))?),
                Err(_) => None,
            },
        };
        let wall = ms.map(Duration::from_millis).unwrap_or(default.wall_clock);
        Ok(Budget::new(wall, self.max_lp_calls.unwrap_or(default.max_lp_calls))?)
    }
}

fn exit_for(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::Unsat => 0,
        Verdict::Sat => 1,
        Verdict::Unk => 2,
    }
}

fn exit_for_error(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Parse { .. } | Error::VersionMismatch(_)) => 3,
        Some(Error::FingerprintMismatch(_)) => 4,
        _ => 5,
    }
}

fn load_problem(net: &Path, prop: &Path) -> anyhow::Result<reluver::VerificationProblem> {
    let network = Network::load(net)?;
    Ok(PropertyFile::load(prop)?.into_problem(network)?)
}

fn print_proof(proof: &ProofArtifact) {
    println!("verdict: {}", proof.verdict);
    println!("lp calls: {}", proof.stats.lp_calls);
    println!("wall time: {:.3}s", proof.stats.wall_time);
    println!("cores: {}", proof.mucs.len());
    if !proof.unchecked.is_empty() {
        println!("unchecked paths: {}", proof.unchecked.len());
    }
    if let Some(sc) = &proof.sat_core {
        println!("counterexample: {:?}", sc.witness);
    }
}

fn print_report(r: &ReuseReport, old: &ProofArtifact) {
    match r.validity {
        Some(v) => println!("validity: {v}"),
        None => println!("validity: N/A"),
    }
    println!("cores reused: {}", r.cores_reused);
    println!("cores failed: {}", r.cores_failed);
    println!("branches reopened: {}", r.branches_reopened);
    if r.fast_path {
        println!("stored counterexample still valid");
    }
    if r.fell_back {
        println!("old proof did not cover the phase space; solved from scratch");
    }
    let t = r.time.as_secs_f64();
    if t > 0.0 && old.stats.wall_time > 0.0 {
        println!("speedup vs original run: {:.2}x", old.stats.wall_time / t);
    } else {
        println!("speedup vs original run: N/A");
    }
}

fn save_proof(proof: &ProofArtifact, out: Option<&PathBuf>) -> anyhow::Result<()> {
    if let Some(path) = out {
        proof.save(path)?;
        println!("proof written to {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Verify {
            net,
            prop,
            budget,
            proof_out,
        } => {
            let problem = load_problem(&net, &prop)?;
            let proof = solve(&problem, budget.resolve()?, &[])?;
            print_proof(&proof);
            save_proof(&proof, proof_out.as_ref())?;
            Ok(exit_for(proof.verdict))
        }
        Command::Compress {
            net,
            out,
            quantize_step,
            prune_ratio,
        } => {
            let network = Network::load(&net)?;
            match (quantize_step, prune_ratio) {
                (Some(step), None) => quantize(&network, step)?.save(&out)?,
                (None, Some(ratio)) => prune_by_magnitude(&network, ratio)?.save_with_masks(&out)?,
                _ => return Err(anyhow!("give exactly one of --quantize-step and --prune-ratio")),
            }
            println!("compressed network written to {}", out.display());
            Ok(0)
        }
        Command::Reverify {
            net_prime,
            prop,
            proof,
            original,
            budget,
            proof_out,
        } => {
            let old = ProofArtifact::load(&proof)?;
            let budget = budget.resolve()?;
            let outcome = match original {
                Some(orig) => {
                    let problem_of_f = load_problem(&orig, &prop)?;
                    let f_prime = Network::load(&net_prime)?;
                    reverify(&f_prime, &problem_of_f, &old, budget)?
                }
                None => reverify_compressed(&load_problem(&net_prime, &prop)?, &old, budget)?,
            };
            print_proof(&outcome.proof);
            print_report(&outcome.report, &old);
            save_proof(&outcome.proof, proof_out.as_ref())?;
            Ok(exit_for(outcome.verdict))
        }
        Command::Bench {
            suite_size,
            seed,
            out,
            deterministic,
            budget,
        } => {
            let mut cfg = BenchConfig::new(suite_size, seed);
            cfg.budget = budget.resolve()?;
            cfg.deterministic = deterministic;
            let report = run_bench(&cfg, Some(&out))?;
            print!("{report}");
            println!("records written to {}", out.join("records.csv").display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 5 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_for_error(&e))
        }
    }
}
