use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fdr_forge::harness::{run_experiment, Overrides, EXPERIMENTS};
use fdr_forge::procedures::{PiRule, DEFAULT_LAMBDA};
use fdr_forge::{fdr_hat, NuMeasure, ProcedureSpec, ShapeFunction, StepUp, TestingProblem};

mod input;
mod sweep;

#[derive(Parser)]
#[command(name = "fdr-forge", version, about = "Step-up FDR procedures and simulation experiments")]
struct Cli {
    /// Worker threads for simulations; results do not depend on it.
    #[arg(long, global = true, env = "FDR_FORGE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a step-up procedure to a CSV or JSON list of p-values.
    Adjust(AdjustArgs),
    /// Run a named experiment and write its verdict and tables.
    Experiment(ExperimentArgs),
    /// Run a resumable generators x procedures x m x q sweep.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Proc {
    Bh,
    By,
    Storey,
    StepUp,
}

#[derive(clap::Args)]
struct AdjustArgs {
    input: PathBuf,
    #[arg(long = "proc", value_enum, default_value = "bh")]
    procedure: Proc,
    #[arg(long, default_value_t = 0.05)]
    q: f64,
    /// Null proportion for --proc step-up.
    #[arg(long)]
    pi: Option<f64>,
    /// Storey threshold.
    #[arg(long)]
    lambda: Option<f64>,
    /// Use the unnormalized Storey count instead of the proportion estimate.
    #[arg(long)]
    raw_storey: bool,
    /// identity, harmonic, nu-uniform, nu-linear, or a JSON shape such as
    /// '{"nu": [[1, 0.5], [2, 0.5]]}'.
    #[arg(long)]
    shape: Option<String>,
    /// Print a JSON object instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// One of: counterexample, by-control, fdrhat-bias, asymptotic-bh,
    /// oracle-equivalence, storey-failure.
    name: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    m_list: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct SweepArgs {
    config: PathBuf,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` means an experiment ran and failed a check.
fn run(cli: Cli) -> Result<bool> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("cannot start worker pool")?;
    pool.install(|| match cli.command {
        Command::Adjust(args) => adjust(&args).map(|()| true),
        Command::Experiment(args) => experiment(&args),
        Command::Sweep(args) => run_sweep(&args.config, &args.out).map(|()| true),
    })
}

fn parse_shape(text: &str, m: usize) -> Result<ShapeFunction<f64>> {
    Ok(match text {
        "identity" => ShapeFunction::Identity,
        "harmonic" => ShapeFunction::Harmonic,
        "nu-uniform" => ShapeFunction::Nu(NuMeasure::uniform_atoms(m)),
        "nu-linear" => ShapeFunction::Nu(NuMeasure::linear_decay_atoms(m)),
        json => serde_json::from_str(json).with_context(|| format!("invalid --shape {json:?}"))?,
    })
}

fn build_procedure(args: &AdjustArgs, m: usize) -> Result<ProcedureSpec<f64>> {
    let only = |flag: &str, given: bool, allowed: &str| -> Result<()> {
        if given {
            bail!("{flag} only applies to {allowed}");
        }
        Ok(())
    };
    let spec = match args.procedure {
        Proc::Bh | Proc::By => {
            only("--pi", args.pi.is_some(), "--proc step-up")?;
            only("--shape", args.shape.is_some(), "--proc step-up or storey")?;
            only("--lambda", args.lambda.is_some(), "--proc storey")?;
            only("--raw-storey", args.raw_storey, "--proc storey")?;
            match args.procedure {
                Proc::Bh => ProcedureSpec::bh(args.q),
                _ => ProcedureSpec::by(args.q),
            }
        }
        Proc::Storey => {
            only("--pi", args.pi.is_some(), "--proc step-up")?;
            ProcedureSpec {
                pi: PiRule::Storey {
                    lambda: args.lambda.unwrap_or(DEFAULT_LAMBDA),
                    normalized: !args.raw_storey,
                },
                shape: match &args.shape {
                    Some(s) => parse_shape(s, m)?,
                    None => ShapeFunction::Identity,
                },
                q: args.q,
            }
        }
        Proc::StepUp => {
            only("--lambda", args.lambda.is_some(), "--proc storey")?;
            only("--raw-storey", args.raw_storey, "--proc storey")?;
            ProcedureSpec {
                pi: PiRule::Constant(args.pi.unwrap_or(1.0)),
                shape: match &args.shape {
                    Some(s) => parse_shape(s, m)?,
                    None => ShapeFunction::Identity,
                },
                q: args.q,
            }
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn adjust(args: &AdjustArgs) -> Result<()> {
    let pvalues = input::read_pvalues(&args.input)?;
    if let Some(i) = pvalues.iter().position(|p| !(0.0..=1.0).contains(p)) {
        bail!("p-value {} at position {} is not in [0, 1]", pvalues[i], i + 1);
    }
    let problem = TestingProblem::unlabeled(pvalues)?;
    let spec = build_procedure(args, problem.m())?;
    let procedure = StepUp::new(spec.clone(), problem.m())?;
    let rejections = procedure.apply(&problem)?;
    let threshold = *rejections.threshold();
    let estimate = fdr_hat(&problem, &threshold)?;
    let rejected = rejections.one_based();
    if args.json {
        let out = serde_json::json!({
            "procedure": spec,
            "m": problem.m(),
            "rejected": rejected,
            "threshold": threshold,
            "fdr_hat": estimate,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        let list = rejected.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        println!("procedure: {}", spec.label());
        println!("m: {}", problem.m());
        println!("rejected: {list}");
        println!("threshold: {threshold}");
        println!("fdr_hat: {estimate}");
    }
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<bool> {
    if !EXPERIMENTS.contains(&args.name.as_str()) {
        bail!("unknown experiment {:?}; expected one of {}", args.name, EXPERIMENTS.join(", "));
    }
    let overrides = Overrides {
        m: args.m,
        q: args.q,
        qs: args.qs.clone(),
        m_list: args.m_list.clone(),
        n_reps: args.reps,
        lambda: args.lambda,
    };
    eprintln!("running {} with seed {}", args.name, args.seed);
    let report = run_experiment(&args.name, &overrides, args.seed)?;
    let written = report.write_to(&args.out)?;
    for line in report.summary_lines() {
        println!("{line}");
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    println!("{} {}", report.experiment, if report.pass { "PASS" } else { "FAIL" });
    Ok(report.pass)
}

fn run_sweep(config: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    let cfg: sweep::SweepConfig = serde_json::from_str(&text).context("malformed sweep config")?;
    eprintln!("sweep seed {}", cfg.seed);
    let stats = sweep::run(&cfg, out)?;
    println!(
        "cells computed: {}, reused: {}; wrote {}",
        stats.computed,
        stats.reused,
        out.join("sweep.csv").display()
    );
    Ok(())
}
