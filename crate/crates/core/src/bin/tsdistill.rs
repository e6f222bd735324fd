use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsdistill::run::{self, Overrides, RunConfig};

/// Distill long time series into short synthetic ones, and evaluate them.
///
/// Every option below can also be set through the environment variable shown
/// next to it. Precedence: flag, then environment, then config file, then
/// built-in default.
#[derive(Parser)]
#[command(name = "tsdistill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true, env = "TSDISTILL_CONFIG")]
    config: Option<PathBuf>,
    /// Input CSV (replaces the generated series)
    #[arg(long, global = true, env = "TSDISTILL_DATASET")]
    dataset: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "TSDISTILL_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true, env = "TSDISTILL_SEED")]
    seed: Option<u64>,
    /// Worker threads for parallel grids
    #[arg(long, global = true, env = "TSDISTILL_THREADS")]
    threads: Option<usize>,
    /// Synthetic series length
    #[arg(long = "M", global = true, env = "TSDISTILL_M")]
    length: Option<usize>,
    /// Harmonics kept per channel
    #[arg(long, global = true, env = "TSDISTILL_K")]
    k: Option<usize>,
    /// Weight of the harmonic term
    #[arg(long, global = true, env = "TSDISTILL_LAMBDA")]
    lambda: Option<f64>,
    /// Outer step size
    #[arg(long, global = true, env = "TSDISTILL_ETA")]
    eta: Option<f64>,
    /// Norm order of the harmonic term (1 or 2)
    #[arg(long, global = true, env = "TSDISTILL_P")]
    p: Option<u8>,
    /// Expert and student unroll length
    #[arg(long, global = true, env = "TSDISTILL_INNER_STEPS")]
    inner_steps: Option<usize>,
    #[arg(long, global = true, env = "TSDISTILL_OUTER_ITERS")]
    outer_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Distill the training split into a synthetic series
    Distill,
    /// Compare methods by the test error of forecasters trained on their output
    Eval,
    /// Sweep amplitude perturbations against autocorrelation error
    VerifyTheorem,
    /// Write a generated sine-mixture series
    Gen,
    /// Finite-difference check of the distillation gradient
    Gradcheck {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn execute(cli: Cli) -> tsdistill::Result<i32> {
    let c = cli.common;
    let overrides = Overrides {
        dataset: c.dataset,
        out: c.out,
        seed: c.seed,
        threads: c.threads,
        length: c.length,
        harmonics: c.k,
        lambda: c.lambda,
        eta: c.eta,
        p: c.p,
        inner_steps: c.inner_steps,
        outer_iters: c.outer_iters,
    };
    let mut cfg: RunConfig = run::load_config(c.config.as_deref(), &overrides)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| tsdistill::Error::InvalidConfig(e.to_string()))?;
    }
    let output = match cli.command {
        Command::Distill => run::cmd_distill(&cfg)?,
        Command::Eval => {
            let (out, report) = run::cmd_eval(&cfg)?;
            for e in &report.entries {
                eprintln!("{} {} mse {:.4} +- {:.4}", e.method, e.eval_model, e.mse_mean, e.mse_std);
            }
            out
        }
        Command::VerifyTheorem => {
            let (out, t) = run::cmd_verify_theorem(&cfg)?;
            eprintln!("slope {:.4e} spearman {:?} worst ratio {:.3}", t.report.slope, t.report.spearman, t.worst_bound_ratio);
            out
        }
        Command::Gen => run::cmd_gen(&cfg)?,
        Command::Gradcheck { eps, instances, inject_fault } => {
            if let Some(e) = eps {
                cfg.gradcheck.eps = e;
            }
            if let Some(n) = instances {
                cfg.gradcheck.instances = n;
            }
            if inject_fault.is_some() {
                cfg.gradcheck.fault = inject_fault;
            }
            let (out, g) = run::cmd_gradcheck(&cfg)?;
            eprintln!("max relative error {:.3e}", g.max_rel_err);
            out
        }
    };
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    for f in &output.files {
        println!("{}", f.display());
    }
    if let Some(msg) = &output.failure {
        eprintln!("error: check failed: {msg}");
    }
    Ok(output.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            // malformed flags are configuration errors
            return ExitCode::from(1);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
