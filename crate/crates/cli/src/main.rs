use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kd_cli::commands::losscurve::{curve_csv, CurveLoss, CurveRequest};
use kd_cli::commands::{eval, geometry, gradcheck, train};
use kd_cli::Result;

#[derive(Parser)]
#[command(name = "kd", version, about = "Embedding distillation at toy scale: train, evaluate and verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a teacher and distill students as configured.
    Train {
        config: PathBuf,
        /// Run once per value: `key=v1,v2,...` with a dotted config key.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Print a loss curve as CSV on standard output.
    Losscurve(CurveArgs),
    /// Check every analytic gradient against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Negate one case's analytic gradient (the suite must then fail it).
        #[arg(long, hide = true)]
        sign_flip: Option<String>,
    },
    /// Check the loss identities on random instances.
    VerifyGeometry {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Make every n-th triplet degenerate (0 = never).
        #[arg(long, default_value_t = 0, hide = true)]
        inject_degenerate_every: usize,
    },
    /// Evaluate a model checkpoint on the configured dataset's pairs.
    Eval { checkpoint: PathBuf, config: PathBuf },
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, value_enum, default_value_t = CurveLoss::Iled)]
    loss: CurveLoss,
    /// Steepness (r or r').
    #[arg(long)]
    r: Option<f64>,
    /// Soft margin s (iled) or transition t (rpsd).
    #[arg(long, visible_alias = "t")]
    s: Option<f64>,
    /// Smoothness (b or b').
    #[arg(long)]
    b: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    lambdas: Vec<f64>,
    #[arg(long, allow_negative_numbers = true)]
    from: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    to: Option<f64>,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Also print the feature-consistency curve 2(1 - x).
    #[arg(long)]
    with_fc: bool,
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut stdout = io::stdout();
    match cli.command {
        Command::Train { config, sweep } => train::cmd_train(&config, sweep.as_deref(), &mut io::stderr()),
        Command::Losscurve(a) => {
            let csv = curve_csv(&CurveRequest {
                loss: a.loss,
                r: a.r,
                shift: a.s,
                b: a.b,
                lambdas: a.lambdas,
                from: a.from,
                to: a.to,
                points: a.points,
                with_fc: a.with_fc,
            })?;
            print!("{csv}");
            Ok(())
        }
        Command::Gradcheck { seeds, sign_flip } => gradcheck::cmd_gradcheck(seeds, sign_flip.as_deref(), &mut stdout),
        Command::VerifyGeometry {
            trials,
            seed,
            inject_degenerate_every,
        } => geometry::cmd_verify_geometry(trials, seed, inject_degenerate_every, &mut stdout),
        Command::Eval { checkpoint, config } => eval::cmd_eval(&checkpoint, &config, &mut stdout).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
