use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gsreg_cli::commands::{
    cmd_eval, cmd_extract, cmd_fit, cmd_generate, cmd_gradcheck, Env, EvalArgs, ExtractArgs,
    FitArgs, GenerateArgs, GradcheckArgs, DEFAULT_EVAL_SAMPLES, DEFAULT_RESOLUTION,
};
use gsreg_cli::config::parse_override;
use gsreg_core::gradcheck::GradcheckConfig;

/// Shape and surface regularizers for Gaussian primitives on synthetic scenes.
///
/// Config keys may be overridden with `--section.key=value`, for example
/// `--train.warmup_iters=500`. GSREG_SEED sets the scene and training seed;
/// GSREG_THREADS caps grid-evaluation threads.
#[derive(Parser)]
#[command(name = "gsreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene and its target points.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Start from needle-shaped Gaussians with random orientations.
        #[arg(long)]
        init_needles: bool,
    },
    /// Fit Gaussians and the SDF network to a synthetic scene.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Print the resolved config and exit without writing anything.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        init_needles: bool,
        /// Snapshot the network and scene every K iterations.
        #[arg(long, value_name = "K")]
        checkpoint_every: Option<usize>,
    },
    /// Extract the zero level set of a network checkpoint as a mesh.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output mesh; `.obj` or `.ply`.
        #[arg(long)]
        out: PathBuf,
        /// Grid nodes per axis (at least 8).
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Also dump the sampled grid as raw float32 with a JSON sidecar.
        #[arg(long)]
        dump_grid: Option<PathBuf>,
    },
    /// Score a mesh against the analytic surface of a scene spec.
    Eval {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scene PLY whose erank statistics are reported.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EVAL_SAMPLES)]
        samples: usize,
        /// Report path; defaults to `<mesh>.eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 2)]
        hidden_layers: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        gaussians: usize,
        #[arg(long, default_value_t = 20)]
        targets: usize,
        /// Also write the results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let (overrides, args): (Vec<_>, Vec<_>) =
        std::env::args().partition(|a| parse_override(a).is_some());
    let overrides: Vec<_> = overrides.iter().filter_map(|a| parse_override(a)).collect();
    let cli = Cli::parse_from(args);
    let env = Env::from_process();
    let takes_overrides = matches!(
        cli.command,
        Command::Generate { .. } | Command::Fit { .. } | Command::Eval { .. }
    );
    if !overrides.is_empty() && !takes_overrides {
        eprintln!("error: config overrides only apply to generate, fit and eval");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate {
            config,
            out,
            init_needles,
        } => cmd_generate(
            &GenerateArgs {
                config,
                overrides,
                out,
                init_needles,
            },
            &env,
        ),
        Command::Fit {
            config,
            out,
            dry_run,
            init_needles,
            checkpoint_every,
        } => cmd_fit(
            &FitArgs {
                config,
                overrides,
                out,
                dry_run,
                init_needles,
                checkpoint_every,
            },
            &env,
        ),
        Command::Extract {
            checkpoint,
            out,
            resolution,
            dump_grid,
        } => cmd_extract(
            &ExtractArgs {
                checkpoint,
                out,
                resolution,
                dump_grid,
            },
            &env,
        )
        .map(|_| ()),
        Command::Eval {
            mesh,
            config,
            scene,
            samples,
            out,
        } => cmd_eval(
            &EvalArgs {
                mesh,
                config,
                overrides,
                scene,
                samples,
                out,
            },
            &env,
        )
        .map(|_| ()),
        Command::Gradcheck {
            seed,
            instances,
            hidden_layers,
            width,
            gaussians,
            targets,
            json,
        } => {
            let seed = match (seed, env.seed.as_deref().map(str::parse::<u64>)) {
                (Some(s), _) => s,
                (None, Some(Ok(s))) => s,
                (None, Some(Err(_))) => {
                    eprintln!("error: GSREG_SEED must be a non-negative integer");
                    return ExitCode::from(2);
                }
                (None, None) => 0,
            };
            cmd_gradcheck(&GradcheckArgs {
                config: GradcheckConfig {
                    seed,
                    instances,
                    hidden_layers,
                    width,
                    gaussians,
                    targets,
                },
                json,
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
