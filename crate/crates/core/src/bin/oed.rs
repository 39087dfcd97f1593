use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use robust_oed::cli::{cmd_build_model, cmd_evaluate, cmd_optimize, cmd_scenarios, load_config};
use robust_oed::config::{OptimizeMode, RunConfig, ScenarioSpec};
use robust_oed::criteria::IllPosedPolicy;
use robust_oed::error::{OedError, Result};
use robust_oed::io::RunManifest;

#[derive(Parser)]
#[command(
    name = "oed",
    version,
    about = "Robust sensor placement for linear inverse problems"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    illposed_policy: Option<PolicyArg>,
    /// Validate inputs and write the manifest without computing.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Exclude,
    Zero,
    Error,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Classical,
    RobustOneout,
    RobustPof,
    RobustClipping,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKindArg {
    OneOut,
    KOut,
    Bernoulli,
    Clipping,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the structural model and export its FRF.
    BuildModel,
    /// Optimize a design.
    Optimize {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Stop at the relaxed optimum without the binary penalty sweep.
        #[arg(long)]
        fractional: bool,
    },
    /// Evaluate designs over failure scenarios.
    Evaluate {
        /// Design JSON files, in addition to those in the config.
        #[arg(long = "design")]
        designs: Vec<PathBuf>,
    },
    /// Generate and export a scenario set.
    Scenarios {
        #[arg(long, value_enum)]
        kind: ScenarioKindArg,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 100_000)]
        n_samps: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildModel => "build-model",
            Command::Optimize { .. } => "optimize",
            Command::Evaluate { .. } => "evaluate",
            Command::Scenarios { .. } => "scenarios",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let (mut cfg, hash) = load_config(c.config.as_deref())?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(p) = c.illposed_policy {
        cfg.illposed_policy = match p {
            PolicyArg::Exclude => IllPosedPolicy::Exclude,
            PolicyArg::Zero => IllPosedPolicy::Zero,
            PolicyArg::Error => IllPosedPolicy::Error,
        };
    }
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| OedError::InvalidConfig(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&c.out_dir)?;
    let mut manifest = RunManifest::start(cli.command.name(), hash.clone(), cfg.seed, c.dry_run);
    if !c.dry_run {
        for path in execute(&cli.command, &mut cfg, &hash, &c.out_dir)? {
            manifest.record(path);
        }
    } else if let Command::Evaluate { designs } = &cli.command {
        for d in cfg.evaluate.designs.iter().chain(designs) {
            if !d.exists() {
                return Err(OedError::InvalidConfig(format!(
                    "design file {} not found",
                    d.display()
                )));
            }
        }
    }
    let path = manifest.finish(&c.out_dir)?;
    say(format!("manifest: {}", path.display()));
    Ok(())
}

fn execute(command: &Command, cfg: &mut RunConfig, hash: &str, out: &Path) -> Result<Vec<PathBuf>> {
    match command {
        Command::BuildModel => {
            let (s, outputs) = cmd_build_model(cfg, out)?;
            say(format!(
                "n_y = {}, n_theta = {}, condition number = {:.4e}",
                s.n_sensors, s.n_params, s.condition_number
            ));
            Ok(outputs)
        }
        Command::Optimize { mode, fractional } => {
            let mode = match mode {
                Some(ModeArg::Classical) => OptimizeMode::Classical,
                Some(ModeArg::RobustOneout) => OptimizeMode::RobustOneout,
                Some(ModeArg::RobustPof) => OptimizeMode::RobustPof,
                Some(ModeArg::RobustClipping) => OptimizeMode::RobustClipping,
                None => cfg.mode,
            };
            if *fractional {
                cfg.binary = false;
            }
            let (file, outputs) = cmd_optimize(cfg, mode, out)?;
            say(format!(
                "{}: criterion = {:.6e}, binary = {}, gamma = {:?}{}",
                file.label,
                file.criterion_value,
                file.binary,
                file.gamma,
                if file.fallback {
                    " (rounded fallback)"
                } else {
                    ""
                }
            ));
            Ok(outputs)
        }
        Command::Evaluate { designs } => cmd_evaluate(cfg, designs, cfg.illposed_policy, hash, out),
        Command::Scenarios { kind, k, n_samps } => {
            let spec = match kind {
                ScenarioKindArg::OneOut => ScenarioSpec::KOut {
                    k: 1,
                    support_only: false,
                },
                ScenarioKindArg::KOut => ScenarioSpec::KOut {
                    k: *k,
                    support_only: false,
                },
                ScenarioKindArg::Bernoulli => ScenarioSpec::Bernoulli { n_samps: *n_samps },
                ScenarioKindArg::Clipping => ScenarioSpec::Clipping,
            };
            cmd_scenarios(cfg, &spec, out)
        }
    }
}

/// Stdout writes that tolerate a closed pipe.
fn say(line: String) {
    let _ = writeln!(std::io::stdout(), "{line}");
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
