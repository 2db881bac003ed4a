use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ben_cli::config::{resolve, Axis, FileConfig, Flags};
use ben_cli::csvout::write_oracle_csv;
use ben_cli::oracle::compute_oracle;
use ben_cli::runner::{execute_ablate, execute_run};
use ben_cli::{CliError, CliResult};
use ben_core::envs::TigerConfig;

#[derive(Parser)]
#[command(
    name = "ben",
    version,
    about = "Bayesian exploration network experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a run configuration and write metrics CSVs.
    Run(Common),
    /// Print the tiger oracle table and write it as CSV.
    Oracle(Common),
    /// Sweep one axis of a configuration, one metrics file per setting.
    Ablate {
        /// Axis to sweep.
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Path to a TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset overriding the config's preset.
    #[arg(long)]
    preset: Option<String>,
    /// Seed overriding the configured list; repeat for several.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory overriding the config and BEN_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    #[value(name = "aleatoric_layers", alias = "aleatoric-layers")]
    AleatoricLayers,
    #[value(name = "pretrain_steps", alias = "pretrain-steps")]
    PretrainSteps,
    #[value(name = "contextual")]
    Contextual,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::AleatoricLayers => Axis::AleatoricLayers,
            AxisArg::PretrainSteps => Axis::PretrainSteps,
            AxisArg::Contextual => Axis::Contextual,
        }
    }
}

fn load(common: &Common) -> CliResult<(FileConfig, Flags, Option<String>)> {
    let (file, received) = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            (ben_cli::config::parse_file(&text)?, Some(text))
        }
        None => (FileConfig::default(), None),
    };
    let flags = Flags {
        preset: common.preset.clone(),
        seeds: common.seeds.clone(),
        out: common.out.clone(),
    };
    Ok((file, flags, received))
}

fn cmd_run(common: &Common) -> CliResult<()> {
    let (file, flags, received) = load(common)?;
    let resolved = resolve(&file, &flags, received)?;
    let written = execute_run(&resolved)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_oracle(common: &Common) -> CliResult<()> {
    let (file, flags, _received) = load(common)?;
    // The oracle is defined for tiger parameters; reject a config that
    // resolves to anything else, but allow running with no config at all.
    let cfg = if file.env.kind.is_none() && file.preset.is_none() && flags.preset.is_none() {
        TigerConfig::default()
    } else {
        match ben_cli::config::resolve_env_only(&file, &flags)? {
            ben_cli::config::EnvSetting::Tiger(cfg) => cfg,
            _ => {
                return Err(CliError::Config(
                    "the oracle needs tiger parameters; this config resolves to search_rescue"
                        .into(),
                ))
            }
        }
    };
    let table = compute_oracle(&cfg)?;
    print!("{}", table.render());
    let out_dir = flags
        .out
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os(ben_cli::config::OUT_DIR_VAR).map(PathBuf::from));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(CliError::from)?;
        let path = dir.join("oracle.csv");
        write_oracle_csv(&path, &table)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_ablate(common: &Common, axis: Axis) -> CliResult<()> {
    let (file, flags, received) = load(common)?;
    let resolved = resolve(&file, &flags, received)?;
    let written = execute_ablate(&resolved, axis)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match &cli.cmd {
        Cmd::Run(common) => cmd_run(common),
        Cmd::Oracle(common) => cmd_oracle(common),
        Cmd::Ablate { axis, common } => cmd_ablate(common, (*axis).into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
