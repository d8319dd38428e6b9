use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dgd_cli::{list_presets, preset, run_experiment, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "dgd",
    about = "Decentralized gradient descent experiments: run configs, presets, traces, audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a JSON run configuration.
    Run {
        /// Path to the configuration document.
        config: PathBuf,
        /// Directory for outputs not pinned by the configuration.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Execute a built-in preset by name.
    Preset {
        /// Preset name; `list` enumerates them.
        name: String,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// List the built-in presets.
    List,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, out } => {
            let text = std::fs::read_to_string(&config).map_err(|source| CliError::Io {
                path: config.clone(),
                source,
            })?;
            let parsed = RunConfig::from_json(&text)?;
            let stem = config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string());
            let (trace, report, trace_path, audit_path) =
                run_experiment(&parsed, &out, &stem)?;
            println!("{report}");
            println!(
                "recorded {} iterations ({}); trace: {}, audit: {}",
                trace.rows.len(),
                trace.regime,
                trace_path.display(),
                audit_path.display()
            );
            Ok(())
        }
        Command::Preset { name, out } => {
            let config = preset(&name)?;
            let config_path = out.join(format!("{name}_config.json"));
            std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
                path: out.clone(),
                source,
            })?;
            std::fs::write(&config_path, config.to_json()).map_err(|source| CliError::Io {
                path: config_path.clone(),
                source,
            })?;
            let (trace, report, trace_path, audit_path) = run_experiment(&config, &out, &name)?;
            println!("{report}");
            println!(
                "recorded {} iterations ({}); trace: {}, audit: {}, config: {}",
                trace.rows.len(),
                trace.regime,
                trace_path.display(),
                audit_path.display(),
                config_path.display()
            );
            Ok(())
        }
        Command::List => {
            for (name, description) in list_presets() {
                println!("{name}: {description}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
