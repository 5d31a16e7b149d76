use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::info;
use petreg::config::PRESETS;
use petreg::{run, trigger_stats};
use petreg_cli::output::{emit_outputs, OutputOptions};
use petreg_cli::{bound_report, resolve_config};

#[derive(Parser)]
#[command(
    name = "petreg",
    version,
    about = "Event-triggered cooperative output regulation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or bundled preset name) and write its outputs.
    Run {
        config: String,
        /// Output directory; defaults to the one named in the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Compute the Lyapunov monitors.
        #[arg(long)]
        diagnostics: bool,
        /// Write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Print the sampling-period bound of the scenario's network.
    Bound { config: String },
    /// Bundled scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset file.
    Show { name: String },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            diagnostics,
            plots,
        } => {
            let (cfg, mut scenario) = resolve_config(&config)?;
            if diagnostics {
                scenario.diagnostics.get_or_insert_with(Default::default);
            }
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            info!(
                "running {} to t = {} s with h = {} s",
                config, scenario.t_end, scenario.h
            );
            let trace = run(&scenario)?;
            let files = emit_outputs(
                &trace,
                &dir,
                OutputOptions {
                    csv_stride: cfg.output.csv_stride,
                    plots: plots || cfg.output.plots,
                },
            )?;
            let stats = trigger_stats(&trace);
            println!(
                "network events: {} / {} sampling instants (ratio {:.4})",
                stats.network_events(),
                stats.network_samples(),
                stats.network_ratio()
            );
            if stats.sensor_samples() > 0 {
                println!(
                    "sensor events: {} / {} sampling instants (ratio {:.4})",
                    stats.sensor_events(),
                    stats.sensor_samples(),
                    stats.sensor_ratio()
                );
            }
            let t_end = scenario.t_end;
            println!(
                "max |e| over the last second: {:.3e}",
                trace.max_abs_error((t_end - 1.0).max(0.0), t_end)
            );
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Bound { config } => {
            let (_, scenario) = resolve_config(&config)?;
            print!("{}", bound_report(&scenario)?);
        }
        Command::Presets { action } => match action {
            PresetAction::List => {
                for (name, text) in PRESETS {
                    let desc = text
                        .lines()
                        .find_map(|l| l.strip_prefix("description = "))
                        .map(|d| d.trim_matches('"'))
                        .unwrap_or("");
                    println!("{name:<24} {desc}");
                }
            }
            PresetAction::Show { name } => match petreg::config::preset_text(&name) {
                Some(text) => print!("{text}"),
                None => anyhow::bail!("no preset named {name}"),
            },
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
