use cavlab_core::experiments::{
    default_report_path, emit_report, run_scenario, QuadratureChoice, ReportFormat, ScenarioConfig, EXIT_CONFIG,
    EXIT_FAIL, SCENARIOS,
};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cavlab", version, about = "Run numerical verification scenarios for cavitation functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run {
        scenario: String,
        /// JSON configuration; its scenario must match the positional name.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exponent q in (1, 1.5).
        #[arg(long)]
        q: Option<f64>,
        /// Quadrature preset: fast, default or paranoid.
        #[arg(long)]
        quad: Option<String>,
        /// Report path; defaults to ./reports/<scenario>-<timestamp>.<ext>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Suppress per-check lines.
        #[arg(long)]
        quiet: bool,
    },
    /// List the available scenarios.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

fn config_error(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_CONFIG as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            let width = SCENARIOS.iter().map(|s| s.name.len()).max().unwrap_or(0);
            for s in SCENARIOS {
                println!("{:<width$}  {}", s.name, s.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Run { scenario, config, q, quad, out, format, quiet } => {
            let mut cfg = match &config {
                Some(path) => match ScenarioConfig::load(path) {
                    Ok(c) if c.scenario == scenario => c,
                    Ok(c) => {
                        return config_error(format!(
                            "{} configures scenario {:?}, not {scenario:?}",
                            path.display(),
                            c.scenario
                        ))
                    }
                    Err(e) => return config_error(e),
                },
                None => ScenarioConfig::new(scenario.clone()),
            };
            if let Some(q) = q {
                cfg.q = q;
            }
            if let Some(name) = quad {
                cfg.quadrature = QuadratureChoice::Preset(name);
            }
            let report = match run_scenario(&cfg) {
                Ok(r) => r,
                Err(e) => return config_error(e),
            };
            let format = ReportFormat::from(format);
            let path = out.unwrap_or_else(|| default_report_path(&PathBuf::from("reports"), &scenario, format));
            if !quiet {
                for c in &report.checks {
                    let value = c.value.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
                    let status = if c.passed { "pass" } else { "FAIL" };
                    println!("{status}  {:<44} {value}", c.name);
                    if let (false, Some(d)) = (c.passed, &c.detail) {
                        println!("      {d}");
                    }
                }
            }
            if let Err(e) = emit_report(&report, format, &path) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_FAIL as u8);
            }
            let failed = report.failures().count();
            println!(
                "{}: {} of {} checks passed; report at {}",
                report.scenario,
                report.checks.len() - failed,
                report.checks.len(),
                path.display()
            );
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
