use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dwglm::checks::run_property_suite;
use dwglm::commands::{
    rerun_manifest, run_estimate_command, run_generate_command, run_oracle_command,
    run_simulation_command, study_design, DatasetSource, Manifest,
};
use dwglm::io::{AnalysisConfig, CsvFormat};
use dwglm::simulation::{Scenario, SimulationSettings, Study2bParams, SurveyParams};
use dwglm::{Error, Link, Method};

#[derive(Parser)]
#[command(
    name = "dwglm",
    version,
    about = "Doubly-robust optimal treatment regimes for binary outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study: replicates.csv, summary.csv, failures.csv, manifest.json.
    Simulate {
        /// study1, study2a or study2b.
        #[arg(long)]
        study: String,
        /// Scenario 1-4 (study1, study2b) or case 1-2 (study2a).
        #[arg(long)]
        scenario: Option<u8>,
        #[arg(long, value_delimiter = ',', default_value = "m0,m1,m2")]
        method: Vec<Method>,
        /// study1 only.
        #[arg(long)]
        link: Option<Link>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        /// Pseudo-outcome replicates per stage.
        #[arg(long = "R", default_value_t = dwglm::estimators::DEFAULT_REPLICATES)]
        r: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a regime from a CSV: estimates.csv, rules.txt, estimates.json.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Analysis configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's methods.
        #[arg(long, value_delimiter = ',')]
        method: Option<Vec<Method>>,
        #[arg(long)]
        link: Option<Link>,
        #[arg(long = "R")]
        r: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the config's output_dir, then ./dwglm-out.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-stage truth for study 2b.
    Oracle {
        /// Study 2b parameters (JSON); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sampled-check draws; 0 skips the check.
        #[arg(long, default_value_t = 100_000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the invariant suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset with a matching estimate config.
    Generate {
        /// study1, study2a, study2b or survey.
        #[arg(long)]
        study: String,
        #[arg(long)]
        scenario: Option<u8>,
        #[arg(long)]
        link: Option<Link>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_format, default_value = "long")]
        format: CsvFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a manifest.json.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_format(s: &str) -> Result<CsvFormat, String> {
    match s {
        "long" => Ok(CsvFormat::Long),
        "wide" => Ok(CsvFormat::Wide),
        _ => Err(format!("unknown format '{s}' (expected long or wide)")),
    }
}

fn run(cli: Cli) -> dwglm::Result<bool> {
    match cli.command {
        Command::Simulate {
            study,
            scenario,
            method,
            link,
            n,
            reps,
            r,
            seed,
            out,
        } => {
            let mut settings = SimulationSettings::new(
                study_design(&study, scenario, n, link)?,
                method,
                reps,
                seed,
            );
            settings.pseudo_replicates = r;
            let result = run_simulation_command(&settings, &out)?;
            for row in &result.summary {
                println!(
                    "{} stage {} {:<10} truth {:>9.5} mean {:>9.5} bias {:>9.5} sd {:>8.5} ({} converged)",
                    row.method, row.stage, row.term, row.truth, row.mean, row.bias, row.mc_sd, row.converged
                );
            }
            Ok(true)
        }
        Command::Estimate {
            data,
            config,
            method,
            link,
            r,
            seed,
            out,
        } => {
            let mut cfg = AnalysisConfig::from_json_file(&config)?;
            if let Some(m) = method {
                cfg.methods = m;
            }
            if let Some(l) = link {
                cfg.link = l;
            }
            if let Some(r) = r {
                cfg.replicates = r;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("dwglm-out"));
            for est in run_estimate_command(&data, &cfg, &out)? {
                for line in est.rule_descriptions() {
                    println!("{line}");
                }
            }
            Ok(true)
        }
        Command::Oracle {
            config,
            draws,
            seed,
        } => {
            let params = match config {
                Some(path) => read_json::<Study2bParams>(&path)?,
                None => Study2bParams::default(),
            };
            let report = run_oracle_command(&params, draws, seed)?;
            let (a, b) = report.closed_form;
            println!("closed form: psi_10 = {a:.10}, psi_11 = {b:.10}");
            let (a, b) = report.contrast;
            println!("contrast:    psi_10 = {a:.10}, psi_11 = {b:.10}");
            if let Some(c) = report.check {
                println!(
                    "sampled:     psi_10 = {:.6} (se {:.2e}), psi_11 = {:.6} (se {:.2e}), {} draws",
                    c.sampled.0, c.standard_errors.0, c.sampled.1, c.standard_errors.1, c.draws
                );
            }
            Ok(true)
        }
        Command::Check { seed } => {
            let results = run_property_suite(seed);
            for c in &results {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            let failed = results.iter().filter(|c| !c.passed).count();
            println!(
                "{} of {} checks passed",
                results.len() - failed,
                results.len()
            );
            Ok(failed == 0)
        }
        Command::Generate {
            study,
            scenario,
            link,
            n,
            seed,
            format,
            out,
        } => {
            let source = if study == "survey" {
                DatasetSource::Survey {
                    params: SurveyParams {
                        n: n.unwrap_or(1000),
                        ..Default::default()
                    },
                    scenario: Scenario::try_from(scenario.unwrap_or(4))?,
                }
            } else {
                DatasetSource::Study {
                    design: study_design(&study, scenario, n, link)?,
                }
            };
            let data = run_generate_command(&source, seed, format, &out)?;
            println!(
                "wrote {} subjects x {} stages to {}",
                data.n_subjects(),
                data.n_stages(),
                out.join("data.csv").display()
            );
            Ok(true)
        }
        Command::Rerun { manifest, out } => {
            rerun_manifest(&Manifest::from_json_file(&manifest)?, &out)?;
            println!("outputs written to {}", out.display());
            Ok(true)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> dwglm::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e.root(), Error::Usage(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
