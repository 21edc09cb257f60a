//! File-producing entry points behind the CLI subcommands.
//!
//! Every command writes a `manifest.json` holding its full invocation.
//! [`rerun_manifest`] replays it and reproduces the outputs exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::LongitudinalDataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate_dtr, DtrEstimate, EstimatorConfig, Method};
use crate::io::{
    read_dataset, write_dataset, write_json, write_rows, AnalysisConfig, ColumnNames, CsvFormat,
};
use crate::links::Link;
use crate::model::StageModelSpec;
use crate::rng::{stream, Purpose};
use crate::simulation::{
    apply_misspecification, generate_survey, mc_verify_psi1_oracle, psi1_by_contrast,
    replication_dataset, run_simulation, survey_specs, true_psi1_study2b, Psi1OracleCheck,
    Scenario, SimulationResult, SimulationSettings, Study1Params, Study2aCase, Study2aParams,
    Study2bParams, StudyDesign, SurveyParams,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

const REPLICATE_HEADER: &[&str] = &["replication", "method", "stage", "term", "estimate"];
const SUMMARY_HEADER: &[&str] = &[
    "method",
    "stage",
    "term",
    "truth",
    "mean",
    "bias",
    "mc_sd",
    "converged",
];
const ESTIMATE_HEADER: &[&str] = &[
    "method",
    "stage",
    "term",
    "estimate",
    "converged_replicates",
    "replicates",
];

/// Builds a study design from CLI-style arguments. For `study2a` the
/// scenario number selects the case (1 or 2).
pub fn study_design(
    study: &str,
    scenario: Option<u8>,
    n: Option<usize>,
    link: Option<Link>,
) -> Result<StudyDesign> {
    let design = match study {
        "study1" => StudyDesign::Study1 {
            params: Study1Params {
                n: n.unwrap_or(1000),
                link: link.unwrap_or_default(),
                ..Default::default()
            },
            scenario: Scenario::try_from(scenario.unwrap_or(4))?,
        },
        "study2a" => StudyDesign::Study2a {
            params: Study2aParams {
                n: n.unwrap_or(1000),
                ..Default::default()
            },
            case: Study2aCase::try_from(scenario.unwrap_or(1))?,
        },
        "study2b" => StudyDesign::Study2b {
            params: Study2bParams {
                n: n.unwrap_or(1000),
                ..Default::default()
            },
            scenario: Scenario::try_from(scenario.unwrap_or(2))?,
        },
        other => {
            return Err(Error::Usage(format!(
                "unknown study '{other}' (expected study1, study2a or study2b)"
            )))
        }
    };
    if link.is_some_and(|l| l != Link::Logit) && design.name() != "study1" {
        return Err(Error::Usage(format!(
            "{} is defined for the logit link only",
            design.name()
        )));
    }
    Ok(design)
}

/// Source of a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Study {
        design: StudyDesign,
    },
    /// Three-stage survey-shaped data with design weights.
    Survey {
        params: SurveyParams,
        scenario: Scenario,
    },
}

impl DatasetSource {
    pub fn generate(&self, seed: u64) -> LongitudinalDataset {
        match self {
            DatasetSource::Study { design } => replication_dataset(design, seed, 0),
            DatasetSource::Survey { params, .. } => {
                generate_survey(params, &mut stream(seed, Purpose::Data, 0, 0))
            }
        }
    }

    pub fn specs(&self) -> Vec<StageModelSpec> {
        match self {
            DatasetSource::Study { design } => design.specs(),
            DatasetSource::Survey { scenario, .. } => survey_specs()
                .iter()
                .map(|s| apply_misspecification(s, *scenario))
                .collect(),
        }
    }

    pub fn link(&self) -> Link {
        match self {
            DatasetSource::Study { design } => design.link(),
            DatasetSource::Survey { .. } => Link::Logit,
        }
    }
}

/// A replayable command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Simulate {
        settings: SimulationSettings,
    },
    Estimate {
        data: PathBuf,
        config: AnalysisConfig,
    },
    Generate {
        source: DatasetSource,
        seed: u64,
        format: CsvFormat,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub software: String,
    pub version: String,
    #[serde(flatten)]
    pub invocation: Invocation,
}

impl Manifest {
    pub fn new(invocation: Invocation) -> Self {
        Manifest {
            software: env!("CARGO_PKG_NAME").to_string(),
            version: VERSION.to_string(),
            invocation,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Writes `replicates.csv`, `summary.csv`, `failures.csv` and the manifest.
/// Outputs are written even when the failure rate is exceeded; the error is
/// returned afterwards.
pub fn run_simulation_command(
    settings: &SimulationSettings,
    out: &Path,
) -> Result<SimulationResult> {
    let result = run_simulation(settings)?;
    prepare_dir(out)?;
    write_rows(
        &out.join("replicates.csv"),
        REPLICATE_HEADER,
        &result.replicates,
    )?;
    write_rows(&out.join("summary.csv"), SUMMARY_HEADER, &result.summary)?;
    write_rows(
        &out.join("failures.csv"),
        &["replication", "method", "error"],
        &result.failures,
    )?;
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest::new(Invocation::Simulate {
            settings: settings.clone(),
        }),
    )?;
    result.check_failure_rate(
        &settings.methods,
        settings.replications,
        settings.max_failure_fraction,
    )?;
    Ok(result)
}

/// One row of `estimates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: Method,
    pub stage: usize,
    pub term: String,
    pub estimate: f64,
    pub converged_replicates: usize,
    pub replicates: usize,
}

pub fn estimate_rows(estimate: &DtrEstimate) -> Vec<EstimateRow> {
    estimate
        .stages
        .iter()
        .flat_map(|s| {
            s.blip_terms
                .iter()
                .zip(&s.psi_hat)
                .map(move |(term, &value)| EstimateRow {
                    method: estimate.method,
                    stage: s.stage,
                    term: term.clone(),
                    estimate: value,
                    converged_replicates: s.replicates - s.failed_replicates.len(),
                    replicates: s.replicates,
                })
        })
        .collect()
}

/// Estimates for every configured method on an in-memory dataset.
pub fn estimate_all(
    dataset: &LongitudinalDataset,
    config: &AnalysisConfig,
) -> Vec<(Method, Result<DtrEstimate>)> {
    config
        .methods
        .iter()
        .map(|&method| {
            let est = EstimatorConfig {
                method,
                link: config.link,
                replicates: config.replicates,
                seed: config.seed,
                solver: config.solver,
                ..Default::default()
            };
            (method, estimate_dtr(dataset, &config.models, &est))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct MethodFailure {
    method: Method,
    error: String,
}

/// Writes `estimates.csv`, `rules.txt`, `estimates.json`, `failures.csv`
/// and the manifest. Succeeds only if every method succeeds.
pub fn run_estimate_command(
    data: &Path,
    config: &AnalysisConfig,
    out: &Path,
) -> Result<Vec<DtrEstimate>> {
    config.validate()?;
    let dataset = read_dataset(data, config)?;
    let results = estimate_all(&dataset, config);
    prepare_dir(out)?;
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (method, r) in results {
        match r {
            Ok(e) => estimates.push(e),
            Err(e) => failures.push(MethodFailure {
                method,
                error: e.to_string(),
            }),
        }
    }
    let rows: Vec<EstimateRow> = estimates.iter().flat_map(estimate_rows).collect();
    write_rows(&out.join("estimates.csv"), ESTIMATE_HEADER, &rows)?;
    let rules: String = estimates
        .iter()
        .flat_map(|e| e.rule_descriptions())
        .map(|line| line + "\n")
        .collect();
    fs::write(out.join("rules.txt"), rules).map_err(|e| Error::io(out.join("rules.txt"), e))?;
    write_json(&out.join("estimates.json"), &estimates)?;
    write_rows(&out.join("failures.csv"), &["method", "error"], &failures)?;
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest::new(Invocation::Estimate {
            data: data.to_path_buf(),
            config: config.clone(),
        }),
    )?;
    if let Some(first) = failures.first() {
        return Err(Error::Config(format!(
            "{} of {} methods failed; first: {}: {}",
            failures.len(),
            config.methods.len(),
            first.method,
            first.error
        )));
    }
    Ok(estimates)
}

/// Writes `data.csv`, a matching `config.json` for `estimate`, and the manifest.
pub fn run_generate_command(
    source: &DatasetSource,
    seed: u64,
    format: CsvFormat,
    out: &Path,
) -> Result<LongitudinalDataset> {
    let dataset = source.generate(seed);
    prepare_dir(out)?;
    let mut config = AnalysisConfig::new(source.specs());
    config.format = format;
    config.link = source.link();
    config.methods = Method::ALL.to_vec();
    config.seed = seed;
    if dataset.design_weights.is_some() {
        config.columns = ColumnNames {
            design_weight: Some("design_weight".into()),
            ..ColumnNames::default()
        };
    }
    write_dataset(&dataset, format, &config.columns, &out.join("data.csv"))?;
    write_json(&out.join("config.json"), &config)?;
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest::new(Invocation::Generate {
            source: source.clone(),
            seed,
            format,
        }),
    )?;
    Ok(dataset)
}

/// Replays a manifest into `out`.
pub fn rerun_manifest(manifest: &Manifest, out: &Path) -> Result<()> {
    match &manifest.invocation {
        Invocation::Simulate { settings } => run_simulation_command(settings, out).map(|_| ()),
        Invocation::Estimate { data, config } => {
            run_estimate_command(data, config, out).map(|_| ())
        }
        Invocation::Generate {
            source,
            seed,
            format,
        } => run_generate_command(source, *seed, *format, out).map(|_| ()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub closed_form: (f64, f64),
    pub contrast: (f64, f64),
    pub check: Option<Psi1OracleCheck>,
}

/// First-stage truth for study 2b. `draws = 0` skips the sampled check.
pub fn run_oracle_command(params: &Study2bParams, draws: usize, seed: u64) -> Result<OracleReport> {
    let check = if draws == 0 {
        None
    } else {
        Some(mc_verify_psi1_oracle(
            params,
            draws,
            &mut stream(seed, Purpose::Oracle, 0, 0),
        )?)
    };
    Ok(OracleReport {
        closed_form: true_psi1_study2b(params),
        contrast: psi1_by_contrast(params),
        check,
    })
}
