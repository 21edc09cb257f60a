//! CSV datasets and JSON analysis configs.
//!
//! Long format has one row per (subject, stage). The final-stage row carries
//! the outcome; the outcome cell may be blank on other rows. Every other
//! numeric column is a covariate recorded at that row's stage.
//!
//! Wide format has one row per subject. Columns named `name_j` with `j` in
//! `1..=K` are stage-`j` covariates (`a_j` is the stage-`j` treatment when the
//! treatment column is `a`); remaining numeric columns are baseline.
//!
//! A design-weight column is subject-level. Rows are numbered from 1,
//! excluding the header.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::data::{LongitudinalDataset, StageData};
use crate::error::{Error, Result};
use crate::estimators::{Method, DEFAULT_REPLICATES};
use crate::links::Link;
use crate::model::StageModelSpec;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvFormat {
    #[default]
    Long,
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnNames {
    pub id: String,
    /// Long format only.
    pub stage: String,
    pub treatment: String,
    pub outcome: String,
    pub design_weight: Option<String>,
}

impl Default for ColumnNames {
    fn default() -> Self {
        ColumnNames {
            id: "id".into(),
            stage: "stage".into(),
            treatment: "a".into(),
            outcome: "y".into(),
            design_weight: None,
        }
    }
}

/// Everything needed to turn a CSV into estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub format: CsvFormat,
    #[serde(default)]
    pub columns: ColumnNames,
    /// One model per stage, stage 1 first.
    pub models: Vec<StageModelSpec>,
    #[serde(default = "default_methods", deserialize_with = "one_or_many")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub link: Link,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::M2]
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Method>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Method),
        Many(Vec<Method>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(m) => vec![m],
        OneOrMany::Many(v) => v,
    })
}

impl AnalysisConfig {
    pub fn new(models: Vec<StageModelSpec>) -> Self {
        AnalysisConfig {
            format: CsvFormat::Long,
            columns: ColumnNames::default(),
            models,
            methods: default_methods(),
            link: Link::Logit,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            solver: SolverOptions::default(),
            output_dir: None,
        }
    }

    pub fn n_stages(&self) -> usize {
        self.models.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("at least one stage model is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        for (j, spec) in self.models.iter().enumerate() {
            spec.validate()
                .map_err(|e| Error::Config(format!("stage {}: {e}", j + 1)))?;
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: AnalysisConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Column names referenced by any model term, without stage suffixes.
    fn referenced_names(&self) -> BTreeSet<String> {
        self.models
            .iter()
            .flat_map(|m| m.treatment_free.iter().chain(&m.blip).chain(&m.treatment))
            .flat_map(|t| t.factors.iter().map(|f| f.name.clone()))
            .collect()
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("'{s}' is not a number"),
    })
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    let s = raw.trim();
    match s.parse::<f64>() {
        Ok(0.0) => Ok(0),
        Ok(1.0) => Ok(1),
        Ok(_) => Err(Error::NonBinaryValue {
            row,
            column: column.to_string(),
            value: s.to_string(),
        }),
        Err(_) if s.is_empty() => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        }),
        Err(_) => Err(Error::NonBinaryValue {
            row,
            column: column.to_string(),
            value: s.to_string(),
        }),
    }
}

fn parse_weight(raw: &str, row: usize, column: &str) -> Result<f64> {
    let w = parse_number(raw, row, column)?;
    if w.is_nan() {
        return Ok(1.0);
    }
    if !(w.is_finite() && w >= 0.0) {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("design weight {w} must be finite and non-negative"),
        });
    }
    Ok(w)
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

/// Numeric covariate columns; a non-numeric column is an error only when a
/// model references it.
struct CovariateColumns {
    names: Vec<(usize, String)>,
}

impl CovariateColumns {
    fn new(headers: &csv::StringRecord, skip: &[usize]) -> Self {
        let names = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(i, h)| (i, h.trim().to_string()))
            .collect();
        CovariateColumns { names }
    }
}

pub fn read_dataset(path: &Path, config: &AnalysisConfig) -> Result<LongitudinalDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(file, config)
}

pub fn read_dataset_from<R: Read>(
    reader: R,
    config: &AnalysisConfig,
) -> Result<LongitudinalDataset> {
    config.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let dataset = match config.format {
        CsvFormat::Long => parse_long(&headers, &records, config)?,
        CsvFormat::Wide => parse_wide(&headers, &records, config)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Per-column numeric values; columns that fail to parse keep their error.
fn numeric_column(
    records: &[csv::StringRecord],
    col: usize,
    name: &str,
    rows: &[usize],
) -> Result<Vec<f64>> {
    rows.iter()
        .map(|&r| parse_number(records[r].get(col).unwrap_or(""), r + 1, name))
        .collect()
}

fn parse_long(
    headers: &csv::StringRecord,
    records: &[csv::StringRecord],
    config: &AnalysisConfig,
) -> Result<LongitudinalDataset> {
    let c = &config.columns;
    let k = config.n_stages();
    let id_col = column_index(headers, &c.id)?;
    let stage_col = column_index(headers, &c.stage)?;
    let a_col = column_index(headers, &c.treatment)?;
    let y_col = column_index(headers, &c.outcome)?;
    let w_col = c
        .design_weight
        .as_deref()
        .map(|w| column_index(headers, w))
        .transpose()?;
    let mut skip = vec![id_col, stage_col, a_col, y_col];
    skip.extend(w_col);
    let covariates = CovariateColumns::new(headers, &skip);
    let referenced = config.referenced_names();

    // subject -> stage -> record index
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<Option<usize>>> = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                column: c.id.clone(),
                message: "missing subject id".into(),
            });
        }
        let stage_raw = rec.get(stage_col).unwrap_or("").trim();
        let stage: usize = stage_raw
            .parse()
            .ok()
            .filter(|s| (1..=k).contains(s))
            .ok_or_else(|| Error::Parse {
                row,
                column: c.stage.clone(),
                message: format!("stage '{stage_raw}' is not an integer in 1..={k}"),
            })?;
        let s = *index.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            rows.push(vec![None; k]);
            order.len() - 1
        });
        if rows[s][stage - 1].replace(r).is_some() {
            return Err(Error::Parse {
                row,
                column: c.stage.clone(),
                message: format!("subject '{id}' has stage {stage} twice"),
            });
        }
    }
    for (s, stages) in rows.iter().enumerate() {
        let found = stages.iter().filter(|x| x.is_some()).count();
        if found != k {
            return Err(Error::RaggedStages {
                subject: order[s].clone(),
                found,
                expected: k,
            });
        }
    }
    let stage_rows =
        |j: usize| -> Vec<usize> { rows.iter().map(|st| st[j].expect("complete")).collect() };

    let mut stages = Vec::with_capacity(k);
    for j in 0..k {
        let rs = stage_rows(j);
        let treatment = rs
            .iter()
            .map(|&r| parse_binary(records[r].get(a_col).unwrap_or(""), r + 1, &c.treatment))
            .collect::<Result<Vec<_>>>()?;
        let mut cov = BTreeMap::new();
        for (col, name) in &covariates.names {
            match numeric_column(records, *col, name, &rs) {
                Ok(v) => {
                    cov.insert(name.clone(), v);
                }
                Err(e) if referenced.contains(name) => return Err(e),
                Err(_) => {}
            }
        }
        stages.push(StageData {
            treatment,
            covariates: cov,
        });
    }
    let last = stage_rows(k - 1);
    let outcome = last
        .iter()
        .map(|&r| parse_binary(records[r].get(y_col).unwrap_or(""), r + 1, &c.outcome))
        .collect::<Result<Vec<_>>>()?;
    let design_weights = match (w_col, &c.design_weight) {
        (Some(col), Some(name)) => Some(subject_weights(records, &rows, col, name)?),
        _ => None,
    };
    Ok(LongitudinalDataset {
        subject_ids: order,
        treatment_name: c.treatment.clone(),
        baseline: BTreeMap::new(),
        stages,
        outcome,
        design_weights,
    })
}

/// One weight per subject; blank cells default to 1, and non-blank cells
/// must agree across a subject's rows.
fn subject_weights(
    records: &[csv::StringRecord],
    rows: &[Vec<Option<usize>>],
    col: usize,
    name: &str,
) -> Result<Vec<f64>> {
    rows.iter()
        .map(|stage_rows| {
            let mut value: Option<(usize, f64)> = None;
            for &r in stage_rows.iter().flatten() {
                let raw = records[r].get(col).unwrap_or("").trim();
                if raw.is_empty() {
                    continue;
                }
                let w = parse_weight(raw, r + 1, name)?;
                match value {
                    Some((_, prev)) if prev != w => {
                        return Err(Error::Parse {
                            row: r + 1,
                            column: name.to_string(),
                            message: format!("design weight {w} differs from {prev} on another row of the same subject"),
                        })
                    }
                    _ => value = Some((r, w)),
                }
            }
            Ok(value.map_or(1.0, |(_, w)| w))
        })
        .collect()
}

fn split_stage_suffix(name: &str, k: usize) -> Option<(&str, usize)> {
    let (base, suffix) = name.rsplit_once('_')?;
    let j: usize = suffix.parse().ok()?;
    (!base.is_empty() && (1..=k).contains(&j)).then_some((base, j))
}

fn parse_wide(
    headers: &csv::StringRecord,
    records: &[csv::StringRecord],
    config: &AnalysisConfig,
) -> Result<LongitudinalDataset> {
    let c = &config.columns;
    let k = config.n_stages();
    let id_col = column_index(headers, &c.id)?;
    let y_col = column_index(headers, &c.outcome)?;
    let w_col = c
        .design_weight
        .as_deref()
        .map(|w| column_index(headers, w))
        .transpose()?;
    let a_cols = (1..=k)
        .map(|j| column_index(headers, &format!("{}_{j}", c.treatment)))
        .collect::<Result<Vec<_>>>()?;
    let mut skip = vec![id_col, y_col];
    skip.extend(w_col);
    skip.extend(&a_cols);
    let covariates = CovariateColumns::new(headers, &skip);
    let referenced = config.referenced_names();
    let all_rows: Vec<usize> = (0..records.len()).collect();

    let mut ids = Vec::with_capacity(records.len());
    let mut seen = BTreeSet::new();
    for (r, rec) in records.iter().enumerate() {
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(Error::Parse {
                row: r + 1,
                column: c.id.clone(),
                message: if id.is_empty() {
                    "missing subject id".into()
                } else {
                    format!("subject '{id}' appears twice")
                },
            });
        }
        ids.push(id);
    }

    let mut stages: Vec<StageData> = a_cols
        .iter()
        .enumerate()
        .map(|(j, &col)| {
            let name = format!("{}_{}", c.treatment, j + 1);
            let treatment = records
                .iter()
                .enumerate()
                .map(|(r, rec)| parse_binary(rec.get(col).unwrap_or(""), r + 1, &name))
                .collect::<Result<Vec<_>>>()?;
            Ok(StageData {
                treatment,
                covariates: BTreeMap::new(),
            })
        })
        .collect::<Result<_>>()?;
    let mut baseline = BTreeMap::new();
    for (col, name) in &covariates.names {
        let (base, stage) = match split_stage_suffix(name, k) {
            Some((b, j)) => (b, Some(j)),
            None => (name.as_str(), None),
        };
        let values = match numeric_column(records, *col, name, &all_rows) {
            Ok(v) => v,
            Err(e) if referenced.contains(base) => return Err(e),
            Err(_) => continue,
        };
        match stage {
            Some(j) => {
                stages[j - 1].covariates.insert(base.to_string(), values);
            }
            None => {
                baseline.insert(base.to_string(), values);
            }
        }
    }
    let outcome = records
        .iter()
        .enumerate()
        .map(|(r, rec)| parse_binary(rec.get(y_col).unwrap_or(""), r + 1, &c.outcome))
        .collect::<Result<Vec<_>>>()?;
    let design_weights = match (w_col, &c.design_weight) {
        (Some(col), Some(name)) => Some(
            records
                .iter()
                .enumerate()
                .map(|(r, rec)| parse_weight(rec.get(col).unwrap_or(""), r + 1, name))
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => None,
    };
    Ok(LongitudinalDataset {
        subject_ids: ids,
        treatment_name: c.treatment.clone(),
        baseline,
        stages,
        outcome,
        design_weights,
    })
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // Shortest representation that parses back to the same value.
        format!("{v}")
    }
}

/// Covariate names across all stages, in sorted order.
fn stage_covariate_names(dataset: &LongitudinalDataset) -> Vec<String> {
    dataset
        .stages
        .iter()
        .flat_map(|s| s.covariates.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Long format. Baseline columns are repeated on every row.
pub fn write_long_csv<W: Write>(
    dataset: &LongitudinalDataset,
    columns: &ColumnNames,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let cov = stage_covariate_names(dataset);
    let base: Vec<&String> = dataset
        .baseline
        .keys()
        .filter(|b| !cov.contains(b))
        .collect();
    let mut header = vec![
        columns.id.clone(),
        columns.stage.clone(),
        columns.treatment.clone(),
    ];
    header.extend(cov.iter().cloned());
    header.extend(base.iter().map(|s| s.to_string()));
    header.push(columns.outcome.clone());
    let weight_name = columns
        .design_weight
        .clone()
        .unwrap_or_else(|| "design_weight".into());
    if dataset.design_weights.is_some() {
        header.push(weight_name);
    }
    w.write_record(&header)?;
    let k = dataset.n_stages();
    for i in 0..dataset.n_subjects() {
        for (j, stage) in dataset.stages.iter().enumerate() {
            let mut rec = vec![
                dataset.subject_ids[i].clone(),
                (j + 1).to_string(),
                stage.treatment[i].to_string(),
            ];
            for name in &cov {
                rec.push(
                    stage
                        .covariates
                        .get(name)
                        .map_or(String::new(), |c| fmt_num(c[i])),
                );
            }
            for name in &base {
                rec.push(fmt_num(dataset.baseline[*name][i]));
            }
            rec.push(if j + 1 == k {
                dataset.outcome[i].to_string()
            } else {
                String::new()
            });
            if let Some(dw) = &dataset.design_weights {
                rec.push(fmt_num(dw[i]));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Wide format with `name_j` stage columns.
pub fn write_wide_csv<W: Write>(
    dataset: &LongitudinalDataset,
    columns: &ColumnNames,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![columns.id.clone()];
    header.extend(dataset.baseline.keys().cloned());
    for (j, stage) in dataset.stages.iter().enumerate() {
        header.push(format!("{}_{}", columns.treatment, j + 1));
        header.extend(stage.covariates.keys().map(|n| format!("{n}_{}", j + 1)));
    }
    header.push(columns.outcome.clone());
    if dataset.design_weights.is_some() {
        header.push(
            columns
                .design_weight
                .clone()
                .unwrap_or_else(|| "design_weight".into()),
        );
    }
    w.write_record(&header)?;
    for i in 0..dataset.n_subjects() {
        let mut rec = vec![dataset.subject_ids[i].clone()];
        rec.extend(dataset.baseline.values().map(|c| fmt_num(c[i])));
        for stage in &dataset.stages {
            rec.push(stage.treatment[i].to_string());
            rec.extend(stage.covariates.values().map(|c| fmt_num(c[i])));
        }
        rec.push(dataset.outcome[i].to_string());
        if let Some(dw) = &dataset.design_weights {
            rec.push(fmt_num(dw[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_dataset(
    dataset: &LongitudinalDataset,
    format: CsvFormat,
    columns: &ColumnNames,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let buf = std::io::BufWriter::new(file);
    match format {
        CsvFormat::Long => write_long_csv(dataset, columns, buf),
        CsvFormat::Wide => write_wide_csv(dataset, columns, buf),
    }
}

/// Serializes `rows` to a CSV file. The header is written even with no rows
/// and must list the fields of `T` in order.
pub fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::io::BufWriter::new(file));
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
