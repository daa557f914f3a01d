use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AcceptanceSummary, RunSeeds, ScenarioConfig, ScenarioReport, PARAMETERS, TOTAL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

/// Row of the totals table: population, benchmark, then one per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsRow {
    pub label: String,
    pub mean: Option<f64>,
    pub se: Option<f64>,
    /// One entry per acceptance block of the table.
    pub acceptance: Vec<Option<AcceptanceSummary>>,
}

/// HT totals, standard errors, and acceptance ratios by method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsTable {
    /// Acceptance blocks (`overall`, `stratum1`, ...).
    pub blocks: Vec<String>,
    pub rows: Vec<TotalsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub parameter: String,
    pub truth: f64,
    /// (mean, se) per method column; `None` when not estimated.
    pub cells: Vec<Option<(f64, f64)>>,
}

/// Parameter estimates by method, rows in model order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametersTable {
    pub methods: Vec<String>,
    pub rows: Vec<ParameterRow>,
}

impl TotalsTable {
    pub fn from_report(report: &ScenarioReport) -> Self {
        let mut blocks: Vec<String> = report
            .methods
            .iter()
            .flat_map(|m| m.acceptance.keys().cloned())
            .collect();
        blocks.sort();
        blocks.dedup();
        let empty = vec![None; blocks.len()];
        let mut rows = vec![TotalsRow {
            label: "Population".into(),
            mean: Some(report.population_total),
            se: None,
            acceptance: empty.clone(),
        }];
        let bench = report.no_missing_data.get(TOTAL);
        rows.push(TotalsRow {
            label: "No Missing Data".into(),
            mean: bench.map(|e| e.mean),
            se: bench.map(|e| e.se),
            acceptance: empty,
        });
        for m in &report.methods {
            let t = m.total();
            rows.push(TotalsRow {
                label: m.method.label().into(),
                mean: t.map(|e| e.mean),
                se: t.map(|e| e.se),
                acceptance: blocks.iter().map(|b| m.acceptance.get(b).copied()).collect(),
            });
        }
        Self { blocks, rows }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["method".to_string(), "mean".into(), "se".into()];
        for b in &self.blocks {
            for stat in ["mean", "min", "max"] {
                header.push(format!("acceptance_{b}_{stat}"));
            }
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.label.clone(), cell(row.mean), cell(row.se)];
            for a in &row.acceptance {
                rec.push(cell(a.map(|a| a.mean)));
                rec.push(cell(a.map(|a| a.min)));
                rec.push(cell(a.map(|a| a.max)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl ParametersTable {
    pub fn from_report(report: &ScenarioReport) -> Self {
        let truth = report.config.truth();
        let rows = PARAMETERS
            .iter()
            .map(|&p| ParameterRow {
                parameter: p.to_string(),
                truth: truth[p],
                cells: report
                    .methods
                    .iter()
                    .map(|m| m.estimates.get(p).map(|e| (e.mean, e.se)))
                    .collect(),
            })
            .collect();
        Self {
            methods: report.methods.iter().map(|m| m.method.label().to_string()).collect(),
            rows,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["parameter".to_string(), "truth".into()];
        for m in &self.methods {
            header.push(format!("{m} mean"));
            header.push(format!("{m} se"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.parameter.clone(), row.truth.to_string()];
            for c in &row.cells {
                rec.push(cell(c.map(|c| c.0)));
                rec.push(cell(c.map(|c| c.1)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

// `Display` for f64 prints the shortest string that parses back exactly.
fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str, row: usize, column: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("row {row}, column {column}: {s:?} is not a number")))
}

fn records<R: Read>(reader: R) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, rows))
}

pub fn read_totals_csv<R: Read>(reader: R) -> Result<TotalsTable> {
    let (header, records) = records(reader)?;
    if header.len() < 3 || header[..3] != ["method", "mean", "se"] || (header.len() - 3) % 3 != 0 {
        return Err(Error::Config(format!("unexpected totals header {header:?}")));
    }
    let mut blocks = Vec::new();
    for chunk in header[3..].chunks(3) {
        let block = chunk[0]
            .strip_prefix("acceptance_")
            .and_then(|s| s.strip_suffix("_mean"))
            .ok_or_else(|| Error::Config(format!("unexpected column {:?}", chunk[0])))?;
        if chunk[1] != format!("acceptance_{block}_min") || chunk[2] != format!("acceptance_{block}_max") {
            return Err(Error::Config(format!("acceptance columns for {block} are out of order")));
        }
        blocks.push(block.to_string());
    }
    let mut rows = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        let get = |j: usize| parse_cell(rec.get(j).unwrap_or(""), row, &header[j]);
        let mut acceptance = Vec::new();
        for b in 0..blocks.len() {
            let j = 3 + 3 * b;
            acceptance.push(match (get(j)?, get(j + 1)?, get(j + 2)?) {
                (Some(mean), Some(min), Some(max)) => Some(AcceptanceSummary { mean, min, max }),
                (None, None, None) => None,
                _ => return Err(Error::Config(format!("row {row}: partial acceptance entry"))),
            });
        }
        rows.push(TotalsRow {
            label: rec.get(0).unwrap_or("").to_string(),
            mean: get(1)?,
            se: get(2)?,
            acceptance,
        });
    }
    Ok(TotalsTable { blocks, rows })
}

pub fn read_parameters_csv<R: Read>(reader: R) -> Result<ParametersTable> {
    let (header, records) = records(reader)?;
    if header.len() < 2 || header[..2] != ["parameter", "truth"] || header.len() % 2 != 0 {
        return Err(Error::Config(format!("unexpected parameters header {header:?}")));
    }
    let mut methods = Vec::new();
    for pair in header[2..].chunks(2) {
        let m = pair[0]
            .strip_suffix(" mean")
            .filter(|m| pair[1] == format!("{m} se"))
            .ok_or_else(|| Error::Config(format!("unexpected columns {pair:?}")))?;
        methods.push(m.to_string());
    }
    let mut rows = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        let get = |j: usize| parse_cell(rec.get(j).unwrap_or(""), row, &header[j]);
        let truth = get(1)?.ok_or_else(|| Error::Config(format!("row {row}: truth is empty")))?;
        let mut cells = Vec::new();
        for k in 0..methods.len() {
            cells.push(match (get(2 + 2 * k)?, get(3 + 2 * k)?) {
                (Some(m), Some(s)) => Some((m, s)),
                (None, None) => None,
                _ => return Err(Error::Config(format!("row {row}: partial estimate"))),
            });
        }
        rows.push(ParameterRow {
            parameter: rec.get(0).unwrap_or("").to_string(),
            truth,
            cells,
        });
    }
    Ok(ParametersTable { methods, rows })
}

/// Seeds and settings needed to reproduce a scenario report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub scenario: String,
    pub master_seed: u64,
    pub runs: Vec<RunSeeds>,
    pub config: ScenarioConfig,
    pub version: String,
    pub files: Vec<String>,
}

pub fn read_manifest<R: Read>(reader: R) -> Result<ScenarioManifest> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn read_report_json<R: Read>(reader: R) -> Result<ScenarioReport> {
    Ok(serde_json::from_reader(reader)?)
}

fn write_file(path: &Path, write: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
    let f = fs::File::create(path)?;
    write(f)
}

/// Writes the report tables into `dir` and a manifest with every seed.
///
/// CSV: `<id>_totals.csv` and `<id>_parameters.csv`. JSON: `<id>_report.json`
/// holding the full report. Both formats add `<id>_manifest.json`. Returns the
/// paths written.
pub fn emit_report(report: &ScenarioReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let id = &report.config.id;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let p = dir.join(format!("{id}_totals.csv"));
            write_file(&p, |f| TotalsTable::from_report(report).write_csv(f))?;
            written.push(p);
            let p = dir.join(format!("{id}_parameters.csv"));
            write_file(&p, |f| ParametersTable::from_report(report).write_csv(f))?;
            written.push(p);
        }
        ReportFormat::Json => {
            let p = dir.join(format!("{id}_report.json"));
            write_file(&p, |f| Ok(serde_json::to_writer_pretty(f, report)?))?;
            written.push(p);
        }
    }
    let manifest_path = dir.join(format!("{id}_manifest.json"));
    let mut files: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    files.push(format!("{id}_manifest.json"));
    let manifest = ScenarioManifest {
        scenario: id.clone(),
        master_seed: report.config.master_seed,
        runs: report.runs.iter().map(|r| r.seeds.clone()).collect(),
        config: report.config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        files,
    };
    write_file(&manifest_path, |f| Ok(serde_json::to_writer_pretty(f, &manifest)?))?;
    written.push(manifest_path);
    Ok(written)
}
