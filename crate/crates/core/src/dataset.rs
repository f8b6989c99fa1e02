//! Observation records, CSV ingestion and validated datasets.
//!
//! Currency is held in dollars throughout. A dataset is immutable once built;
//! analysis routines borrow it and never mutate records.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens read as a missing sector share.
const MISSING_MARKERS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "(D)", "(NA)", "-", "."];

/// Length of the walking-speed course in metres (fifty feet).
pub const COURSE_LENGTH_M: f64 = 15.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRecord {
    pub id: String,
    pub name: String,
    /// Persons (N).
    pub population: f64,
    /// Dollars per year (Y).
    pub aggregate_output: f64,
    /// Dollars per person-year, `Y / N`.
    pub per_capita_output: f64,
    /// Fractions of output by sector; `None` marks a withheld or absent cell.
    pub sector_shares: Vec<Option<f64>>,
}

impl CityRecord {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        population: f64,
        aggregate_output: f64,
        sector_shares: Vec<Option<f64>>,
    ) -> Result<Self> {
        let id = id.into();
        if !(population > 0.0 && population.is_finite()) {
            return Err(Error::Validation {
                reason: "population must be positive".into(),
                ids: vec![id],
            });
        }
        if !(aggregate_output > 0.0 && aggregate_output.is_finite()) {
            return Err(Error::Validation {
                reason: "output must be positive".into(),
                ids: vec![id],
            });
        }
        if sector_shares
            .iter()
            .flatten()
            .any(|s| !(0.0..=1.0).contains(s))
        {
            return Err(Error::Validation {
                reason: "sector share outside [0, 1]".into(),
                ids: vec![id],
            });
        }
        Ok(Self {
            id,
            name: name.into(),
            population,
            aggregate_output,
            per_capita_output: aggregate_output / population,
            sector_shares,
        })
    }

    pub fn has_complete_sectors(&self) -> bool {
        !self.sector_shares.is_empty() && self.sector_shares.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub label: String,
    pub deflator: f64,
    pub sector_names: Vec<String>,
    records: Vec<CityRecord>,
}

impl Dataset {
    pub fn new(
        label: impl Into<String>,
        deflator: f64,
        sector_names: Vec<String>,
        records: Vec<CityRecord>,
    ) -> Result<Self> {
        if !(deflator > 0.0 && deflator.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "deflator must be positive, got {deflator}"
            )));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.sector_shares.len() != sector_names.len() {
                return Err(Error::Schema(format!(
                    "record {:?} has {} sector shares, dataset declares {}",
                    r.id,
                    r.sector_shares.len(),
                    sector_names.len()
                )));
            }
        }
        Ok(Self {
            label: label.into(),
            deflator,
            sector_names,
            records,
        })
    }

    pub fn records(&self) -> &[CityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.population).collect()
    }

    pub fn log_population(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.population.ln()).collect()
    }

    pub fn per_capita(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.per_capita_output).collect()
    }

    pub fn log_per_capita(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.per_capita_output.ln())
            .collect()
    }

    pub fn log_aggregate(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.aggregate_output.ln())
            .collect()
    }

    /// Column `j` of the sector shares; `None` if any record lacks it.
    pub fn sector_column(&self, j: usize) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.sector_shares[j]).collect()
    }

    /// Records with every sector share present, in their original order.
    pub fn complete_sector_subset(&self) -> Dataset {
        Dataset {
            label: self.label.clone(),
            deflator: self.deflator,
            sector_names: self.sector_names.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.has_complete_sectors())
                .cloned()
                .collect(),
        }
    }

    /// The records at `indices`, in that order. Indices must be distinct.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            label: self.label.clone(),
            deflator: self.deflator,
            sector_names: self.sector_names.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Same ids, populations and shares with new per-capita values.
    pub fn with_per_capita(&self, per_capita: &[f64]) -> Result<Dataset> {
        assert_eq!(per_capita.len(), self.len());
        let records = self
            .records
            .iter()
            .zip(per_capita)
            .map(|(r, &y)| {
                CityRecord::new(
                    r.id.clone(),
                    r.name.clone(),
                    r.population,
                    y * r.population,
                    r.sector_shares.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            self.label.clone(),
            self.deflator,
            self.sector_names.clone(),
            records,
        )
    }

    /// Serializes in the default schema (`id,name,population,output,<sectors>`),
    /// with output as aggregate dollars and missing shares as `NA`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("id,name,population,output");
        for name in &self.sector_names {
            s.push(',');
            s.push_str(&csv_escape(name));
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(
                s,
                "{},{},{},{}",
                csv_escape(&r.id),
                csv_escape(&r.name),
                r.population,
                r.aggregate_output
            );
            for share in &r.sector_shares {
                match share {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// The schema matching [`Dataset::to_csv_string`].
    pub fn default_schema(&self) -> CsvSchema {
        CsvSchema {
            sectors: self.sector_names.clone(),
            ..CsvSchema::default()
        }
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Whether the output column holds city totals or per-capita values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Aggregate,
    PerCapita,
}

/// Column-name mapping for [`load_city_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub name: Option<String>,
    pub population: String,
    pub output: String,
    pub output_kind: OutputKind,
    pub sectors: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            name: Some("name".into()),
            population: "population".into(),
            output: "output".into(),
            output_kind: OutputKind::Aggregate,
            sectors: Vec::new(),
        }
    }
}

/// A dataset description read from a `key = value` file.
///
/// Recognised keys: `label`, `deflator`, `id`, `name`, `population`, `output`,
/// `output_kind` (`aggregate` | `per_capita`) and `sectors` (comma-separated).
/// Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub label: String,
    pub deflator: f64,
    pub schema: CsvSchema,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            label: "dataset".into(),
            deflator: 1.0,
            schema: CsvSchema::default(),
        }
    }
}

impl DatasetConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = DatasetConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno as u64 + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let value = value.trim();
            match key.trim() {
                "label" => cfg.label = value.to_string(),
                "deflator" => {
                    cfg.deflator = value.parse().map_err(|_| Error::Parse {
                        line: lineno as u64 + 1,
                        message: format!("bad deflator {value:?}"),
                    })?
                }
                "id" => cfg.schema.id = value.to_string(),
                "name" => {
                    cfg.schema.name = (!value.is_empty()).then(|| value.to_string());
                }
                "population" => cfg.schema.population = value.to_string(),
                "output" => cfg.schema.output = value.to_string(),
                "output_kind" => {
                    cfg.schema.output_kind = match value {
                        "aggregate" => OutputKind::Aggregate,
                        "per_capita" => OutputKind::PerCapita,
                        other => {
                            return Err(Error::Parse {
                                line: lineno as u64 + 1,
                                message: format!("unknown output_kind {other:?}"),
                            })
                        }
                    }
                }
                "sectors" => {
                    cfg.schema.sectors = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                other => {
                    return Err(Error::Parse {
                        line: lineno as u64 + 1,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn load_dataset(&self, csv_path: &Path) -> Result<Dataset> {
        let mut d = load_city_csv(csv_path, self.deflator, &self.schema)?;
        d.label = self.label.clone();
        Ok(d)
    }
}

/// Loads `<stem>.csv` from [`data_dir`].
///
/// A sibling `<stem>.conf` ([`DatasetConfig`] format) supplies label, deflator
/// and column names. Without one, the default columns are used and any other
/// columns are read as sector shares.
pub fn load_bundled(stem: &str) -> Result<Dataset> {
    let dir = data_dir();
    let csv_path = dir.join(format!("{stem}.csv"));
    let conf_path = dir.join(format!("{stem}.conf"));
    if conf_path.exists() {
        return DatasetConfig::load(&conf_path)?.load_dataset(&csv_path);
    }
    let mut d = load_city_csv_detect(&csv_path, 1.0)?;
    d.label = stem.to_string();
    Ok(d)
}

/// Loads a city CSV with the default column names, reading every other
/// column as a sector share.
pub fn load_city_csv_detect(path: &Path, deflator: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::Schema(format!("{other:?}")),
        })?;
    let base = CsvSchema::default();
    let known = [&base.id, base.name.as_ref().unwrap(), &base.population, &base.output];
    let sectors = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .filter(|h| !known.iter().any(|k| k.as_str() == *h))
        .map(str::to_string)
        .collect();
    load_city_csv(path, deflator, &CsvSchema { sectors, ..base })
}

/// Reads a city CSV, multiplying outputs by `deflator`.
pub fn load_city_csv(path: &Path, deflator: f64, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_city_csv(file, &label, deflator, schema)
}

pub fn read_city_csv<R: Read>(
    reader: R,
    label: &str,
    deflator: f64,
    schema: &CsvSchema,
) -> Result<Dataset> {
    if !(deflator > 0.0 && deflator.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "deflator must be positive, got {deflator}"
        )));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let id_col = column(&schema.id)?;
    let pop_col = column(&schema.population)?;
    let out_col = column(&schema.output)?;
    let name_col = match &schema.name {
        Some(n) => headers.iter().position(|h| h == n),
        None => None,
    };
    let sector_cols = schema
        .sectors
        .iter()
        .map(|s| column(s))
        .collect::<Result<Vec<_>>>()?;

    struct Row {
        id: String,
        name: String,
        population: f64,
        output: f64,
        shares: Vec<Option<f64>>,
    }
    let mut rows = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(|e| csv_error(e, 0))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let number = |i: usize, what: &str| -> Result<f64> {
            let s = field(i);
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{what}: cannot parse {s:?} as a number"),
            })
        };
        let shares = sector_cols
            .iter()
            .zip(&schema.sectors)
            .map(|(&c, name)| {
                let s = field(c);
                if MISSING_MARKERS.contains(&s) {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        line,
                        message: format!("{name}: cannot parse {s:?} as a share"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            id: field(id_col).to_string(),
            name: name_col.map(|c| field(c).to_string()).unwrap_or_default(),
            population: number(pop_col, &schema.population)?,
            output: number(out_col, &schema.output)?,
            shares,
        });
    }

    let bad: Vec<String> = rows
        .iter()
        .filter(|r| !(r.population > 0.0 && r.output > 0.0))
        .map(|r| r.id.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Validation {
            reason: "non-positive population or output".into(),
            ids: bad,
        });
    }
    let bad: Vec<String> = rows
        .iter()
        .filter(|r| r.shares.iter().flatten().any(|s| !(0.0..=1.0).contains(s)))
        .map(|r| r.id.clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Validation {
            reason: "sector share outside [0, 1]".into(),
            ids: bad,
        });
    }

    let records = rows
        .into_iter()
        .map(|r| {
            let aggregate = match schema.output_kind {
                OutputKind::Aggregate => r.output,
                OutputKind::PerCapita => r.output * r.population,
            } * deflator;
            CityRecord::new(r.id, r.name, r.population, aggregate, r.shares)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(label, deflator, schema.sectors.clone(), records)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e
        .position()
        .map(|p| p.line())
        .unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// One location from the walking-speed survey.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRecord {
    pub location: String,
    pub population: f64,
    pub mean_time_s: f64,
    pub sd_time_s: f64,
    pub course_length_m: f64,
}

impl SpeedRecord {
    pub fn new(
        location: impl Into<String>,
        population: f64,
        mean_time_s: f64,
        sd_time_s: f64,
        course_length_m: f64,
    ) -> Result<Self> {
        let location = location.into();
        let fail = |reason: &str| Error::Validation {
            reason: reason.into(),
            ids: vec![location.clone()],
        };
        if !(population > 0.0) {
            return Err(fail("population must be positive"));
        }
        if !(mean_time_s > 0.0) {
            return Err(fail("mean walking time must be positive"));
        }
        if !(sd_time_s >= 0.0) {
            return Err(fail("walking-time sd must be non-negative"));
        }
        let v = course_length_m / mean_time_s;
        if !(v > 0.1 && v < 5.0) {
            return Err(fail("walking speed outside (0.1, 5) m/s"));
        }
        Ok(Self {
            location,
            population,
            mean_time_s,
            sd_time_s,
            course_length_m,
        })
    }

    /// Metres per second.
    pub fn speed(&self) -> f64 {
        self.course_length_m / self.mean_time_s
    }

    /// First-order propagated standard deviation of the speed.
    pub fn speed_sd(&self) -> f64 {
        self.course_length_m * self.sd_time_s / (self.mean_time_s * self.mean_time_s)
    }
}

/// Reads `location,population,mean_time_s,sd_time_s[,course_length_m]`.
pub fn load_speed_csv(path: &Path) -> Result<Vec<SpeedRecord>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_speed_csv(file)
}

pub fn read_speed_csv<R: Read>(reader: R) -> Result<Vec<SpeedRecord>> {
    #[derive(Deserialize)]
    struct Row {
        location: String,
        population: f64,
        mean_time_s: f64,
        sd_time_s: f64,
        course_length_m: Option<f64>,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| csv_error(e, 0))?;
        out.push(SpeedRecord::new(
            row.location,
            row.population,
            row.mean_time_s,
            row.sd_time_s,
            row.course_length_m.unwrap_or(COURSE_LENGTH_M),
        )?);
    }
    Ok(out)
}

/// Directory holding the bundled data files; `URBSCALE_DATA_DIR` overrides it.
pub fn data_dir() -> PathBuf {
    match std::env::var_os("URBSCALE_DATA_DIR") {
        Some(p) => PathBuf::from(p),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// The bundled 15-location walking-speed table (`pace_of_life.csv`).
pub fn load_speed_fixture() -> Result<Vec<SpeedRecord>> {
    load_speed_csv(&data_dir().join("pace_of_life.csv"))
}
