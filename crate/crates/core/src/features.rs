//! Claim feature vectors: ingestion, normalization and domain splits.
//!
//! Input files carry one research claim per row with the columns
//! `claim_id, domain, outcome, f01..f41` and an optional `title`. Missing
//! feature cells are kept as `NaN` until [`ClaimSet::fit_normalize`] or
//! [`ClaimSet::apply_normalize`] imputes them with the train-set median.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of extracted features per claim.
pub const FEATURE_COUNT: usize = 41;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}, column `{column}`: {message}")]
    Malformed {
        row: usize,
        column: String,
        message: String,
    },
    #[error("duplicate claim_id `{0}`")]
    DuplicateClaim(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("dimension mismatch: expected {expected} features, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("unsupported input format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
}

/// Academic discipline a claim belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    Psychology,
    Economics,
    Marketing,
    Sociology,
    PoliticalScience,
    Education,
    Management,
    Health,
    Criminology,
    PublicAdministration,
}

impl Domain {
    pub const ALL: [Domain; 10] = [
        Domain::Psychology,
        Domain::Economics,
        Domain::Marketing,
        Domain::Sociology,
        Domain::PoliticalScience,
        Domain::Education,
        Domain::Management,
        Domain::Health,
        Domain::Criminology,
        Domain::PublicAdministration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Psychology => "psychology",
            Domain::Economics => "economics",
            Domain::Marketing => "marketing",
            Domain::Sociology => "sociology",
            Domain::PoliticalScience => "political-science",
            Domain::Education => "education",
            Domain::Management => "management",
            Domain::Health => "health",
            Domain::Criminology => "criminology",
            Domain::PublicAdministration => "public-administration",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '_' || c == ' ' { '-' } else { c })
            .collect();
        let d = match norm.as_str() {
            "psychology" | "psych" => Domain::Psychology,
            "economics" | "econ" => Domain::Economics,
            "marketing" | "marketing/org-behavior" | "marketing/org-behaviour" | "org-behavior" => {
                Domain::Marketing
            }
            "sociology" => Domain::Sociology,
            "political-science" | "political-sc" | "political-sci" | "polisci" => {
                Domain::PoliticalScience
            }
            "education" => Domain::Education,
            "management" => Domain::Management,
            "health" => Domain::Health,
            "criminology" => Domain::Criminology,
            "public-administration" | "public-admin" => Domain::PublicAdministration,
            _ => return Err(format!("unknown domain `{s}`")),
        };
        Ok(d)
    }
}

/// Ground-truth result of a replication study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "R")]
    Replicated,
    #[serde(rename = "NR")]
    NotReplicated,
}

impl Outcome {
    /// Encoding used by error metrics: R = 1, NR = 0.
    pub fn as_f64(self) -> f64 {
        match self {
            Outcome::Replicated => 1.0,
            Outcome::NotReplicated => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Replicated => "R",
            Outcome::NotReplicated => "NR",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R" | "REPLICATED" => Ok(Outcome::Replicated),
            "NR" | "NOT_REPLICATED" | "NOTREPLICATED" => Ok(Outcome::NotReplicated),
            other => Err(format!("expected R or NR, got `{other}`")),
        }
    }
}

/// One research claim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub domain: Domain,
    /// Raw or normalized features; `NaN` marks a missing value before imputation.
    #[serde(with = "missing_as_null")]
    pub features: Vec<f64>,
    pub outcome: Option<Outcome>,
    #[serde(default)]
    pub title: String,
}

/// JSON has no NaN: missing values travel as `null`.
mod missing_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| (!v.is_nan()).then_some(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let values = Vec::<Option<f64>>::deserialize(d)?;
        Ok(values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }
}

impl PartialEq for ClaimRecord {
    fn eq(&self, other: &Self) -> bool {
        self.claim_id == other.claim_id
            && self.domain == other.domain
            && self.outcome == other.outcome
            && self.title == other.title
            && self.features.len() == other.features.len()
            && self
                .features
                .iter()
                .zip(&other.features)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self, FeatureError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        ext.parse()
    }
}

impl FromStr for Format {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(FeatureError::UnknownFormat(other.to_string())),
        }
    }
}

/// Per-feature min-max parameters fit on a training set, plus the medians
/// used to impute missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub medians: Vec<f64>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Scales a single (possibly missing) value of feature `j`.
    pub fn transform(&self, j: usize, value: f64) -> f64 {
        let v = if value.is_nan() {
            self.medians[j]
        } else {
            value
        };
        let (lo, hi) = (self.mins[j], self.maxs[j]);
        if hi <= lo {
            0.5
        } else {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }

    pub fn transform_point(&self, features: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if features.len() != self.dim() {
            return Err(FeatureError::Dimension {
                expected: self.dim(),
                found: features.len(),
            });
        }
        Ok(features
            .iter()
            .enumerate()
            .map(|(j, &v)| self.transform(j, v))
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(file, self)
            .map_err(|e| FeatureError::Data(format!("scaler serialization: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = File::open(path)?;
        let scaler: Scaler = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| FeatureError::Schema(format!("scaler json: {e}")))?;
        if scaler.maxs.len() != scaler.dim() || scaler.medians.len() != scaler.dim() {
            return Err(FeatureError::Schema(
                "scaler vectors differ in length".into(),
            ));
        }
        Ok(scaler)
    }
}

/// An ordered collection of claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSet {
    pub records: Vec<ClaimRecord>,
    /// Scaler already applied to `records`, if any.
    pub scaler: Option<Scaler>,
    pub role: Role,
}

fn feature_column(j: usize) -> String {
    format!("f{:02}", j + 1)
}

fn parse_feature_column(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('f')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok().filter(|&n| n >= 1)
}

fn parse_feature_cell(raw: &str, row: usize, column: &str) -> Result<f64, FeatureError> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(FeatureError::Malformed {
            row,
            column: column.to_string(),
            message: format!("non-finite value `{t}`"),
        }),
        Err(_) => Err(FeatureError::Malformed {
            row,
            column: column.to_string(),
            message: format!("not a number: `{t}`"),
        }),
    }
}

fn parse_outcome_cell(raw: &str, row: usize) -> Result<Option<Outcome>, FeatureError> {
    if raw.trim().is_empty() {
        return Ok(None);
    }
    raw.parse()
        .map(Some)
        .map_err(|message| FeatureError::Malformed {
            row,
            column: "outcome".into(),
            message,
        })
}

fn parse_domain_cell(raw: &str, row: usize) -> Result<Domain, FeatureError> {
    raw.parse().map_err(|message| FeatureError::Malformed {
        row,
        column: "domain".into(),
        message,
    })
}

/// Column positions resolved from a CSV header.
struct CsvLayout {
    claim_id: usize,
    domain: usize,
    outcome: Option<usize>,
    title: Option<usize>,
    features: Vec<usize>,
}

impl CsvLayout {
    fn from_header(header: &csv::StringRecord) -> Result<Self, FeatureError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let claim_id = find("claim_id")
            .ok_or_else(|| FeatureError::Schema("missing column claim_id".into()))?;
        let domain =
            find("domain").ok_or_else(|| FeatureError::Schema("missing column domain".into()))?;
        let mut indexed: Vec<(usize, usize)> = header
            .iter()
            .enumerate()
            .filter_map(|(pos, h)| parse_feature_column(h.trim()).map(|n| (n, pos)))
            .collect();
        indexed.sort_unstable();
        let numbers: Vec<usize> = indexed.iter().map(|(n, _)| *n).collect();
        let expected: Vec<usize> = (1..=FEATURE_COUNT).collect();
        if numbers != expected {
            return Err(FeatureError::Schema(format!(
                "expected feature columns f01..f{FEATURE_COUNT}, found {} feature columns",
                numbers.len()
            )));
        }
        Ok(Self {
            claim_id,
            domain,
            outcome: find("outcome"),
            title: find("title"),
            features: indexed.into_iter().map(|(_, pos)| pos).collect(),
        })
    }
}

impl ClaimSet {
    pub fn new(records: Vec<ClaimRecord>, role: Role) -> Result<Self, FeatureError> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.features.len() != FEATURE_COUNT {
                return Err(FeatureError::Dimension {
                    expected: FEATURE_COUNT,
                    found: r.features.len(),
                });
            }
            if !seen.insert(r.claim_id.as_str()) {
                return Err(FeatureError::DuplicateClaim(r.claim_id.clone()));
            }
        }
        Ok(Self {
            records,
            scaler: None,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, claim_id: &str) -> Option<&ClaimRecord> {
        self.records.iter().find(|r| r.claim_id == claim_id)
    }

    /// Reads a claim file; the format is taken from the extension.
    pub fn ingest(path: &Path, role: Role) -> Result<Self, FeatureError> {
        Self::ingest_as(path, Format::from_path(path)?, role)
    }

    pub fn ingest_as(path: &Path, format: Format, role: Role) -> Result<Self, FeatureError> {
        let file = File::open(path)?;
        match format {
            Format::Csv => Self::read_csv(file, role),
            Format::Jsonl => Self::read_jsonl(BufReader::new(file), role),
        }
    }

    pub fn read_csv<R: Read>(reader: R, role: Role) -> Result<Self, FeatureError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let layout = CsvLayout::from_header(rdr.headers()?)?;
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row_no = i + 1;
            let row = row.map_err(|e| FeatureError::Malformed {
                row: row_no,
                column: "*".into(),
                message: e.to_string(),
            })?;
            let cell = |pos: usize| row.get(pos).unwrap_or("");
            let claim_id = cell(layout.claim_id).to_string();
            if claim_id.is_empty() {
                return Err(FeatureError::Malformed {
                    row: row_no,
                    column: "claim_id".into(),
                    message: "empty claim id".into(),
                });
            }
            let features = layout
                .features
                .iter()
                .enumerate()
                .map(|(j, &pos)| parse_feature_cell(cell(pos), row_no, &feature_column(j)))
                .collect::<Result<Vec<_>, _>>()?;
            records.push(ClaimRecord {
                claim_id,
                domain: parse_domain_cell(cell(layout.domain), row_no)?,
                features,
                outcome: match layout.outcome {
                    Some(pos) => parse_outcome_cell(cell(pos), row_no)?,
                    None => None,
                },
                title: layout
                    .title
                    .map(|p| cell(p).to_string())
                    .unwrap_or_default(),
            });
        }
        Self::new(records, role)
    }

    pub fn read_jsonl<R: BufRead>(reader: R, role: Role) -> Result<Self, FeatureError> {
        let mut records = Vec::new();
        let mut row_no = 0;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            row_no += 1;
            let malformed = |column: &str, message: String| FeatureError::Malformed {
                row: row_no,
                column: column.to_string(),
                message,
            };
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| malformed("*", e.to_string()))?;
            let obj = value
                .as_object()
                .ok_or_else(|| malformed("*", "expected a JSON object".into()))?;
            let text = |key: &str| -> Result<String, FeatureError> {
                match obj.get(key) {
                    Some(serde_json::Value::String(s)) => Ok(s.clone()),
                    Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                    Some(serde_json::Value::Null) | None => Ok(String::new()),
                    Some(other) => Err(malformed(key, format!("unexpected value {other}"))),
                }
            };
            let n_features = obj.keys().filter_map(|k| parse_feature_column(k)).count();
            if n_features != FEATURE_COUNT {
                return Err(FeatureError::Schema(format!(
                    "row {row_no}: expected {FEATURE_COUNT} feature fields, found {n_features}"
                )));
            }
            let mut features = Vec::with_capacity(FEATURE_COUNT);
            for j in 0..FEATURE_COUNT {
                let col = feature_column(j);
                let v = match obj.get(&col) {
                    Some(serde_json::Value::Number(n)) => n
                        .as_f64()
                        .ok_or_else(|| malformed(&col, "number out of range".into()))?,
                    Some(serde_json::Value::Null) => f64::NAN,
                    Some(serde_json::Value::String(s)) => parse_feature_cell(s, row_no, &col)?,
                    Some(other) => {
                        return Err(malformed(&col, format!("unexpected value {other}")))
                    }
                    None => {
                        return Err(FeatureError::Schema(format!(
                            "row {row_no}: missing feature field {col}"
                        )))
                    }
                };
                features.push(v);
            }
            let claim_id = text("claim_id")?;
            if claim_id.is_empty() {
                return Err(malformed("claim_id", "empty claim id".into()));
            }
            records.push(ClaimRecord {
                claim_id,
                domain: parse_domain_cell(&text("domain")?, row_no)?,
                features,
                outcome: parse_outcome_cell(&text("outcome")?, row_no)?,
                title: text("title")?,
            });
        }
        Self::new(records, role)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["claim_id".to_string(), "domain".into(), "outcome".into()];
        header.extend((0..FEATURE_COUNT).map(feature_column));
        header.push("title".into());
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.claim_id.clone(),
                r.domain.to_string(),
                r.outcome.map(|o| o.to_string()).unwrap_or_default(),
            ];
            row.extend(r.features.iter().map(|v| {
                if v.is_nan() {
                    String::new()
                } else {
                    v.to_string()
                }
            }));
            row.push(r.title.clone());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<(), FeatureError> {
        for r in &self.records {
            let mut obj = serde_json::Map::new();
            obj.insert("claim_id".into(), r.claim_id.clone().into());
            obj.insert("domain".into(), r.domain.to_string().into());
            obj.insert(
                "outcome".into(),
                r.outcome
                    .map(|o| serde_json::Value::from(o.as_str()))
                    .unwrap_or(serde_json::Value::Null),
            );
            for (j, v) in r.features.iter().enumerate() {
                let value = serde_json::Number::from_f64(*v)
                    .map(serde_json::Value::Number)
                    .unwrap_or(serde_json::Value::Null);
                obj.insert(feature_column(j), value);
            }
            obj.insert("title".into(), r.title.clone().into());
            serde_json::to_writer(&mut writer, &obj)
                .map_err(|e| FeatureError::Data(e.to_string()))?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let file = std::io::BufWriter::new(File::create(path)?);
        match Format::from_path(path)? {
            Format::Csv => self.write_csv(file),
            Format::Jsonl => self.write_jsonl(file),
        }
    }

    /// Fits min-max scaling on this training set and returns the scaled set.
    ///
    /// Missing values are imputed with the column median; constant columns map to 0.5.
    pub fn fit_normalize(&self) -> Result<(ClaimSet, Scaler), FeatureError> {
        if self.role != Role::Train {
            return Err(FeatureError::Data(
                "scaling parameters may only be fit on a training set".into(),
            ));
        }
        if self.is_empty() {
            return Err(FeatureError::Data(
                "cannot fit a scaler on an empty set".into(),
            ));
        }
        if self.scaler.is_some() {
            return Err(FeatureError::Data("set is already normalized".into()));
        }
        let mut mins = Vec::with_capacity(FEATURE_COUNT);
        let mut maxs = Vec::with_capacity(FEATURE_COUNT);
        let mut medians = Vec::with_capacity(FEATURE_COUNT);
        for j in 0..FEATURE_COUNT {
            let mut present: Vec<f64> = self
                .records
                .iter()
                .map(|r| r.features[j])
                .filter(|v| !v.is_nan())
                .collect();
            if present.is_empty() {
                return Err(FeatureError::Data(format!(
                    "feature {} has no observed values; imputation leaves it non-finite",
                    feature_column(j)
                )));
            }
            present.sort_by(f64::total_cmp);
            let median = median_sorted(&present);
            // Imputed values equal the median, which already lies inside [min, max].
            mins.push(present[0]);
            maxs.push(present[present.len() - 1]);
            medians.push(median);
        }
        let scaler = Scaler {
            mins,
            maxs,
            medians,
        };
        let normalized = self.apply_normalize(&scaler)?;
        Ok((normalized, scaler))
    }

    /// Applies a previously fit scaler. Out-of-range values clamp to [0, 1].
    ///
    /// Applying the same scaler to an already-normalized set is a no-op.
    pub fn apply_normalize(&self, scaler: &Scaler) -> Result<ClaimSet, FeatureError> {
        if scaler.dim() != FEATURE_COUNT
            || scaler.maxs.len() != FEATURE_COUNT
            || scaler.medians.len() != FEATURE_COUNT
        {
            return Err(FeatureError::Dimension {
                expected: FEATURE_COUNT,
                found: scaler.dim(),
            });
        }
        match &self.scaler {
            Some(applied) if applied == scaler => return Ok(self.clone()),
            Some(_) => {
                return Err(FeatureError::Data(
                    "set was normalized with a different scaler".into(),
                ))
            }
            None => {}
        }
        let records = self
            .records
            .iter()
            .map(|r| {
                Ok(ClaimRecord {
                    features: scaler.transform_point(&r.features)?,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>, FeatureError>>()?;
        Ok(ClaimSet {
            records,
            scaler: Some(scaler.clone()),
            role: self.role,
        })
    }

    /// Records of one discipline, in their original order.
    pub fn split_by_domain(&self, domain: Domain) -> ClaimSet {
        ClaimSet {
            records: self
                .records
                .iter()
                .filter(|r| r.domain == domain)
                .cloned()
                .collect(),
            scaler: self.scaler.clone(),
            role: self.role,
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.scaler.is_some()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.outcome.is_some())
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
