//! Reading transaction logs into binned transfer records.
//!
//! The input is headered delimited text with the columns `from_acct`,
//! `to_acct`, `timestamp` and `money`, plus any number of categorical
//! attribute columns. Timestamps are integer seconds or ISO-8601. The time
//! bin becomes the first attribute mode; categorical columns follow in
//! header order, each coded by the sorted order of its distinct values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AttrValue, ModeSchema, Money, RoleSets, TransferRecord};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DEFAULT_BIN_WIDTH: i64 = 3 * SECONDS_PER_DAY;
pub const DEFAULT_ROLE_RATIO: f64 = 2.0;

const FROM_COLUMNS: &[&str] = &["from_acct", "from", "src"];
const TO_COLUMNS: &[&str] = &["to_acct", "to", "dst"];
const TIME_COLUMNS: &[&str] = &["timestamp", "time", "date"];
const MONEY_COLUMNS: &[&str] = &["money", "amount"];

/// Optional explicit account lists replacing the computed role partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleOverrides {
    pub sources: Option<PathBuf>,
    pub middles: Option<PathBuf>,
    pub destinations: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Bin width in seconds.
    pub time_bin_width: i64,
    /// Defaults to the smallest timestamp in the file.
    pub time_origin: Option<i64>,
    /// An account is a source when it sends more than `role_ratio` times
    /// what it receives, a destination in the mirrored case, otherwise a middle.
    pub role_ratio: f64,
    /// Attribute columns to model; `None` takes every non-core column.
    pub extra_attr_columns: Option<Vec<String>>,
    pub role_overrides: RoleOverrides,
    pub delimiter: u8,
    pub max_malformed: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            time_bin_width: DEFAULT_BIN_WIDTH,
            time_origin: None,
            role_ratio: DEFAULT_ROLE_RATIO,
            extra_attr_columns: None,
            role_overrides: RoleOverrides::default(),
            delimiter: b',',
            max_malformed: 100,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_bin_width <= 0 {
            return Err(Error::InvalidParameter(format!(
                "time bin width must be positive, got {}",
                self.time_bin_width
            )));
        }
        if self.role_ratio.is_nan() || self.role_ratio <= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "role ratio must exceed 1, got {}",
                self.role_ratio
            )));
        }
        Ok(())
    }
}

/// Counts collected while reading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub data_lines: usize,
    pub records: usize,
    pub malformed: usize,
    /// First few malformed lines as `(line, reason)`.
    pub malformed_examples: Vec<(u64, String)>,
}

/// Records with their role partition and schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<TransferRecord>,
    pub roles: RoleSets,
    pub schema: ModeSchema,
    /// Labels of each categorical attribute, indexed by code. The time
    /// attribute has no labels; its entry is empty.
    pub attr_labels: Vec<Vec<String>>,
    pub time_origin: i64,
    pub time_bin_width: i64,
    pub report: IngestReport,
}

impl Dataset {
    /// Number of distinct values per attribute mode.
    pub fn attr_domains(&self) -> Vec<AttrValue> {
        observed_domains(&self.records, self.schema.n_attrs())
            .into_iter()
            .zip(&self.attr_labels)
            .map(|(seen, labels)| seen.max(labels.len() as AttrValue))
            .collect()
    }
}

/// `max + 1` of each attribute over the records.
pub fn observed_domains(records: &[TransferRecord], n_attrs: usize) -> Vec<AttrValue> {
    let mut domains = vec![0; n_attrs];
    for r in records {
        for (d, &v) in domains.iter_mut().zip(&r.attrs) {
            *d = (*d).max(v + 1);
        }
    }
    domains
}

/// `floor((timestamp - origin) / width)`.
pub fn bin_time(timestamp: i64, origin: i64, width: i64) -> Result<AttrValue> {
    if width <= 0 {
        return Err(Error::InvalidParameter(format!(
            "time bin width must be positive, got {width}"
        )));
    }
    if timestamp < origin {
        return Err(Error::BeforeOrigin { timestamp, origin });
    }
    let bin = (timestamp - origin) / width;
    AttrValue::try_from(bin).map_err(|_| Error::InvalidParameter(format!("time bin {bin} overflows")))
}

/// Parses integer seconds or an ISO-8601 date / date-time (UTC when no offset).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

/// Splits accounts into sources, middles and destinations by the ratio of
/// money sent to money received. A zero denominator counts as infinite.
pub fn partition_roles(records: &[TransferRecord], role_ratio: f64) -> RoleSets {
    let mut flows: BTreeMap<&str, (Money, Money)> = BTreeMap::new();
    for r in records {
        flows.entry(&r.src).or_default().0 += r.amount;
        flows.entry(&r.dst).or_default().1 += r.amount;
    }
    let mut roles = RoleSets::default();
    for (id, (sent, received)) in flows {
        let set = if sent > role_ratio * received {
            &mut roles.sources
        } else if received > role_ratio * sent {
            &mut roles.destinations
        } else {
            &mut roles.middles
        };
        set.insert(id.to_owned());
    }
    roles
}

/// One account id per line; blank lines and `#` comments are skipped.
pub fn read_account_list(path: &Path) -> Result<BTreeSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = BTreeSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.insert(id.to_owned());
        }
    }
    Ok(ids)
}

pub fn write_account_list<W: Write>(mut w: W, ids: &BTreeSet<String>) -> std::io::Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}

pub fn load_transactions(path: &Path, config: &IngestConfig) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(BufReader::new(file), config)
}

struct RawRow {
    src: String,
    dst: String,
    timestamp: i64,
    extras: Vec<String>,
    amount: Money,
}

fn find_column(header: &[String], names: &[&str]) -> Option<usize> {
    header.iter().position(|h| names.contains(&h.as_str()))
}

pub fn read_transactions<R: Read>(reader: R, config: &IngestConfig) -> Result<Dataset> {
    config.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .delimiter(config.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let missing = |what: &str| Error::Parse {
        line: 1,
        message: format!("header lacks a {what} column"),
    };
    let from = find_column(&header, FROM_COLUMNS).ok_or_else(|| missing("from_acct"))?;
    let to = find_column(&header, TO_COLUMNS).ok_or_else(|| missing("to_acct"))?;
    let time = find_column(&header, TIME_COLUMNS).ok_or_else(|| missing("timestamp"))?;
    let money = find_column(&header, MONEY_COLUMNS).ok_or_else(|| missing("money"))?;
    let core = [from, to, time, money];

    let extra: Vec<usize> = match &config.extra_attr_columns {
        Some(names) => names
            .iter()
            .map(|n| {
                let n = n.to_ascii_lowercase();
                header.iter().position(|h| *h == n).ok_or_else(|| missing(&n))
            })
            .collect::<Result<_>>()?,
        None => (0..header.len()).filter(|c| !core.contains(c)).collect(),
    };

    let mut report = IngestReport::default();
    let mut rows = Vec::new();
    let malformed = |report: &mut IngestReport, line: u64, reason: String| {
        report.malformed += 1;
        if report.malformed_examples.len() < 10 {
            report.malformed_examples.push((line, reason));
        }
    };
    for (k, rec) in csv.records().enumerate() {
        report.data_lines += 1;
        let line = k as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                malformed(&mut report, line, e.to_string());
                continue;
            }
        };
        if rec.len() != header.len() {
            malformed(
                &mut report,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            );
            continue;
        }
        let Some(timestamp) = parse_timestamp(&rec[time]) else {
            malformed(&mut report, line, format!("bad timestamp {:?}", &rec[time]));
            continue;
        };
        let amount = match rec[money].parse::<Money>() {
            Ok(a) if a.is_finite() && a >= 0.0 => a,
            _ => {
                malformed(&mut report, line, format!("bad amount {:?}", &rec[money]));
                continue;
            }
        };
        if rec[from].is_empty() || rec[to].is_empty() {
            malformed(&mut report, line, "empty account id".into());
            continue;
        }
        if let Some(origin) = config.time_origin {
            if timestamp < origin {
                malformed(
                    &mut report,
                    line,
                    format!("timestamp {timestamp} precedes origin {origin}"),
                );
                continue;
            }
        }
        rows.push(RawRow {
            src: rec[from].to_owned(),
            dst: rec[to].to_owned(),
            timestamp,
            extras: extra.iter().map(|&c| rec[c].to_owned()).collect(),
            amount,
        });
    }
    if report.malformed > config.max_malformed {
        return Err(Error::TooManyMalformed {
            count: report.malformed,
            limit: config.max_malformed,
        });
    }
    if rows.is_empty() {
        return Err(Error::NoUsableRecords);
    }

    let time_origin = config
        .time_origin
        .unwrap_or_else(|| rows.iter().map(|r| r.timestamp).min().expect("nonempty"));

    let mut attr_labels: Vec<Vec<String>> = vec![Vec::new()];
    let mut codes: Vec<BTreeMap<&str, AttrValue>> = Vec::new();
    for c in 0..extra.len() {
        let distinct: BTreeSet<&str> = rows.iter().map(|r| r.extras[c].as_str()).collect();
        attr_labels.push(distinct.iter().map(|s| s.to_string()).collect());
        codes.push(distinct.into_iter().zip(0..).collect());
    }

    let mut records = Vec::with_capacity(rows.len());
    for r in &rows {
        let mut attrs = Vec::with_capacity(1 + extra.len());
        attrs.push(bin_time(r.timestamp, time_origin, config.time_bin_width)?);
        attrs.extend(r.extras.iter().zip(&codes).map(|(v, map)| map[v.as_str()]));
        records.push(TransferRecord {
            src: r.src.clone(),
            dst: r.dst.clone(),
            attrs,
            amount: r.amount,
        });
    }
    report.records = records.len();

    let mut roles = partition_roles(&records, config.role_ratio);
    let ov = &config.role_overrides;
    if let Some(p) = &ov.sources {
        roles.sources = read_account_list(p)?;
    }
    if let Some(p) = &ov.middles {
        roles.middles = read_account_list(p)?;
    }
    if let Some(p) = &ov.destinations {
        roles.destinations = read_account_list(p)?;
    }

    let schema =
        ModeSchema::new(std::iter::once("time_bin".to_string()).chain(extra.iter().map(|&c| header[c].clone())))?;
    Ok(Dataset {
        records,
        roles,
        schema,
        attr_labels,
        time_origin,
        time_bin_width: config.time_bin_width,
        report,
    })
}

/// Writes records in the ingest format. Time bins are written as
/// `origin + bin * width`; categorical codes are written as their label
/// when one is given, otherwise as the code.
pub fn write_transactions<W: Write>(
    w: W,
    records: &[TransferRecord],
    schema: &ModeSchema,
    time_origin: i64,
    time_bin_width: i64,
    attr_labels: &[Vec<String>],
) -> Result<()> {
    let to_io = |e: csv::Error| Error::Parse {
        line: 0,
        message: e.to_string(),
    };
    let mut out = csv::WriterBuilder::new().from_writer(w);
    let mut header = vec!["from_acct".to_string(), "to_acct".into(), "timestamp".into()];
    header.extend(schema.attribute_names()[1..].iter().cloned());
    header.push("money".into());
    out.write_record(&header).map_err(to_io)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for r in records {
        fields.clear();
        fields.push(r.src.clone());
        fields.push(r.dst.clone());
        fields.push((time_origin + r.attrs[0] as i64 * time_bin_width).to_string());
        for (n, &v) in r.attrs.iter().enumerate().skip(1) {
            match attr_labels.get(n).and_then(|l| l.get(v as usize)) {
                Some(label) => fields.push(label.clone()),
                None => fields.push(v.to_string()),
            }
        }
        fields.push(r.amount.to_string());
        out.write_record(&fields).map_err(to_io)?;
    }
    out.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}
