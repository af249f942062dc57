//! Delimited-text input: `experiment,variant,user_id,metric,value[,segment]`.

use std::io::Read;

use crate::error::{Error, Result};
use crate::sketch::{EventRecord, Variant};

/// An event together with the experiment it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub experiment: String,
    pub event: EventRecord,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Skip malformed rows instead of failing.
    pub skip_bad_rows: bool,
    /// Drop rows whose value is zero or negative instead of failing.
    pub drop_non_positive: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b',',
            skip_bad_rows: false,
            drop_non_positive: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    /// Malformed rows skipped under `skip_bad_rows`.
    pub skipped_rows: usize,
    /// Non-positive values dropped under `drop_non_positive`.
    pub dropped_non_positive: usize,
}

const COLUMNS: [&str; 5] = ["experiment", "variant", "user_id", "metric", "value"];

enum RowError {
    Malformed(String),
    NonPositive(f64),
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<Observation, RowError> {
    if rec.len() != 5 && rec.len() != 6 {
        return Err(RowError::Malformed(format!(
            "expected 5 or 6 fields, found {}",
            rec.len()
        )));
    }
    let field = |i: usize| rec.get(i).unwrap_or("").trim();
    let variant = Variant::from_code(field(1))
        .ok_or_else(|| RowError::Malformed(format!("variant {:?} is not C or T", field(1))))?;
    let user_id = field(2);
    if user_id.is_empty() {
        return Err(RowError::Malformed("empty user_id".into()));
    }
    let value: f64 = field(4)
        .parse()
        .map_err(|_| RowError::Malformed(format!("value {:?} is not a number", field(4))))?;
    if !value.is_finite() {
        return Err(RowError::Malformed(format!("value {value} is not finite")));
    }
    if value <= 0.0 {
        return Err(RowError::NonPositive(value));
    }
    let segment = rec
        .get(5)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_owned);
    Ok(Observation {
        experiment: field(0).to_owned(),
        event: EventRecord {
            user_id: user_id.to_owned(),
            variant,
            metric: field(3).to_owned(),
            value,
            segment,
        },
    })
}

pub fn read_observations<R: Read>(reader: R, opts: IngestOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let header_ok = names.len() >= 5
        && names.len() <= 6
        && names[..5] == COLUMNS
        && names.get(5).is_none_or(|&s| s == "segment");
    if !header_ok {
        return Err(Error::MalformedRows(vec![format!(
            "line 1: header must be {}[,segment], found {}",
            COLUMNS.join(","),
            names.join(",")
        )]));
    }

    let mut data = Dataset::default();
    let mut problems = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                if opts.skip_bad_rows {
                    data.skipped_rows += 1;
                    continue;
                }
                problems.push(format!("line {line}: {e}"));
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        match parse_row(&record) {
            Ok(obs) => data.observations.push(obs),
            Err(RowError::NonPositive(_)) if opts.drop_non_positive => {
                data.dropped_non_positive += 1
            }
            Err(RowError::NonPositive(value)) => {
                if !opts.skip_bad_rows {
                    return Err(Error::NonPositiveValue {
                        value,
                        line: Some(line),
                    });
                }
                data.skipped_rows += 1;
            }
            Err(RowError::Malformed(msg)) => {
                if opts.skip_bad_rows {
                    data.skipped_rows += 1;
                } else {
                    problems.push(format!("line {line}: {msg}"));
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::MalformedRows(problems));
    }
    Ok(data)
}
