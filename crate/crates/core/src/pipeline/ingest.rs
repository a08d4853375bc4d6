//! CSV input and output of person records.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{Dataset, PersonRecord, RecordId};
use crate::string_metrics::normalize_name;

/// Header names of the six input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub forename: String,
    pub surname: String,
    pub birth_year: String,
    pub gender: String,
    pub group: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            forename: "forename".into(),
            surname: "surname".into(),
            birth_year: "birth_year".into(),
            gender: "gender".into(),
            group: "ethnic_group".into(),
        }
    }
}

pub fn ingest(path: &Path) -> Result<Dataset> {
    ingest_reader(std::fs::File::open(path)?, &ColumnMap::default())
}

/// Read and normalise records. Rows without an id are dropped with a
/// warning; blank names are kept (they are simply not corruptible).
pub fn ingest_reader<R: Read>(reader: R, cols: &ColumnMap) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let ix = [
        find(&cols.id)?,
        find(&cols.forename)?,
        find(&cols.surname)?,
        find(&cols.birth_year)?,
        find(&cols.gender)?,
        find(&cols.group)?,
    ];
    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(ix[i]).unwrap_or("").trim();
        if get(0).is_empty() {
            dropped += 1;
            continue;
        }
        let year = get(3);
        let birth_year = if year.is_empty() {
            None
        } else {
            Some(
                year.parse::<i32>()
                    .map_err(|_| Error::Schema(format!("row {}: birth_year {year:?} is not an integer", row + 2)))?,
            )
        };
        records.push(PersonRecord {
            id: RecordId(get(0).to_string()),
            forename: normalize_name(get(1)),
            surname: normalize_name(get(2)),
            birth_year,
            gender: get(4).to_uppercase(),
            group: get(5).to_string(),
        });
    }
    if dropped > 0 {
        warn!("dropped {dropped} rows without an id");
    }
    Dataset::new(records)
}

pub fn write_dataset<W: Write>(d: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["id", "forename", "surname", "birth_year", "gender", "ethnic_group"])?;
    for r in d.iter() {
        wtr.write_record([
            r.id.0.as_str(),
            &r.forename,
            &r.surname,
            &r.birth_year.map(|y| y.to_string()).unwrap_or_default(),
            &r.gender,
            &r.group,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset_file(d: &Dataset, path: &Path) -> Result<()> {
    write_dataset(d, std::io::BufWriter::new(std::fs::File::create(path)?))
}
