use std::io;

use uuid::Uuid;

use super::{BenchError, BenchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColType {
    Int,
    Float,
    Bool,
    Uuid,
    Text,
}

impl ColType {
    fn accepts(self, cell: &str) -> bool {
        match self {
            ColType::Int => cell.parse::<i64>().is_ok(),
            ColType::Float => cell.parse::<f64>().is_ok_and(|v| !v.is_nan()),
            ColType::Bool => cell == "true" || cell == "false",
            ColType::Uuid => Uuid::parse_str(cell).is_ok(),
            ColType::Text => !cell.is_empty(),
        }
    }
}

/// Column layout of one CSV output.
#[derive(Debug, Clone, Copy)]
pub struct CsvSchema {
    pub name: &'static str,
    pub columns: &'static [(&'static str, ColType)],
}

impl CsvSchema {
    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|(n, _)| *n).collect()
    }

    pub fn by_name(name: &str) -> Option<&'static CsvSchema> {
        SCHEMAS.iter().find(|s| s.name == name)
    }
}

use ColType::*;

pub(super) const FORKJOIN: CsvSchema = CsvSchema {
    name: "forkjoin",
    columns: &[
        ("run", Text),
        ("job_id", Uuid),
        ("task_index", Int),
        ("serialize_ms", Float),
        ("upload_ms", Float),
        ("invoke_ms", Float),
        ("setup_ms", Float),
        ("run_ms", Float),
        ("join_ms", Float),
    ],
};

pub(super) const FORKJOIN_RAMP: CsvSchema = CsvSchema {
    name: "forkjoin_ramp",
    columns: &[("run", Text), ("task_index", Int), ("start_ms", Float), ("end_ms", Float)],
};

pub(super) const PIPE: CsvSchema = CsvSchema {
    name: "pipe",
    columns: &[
        ("mode", Text),
        ("payload_bytes", Int),
        ("messages", Int),
        ("mean_latency_us", Float),
        ("p50_latency_us", Float),
        ("p99_latency_us", Float),
        ("throughput_mbps", Float),
        ("checksums_ok", Bool),
    ],
};

pub(super) const PI: CsvSchema = CsvSchema {
    name: "pi",
    columns: &[
        ("workers", Int),
        ("samples", Int),
        ("hits", Int),
        ("estimate", Float),
        ("abs_error", Float),
        ("wall_ms", Float),
        ("speedup", Float),
    ],
};

pub(super) const SORT: CsvSchema = CsvSchema {
    name: "sort",
    columns: &[
        ("strategy", Text),
        ("array_len", Int),
        ("workers", Int),
        ("merges", Int),
        ("round_trips", Int),
        ("wall_ms", Float),
        ("verified", Bool),
    ],
};

pub(super) const BLOBS: CsvSchema = CsvSchema {
    name: "blobs",
    columns: &[
        ("workers", Int),
        ("object_mb", Float),
        ("write_ms", Float),
        ("read_ms", Float),
        ("write_mbps", Float),
        ("read_mbps", Float),
        ("hashes_ok", Bool),
    ],
};

pub(super) const SCATTERGATHER: CsvSchema = CsvSchema {
    name: "scattergather",
    columns: &[
        ("workers", Int),
        ("rows", Int),
        ("partition_min", Int),
        ("partition_max", Int),
        ("wall_ms", Float),
        ("order_ok", Bool),
    ],
};

pub const SCHEMAS: &[CsvSchema] = &[FORKJOIN, FORKJOIN_RAMP, PIPE, PI, SORT, BLOBS, SCATTERGATHER];

/// Check header and every cell against `schema`; returns the row count.
pub fn validate_csv(schema: &CsvSchema, input: impl io::Read) -> BenchResult<usize> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != schema.header() {
        return Err(BenchError::Schema(format!("{}: header {:?}, expected {:?}", schema.name, header, schema.header())));
    }
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| BenchError::Schema(format!("{}: row {}: {e}", schema.name, i + 1)))?;
        for ((name, ty), cell) in schema.columns.iter().zip(rec.iter()) {
            if !ty.accepts(cell) {
                return Err(BenchError::Schema(format!("{}: row {} column {name}: {cell:?} is not {ty:?}", schema.name, i + 1)));
            }
        }
        rows += 1;
    }
    Ok(rows)
}

/// Write rows under the schema's header.
pub(super) fn write_rows<W: io::Write, R: serde::Serialize>(schema: &CsvSchema, out: W, rows: &[R]) -> BenchResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(schema.header())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_conforming_and_rejects_bad_cells() {
        let ok = "workers,samples,hits,estimate,abs_error,wall_ms,speedup\n1,10,8,3.2,0.05,1.5,1\n";
        assert_eq!(validate_csv(&PI, ok.as_bytes()).unwrap(), 1);
        let bad_header = "workers,samples\n1,2\n";
        assert!(matches!(validate_csv(&PI, bad_header.as_bytes()), Err(BenchError::Schema(_))));
        let bad_cell = "workers,samples,hits,estimate,abs_error,wall_ms,speedup\nx,10,8,3.2,0.05,1.5,1\n";
        assert!(matches!(validate_csv(&PI, bad_cell.as_bytes()), Err(BenchError::Schema(_))));
        let short = "workers,samples,hits,estimate,abs_error,wall_ms,speedup\n1,10\n";
        assert!(validate_csv(&PI, short.as_bytes()).is_err());
    }

    #[test]
    fn schema_names_unique() {
        let mut names: Vec<_> = SCHEMAS.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), SCHEMAS.len());
        assert!(CsvSchema::by_name("sort").is_some());
    }
}
