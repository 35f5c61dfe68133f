use std::io;

use serde::Serialize;
use uuid::Uuid;

use super::JobManifest;

pub const PHASE_CSV_HEADER: &str = "job_id,task_index,serialize_ms,upload_ms,invoke_ms,setup_ms,run_ms,join_ms";

/// Per-task phase durations in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTrace {
    pub job_id: Uuid,
    pub task_index: u32,
    pub serialize_ms: f64,
    pub upload_ms: f64,
    pub invoke_ms: f64,
    pub setup_ms: f64,
    pub run_ms: f64,
    pub join_ms: f64,
}

impl PhaseTrace {
    /// Everything except the function's own run time.
    pub fn overhead_ms(&self) -> f64 {
        self.serialize_ms + self.upload_ms + self.invoke_ms + self.setup_ms + self.join_ms
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseMeans {
    pub serialize_ms: f64,
    pub upload_ms: f64,
    pub invoke_ms: f64,
    pub setup_ms: f64,
    pub run_ms: f64,
    pub join_ms: f64,
    pub overhead_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PhaseReport {
    pub rows: Vec<PhaseTrace>,
}

impl PhaseReport {
    /// Rows for every task whose result has been joined.
    pub(super) fn from_manifest(m: &JobManifest) -> Self {
        let rows = m
            .progress()
            .into_iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let (dispatch, timing, detected) = (p.dispatch?, p.timing?, p.detected?);
                Some(PhaseTrace {
                    job_id: m.job_id(),
                    task_index: i as u32,
                    serialize_ms: p.serialize.as_secs_f64() * 1e3,
                    upload_ms: p.upload.as_secs_f64() * 1e3,
                    invoke_ms: timing.worker_start.ms_since(dispatch),
                    setup_ms: timing.run_start.ms_since(timing.worker_start),
                    run_ms: timing.run_end.ms_since(timing.run_start),
                    join_ms: detected.ms_since(timing.run_end),
                })
            })
            .collect();
        PhaseReport { rows }
    }

    pub fn means(&self) -> PhaseMeans {
        let n = self.rows.len() as f64;
        if self.rows.is_empty() {
            return PhaseMeans::default();
        }
        let mean = |f: fn(&PhaseTrace) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        PhaseMeans {
            serialize_ms: mean(|r| r.serialize_ms),
            upload_ms: mean(|r| r.upload_ms),
            invoke_ms: mean(|r| r.invoke_ms),
            setup_ms: mean(|r| r.setup_ms),
            run_ms: mean(|r| r.run_ms),
            join_ms: mean(|r| r.join_ms),
            overhead_ms: mean(PhaseTrace::overhead_ms),
        }
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(PHASE_CSV_HEADER.split(','))?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_matches_schema() {
        let report = PhaseReport {
            rows: vec![PhaseTrace {
                job_id: Uuid::nil(),
                task_index: 0,
                serialize_ms: 1.0,
                upload_ms: 2.0,
                invoke_ms: 3.0,
                setup_ms: 4.0,
                run_ms: 100.0,
                join_ms: 5.0,
            }],
        };
        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), PHASE_CSV_HEADER);
        assert_eq!(report.rows[0].overhead_ms(), 15.0);
        assert_eq!(report.means().overhead_ms, 15.0);
        let mut empty = Vec::new();
        PhaseReport::default().write_csv(&mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), PHASE_CSV_HEADER);
    }
}
