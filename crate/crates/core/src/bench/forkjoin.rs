use std::io;
use std::time::{Duration, Instant};

use super::schema::{write_rows, FORKJOIN, FORKJOIN_RAMP};
use super::{BenchEnv, BenchError, BenchRecord, BenchResult};
use crate::faas::{encode_u64, LatencyModel, Temperature};
use crate::orchestrator::{PhaseMeans, PhaseTrace};
use crate::time::Timestamp;

type PhaseLine = (&'static str, fn(&PhaseMeans) -> f64);

#[derive(Debug, Clone)]
pub struct RampPoint {
    pub task_index: u32,
    /// Run start and end relative to the first dispatch.
    pub start_ms: f64,
    pub end_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ForkjoinRun {
    /// `cold`, `warm` or `default`.
    pub label: String,
    pub wall: Duration,
    pub overhead: Duration,
    pub means: PhaseMeans,
    pub rows: Vec<PhaseTrace>,
    pub ramp: Vec<RampPoint>,
}

#[derive(Debug, Clone)]
pub struct ForkjoinReport {
    pub n_tasks: usize,
    pub sleep: Duration,
    pub seed: u64,
    pub runs: Vec<ForkjoinRun>,
}

impl ForkjoinReport {
    pub fn run(&self, label: &str) -> Option<&ForkjoinRun> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn record(&self) -> BenchRecord {
        let mut rec = BenchRecord::new("forkjoin", self.seed)
            .config("n_tasks", self.n_tasks)
            .config("sleep_s", self.sleep.as_secs_f64());
        for r in &self.runs {
            let m = &r.means;
            rec = rec
                .metric(&format!("{}.wall_s", r.label), r.wall.as_secs_f64())
                .metric(&format!("{}.overhead_s", r.label), r.overhead.as_secs_f64())
                .metric(&format!("{}.invoke_ms", r.label), m.invoke_ms)
                .metric(&format!("{}.setup_ms", r.label), m.setup_ms)
                .metric(&format!("{}.join_ms", r.label), m.join_ms)
                .metric(&format!("{}.serialize_upload_ms", r.label), m.serialize_ms + m.upload_ms)
                .metric(&format!("{}.total_ms", r.label), m.overhead_ms);
        }
        rec
    }

    /// Phase means per run, one column per run.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20}", "phase (ms)");
        for r in &self.runs {
            out += &format!("{:>12}", r.label);
        }
        out.push('\n');
        let lines: [PhaseLine; 5] = [
            ("serialize+upload", |m| m.serialize_ms + m.upload_ms),
            ("invoke", |m| m.invoke_ms),
            ("setup", |m| m.setup_ms),
            ("join", |m| m.join_ms),
            ("total", |m| m.overhead_ms),
        ];
        for (name, f) in lines {
            out += &format!("{name:<20}");
            for r in &self.runs {
                out += &format!("{:>12.1}", f(&r.means));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        let rows: Vec<_> = self
            .runs
            .iter()
            .flat_map(|r| {
                r.rows.iter().map(move |t| {
                    let job = t.job_id.to_string();
                    (&r.label, job, t.task_index, t.serialize_ms, t.upload_ms, t.invoke_ms, t.setup_ms, t.run_ms, t.join_ms)
                })
            })
            .collect();
        write_rows(&FORKJOIN, out, &rows)
    }

    pub fn write_ramp_csv<W: io::Write>(&self, out: W) -> BenchResult<()> {
        let rows: Vec<_> = self
            .runs
            .iter()
            .flat_map(|r| r.ramp.iter().map(move |p| (&r.label, p.task_index, p.start_ms, p.end_ms)))
            .collect();
        write_rows(&FORKJOIN_RAMP, out, &rows)
    }
}

/// Map `n_tasks` sleep tasks and decompose the overhead. With the simulated
/// backend and `temperatures` given, each temperature is its own run on a
/// fresh backend, warm runs starting with `n_tasks` pre-warmed slots.
pub fn bench_forkjoin(
    env: &BenchEnv,
    n_tasks: usize,
    sleep: Duration,
    temperatures: &[Temperature],
) -> BenchResult<ForkjoinReport> {
    if n_tasks == 0 {
        return Err(BenchError::InvalidArgument("n_tasks must be at least 1".into()));
    }
    let labels: Vec<Option<Temperature>> =
        if temperatures.is_empty() { vec![None] } else { temperatures.iter().copied().map(Some).collect() };
    let mut runs = Vec::new();
    for t in labels {
        runs.push(one_run(env, n_tasks, sleep, t, &env.model)?);
    }
    Ok(ForkjoinReport { n_tasks, sleep, seed: env.model.seed, runs })
}

fn one_run(
    env: &BenchEnv,
    n_tasks: usize,
    sleep: Duration,
    temperature: Option<Temperature>,
    model: &LatencyModel,
) -> BenchResult<ForkjoinRun> {
    let launched = env.launch_with(model.clone());
    if let (Some(Temperature::Warm), Some(sim)) = (temperature, &launched.sim) {
        sim.prewarm(n_tasks);
    }
    let arg = encode_u64(sleep.as_millis() as u64);
    let started = Instant::now();
    let manifest = launched.orch.submit_job((0..n_tasks).map(|_| crate::orchestrator::TaskSpec::new("sleep", arg.clone())).collect())?;
    launched.orch.join(&manifest)?;
    let wall = started.elapsed();
    let report = launched.orch.phase_report(&manifest);
    let timings = manifest.timings();
    let origin = timings.iter().filter_map(|(d, _)| *d).min().unwrap_or(Timestamp::now());
    let ramp = timings
        .iter()
        .enumerate()
        .filter_map(|(i, (_, t))| {
            let t = (*t)?;
            Some(RampPoint { task_index: i as u32, start_ms: t.run_start.ms_since(origin), end_ms: t.run_end.ms_since(origin) })
        })
        .collect();
    let label = match temperature {
        Some(Temperature::Cold) => "cold",
        Some(Temperature::Warm) => "warm",
        None => "default",
    };
    Ok(ForkjoinRun {
        label: label.to_owned(),
        wall,
        overhead: wall.saturating_sub(sleep),
        means: report.means(),
        rows: report.rows,
        ramp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::schema::validate_csv;
    use crate::orchestrator::OrchestratorConfig;

    #[test]
    fn zero_latency_overhead_is_polling_bound() {
        let poll = Duration::from_millis(20);
        let env = BenchEnv::embedded().with_config(OrchestratorConfig { poll_interval: poll, ..Default::default() });
        let rep = bench_forkjoin(&env, 8, Duration::from_millis(50), &[]).unwrap();
        let run = rep.run("default").unwrap();
        assert_eq!(run.rows.len(), 8);
        assert!(run.overhead <= 2 * poll, "overhead {:?}", run.overhead);
        assert_eq!(run.ramp.len(), 8);
        assert!(run.ramp.iter().all(|p| p.end_ms >= p.start_ms + 45.0));
    }

    #[test]
    fn csv_outputs_match_schemas() {
        let env = BenchEnv::embedded();
        let rep = bench_forkjoin(&env, 3, Duration::ZERO, &[Temperature::Cold, Temperature::Warm]).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert_eq!(validate_csv(&FORKJOIN, buf.as_slice()).unwrap(), 6);
        let mut ramp = Vec::new();
        rep.write_ramp_csv(&mut ramp).unwrap();
        assert_eq!(validate_csv(&FORKJOIN_RAMP, ramp.as_slice()).unwrap(), 6);
        assert!(rep.table().contains("invoke"));
    }

    #[test]
    fn cold_run_slower_than_warm() {
        let model = LatencyModel {
            cold_median: Duration::from_millis(120),
            warm_median: Duration::from_millis(20),
            ..LatencyModel::zero()
        };
        let env = BenchEnv::embedded()
            .with_model(model)
            .with_config(OrchestratorConfig { poll_interval: Duration::from_millis(5), ..Default::default() });
        let rep = bench_forkjoin(&env, 4, Duration::ZERO, &[Temperature::Cold, Temperature::Warm]).unwrap();
        let (cold, warm) = (rep.run("cold").unwrap(), rep.run("warm").unwrap());
        assert!(cold.means.overhead_ms > warm.means.overhead_ms);
        assert!((cold.means.invoke_ms - 120.0).abs() < 12.0, "{}", cold.means.invoke_ms);
        assert!((warm.means.invoke_ms - 20.0).abs() < 10.0, "{}", warm.means.invoke_ms);
    }
}
