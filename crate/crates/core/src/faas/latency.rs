use std::path::Path;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Deserialize;

use super::{FaasError, Temperature};

/// Startup latency and dispatch model of the simulated backend.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    pub cold_median: Duration,
    pub warm_median: Duration,
    /// Log-normal sigma; 0 makes every delay equal its median.
    pub dispersion: f64,
    /// Gap between consecutive dispatches of one batch.
    pub dispatch_cost: Duration,
    pub seed: u64,
    /// Idle time after which a warm slot goes cold.
    pub eviction: Duration,
    /// Worker wrapper setup before the function runs, per temperature.
    pub setup_cold: Duration,
    pub setup_warm: Duration,
    /// Delay between the function returning and its result being visible.
    pub result_delay: Duration,
    /// Optional execution time limit.
    pub max_execution: Option<Duration>,
}

pub const DEFAULT_EVICTION: Duration = Duration::from_secs(300);

impl Default for LatencyModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl LatencyModel {
    /// No injected latency at all.
    pub fn zero() -> Self {
        LatencyModel {
            cold_median: Duration::ZERO,
            warm_median: Duration::ZERO,
            dispersion: 0.0,
            dispatch_cost: Duration::ZERO,
            seed: 0,
            eviction: DEFAULT_EVICTION,
            setup_cold: Duration::ZERO,
            setup_warm: Duration::ZERO,
            result_delay: Duration::ZERO,
            max_execution: None,
        }
    }

    /// Measured per-phase means of a map job on a commercial FaaS platform:
    /// invoke 1.719 s cold / 0.258 s warm, setup 0.052 s / 0.046 s and a
    /// result-visibility delay of 0.63 s.
    pub fn table1() -> Self {
        LatencyModel {
            cold_median: Duration::from_millis(1719),
            warm_median: Duration::from_millis(258),
            setup_cold: Duration::from_millis(52),
            setup_warm: Duration::from_millis(46),
            result_delay: Duration::from_millis(630),
            ..Self::zero()
        }
    }

    pub fn median(&self, t: Temperature) -> Duration {
        match t {
            Temperature::Cold => self.cold_median,
            Temperature::Warm => self.warm_median,
        }
    }

    pub fn setup(&self, t: Temperature) -> Duration {
        match t {
            Temperature::Cold => self.setup_cold,
            Temperature::Warm => self.setup_warm,
        }
    }

    pub fn sampler(&self) -> LatencySampler {
        LatencySampler { model: self.clone(), rng: ChaCha8Rng::seed_from_u64(self.seed) }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FaasError> {
        let cfg: LatencyConfig = toml::from_str(text).map_err(|e| FaasError::Config(e.to_string()))?;
        cfg.into_model()
    }

    pub fn from_file(path: &Path) -> Result<Self, FaasError> {
        let text = std::fs::read_to_string(path).map_err(|e| FaasError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Simulator config file. Missing keys keep the zero-latency defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatencyConfig {
    cold_median_ms: Option<f64>,
    warm_median_ms: Option<f64>,
    dispersion: Option<f64>,
    dispatch_cost_ms: Option<f64>,
    seed: Option<u64>,
    eviction_s: Option<f64>,
    setup_cold_ms: Option<f64>,
    setup_warm_ms: Option<f64>,
    result_delay_ms: Option<f64>,
    max_execution_s: Option<f64>,
}

fn secs(v: f64, name: &str) -> Result<Duration, FaasError> {
    Duration::try_from_secs_f64(v).map_err(|_| FaasError::Config(format!("{name} must be a non-negative number")))
}

impl LatencyConfig {
    fn into_model(self) -> Result<LatencyModel, FaasError> {
        let mut m = LatencyModel::zero();
        let ms = |v: Option<f64>, name: &str, slot: &mut Duration| -> Result<(), FaasError> {
            if let Some(v) = v {
                *slot = secs(v / 1000.0, name)?;
            }
            Ok(())
        };
        ms(self.cold_median_ms, "cold_median_ms", &mut m.cold_median)?;
        ms(self.warm_median_ms, "warm_median_ms", &mut m.warm_median)?;
        ms(self.dispatch_cost_ms, "dispatch_cost_ms", &mut m.dispatch_cost)?;
        ms(self.setup_cold_ms, "setup_cold_ms", &mut m.setup_cold)?;
        ms(self.setup_warm_ms, "setup_warm_ms", &mut m.setup_warm)?;
        ms(self.result_delay_ms, "result_delay_ms", &mut m.result_delay)?;
        if let Some(d) = self.dispersion {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(FaasError::Config("dispersion must be a non-negative number".into()));
            }
            m.dispersion = d;
        }
        if let Some(s) = self.seed {
            m.seed = s;
        }
        if let Some(e) = self.eviction_s {
            m.eviction = secs(e, "eviction_s")?;
        }
        if let Some(x) = self.max_execution_s {
            m.max_execution = Some(secs(x, "max_execution_s")?);
        }
        Ok(m)
    }
}

/// Seeded source of startup delays.
pub struct LatencySampler {
    model: LatencyModel,
    rng: ChaCha8Rng,
}

impl LatencySampler {
    pub fn sample(&mut self, t: Temperature) -> Duration {
        let median = self.model.median(t);
        if self.model.dispersion == 0.0 || median.is_zero() {
            return median;
        }
        let dist = LogNormal::new(median.as_secs_f64().ln(), self.model.dispersion).expect("finite parameters");
        Duration::from_secs_f64(dist.sample(&mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dispersion_returns_median() {
        let mut s = LatencyModel::table1().sampler();
        assert_eq!(s.sample(Temperature::Warm), Duration::from_millis(258));
        assert_eq!(s.sample(Temperature::Cold), Duration::from_millis(1719));
    }

    #[test]
    fn seeded_samples_repeat() {
        let m = LatencyModel { dispersion: 0.5, seed: 7, ..LatencyModel::table1() };
        let a: Vec<_> = (0..20).map({
            let mut s = m.sampler();
            move |_| s.sample(Temperature::Cold)
        }).collect();
        let b: Vec<_> = (0..20).map({
            let mut s = m.sampler();
            move |_| s.sample(Temperature::Cold)
        }).collect();
        assert_eq!(a, b);
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn lognormal_median_is_configured_median() {
        let m = LatencyModel { dispersion: 0.4, seed: 1, ..LatencyModel::table1() };
        let mut s = m.sampler();
        let mut xs: Vec<f64> = (0..20_001).map(|_| s.sample(Temperature::Warm).as_secs_f64()).collect();
        xs.sort_by(f64::total_cmp);
        let median = xs[10_000];
        assert!((median - 0.258).abs() < 0.258 * 0.03, "{median}");
    }

    #[test]
    fn config_file_keys() {
        let m = LatencyModel::from_toml_str(
            "cold_median_ms = 1719\nwarm_median_ms = 258\ndispersion = 0.0\ndispatch_cost_ms = 2\nseed = 9\neviction_s = 60\n",
        )
        .unwrap();
        assert_eq!(m.cold_median, Duration::from_millis(1719));
        assert_eq!(m.dispatch_cost, Duration::from_millis(2));
        assert_eq!(m.seed, 9);
        assert_eq!(m.eviction, Duration::from_secs(60));
        assert!(LatencyModel::from_toml_str("bogus = 1").is_err());
        assert!(LatencyModel::from_toml_str("dispersion = -1").is_err());
    }
}
