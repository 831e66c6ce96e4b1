//! Seeded synthetic load series standing in for site data.

use chrono::Timelike;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{DataPoint, FrequencySpec, Timestamp};
use crate::weather::SyntheticWeather;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthShape {
    /// Daily load profile plus a temperature response and noise.
    #[default]
    Daily,
    /// Noiseless `a * temperature + b * hour_of_day`.
    Linear,
    /// Every point equal to `base`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub start: Timestamp,
    pub days: u32,
    pub frequency: FrequencySpec,
    pub seed: u64,
    pub shape: SynthShape,
    pub base: f64,
    pub latitude: f64,
    pub longitude: f64,
}

impl SynthConfig {
    pub fn new(start: Timestamp, days: u32, frequency: FrequencySpec) -> Self {
        Self {
            start,
            days,
            frequency,
            seed: 42,
            shape: SynthShape::Daily,
            base: 100.0,
            latitude: 34.9,
            longitude: 33.6,
        }
    }
}

/// Coefficients of the linear shape.
pub const LINEAR_TEMP_COEF: f64 = 2.5;
pub const LINEAR_HOUR_COEF: f64 = 1.5;

/// Same config always yields the same points.
pub fn generate(config: &SynthConfig) -> Result<Vec<DataPoint>> {
    if config.days == 0 {
        return Err(Error::BadConfig {
            field: "days".into(),
            message: "must be at least 1".into(),
        });
    }
    let step = config.frequency.duration();
    let end = config.start + chrono::Duration::days(i64::from(config.days));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    let mut t = config.start;
    while t < end {
        let temp = SyntheticWeather::temperature(config.latitude, config.longitude, t);
        let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
        let value = match config.shape {
            SynthShape::Constant => config.base,
            SynthShape::Linear => config.base + LINEAR_TEMP_COEF * temp + LINEAR_HOUR_COEF * hour,
            SynthShape::Daily => {
                let phase = (hour - 7.0) / 24.0 * std::f64::consts::TAU;
                let daily = 0.25 * config.base * phase.sin().max(-0.4);
                let cooling = 1.8 * (temp - 22.0).max(0.0);
                let noise: f64 = rng.random_range(-1.0..1.0) * 0.02 * config.base;
                config.base + daily + cooling + noise
            }
        };
        out.push(DataPoint::new(t, value));
        t += step;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_ts;

    fn config() -> SynthConfig {
        SynthConfig::new(parse_ts("2019-03-01T00:00:00Z").unwrap(), 30, "1H".parse().unwrap())
    }

    #[test]
    fn seeded_regeneration_is_equal() {
        let a = generate(&config()).unwrap();
        let b = generate(&config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30 * 24);
        let mut other = config();
        other.seed = 7;
        assert_ne!(generate(&other).unwrap(), a);
    }

    #[test]
    fn shapes() {
        let mut c = config();
        c.shape = SynthShape::Constant;
        assert!(generate(&c).unwrap().iter().all(|p| p.value == 100.0));
        c.shape = SynthShape::Linear;
        let p = &generate(&c).unwrap()[5];
        let temp = SyntheticWeather::temperature(c.latitude, c.longitude, p.timestamp);
        assert!((p.value - (100.0 + LINEAR_TEMP_COEF * temp + LINEAR_HOUR_COEF * 5.0)).abs() < 1e-12);
        c.days = 0;
        assert!(generate(&c).is_err());
    }

    #[test]
    fn daily_values_positive() {
        assert!(generate(&config()).unwrap().iter().all(|p| p.value > 0.0 && p.value.is_finite()));
    }
}
