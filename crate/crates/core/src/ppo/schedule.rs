use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Linear,
    Cosine,
}

impl LrSchedule {
    /// Learning rate at remaining progress `f` (1 at the start of training, 0 at the end).
    pub fn rate(&self, base: f64, f: f64) -> f64 {
        let f = f.clamp(0.0, 1.0);
        match self {
            LrSchedule::Linear => base * f,
            LrSchedule::Cosine => 0.5 * base * (1.0 + (PI * (1.0 - f)).cos()),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Linear => "linear",
            LrSchedule::Cosine => "cosine",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(LrSchedule::Linear),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(format!("unknown learning-rate schedule `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const L0: f64 = 2.4e-4;

    #[test]
    fn linear_endpoints() {
        let s = LrSchedule::Linear;
        assert_eq!(s.rate(L0, 1.0), L0);
        assert!((s.rate(L0, 0.5) - 1.2e-4).abs() < 1e-12);
        assert_eq!(s.rate(L0, 0.0), 0.0);
    }

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::Cosine;
        assert!((s.rate(L0, 1.0) - L0).abs() < 1e-12);
        assert!((s.rate(L0, 0.5) - 1.2e-4).abs() < 1e-12);
        assert!(s.rate(L0, 0.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_monotone() {
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let r = LrSchedule::Cosine.rate(L0, 1.0 - i as f64 / 100.0);
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("cosine".parse::<LrSchedule>().unwrap(), LrSchedule::Cosine);
        assert_eq!(LrSchedule::Linear.to_string(), "linear");
        assert!("step".parse::<LrSchedule>().is_err());
    }
}
