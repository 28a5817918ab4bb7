//! Success thresholds, either the fixed defaults or calibrated on a model's
//! similar and dissimilar score distributions.

use serde::{Deserialize, Serialize};

use super::EvalError;

pub const DEFAULT_TAU_T: f64 = 0.8;
pub const DEFAULT_TAU_U: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_t: f64,
    pub tau_u: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tau_t: DEFAULT_TAU_T, tau_u: DEFAULT_TAU_U }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Picks each threshold inside its one-standard-deviation band: the band
/// centre, clamped to `[0.01, 0.99]` so it stays a valid threshold.
pub fn calibrate_thresholds(similar: &[f64], dissimilar: &[f64]) -> Result<Thresholds, EvalError> {
    if similar.is_empty() || dissimilar.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let pick = |xs: &[f64]| mean_std(xs).0.clamp(0.01, 0.99);
    Ok(Thresholds { tau_t: pick(similar), tau_u: pick(dissimilar) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        assert_eq!(Thresholds::default(), Thresholds { tau_t: 0.8, tau_u: 0.5 });
    }

    #[test]
    fn constant_scores() {
        let t = calibrate_thresholds(&[0.9, 0.9], &[0.3, 0.3, 0.3]).unwrap();
        assert_eq!(t.tau_u, 0.3);
        assert_eq!(t.tau_t, 0.9);
    }

    #[test]
    fn band_membership() {
        let sim = [0.7, 0.9, 0.95, 0.8];
        let t = calibrate_thresholds(&sim, &[0.1, 0.5]).unwrap();
        let (m, s) = mean_std(&sim);
        assert!((m - s..=m + s).contains(&t.tau_t));
        assert!(calibrate_thresholds(&[], &[0.1]).is_err());
    }
}
