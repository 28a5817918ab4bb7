//! Success rate and support metrics over attack outcomes.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::attacks::{succeeded, Mode};

/// What the metrics need from one attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub initial_sim: f64,
    pub final_sim: f64,
    pub inserted: usize,
}

/// Support metrics are means over successful samples and NaN when there
/// are none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub tau: f64,
    pub total: usize,
    pub successes: usize,
    /// Percentage of successful samples.
    pub a_rate: f64,
    /// Mean inserted instructions.
    pub m_size: f64,
    /// Mean final similarity.
    pub a_sim: f64,
    /// Mean normalized increment (targeted) or decrement (untargeted).
    pub n_change: f64,
}

/// `(final − initial) / (1 − initial)`, 0 when the start is already 1.
pub fn normalized_increment(initial: f64, fin: f64) -> f64 {
    if initial >= 1.0 {
        0.0
    } else {
        (fin - initial) / (1.0 - initial)
    }
}

/// `(initial − final) / initial`, 0 when the start is already 0.
pub fn normalized_decrement(initial: f64, fin: f64) -> f64 {
    if initial <= 0.0 {
        0.0
    } else {
        (initial - fin) / initial
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn compute_metrics(outcomes: &[OutcomeSummary], tau: f64, mode: Mode) -> Result<MetricsReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let wins: Vec<&OutcomeSummary> = outcomes.iter().filter(|o| succeeded(mode, tau, o.final_sim)).collect();
    let change = |o: &&OutcomeSummary| match mode {
        Mode::Targeted => normalized_increment(o.initial_sim, o.final_sim),
        Mode::Untargeted => normalized_decrement(o.initial_sim, o.final_sim),
    };
    Ok(MetricsReport {
        mode,
        tau,
        total: outcomes.len(),
        successes: wins.len(),
        a_rate: 100.0 * wins.len() as f64 / outcomes.len() as f64,
        m_size: mean(wins.iter().map(|o| o.inserted as f64)),
        a_sim: mean(wins.iter().map(|o| o.final_sim)),
        n_change: mean(wins.iter().map(change)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub a_rate: f64,
}

/// A-rate at `τ = 0, 0.01, …, 1`.
pub fn threshold_sweep(outcomes: &[OutcomeSummary], mode: Mode) -> Vec<SweepPoint> {
    (0..=100)
        .map(|i| {
            let tau = i as f64 / 100.0;
            let wins = outcomes.iter().filter(|o| succeeded(mode, tau, o.final_sim)).count();
            SweepPoint { tau, a_rate: 100.0 * wins as f64 / outcomes.len().max(1) as f64 }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn o(i: f64, f: f64) -> OutcomeSummary {
        OutcomeSummary { initial_sim: i, final_sim: f, inserted: 3 }
    }

    #[test]
    fn worked_example() {
        let xs = [o(0.40, 0.75), o(0.50, 0.88), o(0.60, 0.94)];
        let m = compute_metrics(&xs, 0.8, Mode::Targeted).unwrap();
        assert!((m.a_rate - 66.666).abs() < 0.01);
        assert!((m.a_sim - 0.91).abs() < 1e-12);
        assert!((m.n_change - 0.805).abs() < 1e-12);
        assert_eq!(m.successes, 2);
    }

    #[test]
    fn all_failures_leave_support_undefined() {
        let m = compute_metrics(&[o(0.2, 0.3)], 0.8, Mode::Targeted).unwrap();
        assert_eq!(m.a_rate, 0.0);
        assert!(m.m_size.is_nan() && m.a_sim.is_nan() && m.n_change.is_nan());
        assert!(matches!(compute_metrics(&[], 0.8, Mode::Targeted), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn extremes() {
        assert_eq!(compute_metrics(&[o(0.0, 1.0)], 0.8, Mode::Targeted).unwrap().n_change, 1.0);
        assert_eq!(normalized_increment(1.0, 1.0), 0.0);
        assert_eq!(normalized_decrement(0.0, 0.0), 0.0);
        let m = compute_metrics(&[o(0.8, 0.2)], 0.5, Mode::Untargeted).unwrap();
        assert!((m.n_change - 0.75).abs() < 1e-12);
    }

    #[test]
    fn failures_do_not_move_support_metrics() {
        let wins = [o(0.3, 0.9), o(0.5, 0.85)];
        let a = compute_metrics(&wins, 0.8, Mode::Targeted).unwrap();
        let b = compute_metrics(&[wins[0], o(0.1, 0.2), wins[1]], 0.8, Mode::Targeted).unwrap();
        assert_eq!((a.m_size, a.a_sim, a.n_change), (b.m_size, b.a_sim, b.n_change));
    }

    proptest! {
        #[test]
        fn sweep_is_monotone(finals in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let xs: Vec<OutcomeSummary> = finals.iter().map(|f| o(0.5, *f)).collect();
            let t = threshold_sweep(&xs, Mode::Targeted);
            prop_assert!(t.windows(2).all(|w| w[1].a_rate <= w[0].a_rate));
            let u = threshold_sweep(&xs, Mode::Untargeted);
            prop_assert!(u.windows(2).all(|w| w[1].a_rate >= w[0].a_rate));
            prop_assert_eq!(t.len(), 101);
        }
    }
}
