//! Closed-form savings ratios for bath-functional reuse, their large-N
//! asymptotics, and the evaluation-counter reports the solvers emit.
//!
//! For order-m functionals over N steps the Dyson-series reuse keeps
//! `1 - N^m / (1^m + ... + N^m)` of the naive evaluations away; the inchworm
//! analogue replaces the power sums by sums over the longer contour. Both
//! approach 1 like O(1/N).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fraction of order-m bath evaluations saved by reuse in the Dyson solver
/// after N steps: `1 - N^m / sum_{j<=N} j^m`.
pub fn r_dyson(m: u32, n: u32) -> f64 {
    assert!(m >= 1 && n >= 1);
    let mut denom = 0.0;
    for j in 1..=n {
        denom += (j as f64).powi(m as i32);
    }
    1.0 - (n as f64).powi(m as i32) / denom
}

/// Large-N asymptote of [`r_dyson`]: `1 - (m+1)/N`.
pub fn r_dyson_asymptotic(m: u32, n: u32) -> f64 {
    1.0 - (m as f64 + 1.0) / n as f64
}

/// Inchworm analogue of [`r_dyson`]:
/// `1 - [(2N)^m + (2N-1)^m - N^m - (N-1)^m] / [sum_{N+1..2N} j^m - sum_{1..N-1} j^m]`.
pub fn r_inch(m: u32, n: u32) -> f64 {
    assert!(m >= 1 && n >= 1);
    let p = |j: u32| (j as f64).powi(m as i32);
    let numer = p(2 * n) + p(2 * n - 1) - p(n) - p(n - 1);
    let mut denom = 0.0;
    for j in (n + 1)..=(2 * n) {
        denom += p(j);
    }
    for j in 1..n {
        denom -= p(j);
    }
    1.0 - numer / denom
}

/// Large-N asymptote of [`r_inch`], carrying the extra factor
/// `(1 - 2^-(m+1)) / (1 - 2^-m)` relative to the Dyson form.
pub fn r_inch_asymptotic(m: u32, n: u32) -> f64 {
    let half = 0.5f64;
    let factor = (1.0 - half.powi(m as i32 + 1)) / (1.0 - half.powi(m as i32));
    1.0 - factor * (m as f64 + 1.0) / n as f64
}

/// Weighted overall saving `1 - sum_m fresh_m w_m / sum_m total_m w_m`.
/// Weights are per-evaluation costs (measured seconds or a cost model such
/// as `2^m` / `alpha^m`). The three maps must carry identical key sets.
pub fn r_time(
    weights: &BTreeMap<u32, f64>,
    fresh: &BTreeMap<u32, u64>,
    total: &BTreeMap<u32, u64>,
) -> Result<f64> {
    if weights.keys().ne(fresh.keys()) || weights.keys().ne(total.keys()) {
        return Err(Error::Solver("r_time: mismatched order sets"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (m, w) in weights {
        if w.is_nan() || *w <= 0.0 {
            return Err(Error::Solver("r_time: weights must be positive"));
        }
        num += fresh[m] as f64 * w;
        den += total[m] as f64 * w;
    }
    if den == 0.0 {
        return Err(Error::Solver("r_time: no evaluations counted"));
    }
    Ok(1.0 - num / den)
}

/// Evaluation counters for one functional order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    /// Functionals actually evaluated.
    pub fresh_count: u64,
    /// Sequence-step memberships a reuse-free run would have evaluated.
    pub total_count: u64,
    /// Seconds spent on the fresh evaluations (zero without `std`).
    pub wall_seconds: f64,
}

/// Counters emitted by a solver run: per-order evaluation counts and the
/// cumulative seconds spent on bath evaluations after each step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_m: BTreeMap<u32, CostEntry>,
    pub cumulative_bath_seconds: Vec<f64>,
}

impl CostReport {
    pub fn new(orders: impl Iterator<Item = u32>, n_steps: usize) -> Self {
        CostReport {
            per_m: orders.map(|m| (m, CostEntry::default())).collect(),
            cumulative_bath_seconds: alloc::vec![0.0; n_steps + 1],
        }
    }

    pub(crate) fn record_fresh(&mut self, m: u32, count: u64, seconds: f64, step: usize) {
        let e = self.per_m.entry(m).or_default();
        e.fresh_count += count;
        e.wall_seconds += seconds;
        if step < self.cumulative_bath_seconds.len() {
            self.cumulative_bath_seconds[step] += seconds;
        }
    }

    pub(crate) fn record_membership(&mut self, m: u32, count: u64) {
        self.per_m.entry(m).or_default().total_count += count;
    }

    pub(crate) fn finalize_cumulative(&mut self) {
        let mut acc = 0.0;
        for s in self.cumulative_bath_seconds.iter_mut() {
            acc += *s;
            *s = acc;
        }
    }

    /// Measured saving ratio `1 - fresh/total` for one order.
    pub fn r_measured(&self, m: u32) -> Option<f64> {
        let e = self.per_m.get(&m)?;
        if e.total_count == 0 {
            return None;
        }
        Some(1.0 - e.fresh_count as f64 / e.total_count as f64)
    }

    pub fn fresh_counts(&self) -> BTreeMap<u32, u64> {
        self.per_m
            .iter()
            .map(|(m, e)| (*m, e.fresh_count))
            .collect()
    }

    pub fn total_counts(&self) -> BTreeMap<u32, u64> {
        self.per_m
            .iter()
            .map(|(m, e)| (*m, e.total_count))
            .collect()
    }

    /// Mean seconds per fresh evaluation of order m.
    pub fn mean_wall_seconds(&self, m: u32) -> Option<f64> {
        let e = self.per_m.get(&m)?;
        if e.fresh_count == 0 {
            return None;
        }
        Some(e.wall_seconds / e.fresh_count as f64)
    }
}
