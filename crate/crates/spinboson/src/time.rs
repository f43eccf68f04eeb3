//! Time points and ordered time sequences on the unfolded contour.
//!
//! A point is stored as `base + steps * h` rather than as a single float. The
//! stretch operator that moves a sequence away from the origin only touches
//! the integer `steps`, so the pairwise gaps `|s_j| - |s_k|` that feed the
//! bath correlation are computed from identical floating-point operands
//! before and after stretching. Cached bath functionals therefore stay valid
//! bit for bit, which the reuse-equivalence tests rely on.

use alloc::vec::Vec;

/// One contour time, `value = base + steps * h`. `steps` accumulates the
/// whole-step shifts applied since the point was sampled; `base` is never
/// modified after sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePoint {
    pub base: f64,
    pub steps: i32,
}

impl TimePoint {
    pub fn fresh(base: f64) -> Self {
        TimePoint { base, steps: 0 }
    }

    /// Grid node t_k = k*h.
    pub fn node(k: i32) -> Self {
        TimePoint {
            base: 0.0,
            steps: k,
        }
    }

    pub fn value(&self, h: f64) -> f64 {
        self.base + (self.steps as f64) * h
    }

    pub fn is_negative(&self, h: f64) -> bool {
        self.value(h) < 0.0
    }

    /// Move `j` whole steps away from the origin, preserving the side.
    pub fn stretched(&self, j: i32, h: f64) -> Self {
        let steps = if self.is_negative(h) {
            self.steps - j
        } else {
            self.steps + j
        };
        TimePoint {
            base: self.base,
            steps,
        }
    }

    /// Shift by `k` whole steps toward positive time (used when a sequence
    /// from a non-positive window is transported across the origin).
    pub fn shifted(&self, k: i32) -> Self {
        TimePoint {
            base: self.base,
            steps: self.steps + k,
        }
    }
}

/// `|tau1| - |tau2|` for `tau1 <= tau2`, evaluated so that it is invariant
/// under common integer shifts of `steps`. The float part and the integer
/// part are combined only once, after exact integer arithmetic.
pub fn delta_tau(p: &TimePoint, q: &TimePoint, h: f64) -> f64 {
    let p_neg = p.is_negative(h);
    let q_neg = q.is_negative(h);
    debug_assert!(
        p.value(h) <= q.value(h),
        "delta_tau arguments must be ordered"
    );
    let (db, dk) = match (p_neg, q_neg) {
        // |p| = -(p), |q| = -(q)
        (true, true) => (q.base - p.base, q.steps - p.steps),
        // |p| = p, |q| = q
        (false, false) => (p.base - q.base, p.steps - q.steps),
        // p < 0 <= q
        (true, false) => (-p.base - q.base, -(p.steps + q.steps)),
        (false, true) => unreachable!("ordered points cannot be (+, -)"),
    };
    db + (dk as f64) * h
}

/// Strictly ordered time sequence with the step length it was sampled at.
/// Solver integrands use odd lengths; the diagram evaluators receive the
/// sequence with its endpoint appended, making the length even.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSequence {
    points: Vec<TimePoint>,
    h: f64,
}

impl TimeSequence {
    /// Build from already-ordered points. Panics if the values are not
    /// strictly ascending or any value is exactly zero.
    pub fn new(points: Vec<TimePoint>, h: f64) -> Self {
        for w in points.windows(2) {
            assert!(
                w[0].value(h) < w[1].value(h),
                "time sequence must be strictly ascending"
            );
        }
        assert!(
            points.iter().all(|p| p.value(h) != 0.0),
            "time sequence must avoid the origin"
        );
        TimeSequence { points, h }
    }

    pub fn from_values(values: &[f64], h: f64) -> Self {
        Self::new(values.iter().map(|&v| TimePoint::fresh(v)).collect(), h)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value(self.h)).collect()
    }

    pub fn count_negative(&self) -> usize {
        self.points.iter().filter(|p| p.is_negative(self.h)).count()
    }

    pub fn min_abs_value(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.value(self.h).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// The stretch operator: each point moves `j` whole steps away from the
    /// origin. Ordering is preserved because both sides move outward.
    pub fn stretch(&self, j: i32) -> Self {
        TimeSequence {
            points: self.points.iter().map(|p| p.stretched(j, self.h)).collect(),
            h: self.h,
        }
    }

    /// Rigid shift by `k` whole steps toward positive time.
    pub fn shift(&self, k: i32) -> Self {
        TimeSequence {
            points: self.points.iter().map(|p| p.shifted(k)).collect(),
            h: self.h,
        }
    }
}
