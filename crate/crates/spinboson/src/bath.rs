//! Discretized Ohmic bath and its two-point correlation.
//!
//! The bath is a finite set of harmonic modes. Mode `l` of `L` carries
//! frequency `omega_l = -omega_c ln(1 - (l/L)(1 - exp(-omega_max/omega_c)))`
//! and coupling `c_l = omega_l sqrt(xi omega_c (1 - exp(-omega_max/omega_c)) / L)`.
//! The correlation of two contour times depends only on
//! `dtau = |tau1| - |tau2|`:
//!
//! ```text
//! B*(dtau) = sum_l c_l^2/(2 omega_l) [coth(beta omega_l / 2) cos(omega_l dtau)
//!                                      - i sin(omega_l dtau)]
//! ```
//!
//! All reuse arguments in the solvers reduce to invariances of `dtau`, so the
//! kernel is single-variable by construction and the two-argument form is a
//! thin shim over it.

use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::time::{delta_tau, TimePoint};
use crate::{Error, Result, C64};

/// Physical parameters of the Ohmic bath discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathSpec {
    /// Kondo parameter (dimensionless coupling strength).
    pub xi: f64,
    /// Primary frequency omega_c.
    pub omega_c: f64,
    /// Cutoff frequency; conventionally 4 omega_c.
    pub omega_max: f64,
    /// Inverse temperature.
    pub beta: f64,
    /// Number of modes.
    pub num_modes: u32,
}

impl BathSpec {
    /// Spec with `omega_max = 4 omega_c`.
    pub fn with_default_cutoff(xi: f64, omega_c: f64, beta: f64, num_modes: u32) -> Self {
        BathSpec {
            xi,
            omega_c,
            omega_max: 4.0 * omega_c,
            beta,
            num_modes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.xi.is_nan() || !self.xi.is_finite() || self.xi < 0.0 {
            return Err(Error::BadBathSpec("xi must be finite and >= 0"));
        }
        if self.omega_c.is_nan() || self.omega_c <= 0.0 {
            return Err(Error::BadBathSpec("omega_c must be > 0"));
        }
        if self.omega_max.is_nan() || self.omega_max <= 0.0 {
            return Err(Error::BadBathSpec("omega_max must be > 0"));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(Error::BadBathSpec("beta must be > 0"));
        }
        if self.num_modes == 0 {
            return Err(Error::BadBathSpec("num_modes must be >= 1"));
        }
        Ok(())
    }
}

/// Mode tables of the discretized bath. Immutable after construction; all
/// evaluations are pure, so the tables can be shared across workers freely.
#[derive(Debug, Clone, PartialEq)]
pub struct BathCorrelation {
    couplings: Vec<f64>,
    frequencies: Vec<f64>,
    beta: f64,
    /// Precomputed c_l^2/(2 omega_l).
    weights: Vec<f64>,
    /// Precomputed coth(beta omega_l / 2).
    coth_half: Vec<f64>,
}

/// Build the mode tables from a spec.
pub fn build_bath(spec: &BathSpec) -> Result<BathCorrelation> {
    spec.validate()?;
    let l_total = spec.num_modes;
    let depletion = 1.0 - (-spec.omega_max / spec.omega_c).exp();
    let coupling_scale = (spec.xi * spec.omega_c * depletion / l_total as f64).sqrt();
    let mut couplings = Vec::with_capacity(l_total as usize);
    let mut frequencies = Vec::with_capacity(l_total as usize);
    let mut weights = Vec::with_capacity(l_total as usize);
    let mut coth_half = Vec::with_capacity(l_total as usize);
    for l in 1..=l_total {
        let omega = -spec.omega_c * (1.0 - (l as f64 / l_total as f64) * depletion).ln();
        let c = omega * coupling_scale;
        couplings.push(c);
        frequencies.push(omega);
        weights.push(c * c / (2.0 * omega));
        coth_half.push(1.0 / (spec.beta * omega / 2.0).tanh());
    }
    Ok(BathCorrelation {
        couplings,
        frequencies,
        beta: spec.beta,
        weights,
        coth_half,
    })
}

impl BathCorrelation {
    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// The single-variable kernel `B*(dtau)`. Evaluated at `|dtau|` and
    /// conjugated for negative arguments, so `B*(-x)` is the exact
    /// floating-point conjugate of `B*(x)`.
    pub fn b_star(&self, dtau: f64) -> C64 {
        let x = dtau.abs();
        let mut re = 0.0;
        let mut im = 0.0;
        for l in 0..self.frequencies.len() {
            let (s, c) = (self.frequencies[l] * x).sin_cos();
            re += self.weights[l] * self.coth_half[l] * c;
            im -= self.weights[l] * s;
        }
        if dtau < 0.0 {
            Complex64::new(re, -im)
        } else {
            Complex64::new(re, im)
        }
    }

    /// Two-point correlation `B(tau1, tau2) = B*(|tau1| - |tau2|)`.
    ///
    /// Panics if `tau1 > tau2`.
    pub fn two_point(&self, tau1: f64, tau2: f64) -> C64 {
        assert!(tau1 <= tau2, "two_point requires tau1 <= tau2");
        self.b_star(tau1.abs() - tau2.abs())
    }

    /// Two-point correlation on shift-tracking points; the gap is evaluated
    /// through [`delta_tau`] so it is invariant under stretching.
    pub fn two_point_pts(&self, p: &TimePoint, q: &TimePoint, h: f64) -> C64 {
        self.b_star(delta_tau(p, q, h))
    }
}

/// Optional uniform-grid memoization of `B*`, keyed by `round(dtau / h_cache)`.
/// This quantizes the argument, so it trades accuracy for speed; the solvers
/// never enable it in correctness or acceptance runs. Interior mutability
/// makes it single-threaded, unlike the plain tables.
#[derive(Debug, Clone)]
pub struct CachedBStar {
    bath: BathCorrelation,
    h_cache: f64,
    table: core::cell::RefCell<alloc::collections::BTreeMap<i64, C64>>,
}

impl CachedBStar {
    pub fn new(bath: BathCorrelation, h_cache: f64) -> Self {
        assert!(h_cache > 0.0);
        CachedBStar {
            bath,
            h_cache,
            table: core::cell::RefCell::new(alloc::collections::BTreeMap::new()),
        }
    }

    /// `B*` at the nearest cache node.
    pub fn b_star_quantized(&self, dtau: f64) -> C64 {
        let key = crate::util::round_ties_even(dtau / self.h_cache) as i64;
        if let Some(v) = self.table.borrow().get(&key) {
            return *v;
        }
        let v = self.bath.b_star(key as f64 * self.h_cache);
        self.table.borrow_mut().insert(key, v);
        v
    }

    pub fn len(&self) -> usize {
        self.table.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.borrow().is_empty()
    }
}
