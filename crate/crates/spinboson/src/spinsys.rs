//! System-side 2x2 algebra: the spin Hamiltonian, the bare propagator on the
//! unfolded contour, and the alternating system factors that multiply the
//! bath functionals in both solvers.

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::grid::{GridView, Node};
use crate::matrix::Matrix2;
use crate::time::TimeSequence;
use crate::{Error, Result, C64};

/// Model parameters: `H_s = epsilon sigma_z + delta sigma_x`, the coupling
/// word `W_s` (sigma_z), the measured observable `O_s`, and the initial
/// system state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub observable: Matrix2,
    pub coupling: Matrix2,
    pub rho: Matrix2,
}

impl ModelConfig {
    /// Standard setup: observable sigma_z, coupling sigma_z, initial state
    /// `|0><0|`.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        ModelConfig {
            epsilon,
            delta,
            observable: Matrix2::sigma_z(),
            coupling: Matrix2::sigma_z(),
            rho: Matrix2::new(C64::new(1.0, 0.0), C64::ZERO, C64::ZERO, C64::ZERO),
        }
        .validated()
    }

    pub fn with_observable(mut self, observable: Matrix2) -> Result<Self> {
        self.observable = observable;
        self.validated()
    }

    pub fn with_initial_state(mut self, rho: Matrix2) -> Result<Self> {
        self.rho = rho;
        self.validated()
    }

    fn validated(self) -> Result<Self> {
        if !self.epsilon.is_finite() || !self.delta.is_finite() {
            return Err(Error::BadModelConfig("epsilon and delta must be finite"));
        }
        if self.observable.hermiticity_defect() > 1e-12 {
            return Err(Error::BadModelConfig("observable must be Hermitian"));
        }
        if self.coupling.hermiticity_defect() > 1e-12 {
            return Err(Error::BadModelConfig("coupling must be Hermitian"));
        }
        if (self.rho.trace() - C64::new(1.0, 0.0)).norm() > 1e-12 {
            return Err(Error::BadModelConfig("initial state must have unit trace"));
        }
        if !self.observable.is_finite() || !self.rho.is_finite() {
            return Err(Error::BadModelConfig("matrix entries must be finite"));
        }
        Ok(self)
    }

    pub fn hamiltonian(&self) -> Matrix2 {
        Matrix2::sigma_z().scale_re(self.epsilon) + Matrix2::sigma_x().scale_re(self.delta)
    }

    /// `exp(i c H_s)` in closed form: for `H_s = r (n . sigma)` this is
    /// `cos(c r) Id + i sin(c r) (n . sigma)`.
    pub fn exp_ih(&self, c: f64) -> Matrix2 {
        let r = (self.epsilon * self.epsilon + self.delta * self.delta).sqrt();
        if r == 0.0 {
            return Matrix2::identity();
        }
        let (s, co) = (c * r).sin_cos();
        let is = Complex64::new(0.0, s / r);
        Matrix2::identity().scale_re(co)
            + (Matrix2::sigma_z().scale_re(self.epsilon) + Matrix2::sigma_x().scale_re(self.delta))
                .scale(is)
    }

    /// `i [H_s, X]`, the free part of the Dyson evolution. Maps Hermitian
    /// input to Hermitian output with exact floating-point symmetry.
    pub fn commutator_term(&self, x: &Matrix2) -> Matrix2 {
        let hs = self.hamiltonian();
        (hs * *x - *x * hs).scale(C64::new(0.0, 1.0))
    }
}

/// Bare system propagator between two contour times.
///
/// Three branches: unitary evolution when both times share a sign, and the
/// observable-dressed form once the pair straddles zero. Panics if
/// `s_i > s_f`.
pub fn bare_propagator(cfg: &ModelConfig, s_i: f64, s_f: f64) -> Matrix2 {
    assert!(s_i <= s_f, "bare_propagator requires s_i <= s_f");
    if s_f < 0.0 {
        // Both negative.
        cfg.exp_ih(-(s_f - s_i))
    } else if s_i >= 0.0 {
        // Both non-negative.
        cfg.exp_ih(s_f - s_i)
    } else {
        // s_i < 0 <= s_f.
        cfg.exp_ih(s_f) * cfg.observable * cfg.exp_ih(s_i)
    }
}

/// Branch-resolved variant for quadrature nodes sitting exactly on the
/// origin: `neg` selects the `0^-` limit.
pub(crate) fn bare_propagator_sided(
    cfg: &ModelConfig,
    s_i: f64,
    i_neg: bool,
    s_f: f64,
    f_neg: bool,
) -> Matrix2 {
    let i_negative = s_i < 0.0 || (s_i == 0.0 && i_neg);
    let f_negative = s_f < 0.0 || (s_f == 0.0 && f_neg);
    if f_negative {
        cfg.exp_ih(-(s_f - s_i))
    } else if !i_negative {
        cfg.exp_ih(s_f - s_i)
    } else {
        cfg.exp_ih(s_f) * cfg.observable * cfg.exp_ih(s_i)
    }
}

/// Alternating product of bare propagators and coupling words:
/// `G(s_m, s_f) W G(s_{m-1}, s_m) W ... W G(s_1, s_2) W G(s_i, s_1)`.
pub fn u0_functional(cfg: &ModelConfig, s_i: f64, times: &TimeSequence, s_f: f64) -> Matrix2 {
    let v = times.values();
    if let (Some(first), Some(last)) = (v.first(), v.last()) {
        assert!(
            s_i <= *first && *last <= s_f,
            "times must lie within [s_i, s_f]"
        );
    }
    if v.is_empty() {
        return bare_propagator(cfg, s_i, s_f);
    }
    let w = cfg.coupling;
    let mut acc = bare_propagator(cfg, s_i, v[0]);
    for k in 1..v.len() {
        acc = bare_propagator(cfg, v[k - 1], v[k]) * (w * acc);
    }
    bare_propagator(cfg, v[v.len() - 1], s_f) * (w * acc)
}

/// Same alternating product with the bare propagator replaced by grid
/// interpolation of the full propagator. Endpoints are grid nodes; the
/// view's override (when present) stands in for its node everywhere.
pub fn u_interp(
    cfg: &ModelConfig,
    view: &GridView,
    s_i: Node,
    times: &TimeSequence,
    s_f: Node,
) -> Matrix2 {
    let h = view.h();
    let v = times.values();
    if let (Some(first), Some(last)) = (v.first(), v.last()) {
        assert!(
            s_i.value(h) <= *first && *last <= s_f.value(h),
            "times must lie within the node interval"
        );
    }
    if v.is_empty() {
        return view.corner(s_i, s_f);
    }
    let w = cfg.coupling;
    let mut acc = view.interp_node_real(s_i, v[0]);
    for k in 1..v.len() {
        acc = view.interp_real_real(v[k - 1], v[k]) * (w * acc);
    }
    view.interp_real_node(v[v.len() - 1], s_f) * (w * acc)
}
