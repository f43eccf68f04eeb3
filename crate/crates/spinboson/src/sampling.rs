//! Stratified sampling of time sequences over the simplex families the two
//! solvers integrate, sample-count allocation across diagram orders, and the
//! flat mixture densities that weight the Monte Carlo terms.
//!
//! Fresh samples are only ever drawn from the regions that stretched copies
//! of earlier samples cannot reach (at least one point within one step of the
//! origin, or a first-column region). Each region and order gets its own
//! counter-derived RNG stream, so a batch depends on nothing but the seed and
//! its own key — reuse and reuse-free runs consume identical randomness.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::time::TimeSequence;
use crate::util::{double_factorial, factorial, round_ties_even};
use crate::{Error, Result, C64};

/// Monte Carlo setup shared by both solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Empirical correlation magnitude used for order allocation.
    pub b_emp: f64,
    /// Odd series truncation; orders run 1, 3, ..., m_bar.
    pub m_bar: u32,
    /// Anchor sample count for the first fresh region.
    pub m0_hat: u32,
    /// Step length.
    pub h: f64,
    /// Number of steps; the horizon is `n_steps * h`.
    pub n_steps: u32,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(
        b_emp: f64,
        m_bar: u32,
        m0_hat: u32,
        h: f64,
        n_steps: u32,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SamplingConfig {
            b_emp,
            m_bar,
            m0_hat,
            h,
            n_steps,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_emp.is_nan() || !self.b_emp.is_finite() || self.b_emp <= 0.0 {
            return Err(Error::BadSamplingConfig("b_emp must be positive"));
        }
        if self.m_bar % 2 == 0 {
            return Err(Error::BadSamplingConfig("m_bar must be odd"));
        }
        if self.m_bar as usize + 1 > crate::diagrams::MAX_POINTS {
            return Err(Error::BadSamplingConfig("m_bar exceeds the diagram bound"));
        }
        if self.m0_hat == 0 {
            return Err(Error::BadSamplingConfig("m0_hat must be >= 1"));
        }
        if self.h.is_nan() || !self.h.is_finite() || self.h <= 0.0 {
            return Err(Error::BadSamplingConfig("h must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::BadSamplingConfig("n_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn t(&self, i: i64) -> f64 {
        i as f64 * self.h
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.n_steps as i64)
    }

    /// The odd orders 1, 3, ..., m_bar.
    pub fn orders(&self) -> impl Iterator<Item = u32> {
        (1..=self.m_bar).step_by(2)
    }
}

/// Which family of regions a batch was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Step-i simplex of the Dyson solver.
    DysonStep(u32),
    /// Inchworm region: first point in `[t_p, t_{p+1}]`, endpoint `t_k`.
    Inch { p: i32, k: i32 },
}

/// Sequences of one order within a batch; `values` carries the cached bath
/// functionals once a solver has evaluated them.
#[derive(Debug, Clone)]
pub struct MGroup {
    pub m: u32,
    pub sequences: Vec<TimeSequence>,
    pub values: Vec<C64>,
}

/// Fresh samples for one region, grouped by order.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub region: Region,
    pub groups: Vec<MGroup>,
}

impl SampleBatch {
    pub fn total_sequences(&self) -> usize {
        self.groups.iter().map(|g| g.sequences.len()).sum()
    }
}

// ---- simplex volumes -------------------------------------------------------

/// Volume of the order-m Dyson simplex `-t_i <= s_1 <= ... <= s_m <= t_i`.
pub fn region_volume_dyson(m: u32, i: u32, h: f64) -> f64 {
    (2.0 * i as f64 * h).powi(m as i32) / factorial(m)
}

/// Volume of the fresh part of the step-i simplex (at least one point within
/// `(-h, h)`): the difference of consecutive simplex volumes.
pub fn region_volume_dyson_fresh(m: u32, i: u32, h: f64) -> f64 {
    assert!(i >= 1);
    let outer = (2.0 * i as f64 * h).powi(m as i32);
    let inner = (2.0 * (i - 1) as f64 * h).powi(m as i32);
    (outer - inner) / factorial(m)
}

/// Volume of the inchworm region `T_{p,k}`: first point in `[t_p, t_{p+1}]`,
/// remaining points up to `t_k`. Depends only on `k - p`.
pub fn region_volume_inch(m: u32, p: i32, k: i32, h: f64) -> f64 {
    assert!(p < k, "inchworm region requires p < k");
    let d = (k - p) as f64;
    ((d * h).powi(m as i32) - ((d - 1.0) * h).powi(m as i32)) / factorial(m)
}

/// Volume of the fresh part of `T_{p,k}`. First-column regions (`p = -1` or
/// `k = 0`) are entirely fresh; elsewhere the stretched image of
/// `T_{p+1,k-1}` is removed.
pub fn region_volume_inch_fresh(m: u32, p: i32, k: i32, h: f64) -> f64 {
    assert!(
        p <= -1 && k >= 0,
        "fresh inchworm regions have p <= -1, k >= 0"
    );
    let full = region_volume_inch(m, p, k, h);
    if p == -1 || k == 0 {
        full
    } else {
        full - region_volume_inch(m, p + 1, k - 1, h)
    }
}

// ---- allocation ------------------------------------------------------------

fn allocation(volume: f64, m: u32, m0_hat: u32, b_emp: f64, lambda_hat: f64) -> u64 {
    let raw = m0_hat as f64 / lambda_hat
        * volume
        * double_factorial(m)
        * b_emp.powf((m as f64 + 1.0) / 2.0);
    round_ties_even(raw) as u64
}

/// Fresh sample counts per order for Dyson step `i`. Anchored so the first
/// step's order-1 count is exactly `m0_hat`.
pub fn allocate_dyson(cfg: &SamplingConfig, i: u32) -> BTreeMap<u32, u64> {
    assert!(i >= 1 && i <= cfg.n_steps);
    let lambda_hat = 2.0 * cfg.b_emp * cfg.h;
    cfg.orders()
        .map(|m| {
            let vol = region_volume_dyson_fresh(m, i, cfg.h);
            (m, allocation(vol, m, cfg.m0_hat, cfg.b_emp, lambda_hat))
        })
        .collect()
}

/// Fresh sample counts per order for inchworm region `(p, k)`. Anchored so
/// the `(-1, 0)` order-1 count is exactly `m0_hat`.
pub fn allocate_inch(cfg: &SamplingConfig, p: i32, k: i32) -> BTreeMap<u32, u64> {
    assert!(
        p >= -(cfg.n_steps as i32) && p <= -1 && k >= 0 && k <= cfg.n_steps as i32,
        "inchworm fresh region out of range: ({p}, {k})"
    );
    let lambda_hat = cfg.b_emp * cfg.h;
    cfg.orders()
        .map(|m| {
            let vol = region_volume_inch_fresh(m, p, k, cfg.h);
            (m, allocation(vol, m, cfg.m0_hat, cfg.b_emp, lambda_hat))
        })
        .collect()
}

// ---- densities -------------------------------------------------------------

/// Mixture density of the step-i Dyson sample set: constant in `s`,
/// `m!! B^{(m+1)/2} / lambda_i`.
pub fn density_dyson(cfg: &SamplingConfig, i: u32, m: u32) -> f64 {
    assert!(i >= 1);
    let mut lambda = 0.0;
    for mp in cfg.orders() {
        lambda += (2.0 * cfg.t(i as i64)).powi(mp as i32) / double_factorial(mp - 1)
            * cfg.b_emp.powf((mp as f64 + 1.0) / 2.0);
    }
    double_factorial(m) * cfg.b_emp.powf((m as f64 + 1.0) / 2.0) / lambda
}

/// Mixture density of the inchworm sample set for a step from `t_j` to
/// `t_k`: `m!! B^{(m+1)/2} / lambda_{j,k}` over the union of the `(p, k)`
/// regions with `j <= p <= k-1`.
pub fn density_inch(cfg: &SamplingConfig, j: i32, k: i32, m: u32) -> f64 {
    assert!(j < k);
    let d = (k - j) as i64;
    let mut lambda = 0.0;
    for mp in cfg.orders() {
        lambda += cfg.t(d).powi(mp as i32) / double_factorial(mp - 1)
            * cfg.b_emp.powf((mp as f64 + 1.0) / 2.0);
    }
    double_factorial(m) * cfg.b_emp.powf((m as f64 + 1.0) / 2.0) / lambda
}

// ---- RNG streams -----------------------------------------------------------

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream keyed by `(seed, domain, region coordinates, order)`.
pub(crate) fn region_rng(seed: u64, domain: u64, a: i64, b: i64, m: u32) -> ChaCha8Rng {
    let mut state = seed
        ^ domain.wrapping_mul(0xA076_1D64_78BD_642F)
        ^ (a as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB)
        ^ (b as u64).wrapping_mul(0x8EBC_6AF0_9C88_C6E3)
        ^ (m as u64).wrapping_mul(0x5897_89E6_C7B0_C1C7);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub(crate) const DOMAIN_DYSON: u64 = 1;
pub(crate) const DOMAIN_INCH: u64 = 2;
pub(crate) const DOMAIN_BARE: u64 = 3;

// ---- samplers --------------------------------------------------------------

/// A sampled coordinate is rejected when it sits exactly on a grid node, on
/// the origin, or on a `(-h, h)` boundary: those are measure-zero points
/// whose branch or membership would be ambiguous, and stretched copies of a
/// node-collided point could land exactly on zero.
fn collides_with_grid(v: f64, h: f64) -> bool {
    let n = (v / h).round();
    v == n * h
}

fn draw_sorted_uniform(
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    m: usize,
    h: f64,
    out: &mut Vec<f64>,
) {
    'redraw: loop {
        out.clear();
        for _ in 0..m {
            out.push(lo + (hi - lo) * rng.random::<f64>());
        }
        out.sort_unstable_by(f64::total_cmp);
        for w in out.windows(2) {
            if w[0] == w[1] {
                continue 'redraw;
            }
        }
        if out.iter().any(|&v| collides_with_grid(v, h)) {
            continue 'redraw;
        }
        return;
    }
}

/// Fresh batch for Dyson step `i`: for each odd order, the allocated number
/// of sequences uniform on the fresh region. For `i >= 2` this is rejection
/// from the full simplex, accepting only sequences with a point in
/// `(-h, h)`; the first step needs no rejection.
pub fn sample_fresh_dyson(cfg: &SamplingConfig, i: u32) -> SampleBatch {
    let counts = allocate_dyson(cfg, i);
    let t_i = cfg.t(i as i64);
    let mut groups = Vec::new();
    for m in cfg.orders() {
        let want = counts[&m] as usize;
        let mut rng = region_rng(cfg.seed, DOMAIN_DYSON, i as i64, 0, m);
        let mut sequences = Vec::with_capacity(want);
        let mut buf = Vec::with_capacity(m as usize);
        while sequences.len() < want {
            draw_sorted_uniform(&mut rng, -t_i, t_i, m as usize, cfg.h, &mut buf);
            if i >= 2 && !buf.iter().any(|v| v.abs() < cfg.h) {
                continue;
            }
            sequences.push(TimeSequence::from_values(&buf, cfg.h));
        }
        groups.push(MGroup {
            m,
            sequences,
            values: Vec::new(),
        });
    }
    SampleBatch {
        region: Region::DysonStep(i),
        groups,
    }
}

/// Fresh batch for inchworm region `(p, k)`: the first point follows the
/// marginal density proportional to `(t_k - s_1)^{m-1}` on `[t_p, t_{p+1}]`
/// by inverse transform, the remaining points are sorted uniforms on
/// `[s_1, t_k]`. Regions away from the first column reject sequences without
/// a point in `(-h, h)`.
pub fn sample_fresh_inch(cfg: &SamplingConfig, p: i32, k: i32) -> SampleBatch {
    let counts = allocate_inch(cfg, p, k);
    let always_fresh = p == -1 || k == 0;
    let (t_p, t_p1, t_k) = (cfg.t(p as i64), cfg.t(p as i64 + 1), cfg.t(k as i64));
    let mut groups = Vec::new();
    for m in cfg.orders() {
        let want = counts[&m] as usize;
        let mut rng = region_rng(cfg.seed, DOMAIN_INCH, p as i64, k as i64, m);
        let mut sequences = Vec::with_capacity(want);
        let mut buf = Vec::with_capacity(m as usize);
        let span_pow = (t_k - t_p).powi(m as i32);
        let span1_pow = (t_k - t_p1).powi(m as i32);
        'outer: while sequences.len() < want {
            let u = rng.random::<f64>();
            let s1 = t_k - (span_pow - u * (span_pow - span1_pow)).powf(1.0 / m as f64);
            if collides_with_grid(s1, cfg.h) || s1 < t_p || s1 > t_p1 {
                continue;
            }
            buf.clear();
            buf.push(s1);
            if m > 1 {
                let mut rest = Vec::with_capacity(m as usize - 1);
                draw_sorted_uniform(&mut rng, s1, t_k, m as usize - 1, cfg.h, &mut rest);
                if rest[0] == s1 {
                    continue 'outer;
                }
                buf.extend_from_slice(&rest);
            }
            if !always_fresh && !buf.iter().any(|v| v.abs() < cfg.h) {
                continue;
            }
            sequences.push(TimeSequence::from_values(&buf, cfg.h));
        }
        groups.push(MGroup {
            m,
            sequences,
            values: Vec::new(),
        });
    }
    SampleBatch {
        region: Region::Inch { p, k },
        groups,
    }
}

// ---- membership predicates ---------------------------------------------

/// Sequence lies in the step-i Dyson simplex.
pub fn in_region_dyson(seq: &TimeSequence, i: u32, cfg: &SamplingConfig) -> bool {
    let t_i = cfg.t(i as i64);
    seq.values().iter().all(|v| -t_i <= *v && *v <= t_i)
}

/// Sequence lies in the fresh part of the step-i simplex.
pub fn in_fresh_dyson(seq: &TimeSequence, i: u32, cfg: &SamplingConfig) -> bool {
    in_region_dyson(seq, i, cfg) && seq.values().iter().any(|v| v.abs() < cfg.h)
}

/// Sequence lies in inchworm region `(p, k)`.
pub fn in_region_inch(seq: &TimeSequence, p: i32, k: i32, cfg: &SamplingConfig) -> bool {
    let v = seq.values();
    if v.is_empty() {
        return false;
    }
    let (t_p, t_p1, t_k) = (cfg.t(p as i64), cfg.t(p as i64 + 1), cfg.t(k as i64));
    t_p <= v[0] && v[0] <= t_p1 && *v.last().unwrap() <= t_k
}

/// Sequence lies in the fresh part of region `(p, k)`.
pub fn in_fresh_inch(seq: &TimeSequence, p: i32, k: i32, cfg: &SamplingConfig) -> bool {
    in_region_inch(seq, p, k, cfg)
        && (p == -1 || k == 0 || seq.values().iter().any(|v| v.abs() < cfg.h))
}
