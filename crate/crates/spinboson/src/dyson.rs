//! Dyson-series solver: evolves the observable propagator `G(-t, t)` through
//! its integro-differential equation with a two-stage (Heun) stepper and
//! Monte Carlo integrals over stratified time-sequence samples.
//!
//! The bath influence functional of every fresh sequence is computed once; at
//! all later steps the sequence reenters the sample set stretched away from
//! the origin, where the functional's value is unchanged, so only its system
//! factor is recomputed. The reuse-free mode walks the identical sample sets
//! but reevaluates each functional at each step, which leaves the trajectory
//! bit-identical while multiplying the bath-evaluation count.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::bath::BathCorrelation;
use crate::costmodel::CostReport;
use crate::diagrams::lb_full;
use crate::matrix::Matrix2;
use crate::sampling::{
    allocate_dyson, density_dyson, sample_fresh_dyson, SampleBatch, SamplingConfig, DOMAIN_BARE,
};
use crate::spinsys::{bare_propagator, bare_propagator_sided, u0_functional, ModelConfig};
use crate::time::{TimePoint, TimeSequence};
use crate::{clock, Error, Mode, Result, Stepper};

/// Result of a Dyson run: `trajectory[i]` approximates `G(-t_i, t_i)`,
/// starting from the observable at `i = 0`.
#[derive(Debug, Clone)]
pub struct DysonRun {
    pub trajectory: Vec<Matrix2>,
    pub report: CostReport,
}

/// Low-memory run together with its storage instrumentation.
#[derive(Debug, Clone)]
pub struct DysonLowMemRun {
    pub trajectory: Vec<Matrix2>,
    pub report: CostReport,
    /// Largest number of bath functionals held alive at once.
    pub peak_live_functionals: usize,
    /// Largest fresh batch size; the peak must not exceed this.
    pub max_batch_sequences: usize,
    /// Number of partial-sum matrices retained, `N (N + 1) / 2`.
    pub partial_sum_count: usize,
}

/// Parity sign `i^{m+1} (-1)^{#negative}` for odd m; real by construction.
fn term_sign(m: u32, negatives: usize) -> f64 {
    debug_assert!(m % 2 == 1);
    let i_pow = if (m + 1) % 4 == 0 { 1.0 } else { -1.0 };
    let neg = if negatives % 2 == 0 { 1.0 } else { -1.0 };
    i_pow * neg
}

/// One integrand term of the Dyson integro-differential equation:
/// `i^{m+1} (-1)^{#neg} (K + K^dagger)` with
/// `K = W U0(-t, s, t) Lb(s, t)`. Hermitian by construction.
pub fn dyson_rhs_term(
    model: &ModelConfig,
    bath: &BathCorrelation,
    seq: &TimeSequence,
    t: f64,
) -> Matrix2 {
    let mut pts = seq.points().to_vec();
    pts.push(TimePoint::fresh(t));
    let lb = lb_full(bath, &pts, seq.h());
    let u0 = u0_functional(model, -t, seq, t);
    let k = (model.coupling * u0).scale(lb);
    k.hermitized()
        .scale_re(term_sign(seq.len() as u32, seq.count_negative()))
}

/// Accumulates the Monte Carlo average of the equation's right-hand side
/// integral at one level, walking regions in order and samples in creation
/// order so the reduction is deterministic.
struct LevelSum {
    acc: Matrix2,
    count: u64,
}

impl LevelSum {
    fn new() -> Self {
        LevelSum {
            acc: Matrix2::zero(),
            count: 0,
        }
    }

    fn mean(&self) -> Matrix2 {
        if self.count == 0 {
            Matrix2::zero()
        } else {
            self.acc.scale_re(1.0 / self.count as f64)
        }
    }
}

/// One two-stage update: the predictor advances with the level-(i-1) Monte
/// Carlo average `f_prev`, the corrector averages it with the level-i sum
/// `f_curr` evaluated on the predictor value. Hermiticity of the input is
/// preserved exactly.
pub fn heun_step(
    model: &ModelConfig,
    h: f64,
    g_prev: &Matrix2,
    f_prev: &Matrix2,
    f_curr: &Matrix2,
) -> Matrix2 {
    let g_star = *g_prev + (model.commutator_term(g_prev) + *f_prev).scale_re(h);
    (*g_prev + g_star).scale_re(0.5) + (model.commutator_term(&g_star) + *f_curr).scale_re(0.5 * h)
}

/// Single-stage first-order update, kept for accuracy comparisons.
pub fn euler_step(model: &ModelConfig, h: f64, g_prev: &Matrix2, f_prev: &Matrix2) -> Matrix2 {
    *g_prev + (model.commutator_term(g_prev) + *f_prev).scale_re(h)
}

/// Run the Dyson solver.
///
/// `Reuse` and `NoReuse` produce bit-identical trajectories for a given seed;
/// they differ only in the evaluation counters and timings of the returned
/// report. `Deterministic` integrates the order-1 integrand by a composite
/// trapezoid rule and is only valid with `m_bar = 1`.
pub fn run_dyson(
    model: &ModelConfig,
    bath: &BathCorrelation,
    sampling: &SamplingConfig,
    mode: Mode,
    stepper: Stepper,
) -> Result<DysonRun> {
    sampling.validate()?;
    if mode == Mode::Deterministic {
        if sampling.m_bar != 1 {
            return Err(Error::Solver("deterministic mode requires m_bar = 1"));
        }
        return run_dyson_deterministic(model, bath, sampling, stepper);
    }
    let n = sampling.n_steps;
    let h = sampling.h;
    let mut report = CostReport::new(sampling.orders(), n as usize);
    let mut batches: Vec<SampleBatch> = Vec::with_capacity(n as usize);
    let mut trajectory = Vec::with_capacity(n as usize + 1);
    trajectory.push(model.observable);
    let mut g = model.observable;
    let mut f_prev = Matrix2::zero();

    for i in 1..=n {
        // Fresh samples for this step, bath functionals evaluated once.
        let mut batch = sample_fresh_dyson(sampling, i);
        if mode == Mode::Reuse {
            let started = clock::now();
            let mut evals = alloc::collections::BTreeMap::new();
            for group in batch.groups.iter_mut() {
                let mut pts: Vec<TimePoint> = Vec::with_capacity(group.m as usize + 1);
                for seq in &group.sequences {
                    pts.clear();
                    pts.extend_from_slice(seq.points());
                    pts.push(TimePoint::node(i as i32));
                    group.values.push(lb_full(bath, &pts, h));
                }
                *evals.entry(group.m).or_insert(0u64) += group.sequences.len() as u64;
            }
            let secs = clock::seconds_since(&started);
            let total: u64 = evals.values().sum();
            for (m, c) in evals {
                let share = if total == 0 {
                    0.0
                } else {
                    secs * c as f64 / total as f64
                };
                report.record_fresh(m, c, share, i as usize);
            }
        }
        batches.push(batch);

        // Assemble the level-i Monte Carlo sum over all stretched batches.
        let f_curr = assemble_level(model, bath, sampling, &batches, i, mode, &mut report);

        g = match stepper {
            Stepper::Heun => heun_step(model, h, &g, &f_prev, &f_curr),
            Stepper::Euler => euler_step(model, h, &g, &f_prev),
        };
        trajectory.push(g);
        f_prev = f_curr;
    }
    report.finalize_cumulative();
    Ok(DysonRun { trajectory, report })
}

/// Monte Carlo average of the integrand over the step-`level` sample set
/// `union_j I_(level-j)(fresh_j)`.
fn assemble_level(
    model: &ModelConfig,
    bath: &BathCorrelation,
    sampling: &SamplingConfig,
    batches: &[SampleBatch],
    level: u32,
    mode: Mode,
    report: &mut CostReport,
) -> Matrix2 {
    let h = sampling.h;
    let t_level = sampling.t(level as i64);
    let endpoint = TimePoint::node(level as i32);
    let mut sum = LevelSum::new();
    let mut pts: Vec<TimePoint> = Vec::new();
    for (j_idx, batch) in batches.iter().take(level as usize).enumerate() {
        let j = j_idx as u32 + 1;
        let stretch_by = (level - j) as i32;
        for group in &batch.groups {
            report.record_membership(group.m, group.sequences.len() as u64);
            let density = density_dyson(sampling, level, group.m);
            for (idx, seq) in group.sequences.iter().enumerate() {
                let stretched = seq.stretch(stretch_by);
                let lb = match mode {
                    Mode::Reuse => group.values[idx],
                    _ => {
                        let started = clock::now();
                        pts.clear();
                        pts.extend_from_slice(stretched.points());
                        pts.push(endpoint);
                        let v = lb_full(bath, &pts, h);
                        report.record_fresh(
                            group.m,
                            1,
                            clock::seconds_since(&started),
                            level as usize,
                        );
                        v
                    }
                };
                let u0 = u0_functional(model, -t_level, &stretched, t_level);
                let k = (model.coupling * u0).scale(lb);
                let sign = term_sign(group.m, stretched.count_negative());
                sum.acc += k.hermitized().scale_re(sign / density);
                sum.count += 1;
            }
        }
    }
    sum.mean()
}

// ---- deterministic (quadrature) mode -----------------------------------

/// Composite trapezoid value of the order-1 integral term at `t_n`. The
/// integrand jumps at the origin, so each side is integrated separately with
/// one-sided limits; cells touching the origin get extra subdivision.
fn quadrature_level(
    model: &ModelConfig,
    bath: &BathCorrelation,
    sampling: &SamplingConfig,
    n: u32,
) -> Matrix2 {
    if n == 0 {
        return Matrix2::zero();
    }
    let h = sampling.h;
    let t = sampling.t(n as i64);
    let kernel = |s: f64, neg: bool| -> Matrix2 {
        // U0(-t, (s), t) with branch selection at the origin by side.
        let left = bare_propagator_sided(model, s, neg, t, false);
        let right = bare_propagator_sided(model, -t, true, s, neg);
        let u0 = left * model.coupling * right;
        let lb = bath.b_star(s.abs() - t);
        let k = (model.coupling * u0).scale(lb);
        // m = 1: i^2 = -1; negative side carries (-1)^1.
        let sign = if neg { 1.0 } else { -1.0 };
        k.hermitized().scale_re(sign)
    };
    let mut acc = Matrix2::zero();
    for cell in -(n as i32)..(n as i32) {
        let neg = cell < 0;
        let lo = cell as f64 * h;
        let hi = (cell + 1) as f64 * h;
        let subdiv = if cell == -1 || cell == 0 { 16 } else { 4 };
        for q in 0..subdiv {
            let a = lo + (hi - lo) * q as f64 / subdiv as f64;
            let b = lo + (hi - lo) * (q + 1) as f64 / subdiv as f64;
            let fa = kernel(a, neg);
            let fb = kernel(b, neg);
            acc += (fa + fb).scale_re(0.5 * (b - a));
        }
    }
    acc
}

fn run_dyson_deterministic(
    model: &ModelConfig,
    bath: &BathCorrelation,
    sampling: &SamplingConfig,
    stepper: Stepper,
) -> Result<DysonRun> {
    let n = sampling.n_steps;
    let h = sampling.h;
    let mut report = CostReport::new(sampling.orders(), n as usize);
    let mut trajectory = Vec::with_capacity(n as usize + 1);
    trajectory.push(model.observable);
    let mut g = model.observable;
    let mut f_prev = Matrix2::zero();
    for i in 1..=n {
        let f_curr = quadrature_level(model, bath, sampling, i);
        g = match stepper {
            Stepper::Heun => heun_step(model, h, &g, &f_prev, &f_curr),
            Stepper::Euler => euler_step(model, h, &g, &f_prev),
        };
        trajectory.push(g);
        f_prev = f_curr;
    }
    report.finalize_cumulative();
    Ok(DysonRun { trajectory, report })
}

// ---- low-memory implementation ------------------------------------------

/// Reuse run with partial-sum storage: each fresh functional is folded into
/// the partial sums of every future step the moment it is computed, then
/// dropped. Only `N (N + 1) / 2` two-by-two matrices and one batch of
/// functionals are ever held.
pub fn run_dyson_lowmem(
    model: &ModelConfig,
    bath: &BathCorrelation,
    sampling: &SamplingConfig,
) -> Result<DysonLowMemRun> {
    sampling.validate()?;
    let n = sampling.n_steps as usize;
    let h = sampling.h;
    let mut report = CostReport::new(sampling.orders(), n);

    // Total sample count per level, from the allocation formulas alone.
    let batch_totals: Vec<u64> = (1..=n as u32)
        .map(|j| allocate_dyson(sampling, j).values().sum())
        .collect();
    let level_totals: Vec<u64> = (1..=n).map(|i| batch_totals[..i].iter().sum()).collect();

    // theta[i][k] for 1 <= k <= i <= N, flattened lower triangle.
    let tri = |i: usize, k: usize| -> usize { i * (i - 1) / 2 + (k - 1) };
    let mut theta = alloc::vec![Matrix2::zero(); n * (n + 1) / 2];

    let mut peak_live = 0usize;
    let mut max_batch = 0usize;
    let mut pts: Vec<TimePoint> = Vec::new();

    for k in 1..=n {
        let mut batch = sample_fresh_dyson(sampling, k as u32);
        max_batch = max_batch.max(batch.total_sequences());

        // Evaluate the whole fresh batch; these are the only live values.
        let started = clock::now();
        let mut live = 0usize;
        for group in batch.groups.iter_mut() {
            for seq in &group.sequences {
                pts.clear();
                pts.extend_from_slice(seq.points());
                pts.push(TimePoint::node(k as i32));
                group.values.push(lb_full(bath, &pts, h));
                live += 1;
            }
        }
        peak_live = peak_live.max(live);
        let secs = clock::seconds_since(&started);
        let batch_total: u64 = batch.groups.iter().map(|g| g.sequences.len() as u64).sum();
        for group in &batch.groups {
            let c = group.sequences.len() as u64;
            let share = if batch_total == 0 {
                0.0
            } else {
                secs * c as f64 / batch_total as f64
            };
            report.record_fresh(group.m, c, share, k);
        }

        // Fold each value into the partial sums of all future steps.
        for i in k..=n {
            let stretch_by = (i - k) as i32;
            let t_i = sampling.t(i as i64);
            let inv_m = 1.0 / level_totals[i - 1] as f64;
            let mut acc = Matrix2::zero();
            for group in &batch.groups {
                report.record_membership(group.m, group.sequences.len() as u64);
                let density = density_dyson(sampling, i as u32, group.m);
                for (idx, seq) in group.sequences.iter().enumerate() {
                    let stretched = seq.stretch(stretch_by);
                    let u0 = u0_functional(model, -t_i, &stretched, t_i);
                    let kmat = (model.coupling * u0).scale(group.values[idx]);
                    let sign = term_sign(group.m, stretched.count_negative());
                    acc += kmat.hermitized().scale_re(sign / density);
                }
            }
            theta[tri(i, k)] += acc.scale_re(inv_m);
        }
        // Batch dropped here; only the partial sums survive.
    }

    // Assemble the trajectory from the partial sums:
    // G_i = alpha~(G_{i-1}) + h/2 (alpha(F_{i-1}) + F_i).
    let alpha = |x: &Matrix2| *x + model.commutator_term(x).scale_re(h);
    let alpha_tilde = |x: &Matrix2| (*x + alpha(&alpha(x))).scale_re(0.5);
    let level_f = |i: usize| -> Matrix2 {
        let mut f = Matrix2::zero();
        for k in 1..=i {
            f += theta[tri(i, k)];
        }
        f
    };
    let mut trajectory = Vec::with_capacity(n + 1);
    trajectory.push(model.observable);
    let mut g = model.observable;
    let mut f_prev = Matrix2::zero();
    for i in 1..=n {
        let f_curr = level_f(i);
        g = alpha_tilde(&g) + (alpha(&f_prev) + f_curr).scale_re(0.5 * h);
        trajectory.push(g);
        f_prev = f_curr;
    }
    report.finalize_cumulative();
    Ok(DysonLowMemRun {
        trajectory,
        report,
        peak_live_functionals: peak_live,
        max_batch_sequences: max_batch,
        partial_sum_count: n * (n + 1) / 2,
    })
}

// ---- bare dQMC ------------------------------------------------------------

/// One-shot Monte Carlo estimate of `G(-t, t)` from the truncated series
/// expansion itself, without time stepping. Sequences of even order `m` are
/// sampled uniformly per order, with per-order counts proportional to
/// `|T^(m)| (m-1)!! B^(m/2)`; the estimator is generally not Hermitian at
/// finite sample counts.
pub fn bare_dqmc(
    model: &ModelConfig,
    bath: &BathCorrelation,
    sampling: &SamplingConfig,
    t: f64,
    samples: u64,
) -> Result<Matrix2> {
    sampling.validate()?;
    if t.is_nan() || t <= 0.0 {
        return Err(Error::Solver("bare_dqmc requires t > 0"));
    }
    let even_orders: Vec<u32> = (2..=sampling.m_bar + 1).step_by(2).collect();
    // Per-order weights |T^(m)| (m-1)!! B^(m/2) = (2t)^m B^(m/2) / m!!.
    let weights: Vec<f64> = even_orders
        .iter()
        .map(|&m| {
            (2.0 * t).powi(m as i32) * sampling.b_emp.powf(m as f64 / 2.0)
                / crate::util::double_factorial(m)
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let counts: Vec<u64> = weights
        .iter()
        .map(|w| crate::util::round_ties_even(samples as f64 * w / wsum) as u64)
        .collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Ok(bare_propagator(model, -t, t));
    }

    let mut acc = Matrix2::zero();
    let mut buf: Vec<f64> = Vec::new();
    for (ord_idx, &m) in even_orders.iter().enumerate() {
        let mut rng = crate::sampling::region_rng(sampling.seed, DOMAIN_BARE, 0, 0, m);
        let volume = (2.0 * t).powi(m as i32) / crate::util::factorial(m);
        let density = (counts[ord_idx] as f64 / total as f64) / volume;
        if counts[ord_idx] == 0 {
            continue;
        }
        for _ in 0..counts[ord_idx] {
            // Sorted uniforms; rejection only on exact ties and the origin.
            'draw: loop {
                buf.clear();
                for _ in 0..m {
                    buf.push(-t + 2.0 * t * rng.random::<f64>());
                }
                buf.sort_unstable_by(f64::total_cmp);
                for w in buf.windows(2) {
                    if w[0] == w[1] {
                        continue 'draw;
                    }
                }
                if buf.contains(&0.0) {
                    continue 'draw;
                }
                break;
            }
            let seq = TimeSequence::from_values(&buf, sampling.h);
            let lb = lb_full(bath, seq.points(), sampling.h);
            let u0 = u0_functional(model, -t, &seq, t);
            // Even order: i^m = (-1)^(m/2).
            let i_pow = if m % 4 == 0 { 1.0 } else { -1.0 };
            let neg = if seq.count_negative() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            acc += u0.scale(lb).scale_re(i_pow * neg / density);
        }
    }
    Ok(bare_propagator(model, -t, t) + acc.scale_re(1.0 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{build_bath, BathSpec};
    use crate::C64;

    fn model() -> ModelConfig {
        ModelConfig::new(1.0, 1.0).unwrap()
    }

    fn bath_small() -> BathCorrelation {
        build_bath(&BathSpec::with_default_cutoff(0.2, 2.5, 5.0, 60)).unwrap()
    }

    fn zero_bath() -> BathCorrelation {
        build_bath(&BathSpec::with_default_cutoff(0.0, 2.5, 5.0, 4)).unwrap()
    }

    #[test]
    fn rhs_term_is_hermitian_and_sign_correct() {
        let m = model();
        let b = bath_small();
        let seq = TimeSequence::from_values(&[0.3], 0.05);
        let term = dyson_rhs_term(&m, &b, &seq, 0.5);
        assert_eq!(term.hermiticity_defect(), 0.0);
        // Factor-by-factor assembly: K = W U0 B(0.3, 0.5), sign i^2 = -1.
        let u0 = u0_functional(&m, -0.5, &seq, 0.5);
        let km = (m.coupling * u0).scale(b.two_point(0.3, 0.5));
        let want = km.hermitized().scale_re(-1.0);
        assert!(term.max_abs_diff(&want) < 1e-14);
        // One negative point flips the sign.
        let seq_neg = TimeSequence::from_values(&[-0.3], 0.05);
        let term_neg = dyson_rhs_term(&m, &b, &seq_neg, 0.5);
        let u0n = u0_functional(&m, -0.5, &seq_neg, 0.5);
        let kn = (m.coupling * u0n).scale(b.two_point(-0.3, 0.5));
        let wantn = kn.hermitized().scale_re(1.0);
        assert!(term_neg.max_abs_diff(&wantn) < 1e-14);
    }

    #[test]
    fn first_step_predictor_is_the_free_step() {
        // With an empty level-0 sample set and zero coupling, one step of the
        // solver is exactly the two-stage free update.
        let m = model();
        let b = zero_bath();
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.05, 1, 5).unwrap();
        let run = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        let g0 = m.observable;
        let g_star = g0 + m.commutator_term(&g0).scale_re(cfg.h);
        let want = (g0 + g_star).scale_re(0.5) + m.commutator_term(&g_star).scale_re(0.5 * cfg.h);
        assert!(run.trajectory[1].max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn commuting_model_stays_put() {
        // delta = 0 makes H_s, W_s, O_s simultaneously diagonal: the
        // commutator vanishes and the trajectory is constant.
        let m = ModelConfig::new(1.0, 0.0).unwrap();
        let b = zero_bath();
        let cfg = SamplingConfig::new(0.1, 5, 20, 0.05, 12, 5).unwrap();
        let run = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        for g in &run.trajectory {
            assert!(g.max_abs_diff(&Matrix2::sigma_z()) < 1e-15);
        }
    }

    #[test]
    fn reuse_and_no_reuse_trajectories_are_bit_identical() {
        let m = model();
        let b = bath_small();
        let cfg = SamplingConfig::new(0.1, 5, 25, 0.05, 8, 99).unwrap();
        let a = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        let c = run_dyson(&m, &b, &cfg, Mode::NoReuse, Stepper::Heun).unwrap();
        for (x, y) in a.trajectory.iter().zip(&c.trajectory) {
            for r in 0..2 {
                for s in 0..2 {
                    assert_eq!(x.e[r][s].re.to_bits(), y.e[r][s].re.to_bits());
                    assert_eq!(x.e[r][s].im.to_bits(), y.e[r][s].im.to_bits());
                }
            }
        }
        // Counters differ: no-reuse evaluates every membership.
        for m_ord in cfg.orders() {
            let ra = &a.report.per_m[&m_ord];
            let rc = &c.report.per_m[&m_ord];
            assert_eq!(ra.total_count, rc.total_count);
            assert_eq!(rc.fresh_count, rc.total_count);
            assert!(ra.fresh_count <= rc.fresh_count);
        }
    }

    #[test]
    fn trajectories_stay_hermitian_at_any_sample_count() {
        let m = model();
        let b = bath_small();
        for m0 in [1u32, 7, 40] {
            let cfg = SamplingConfig::new(0.1, 5, m0, 0.05, 6, m0 as u64).unwrap();
            let run = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
            for g in &run.trajectory {
                assert!(g.hermiticity_defect() <= 1e-12);
            }
        }
    }

    #[test]
    fn counters_match_allocation_sums() {
        let m = model();
        let b = bath_small();
        let cfg = SamplingConfig::new(0.1, 5, 30, 0.05, 10, 3).unwrap();
        let run = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        for m_ord in cfg.orders() {
            let fresh_expected: u64 = (1..=cfg.n_steps)
                .map(|j| allocate_dyson(&cfg, j)[&m_ord])
                .sum();
            let total_expected: u64 = (1..=cfg.n_steps)
                .map(|i| {
                    (1..=i)
                        .map(|j| allocate_dyson(&cfg, j)[&m_ord])
                        .sum::<u64>()
                })
                .sum();
            let e = &run.report.per_m[&m_ord];
            assert_eq!(e.fresh_count, fresh_expected);
            assert_eq!(e.total_count, total_expected);
        }
    }

    #[test]
    fn lowmem_matches_reuse_run() {
        let m = model();
        let b = bath_small();
        let cfg = SamplingConfig::new(0.1, 5, 20, 0.05, 10, 17).unwrap();
        let reuse = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        let low = run_dyson_lowmem(&m, &b, &cfg).unwrap();
        for (x, y) in reuse.trajectory.iter().zip(&low.trajectory) {
            assert!(x.max_abs_diff(y) <= 1e-12);
        }
        assert!(low.peak_live_functionals <= low.max_batch_sequences);
        assert_eq!(low.partial_sum_count, 55);
        assert_eq!(low.report.fresh_counts(), reuse.report.fresh_counts());
        assert_eq!(low.report.total_counts(), reuse.report.total_counts());
    }

    #[test]
    fn alpha_tilde_preserves_hermiticity() {
        let m = model();
        let h = 0.05;
        let alpha = |x: &Matrix2| *x + m.commutator_term(x).scale_re(h);
        let x = Matrix2::new(
            C64::new(0.3, 0.0),
            C64::new(0.1, -0.7),
            C64::new(0.1, 0.7),
            C64::new(-0.3, 0.0),
        );
        let at = (x + alpha(&alpha(&x))).scale_re(0.5);
        assert_eq!(at.hermiticity_defect(), 0.0);
    }

    #[test]
    fn bare_dqmc_zero_coupling_is_exact() {
        let m = model();
        let b = zero_bath();
        let cfg = SamplingConfig::new(0.1, 5, 10, 0.05, 10, 9).unwrap();
        let t = 0.7;
        let got = bare_dqmc(&m, &b, &cfg, t, 500).unwrap();
        let want = bare_propagator(&m, -t, t);
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn bare_dqmc_hermiticity_violation_shrinks_with_samples() {
        let m = model();
        let b = bath_small();
        let t = 0.4;
        let sizes = [40u64, 160, 640, 2560, 10240];
        let mut defects = Vec::new();
        for (k, &s) in sizes.iter().enumerate() {
            // Average the defect over independent seeds to damp noise.
            let mut d = 0.0;
            for seed in 0..6u64 {
                let cfg =
                    SamplingConfig::new(0.1, 3, 10, 0.05, 10, 1000 + seed + k as u64).unwrap();
                d += bare_dqmc(&m, &b, &cfg, t, s).unwrap().hermiticity_defect();
            }
            defects.push(d / 6.0);
        }
        assert!(
            defects.last().unwrap() < &(defects[0] * 0.5),
            "defects: {defects:?}"
        );
    }

    #[test]
    fn deterministic_mode_requires_order_one() {
        let m = model();
        let b = bath_small();
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.05, 4, 1).unwrap();
        assert!(run_dyson(&m, &b, &cfg, Mode::Deterministic, Stepper::Heun).is_err());
    }

    /// Test-local reference integrator for the order-1 equation: classical
    /// RK4 in time with a dense Simpson rule on each side of the origin.
    /// Shares nothing with the solver's stepping or quadrature code.
    fn reference_trajectory(
        m: &ModelConfig,
        b: &BathCorrelation,
        t_max: f64,
        steps: u32,
        s_nodes: u32,
    ) -> Matrix2 {
        let integrand = |s: f64, neg: bool, t: f64| -> Matrix2 {
            let left = bare_propagator_sided(m, s, neg, t, false);
            let right = bare_propagator_sided(m, -t, true, s, neg);
            let u0 = left * m.coupling * right;
            let k = (m.coupling * u0).scale(b.b_star(s.abs() - t));
            k.hermitized().scale_re(if neg { 1.0 } else { -1.0 })
        };
        let simpson_side = |t: f64, neg: bool| -> Matrix2 {
            // Even number of panels over [0, t] (mapped by sign).
            let n = s_nodes;
            let width = t / n as f64;
            let mut acc = Matrix2::zero();
            for i in 0..n {
                let a = i as f64 * width;
                let mid = a + 0.5 * width;
                let c = a + width;
                let map = |x: f64| if neg { -x } else { x };
                let f = |x: f64| integrand(map(x), neg, t);
                acc += (f(a) + f(mid).scale_re(4.0) + f(c)).scale_re(width / 6.0);
            }
            acc
        };
        let rhs = |t: f64, g: &Matrix2| -> Matrix2 {
            let q = if t > 0.0 {
                simpson_side(t, true) + simpson_side(t, false)
            } else {
                Matrix2::zero()
            };
            m.commutator_term(g) + q
        };
        let dt = t_max / steps as f64;
        let mut g = m.observable;
        let mut t = 0.0;
        for _ in 0..steps {
            let k1 = rhs(t, &g);
            let k2 = rhs(t + 0.5 * dt, &(g + k1.scale_re(0.5 * dt)));
            let k3 = rhs(t + 0.5 * dt, &(g + k2.scale_re(0.5 * dt)));
            let k4 = rhs(t + dt, &(g + k3.scale_re(dt)));
            g += (k1 + k2.scale_re(2.0) + k3.scale_re(2.0) + k4).scale_re(dt / 6.0);
            t += dt;
        }
        g
    }

    #[test]
    fn deterministic_heun_matches_dense_quadrature_oracle() {
        let m = model();
        let b = bath_small();
        let reference = reference_trajectory(&m, &b, 1.0, 64, 64);
        let run_at = |h: f64, n: u32| {
            let cfg = SamplingConfig::new(0.1, 1, 10, h, n, 1).unwrap();
            run_dyson(&m, &b, &cfg, Mode::Deterministic, Stepper::Heun)
                .unwrap()
                .trajectory
                .last()
                .cloned()
                .unwrap()
        };
        let err_coarse = run_at(0.1, 10).max_abs_diff(&reference);
        let err_fine = run_at(0.05, 20).max_abs_diff(&reference);
        // Second-order scheme: the defect against the independent reference
        // drops by roughly four per halving.
        assert!(err_coarse < 0.05, "coarse error {err_coarse}");
        let ratio = err_coarse / err_fine;
        assert!(ratio > 2.5 && ratio < 6.5, "ratio = {ratio}");
    }

    #[test]
    fn bare_dqmc_agrees_with_one_solver_step_statistically() {
        // At t = h with truncation order 1/2 the two estimators target the
        // same series prefix; compare their means within three combined
        // standard errors over independent seeds.
        let m = model();
        let b = bath_small();
        let h = 0.05;
        let reps = 48u64;
        let mut dyson_vals = Vec::new();
        let mut bare_vals = Vec::new();
        for seed in 0..reps {
            let cfg = SamplingConfig::new(0.1, 1, 60, h, 1, 31 + seed).unwrap();
            let run = run_dyson(&m, &b, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
            dyson_vals.push(run.trajectory[1].expect_ground().re);
            let gb = bare_dqmc(&m, &b, &cfg, h, 60).unwrap();
            bare_vals.push(gb.expect_ground().re);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sem = |v: &[f64]| {
            let mu = mean(v);
            let var = v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() as f64 - 1.0);
            (var / v.len() as f64).sqrt()
        };
        let (md, mb) = (mean(&dyson_vals), mean(&bare_vals));
        let combined = (sem(&dyson_vals).powi(2) + sem(&bare_vals).powi(2)).sqrt();
        // Allow the O(h^3) one-step discretization bias alongside the
        // statistical window.
        let slack = 3.0 * combined + 5.0 * h.powi(3);
        assert!(
            (md - mb).abs() <= slack,
            "dyson {md}, bare {mb}, window {slack}"
        );
    }
}
