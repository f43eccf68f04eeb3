//! Inchworm solver for the full propagator `G(s_i, s_f)` on the triangular
//! grid, with linked-cluster bath functionals and cross-step reuse.
//!
//! Only nodes in the lower-left triangle (`j <= -1`, `0 <= k <= -j`) are
//! computed by time stepping; the rest of the grid follows from the jump
//! condition at the origin, conjugate symmetry, and shift invariance. Sample
//! regions are keyed by `(p, k)`: first point in `[t_p, t_{p+1}]`, endpoint
//! `t_k`. Fresh samples are drawn only where a stretched copy of an earlier
//! region cannot reach; every other membership carries the functional value
//! of its ancestor along the anti-diagonal, and regions on the positive side
//! take the complex conjugate of their mirror at `k = 0`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_complex::Complex64;
#[allow(unused_imports)]
use num_traits::Float;

use crate::bath::BathCorrelation;
use crate::costmodel::CostReport;
use crate::diagrams::lb_connected;
use crate::grid::{GridView, Node, PropagatorGrid};
use crate::matrix::Matrix2;
use crate::sampling::{density_inch, sample_fresh_inch, SampleBatch, SamplingConfig};
use crate::spinsys::{u_interp, ModelConfig};
use crate::time::{TimePoint, TimeSequence};
use crate::{clock, Error, Mode, Result, Stepper, C64};

/// Where a region's sequences and functional values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Drawn fresh for this region.
    Fresh,
    /// Stretched from the fresh batch of an ancestor region on the same
    /// anti-diagonal.
    StretchedFrom(i32, i32),
    /// Rigid positive shift of a `k = 0` region with conjugated values.
    ShiftedConjugateFrom(i32, i32),
}

/// One slice of a region's sample set, referencing the fresh batch it was
/// built from.
#[derive(Debug, Clone)]
struct Segment {
    provenance: Provenance,
    source: (i32, i32),
    /// Stretch steps away from the origin (anti-diagonal reuse).
    stretch: i32,
    /// Rigid shift steps (positive-side regions).
    shift: i32,
    /// Functional values per order group; `None` reads the source batch
    /// (reuse), `Some` holds per-membership reevaluations (reuse-free mode).
    owned_values: Option<Vec<Vec<C64>>>,
}

/// Sample sets and cached linked functionals for every region the evolution
/// touches. Sequences are materialized lazily from the fresh batches; the
/// cached values are the persistent part.
pub struct InchwormSampleStore {
    fresh: BTreeMap<(i32, i32), SampleBatch>,
    segments: BTreeMap<(i32, i32), Vec<Segment>>,
    report: CostReport,
    n_steps: u32,
}

/// Head of the anti-diagonal arrow through `(p, k)`: the region the fresh
/// ancestry of `(p, k)` starts at.
fn arrow_head(p: i32, k: i32) -> (i32, i32) {
    let d = p + k;
    if d >= 0 {
        (-1, d + 1)
    } else {
        (d, 0)
    }
}

/// Evaluation step a region's fresh work is attributed to: the outer
/// iteration that first touches it.
fn first_use_step(p: i32, k: i32) -> usize {
    ((-p).max(k)) as usize
}

/// Build the sample store: draw fresh batches for every left-column region,
/// evaluate their linked functionals once, and wire up the stretched and
/// conjugated memberships. With `reuse` off, every membership of every
/// left-column region is reevaluated on its own (stretched) sequence and the
/// counters record one evaluation per membership.
pub fn prepare_samples(
    bath: &BathCorrelation,
    cfg: &SamplingConfig,
    reuse: bool,
) -> Result<InchwormSampleStore> {
    cfg.validate()?;
    let n = cfg.n_steps as i32;
    let h = cfg.h;
    let mut report = CostReport::new(cfg.orders(), cfg.n_steps as usize);
    let mut fresh: BTreeMap<(i32, i32), SampleBatch> = BTreeMap::new();

    // Fresh batches with their one-time functional evaluations.
    for p in -n..=-1 {
        for k in 0..=n {
            let mut batch = sample_fresh_inch(cfg, p, k);
            let step = first_use_step(p, k);
            let started = clock::now();
            let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
            let mut pts: Vec<TimePoint> = Vec::new();
            for group in batch.groups.iter_mut() {
                for seq in &group.sequences {
                    pts.clear();
                    pts.extend_from_slice(seq.points());
                    pts.push(TimePoint::node(k));
                    group.values.push(lb_connected(bath, &pts, h));
                }
                *counts.entry(group.m).or_insert(0) += group.sequences.len() as u64;
            }
            let secs = clock::seconds_since(&started);
            let total: u64 = counts.values().sum();
            if reuse {
                for (m, c) in counts {
                    let share = if total == 0 {
                        0.0
                    } else {
                        secs * c as f64 / total as f64
                    };
                    report.record_fresh(m, c, share, step);
                }
            }
            fresh.insert((p, k), batch);
        }
    }

    // Region composition: ancestors along the arrows, mirrors on the right.
    let mut segments: BTreeMap<(i32, i32), Vec<Segment>> = BTreeMap::new();
    for k in 0..=n {
        for p in -n..k {
            let mut segs = Vec::new();
            if p <= -1 {
                let (_, head_k) = arrow_head(p, k);
                for kp in head_k..=k {
                    let source = (p + k - kp, kp);
                    let stretch = k - kp;
                    let provenance = if stretch == 0 {
                        Provenance::Fresh
                    } else {
                        Provenance::StretchedFrom(source.0, source.1)
                    };
                    let mut seg = Segment {
                        provenance,
                        source,
                        stretch,
                        shift: 0,
                        owned_values: None,
                    };
                    let batch = &fresh[&source];
                    for group in &batch.groups {
                        report.record_membership(group.m, group.sequences.len() as u64);
                    }
                    if !reuse {
                        // Reevaluate each stretched membership; the counters
                        // record every one of them as a fresh evaluation.
                        let step = first_use_step(p, k);
                        let started = clock::now();
                        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
                        let mut owned = Vec::new();
                        let mut pts: Vec<TimePoint> = Vec::new();
                        for group in &batch.groups {
                            let mut vals = Vec::with_capacity(group.sequences.len());
                            for seq in &group.sequences {
                                let stretched = seq.stretch(stretch);
                                pts.clear();
                                pts.extend_from_slice(stretched.points());
                                pts.push(TimePoint::node(k));
                                vals.push(lb_connected(bath, &pts, h));
                            }
                            *counts.entry(group.m).or_insert(0) += group.sequences.len() as u64;
                            owned.push(vals);
                        }
                        let secs = clock::seconds_since(&started);
                        let total: u64 = counts.values().sum();
                        for (m, c) in counts {
                            let share = if total == 0 {
                                0.0
                            } else {
                                secs * c as f64 / total as f64
                            };
                            report.record_fresh(m, c, share, step);
                        }
                        seg.owned_values = Some(owned);
                    }
                    segs.push(seg);
                }
            } else {
                // Positive-side region: rigid shift of its k = 0 mirror with
                // conjugated values. This symmetry assignment is shared by
                // both modes and is not an evaluation.
                segs.push(Segment {
                    provenance: Provenance::ShiftedConjugateFrom(p - k, 0),
                    source: (p - k, 0),
                    stretch: 0,
                    shift: k,
                    owned_values: None,
                });
            }
            segments.insert((p, k), segs);
        }
    }

    Ok(InchwormSampleStore {
        fresh,
        segments,
        report,
        n_steps: cfg.n_steps,
    })
}

impl InchwormSampleStore {
    /// Number of sequences in region `(p, k)`, across all orders.
    pub fn region_len(&self, p: i32, k: i32) -> u64 {
        self.segments[&(p, k)]
            .iter()
            .map(|s| self.fresh[&s.source].total_sequences() as u64)
            .sum()
    }

    /// Per-order sequence counts in region `(p, k)`.
    pub fn region_counts(&self, p: i32, k: i32) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for seg in &self.segments[&(p, k)] {
            for group in &self.fresh[&seg.source].groups {
                *out.entry(group.m).or_insert(0) += group.sequences.len() as u64;
            }
        }
        out
    }

    /// Provenance tags of the segments composing region `(p, k)`.
    pub fn region_provenance(&self, p: i32, k: i32) -> Vec<Provenance> {
        self.segments[&(p, k)]
            .iter()
            .map(|s| s.provenance)
            .collect()
    }

    /// Visit every member of region `(p, k)` in deterministic order:
    /// segments oldest-ancestor first, orders ascending within a segment.
    /// The closure receives the order, the materialized sequence, and the
    /// cached functional value.
    ///
    /// A negative endpoint index (only `k = -1` arises, as the predictor
    /// level of the step across the origin) is served by translating the
    /// `(p - k, 0)` region toward negative time; all its points stay on the
    /// non-positive side, so the functional values carry over unchanged.
    /// Like the positive-side mirror, this is a symmetry of the
    /// discretization shared by both modes, not a counted reuse.
    pub fn for_each_member(&self, p: i32, k: i32, mut f: impl FnMut(u32, &TimeSequence, C64)) {
        if k < 0 {
            let source = (p - k, 0);
            for seg in &self.segments[&source] {
                let batch = &self.fresh[&seg.source];
                for (gi, group) in batch.groups.iter().enumerate() {
                    for (idx, seq) in group.sequences.iter().enumerate() {
                        let transported = seq.stretch(seg.stretch).shift(k);
                        let value = match &seg.owned_values {
                            Some(owned) => owned[gi][idx],
                            None => group.values[idx],
                        };
                        f(group.m, &transported, value);
                    }
                }
            }
            return;
        }
        for seg in &self.segments[&(p, k)] {
            let batch = &self.fresh[&seg.source];
            for (gi, group) in batch.groups.iter().enumerate() {
                for (idx, seq) in group.sequences.iter().enumerate() {
                    let transported = if seg.shift != 0 {
                        seq.shift(seg.shift)
                    } else {
                        seq.stretch(seg.stretch)
                    };
                    let value = match (&seg.owned_values, seg.provenance) {
                        (Some(owned), _) => owned[gi][idx],
                        (None, Provenance::ShiftedConjugateFrom(..)) => group.values[idx].conj(),
                        (None, _) => group.values[idx],
                    };
                    f(group.m, &transported, value);
                }
            }
        }
    }

    pub fn report(&self) -> &CostReport {
        &self.report
    }

    pub fn n_steps(&self) -> u32 {
        self.n_steps
    }
}

/// One integrand term of the inchworm equation (without the sign of the
/// outer `sgn(s_f)` step factor): `i^{m+1} (-1)^{#neg} W U(s, ...) L^c`.
pub fn inchworm_rhs_term(
    model: &ModelConfig,
    view: &GridView,
    j: Node,
    seq: &TimeSequence,
    end: Node,
    lb_c: C64,
) -> Matrix2 {
    let m = seq.len() as u32;
    debug_assert!(m % 2 == 1);
    let i_pow = if (m + 1) % 4 == 0 { 1.0 } else { -1.0 };
    let neg = if seq.count_negative() % 2 == 0 {
        1.0
    } else {
        -1.0
    };
    let u = u_interp(model, view, j, seq, end);
    (model.coupling * u).scale(lb_c).scale_re(i_pow * neg)
}

fn one_sided_free(model: &ModelConfig, x: &Matrix2) -> Matrix2 {
    (model.hamiltonian() * *x).scale(Complex64::new(0.0, 1.0))
}

fn sgn_of_index(idx: i32, zero_is_plus: bool) -> f64 {
    if idx > 0 || (idx == 0 && zero_is_plus) {
        1.0
    } else {
        -1.0
    }
}

/// Node used as the integration endpoint at index `idx` during a step whose
/// target is `k`: index 0 resolves to `0^+` when it is the predictor level of
/// a step crossing zero, and to `0^-` when it is the step target.
fn level_node(idx: i32, zero_is_plus: bool) -> Node {
    Node::from_index(idx, zero_is_plus)
}

/// Monte Carlo stage sum over the union of regions `(p, level)` for
/// `p = j..=level-1`, at the given endpoint node.
fn stage_sum(
    model: &ModelConfig,
    cfg: &SamplingConfig,
    store: &InchwormSampleStore,
    view: &GridView,
    j: i32,
    level: i32,
    end: Node,
) -> Matrix2 {
    let j_node = Node::from_index(j, false);
    let mut acc = Matrix2::zero();
    let mut count = 0u64;
    for p in j..level {
        store.for_each_member(p, level, |m, seq, lb_c| {
            let density = density_inch(cfg, j, level, m);
            acc += inchworm_rhs_term(model, view, j_node, seq, end, lb_c).scale_re(1.0 / density);
            count += 1;
        });
    }
    if count == 0 {
        Matrix2::zero()
    } else {
        acc.scale_re(1.0 / count as f64)
    }
}

/// Two-stage step computing `G_{j,k}` from `G_{j,k-1}`. The predictor level
/// `k-1` resolves a zero index to `0^+` (stepping rightward off the jump),
/// the corrector target resolves `k = 0` to `0^-`.
pub fn inchworm_step(
    model: &ModelConfig,
    cfg: &SamplingConfig,
    store: &InchwormSampleStore,
    grid: &PropagatorGrid,
    j: i32,
    k: i32,
    stepper: Stepper,
) -> Matrix2 {
    assert!(
        j <= -1 && k > j && k >= 0,
        "step outside the computed triangle"
    );
    let h = cfg.h;
    let j_node = Node::from_index(j, false);
    let prev_node = level_node(k - 1, true);
    let target_node = level_node(k, false);
    let g_prev = grid.node_value(j_node, prev_node);

    let sgn1 = sgn_of_index(k - 1, true);
    let plain = GridView::plain(grid);
    let f1 = if k - 1 > j {
        stage_sum(model, cfg, store, &plain, j, k - 1, prev_node)
    } else {
        Matrix2::zero()
    };
    let g_star = g_prev + (one_sided_free(model, &g_prev) + f1).scale_re(sgn1 * h);

    if stepper == Stepper::Euler {
        return g_star;
    }

    let sgn2 = sgn_of_index(k, false);
    let view2 = GridView::with_override(grid, j_node, target_node, g_star);
    let f2 = stage_sum(model, cfg, store, &view2, j, k, target_node);
    (g_prev + g_star).scale_re(0.5) + (one_sided_free(model, &g_star) + f2).scale_re(0.5 * sgn2 * h)
}

/// Populate the whole grid. Each outer iteration computes one new
/// anti-diagonal of the lower-left triangle by stepping, then fills the rest
/// of that diagonal by the jump condition, conjugate symmetry, and shift
/// invariance.
pub fn evolve(
    model: &ModelConfig,
    cfg: &SamplingConfig,
    store: &InchwormSampleStore,
    stepper: Stepper,
) -> Result<PropagatorGrid> {
    let n = cfg.n_steps as i32;
    let mut grid = PropagatorGrid::new(cfg.n_steps, cfg.h, model.observable);
    for outer in 1..=n {
        let j = -outer;
        let j_node = Node::Neg(outer as u32);
        // Blue dots: across the origin.
        let g0 = inchworm_step(model, cfg, store, &grid, j, 0, stepper);
        grid.set(j_node, Node::ZeroMinus, g0);
        let g0p = model.observable * g0;
        grid.set(j_node, Node::ZeroPlus, g0p);
        grid.set(Node::ZeroPlus, Node::Pos(outer as u32), g0.adjoint());
        grid.set(Node::ZeroMinus, Node::Pos(outer as u32), g0p.adjoint());
        // Quadrant IV interior, mirrored into quadrant II by conjugation.
        for l in 1..=outer {
            let g = inchworm_step(model, cfg, store, &grid, j, l, stepper);
            grid.set(j_node, Node::Pos(l as u32), g);
            if l < outer {
                grid.set(Node::Neg(l as u32), Node::Pos(outer as u32), g.adjoint());
            }
        }
        // Quadrants III and I by shift invariance.
        for l2 in 1..=(n - outer) {
            grid.set(Node::Neg((outer + l2) as u32), Node::Neg(l2 as u32), g0);
            grid.set(
                Node::Pos(l2 as u32),
                Node::Pos((outer + l2) as u32),
                grid.node_value(Node::ZeroPlus, Node::Pos(outer as u32)),
            );
        }
    }
    Ok(grid)
}

/// Result of an inchworm run: the populated grid, the observable trajectory
/// `<0| G_{-n,n} |0>`, and the evaluation counters.
#[derive(Debug)]
pub struct InchwormRun {
    pub grid: PropagatorGrid,
    pub trajectory: Vec<C64>,
    pub report: CostReport,
}

/// Run the inchworm solver. `Reuse` and `NoReuse` yield bit-identical grids
/// for one seed; `Deterministic` (with `m_bar = 1`) replaces the stage sums
/// by composite trapezoid quadrature.
pub fn run_inchworm(
    model: &ModelConfig,
    bath: &BathCorrelation,
    cfg: &SamplingConfig,
    mode: Mode,
    stepper: Stepper,
) -> Result<InchwormRun> {
    cfg.validate()?;
    match mode {
        Mode::Deterministic => {
            if cfg.m_bar != 1 {
                return Err(Error::Solver("deterministic mode requires m_bar = 1"));
            }
            let mut report = CostReport::new(cfg.orders(), cfg.n_steps as usize);
            let grid = evolve_deterministic(model, bath, cfg, stepper)?;
            report.finalize_cumulative();
            Ok(InchwormRun {
                trajectory: observable_path(&grid),
                grid,
                report,
            })
        }
        _ => {
            let store = prepare_samples(bath, cfg, mode == Mode::Reuse)?;
            let grid = evolve(model, cfg, &store, stepper)?;
            let mut report = store.report.clone();
            report.finalize_cumulative();
            Ok(InchwormRun {
                trajectory: observable_path(&grid),
                grid,
                report,
            })
        }
    }
}

/// `<0| G_{-n,n} |0>` for `n = 0..N`; the `n = 0` entry is the observable's
/// ground expectation.
pub fn observable_path(grid: &PropagatorGrid) -> Vec<C64> {
    let n = grid.n_steps();
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(
        grid.node_value(Node::ZeroMinus, Node::ZeroPlus)
            .expect_ground(),
    );
    for k in 1..=n {
        out.push(grid.node_value(Node::Neg(k), Node::Pos(k)).expect_ground());
    }
    out
}

// ---- deterministic (quadrature) mode -----------------------------------

/// Trapezoid value of the order-1 stage integral over `[t_j, t_level]`.
fn stage_quadrature(
    model: &ModelConfig,
    bath: &BathCorrelation,
    view: &GridView,
    j: i32,
    level: i32,
    end: Node,
    h: f64,
) -> Matrix2 {
    let j_node = Node::from_index(j, false);
    let t_end = end.value(h);
    let kernel = |s: f64, neg_side: bool| -> Matrix2 {
        // Quadrature nodes land exactly on grid nodes at cell edges; resolve
        // those to direct corner lookups (with the cell's side at zero).
        let rounded = (s / h).round();
        let on_node = s == rounded * h;
        let (left, right) = if on_node {
            let node = Node::from_index(rounded as i32, !neg_side);
            (view.corner(node, end), view.corner(j_node, node))
        } else {
            (
                view.interp_real_node(s, end),
                view.interp_node_real(j_node, s),
            )
        };
        let u = left * model.coupling * right;
        let lb = bath.b_star(s.abs() - t_end.abs());
        // Order 1: i^2 = -1, one extra sign when the point is negative.
        let sign = if s < 0.0 || (s == 0.0 && neg_side) {
            1.0
        } else {
            -1.0
        };
        (model.coupling * u).scale(lb).scale_re(sign)
    };
    let mut acc = Matrix2::zero();
    for cell in j..level {
        let neg_side = cell < 0;
        let lo = cell as f64 * h;
        let hi = (cell + 1) as f64 * h;
        let subdiv = if cell == -1 || cell == 0 { 16 } else { 4 };
        for q in 0..subdiv {
            let a = lo + (hi - lo) * q as f64 / subdiv as f64;
            let b = lo + (hi - lo) * (q + 1) as f64 / subdiv as f64;
            acc += (kernel(a, neg_side) + kernel(b, neg_side)).scale_re(0.5 * (b - a));
        }
    }
    acc
}

fn deterministic_step(
    model: &ModelConfig,
    bath: &BathCorrelation,
    grid: &PropagatorGrid,
    j: i32,
    k: i32,
    h: f64,
    stepper: Stepper,
) -> Matrix2 {
    let j_node = Node::from_index(j, false);
    let prev_node = level_node(k - 1, true);
    let target_node = level_node(k, false);
    let g_prev = grid.node_value(j_node, prev_node);
    let sgn1 = sgn_of_index(k - 1, true);
    let plain = GridView::plain(grid);
    let f1 = if k - 1 > j {
        stage_quadrature(model, bath, &plain, j, k - 1, prev_node, h)
    } else {
        Matrix2::zero()
    };
    let g_star = g_prev + (one_sided_free(model, &g_prev) + f1).scale_re(sgn1 * h);
    if stepper == Stepper::Euler {
        return g_star;
    }
    let sgn2 = sgn_of_index(k, false);
    let view2 = GridView::with_override(grid, j_node, target_node, g_star);
    let f2 = stage_quadrature(model, bath, &view2, j, k, target_node, h);
    (g_prev + g_star).scale_re(0.5) + (one_sided_free(model, &g_star) + f2).scale_re(0.5 * sgn2 * h)
}

fn evolve_deterministic(
    model: &ModelConfig,
    bath: &BathCorrelation,
    cfg: &SamplingConfig,
    stepper: Stepper,
) -> Result<PropagatorGrid> {
    let n = cfg.n_steps as i32;
    let h = cfg.h;
    let mut grid = PropagatorGrid::new(cfg.n_steps, h, model.observable);
    for outer in 1..=n {
        let j = -outer;
        let j_node = Node::Neg(outer as u32);
        let g0 = deterministic_step(model, bath, &grid, j, 0, h, stepper);
        grid.set(j_node, Node::ZeroMinus, g0);
        let g0p = model.observable * g0;
        grid.set(j_node, Node::ZeroPlus, g0p);
        grid.set(Node::ZeroPlus, Node::Pos(outer as u32), g0.adjoint());
        grid.set(Node::ZeroMinus, Node::Pos(outer as u32), g0p.adjoint());
        for l in 1..=outer {
            let g = deterministic_step(model, bath, &grid, j, l, h, stepper);
            grid.set(j_node, Node::Pos(l as u32), g);
            if l < outer {
                grid.set(Node::Neg(l as u32), Node::Pos(outer as u32), g.adjoint());
            }
        }
        for l2 in 1..=(n - outer) {
            grid.set(Node::Neg((outer + l2) as u32), Node::Neg(l2 as u32), g0);
            grid.set(
                Node::Pos(l2 as u32),
                Node::Pos((outer + l2) as u32),
                grid.node_value(Node::ZeroPlus, Node::Pos(outer as u32)),
            );
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{build_bath, BathSpec};
    use crate::diagrams::lb_connected;
    use crate::sampling::allocate_inch;

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
    fn head_regions_are_purely_fresh() {
        let cfg = SamplingConfig::new(0.1, 3, 15, 0.1, 4, 3).unwrap();
        let bath = bath_small();
        let store = prepare_samples(&bath, &cfg, true).unwrap();
        assert_eq!(
            store.region_provenance(-1, 0),
            alloc::vec![Provenance::Fresh]
        );
        assert_eq!(
            store.region_provenance(-2, 0),
            alloc::vec![Provenance::Fresh]
        );
        assert_eq!(
            store.region_provenance(-1, 3),
            alloc::vec![Provenance::Fresh]
        );
    }

    #[test]
    fn interior_region_unions_its_ancestors() {
        let cfg = SamplingConfig::new(0.2, 5, 40, 0.1, 4, 3).unwrap();
        let bath = bath_small();
        let store = prepare_samples(&bath, &cfg, true).unwrap();
        // (-3, 2) sits on the arrow through (-1, 0): ancestors (-1,0), (-2,1), (-3,2).
        let prov = store.region_provenance(-3, 2);
        assert_eq!(
            prov,
            alloc::vec![
                Provenance::StretchedFrom(-1, 0),
                Provenance::StretchedFrom(-2, 1),
                Provenance::Fresh,
            ]
        );
        let expected: u64 = [(-1, 0), (-2, 1), (-3, 2)]
            .iter()
            .map(|&(p, k)| allocate_inch(&cfg, p, k).values().sum::<u64>())
            .sum();
        assert_eq!(store.region_len(-3, 2), expected);
    }

    #[test]
    fn stretched_members_live_in_their_region() {
        let cfg = SamplingConfig::new(0.2, 5, 30, 0.1, 4, 9).unwrap();
        let bath = bath_small();
        let store = prepare_samples(&bath, &cfg, true).unwrap();
        for k in 0..=4 {
            for p in -4..k.min(0) {
                store.for_each_member(p, k, |_m, seq, _v| {
                    assert!(
                        crate::sampling::in_region_inch(seq, p, k, &cfg),
                        "({p},{k}): {:?}",
                        seq.values()
                    );
                });
            }
        }
    }

    #[test]
    fn conjugate_assignment_matches_direct_reevaluation() {
        let cfg = SamplingConfig::new(0.2, 5, 60, 0.1, 5, 21).unwrap();
        let bath = bath_small();
        let store = prepare_samples(&bath, &cfg, true).unwrap();
        let h = cfg.h;
        let mut checked = 0;
        for (p, k) in [(1i32, 2i32), (0, 3), (2, 5)] {
            store.for_each_member(p, k, |_m, seq, v| {
                let mut pts = seq.points().to_vec();
                pts.push(TimePoint::node(k));
                let direct = lb_connected(&bath, &pts, h);
                assert!((direct - v).norm() <= 1e-12 * v.norm().max(1.0));
                checked += 1;
            });
        }
        assert!(checked > 100, "only {checked} conjugate members checked");
    }

    #[test]
    fn reuse_carries_values_bit_exactly() {
        let cfg = SamplingConfig::new(0.2, 5, 25, 0.1, 4, 5).unwrap();
        let bath = bath_small();
        let store = prepare_samples(&bath, &cfg, true).unwrap();
        let h = cfg.h;
        for k in 0..=4i32 {
            for p in -4..k {
                store.for_each_member(p, k, |_m, seq, v| {
                    let mut pts = seq.points().to_vec();
                    pts.push(TimePoint::node(k));
                    let direct = lb_connected(&bath, &pts, h);
                    assert_eq!(direct.re.to_bits(), v.re.to_bits());
                    assert_eq!(direct.im.to_bits(), v.im.to_bits());
                });
            }
        }
    }

    #[test]
    fn smallest_grid_has_expected_structure() {
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.1, 1, 2).unwrap();
        let bath = bath_small();
        let m = model();
        let run = run_inchworm(&m, &bath, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        let g = &run.grid;
        // Diagonal and jump values.
        assert_eq!(
            g.node_value(Node::Neg(1), Node::Neg(1)),
            Matrix2::identity()
        );
        assert_eq!(g.node_value(Node::ZeroMinus, Node::ZeroPlus), m.observable);
        // Jump condition on the computed column.
        let g0m = g.node_value(Node::Neg(1), Node::ZeroMinus);
        let g0p = g.node_value(Node::Neg(1), Node::ZeroPlus);
        assert_eq!(g0p, m.observable * g0m);
        // Conjugate symmetry.
        assert_eq!(g.node_value(Node::ZeroPlus, Node::Pos(1)), g0m.adjoint());
        assert_eq!(g.node_value(Node::ZeroMinus, Node::Pos(1)), g0p.adjoint());
    }

    #[test]
    fn grid_symmetries_hold_exactly_after_evolve() {
        let cfg = SamplingConfig::new(0.2, 3, 20, 0.1, 4, 31).unwrap();
        let bath = bath_small();
        let m = model();
        let run = run_inchworm(&m, &bath, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        let g = &run.grid;
        let n = 4u32;
        for k in 1..=n {
            // Jump: G_{j,0+} = O G_{j,0-} and G_{0-,k} = G_{0+,k} O.
            let jm = Node::Neg(k);
            assert_eq!(
                g.node_value(jm, Node::ZeroPlus),
                m.observable * g.node_value(jm, Node::ZeroMinus)
            );
            assert_eq!(
                g.node_value(Node::ZeroMinus, Node::Pos(k)),
                g.node_value(Node::ZeroPlus, Node::Pos(k)) * m.observable
            );
        }
        // Conjugate symmetry on mixed nodes.
        for nn in 1..=n {
            for l in 1..nn {
                let a = g.node_value(Node::Neg(nn), Node::Pos(l));
                let b = g.node_value(Node::Neg(l), Node::Pos(nn));
                assert_eq!(b, a.adjoint());
            }
        }
        // Shift chains in quadrants III and I.
        for outer in 1..=n {
            for l2 in 1..=(n - outer) {
                assert_eq!(
                    g.node_value(Node::Neg(outer + l2), Node::Neg(l2)),
                    g.node_value(Node::Neg(outer), Node::ZeroMinus)
                );
                assert_eq!(
                    g.node_value(Node::Pos(l2), Node::Pos(outer + l2)),
                    g.node_value(Node::ZeroPlus, Node::Pos(outer))
                );
            }
        }
    }

    #[test]
    fn reuse_and_no_reuse_grids_are_bit_identical() {
        let cfg = SamplingConfig::new(0.1, 5, 15, 0.05, 4, 77).unwrap();
        let bath = bath_small();
        let m = model();
        let a = run_inchworm(&m, &bath, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        let b = run_inchworm(&m, &bath, &cfg, Mode::NoReuse, Stepper::Heun).unwrap();
        for ((ua, va, ma), (ub, vb, mb)) in a.grid.entries().iter().zip(b.grid.entries()) {
            assert_eq!((*ua, *va), (ub, vb));
            for r in 0..2 {
                for c in 0..2 {
                    assert_eq!(ma.e[r][c].re.to_bits(), mb.e[r][c].re.to_bits());
                    assert_eq!(ma.e[r][c].im.to_bits(), mb.e[r][c].im.to_bits());
                }
            }
        }
        // Counter semantics: no-reuse evaluates every left-column membership.
        for m_ord in cfg.orders() {
            let ea = &a.report.per_m[&m_ord];
            let eb = &b.report.per_m[&m_ord];
            assert_eq!(ea.total_count, eb.total_count);
            assert_eq!(eb.fresh_count, eb.total_count);
            assert!(ea.fresh_count <= eb.fresh_count);
        }
    }

    #[test]
    fn zero_coupling_reduces_to_free_heun_flow() {
        // With a vanishing kernel every stage sum is zero, so each step is
        // the bare two-stage update of the one-sided free term.
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.1, 3, 5).unwrap();
        let bath = zero_bath();
        let m = model();
        let run = run_inchworm(&m, &bath, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        // Walk the expected recursion for G_{-1, *}.
        let free = |x: &Matrix2, sgn: f64| -> Matrix2 {
            let star = *x + one_sided_free(&m, x).scale_re(sgn * cfg.h);
            (*x + star).scale_re(0.5) + one_sided_free(&m, &star).scale_re(0.5 * sgn * cfg.h)
        };
        let g_m1_0m = free(&Matrix2::identity(), -1.0);
        assert!(run
            .grid
            .node_value(Node::Neg(1), Node::ZeroMinus)
            .max_abs_diff(&g_m1_0m)
            .le(&1e-14));
        // Crossing zero: predictor and corrector both run at sign +1 from
        // the 0^+ value.
        let g_m1_0p = m.observable * g_m1_0m;
        let g_m1_1 = free(&g_m1_0p, 1.0);
        assert!(run
            .grid
            .node_value(Node::Neg(1), Node::Pos(1))
            .max_abs_diff(&g_m1_1)
            .le(&1e-14));
    }

    #[test]
    fn vacuous_predictor_when_the_interval_is_one_cell() {
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.1, 2, 5).unwrap();
        let bath = zero_bath();
        let m = model();
        let store = prepare_samples(&bath, &cfg, true).unwrap();
        let grid = PropagatorGrid::new(2, cfg.h, m.observable);
        let g = inchworm_step(&m, &cfg, &store, &grid, -1, 0, Stepper::Heun);
        // Stage 1 has an empty domain: G* = Id + sgn h (iH Id).
        let g_star =
            Matrix2::identity() + one_sided_free(&m, &Matrix2::identity()).scale_re(-cfg.h);
        let want = (Matrix2::identity() + g_star).scale_re(0.5)
            + one_sided_free(&m, &g_star).scale_re(-0.5 * cfg.h);
        assert!(g.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn rhs_term_zero_coupling_vanishes_and_sign_flips() {
        let m = model();
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.1, 2, 5).unwrap();
        let grid = PropagatorGrid::new(2, cfg.h, m.observable);
        let mut grid = grid;
        // Populate what the interpolation will touch.
        for (u, v) in [
            (Node::Neg(2), Node::Neg(1)),
            (Node::Neg(2), Node::ZeroMinus),
            (Node::Neg(2), Node::ZeroPlus),
            (Node::Neg(1), Node::ZeroMinus),
            (Node::Neg(1), Node::ZeroPlus),
            (Node::Neg(2), Node::Pos(1)),
            (Node::Neg(1), Node::Pos(1)),
            (Node::ZeroMinus, Node::Pos(1)),
            (Node::ZeroPlus, Node::Pos(1)),
        ] {
            grid.set(u, v, Matrix2::identity());
        }
        let view = GridView::plain(&grid);
        let seq = TimeSequence::from_values(&[-0.13], cfg.h);
        let term = inchworm_rhs_term(
            &m,
            &view,
            Node::Neg(2),
            &seq,
            Node::Pos(1),
            C64::new(0.0, 0.0),
        );
        assert_eq!(term, Matrix2::zero());
        // Factor-by-factor check of the m = 1 term.
        let lb = C64::new(0.3, -0.2);
        let term = inchworm_rhs_term(&m, &view, Node::Neg(2), &seq, Node::Pos(1), lb);
        let u = u_interp(&m, &view, Node::Neg(2), &seq, Node::Pos(1));
        // m = 1: i^2 = -1; one negative point gives (-1)^1; product +1.
        let want = (m.coupling * u).scale(lb);
        assert!(term.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn stage_quadrature_matches_dense_trapezoid_oracle() {
        // One full step against a test-local dense rule over the same
        // integrand: the production quadrature's defect must sit well below
        // the O(h^2) stepping error it feeds.
        let m = model();
        let bath = bath_small();
        let h = 0.1;
        let mut grid = PropagatorGrid::new(2, h, m.observable);
        // Populate the sub-grid a (-2, 1) step needs with plausible values.
        let fill = |c: f64| Matrix2::identity().scale(C64::new(c.cos(), 0.1 * c.sin()));
        let nodes = [
            (Node::Neg(2), Node::Neg(1), 1.0),
            (Node::Neg(2), Node::ZeroMinus, 2.0),
            (Node::Neg(2), Node::ZeroPlus, 3.0),
            (Node::Neg(1), Node::ZeroMinus, 4.0),
            (Node::Neg(1), Node::ZeroPlus, 5.0),
            (Node::Neg(2), Node::Pos(1), 6.0),
            (Node::Neg(1), Node::Pos(1), 7.0),
            (Node::ZeroMinus, Node::Pos(1), 8.0),
            (Node::ZeroPlus, Node::Pos(1), 9.0),
        ];
        for (u, v, c) in nodes {
            grid.set(u, v, fill(c));
        }
        let view = GridView::plain(&grid);
        let end = Node::Pos(1);
        let got = stage_quadrature(&m, &bath, &view, -2, 1, end, h);

        // Dense trapezoid with 512 panels per cell, same side conventions.
        let j_node = Node::Neg(2);
        let t_end = end.value(h);
        let kernel = |s: f64, neg_side: bool| -> Matrix2 {
            let rounded = (s / h).round();
            let on_node = s == rounded * h;
            let (left, right) = if on_node {
                let node = Node::from_index(rounded as i32, !neg_side);
                (view.corner(node, end), view.corner(j_node, node))
            } else {
                (
                    view.interp_real_node(s, end),
                    view.interp_node_real(j_node, s),
                )
            };
            let u = left * m.coupling * right;
            let lb = bath.b_star(s.abs() - t_end.abs());
            let sign = if s < 0.0 || (s == 0.0 && neg_side) {
                1.0
            } else {
                -1.0
            };
            (m.coupling * u).scale(lb).scale_re(sign)
        };
        let mut dense = Matrix2::zero();
        for cell in -2..1 {
            let neg = cell < 0;
            let lo = cell as f64 * h;
            let hi = (cell + 1) as f64 * h;
            let panels = 512;
            for q in 0..panels {
                let a = lo + (hi - lo) * q as f64 / panels as f64;
                let b = lo + (hi - lo) * (q + 1) as f64 / panels as f64;
                dense += (kernel(a, neg) + kernel(b, neg)).scale_re(0.5 * (b - a));
            }
        }
        let err = got.max_abs_diff(&dense);
        // The production rule subdivides each cell 4/16 times; its defect
        // against the dense rule must sit far below the O(h^2) stepping
        // error it feeds (constant ~2 at these parameters).
        assert!(err < 0.1 * h * h, "quadrature defect {err}");
    }

    #[test]
    fn deterministic_self_convergence_is_second_order() {
        let m = model();
        let bath = bath_small();
        let run_at = |h: f64, n: u32| {
            let cfg = SamplingConfig::new(0.1, 1, 10, h, n, 1).unwrap();
            run_inchworm(&m, &bath, &cfg, Mode::Deterministic, Stepper::Heun)
                .unwrap()
                .trajectory
        };
        let t_final = 0.8;
        let coarse = run_at(0.2, (t_final / 0.2) as u32);
        let mid = run_at(0.1, (t_final / 0.1) as u32);
        let fine = run_at(0.05, (t_final / 0.05) as u32);
        let e1 = (coarse.last().unwrap() - mid.last().unwrap()).norm();
        let e2 = (mid.last().unwrap() - fine.last().unwrap()).norm();
        let order = (e1 / e2).log2();
        assert!(
            (order - 2.0).abs() <= 0.5,
            "observed order {order} (e1={e1}, e2={e2})"
        );
    }

    #[test]
    fn trajectory_starts_at_unit_expectation() {
        let cfg = SamplingConfig::new(0.1, 3, 10, 0.1, 2, 5).unwrap();
        let bath = bath_small();
        let m = model();
        let run = run_inchworm(&m, &bath, &cfg, Mode::Reuse, Stepper::Heun).unwrap();
        assert_eq!(run.trajectory[0], C64::new(1.0, 0.0));
        assert_eq!(run.trajectory.len(), 3);
    }
}
