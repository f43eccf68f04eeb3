//! Experiment drivers: observable trajectories, accuracy and convergence
//! studies, and the efficiency report comparing reuse against reuse-free
//! runs with a shared seed.

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Context, Result};
use num_complex::Complex64;
use spinboson::costmodel::{r_dyson, r_inch, r_time, CostReport};
use spinboson::dyson::{bare_dqmc, run_dyson};
use spinboson::grid::Node;
use spinboson::inchworm::run_inchworm;
use spinboson::matrix::Matrix2;
use spinboson::sampling::{allocate_dyson, allocate_inch, SamplingConfig};
use spinboson::Mode;

use crate::config::{ModeKind, RunConfig, SolverKind};
use crate::output::{fmt_f64, CsvTable};

/// Per-evaluation cost model of the full functional, `2^m`.
fn dyson_weight(m: u32) -> f64 {
    2f64.powi(m as i32)
}

/// Per-evaluation cost model of the linked functional, `alpha^m` with
/// `alpha = 2.1258`.
fn inch_weight(m: u32) -> f64 {
    2.1258f64.powi(m as i32)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 31)
}

/// One solver run: the propagator matrices `G(-t_n, t_n)` for `n = 0..N` and
/// the evaluation counters.
pub struct SolverRun {
    pub matrices: Vec<Matrix2>,
    pub report: CostReport,
}

pub fn solve(cfg: &RunConfig) -> Result<SolverRun> {
    cfg.validate()?;
    let model = cfg.model_config()?;
    let bath = cfg.build_bath()?;
    let sampling = cfg.sampling_config()?;
    let mode: Mode = cfg.mode.into();
    match cfg.solver {
        SolverKind::Dyson => {
            let run = run_dyson(&model, &bath, &sampling, mode, cfg.stepper.into())?;
            Ok(SolverRun {
                matrices: run.trajectory,
                report: run.report,
            })
        }
        SolverKind::Inchworm => {
            let run = run_inchworm(&model, &bath, &sampling, mode, cfg.stepper.into())?;
            let n = sampling.n_steps;
            let mut matrices = Vec::with_capacity(n as usize + 1);
            matrices.push(run.grid.node_value(Node::ZeroMinus, Node::ZeroPlus));
            for k in 1..=n {
                matrices.push(run.grid.node_value(Node::Neg(k), Node::Pos(k)));
            }
            Ok(SolverRun {
                matrices,
                report: run.report,
            })
        }
        SolverKind::BareDqmc => {
            // One independent estimate per time point.
            let n = sampling.n_steps;
            let mut matrices = Vec::with_capacity(n as usize + 1);
            matrices.push(model.observable);
            for k in 1..=n {
                let per_point = SamplingConfig {
                    seed: mix_seed(sampling.seed, k as u64),
                    ..sampling
                };
                let t = sampling.t(k as i64);
                matrices.push(bare_dqmc(
                    &model,
                    &bath,
                    &per_point,
                    t,
                    sampling.m0_hat as u64,
                )?);
            }
            Ok(SolverRun {
                matrices,
                report: CostReport::new(sampling.orders(), n as usize),
            })
        }
    }
}

/// Observable expectation along a run: `tr(rho_s G(-t_n, t_n))`.
pub fn expectations(cfg: &RunConfig, run: &SolverRun) -> Result<Vec<Complex64>> {
    let model = cfg.model_config()?;
    Ok(run
        .matrices
        .iter()
        .map(|g| (model.rho * *g).trace())
        .collect())
}

/// Trajectory CSV rows `(t_n, Re<O>, Im<O>)`.
pub fn trajectory_table(cfg: &RunConfig, run: &SolverRun) -> Result<CsvTable> {
    let h = cfg.sampling.h;
    let values = expectations(cfg, run)?;
    let mut table = CsvTable::new(&["t", "re_observable", "im_observable"]);
    for (n, v) in values.iter().enumerate() {
        table.push_row(vec![fmt_f64(n as f64 * h), fmt_f64(v.re), fmt_f64(v.im)]);
    }
    Ok(table)
}

/// Full-grid dump for the inchworm solver: one row per populated node pair.
pub fn grid_table(cfg: &RunConfig) -> Result<CsvTable> {
    ensure!(
        cfg.solver == SolverKind::Inchworm,
        "grid dumps are only available for the inchworm solver"
    );
    let model = cfg.model_config()?;
    let bath = cfg.build_bath()?;
    let sampling = cfg.sampling_config()?;
    let run = run_inchworm(
        &model,
        &bath,
        &sampling,
        cfg.mode.into(),
        cfg.stepper.into(),
    )?;
    let label = |n: Node| -> String {
        match n {
            Node::Neg(k) => format!("-{k}"),
            Node::ZeroMinus => "0-".to_string(),
            Node::ZeroPlus => "0+".to_string(),
            Node::Pos(k) => format!("{k}"),
        }
    };
    let mut table = CsvTable::new(&[
        "j", "k", "re00", "im00", "re01", "im01", "re10", "im10", "re11", "im11",
    ]);
    for (u, v, m) in run.grid.entries() {
        let mut row = vec![label(u), label(v)];
        for r in 0..2 {
            for c in 0..2 {
                row.push(fmt_f64(m.e[r][c].re));
                row.push(fmt_f64(m.e[r][c].im));
            }
        }
        table.push_row(row);
    }
    Ok(table)
}

// ---- accuracy study ---------------------------------------------------

pub struct AccuracyStudy {
    /// (h, trajectory CSV) per ladder entry.
    pub tables: Vec<(f64, CsvTable)>,
    /// Pairwise sup-norm differences between consecutive ladder entries,
    /// sampled on the coarsest common grid.
    pub diffs: Vec<f64>,
    /// Observed orders `log(d_i/d_{i+1}) / log(h_i/h_{i+1})`.
    pub orders: Vec<f64>,
}

/// Run the configured solver for each step length in `h_ladder` (holding
/// `t_max` fixed) and report pairwise trajectory differences and the
/// resulting convergence orders.
pub fn accuracy_study(cfg: &RunConfig, h_ladder: &[f64]) -> Result<AccuracyStudy> {
    ensure!(h_ladder.len() >= 2, "need at least two step lengths");
    let t_max = cfg.sampling.h * cfg.sampling.n_steps as f64;
    let mut runs: Vec<(f64, Vec<Complex64>)> = Vec::new();
    let mut tables = Vec::new();
    for &h in h_ladder {
        let steps = (t_max / h).round();
        ensure!(
            (steps * h - t_max).abs() < 1e-9 && steps >= 1.0,
            "step length {h} does not divide the horizon {t_max}"
        );
        let mut sub = cfg.clone();
        sub.sampling.h = h;
        sub.sampling.n_steps = steps as u32;
        let run = solve(&sub)?;
        let vals = expectations(&sub, &run)?;
        tables.push((h, trajectory_table(&sub, &run)?));
        runs.push((h, vals));
    }
    // Compare on the coarsest grid.
    let h_coarse = h_ladder.iter().cloned().fold(f64::MIN, f64::max);
    let coarse_steps = (t_max / h_coarse).round() as usize;
    let mut diffs = Vec::new();
    for w in runs.windows(2) {
        let (ha, va) = &w[0];
        let (hb, vb) = &w[1];
        let mut sup = 0.0f64;
        for n in 0..=coarse_steps {
            let t = n as f64 * h_coarse;
            let ia = (t / ha).round() as usize;
            let ib = (t / hb).round() as usize;
            sup = sup.max((va[ia] - vb[ib]).norm());
        }
        diffs.push(sup);
    }
    let mut orders = Vec::new();
    for i in 0..diffs.len().saturating_sub(1) {
        let ratio_h = h_ladder[i] / h_ladder[i + 1];
        orders.push((diffs[i] / diffs[i + 1]).ln() / ratio_h.ln());
    }
    Ok(AccuracyStudy {
        tables,
        diffs,
        orders,
    })
}

// ---- convergence study --------------------------------------------------

pub struct ConvergenceStudy {
    /// Sample-size ladder.
    pub ladder: Vec<u32>,
    /// `sigma[l][n]`: deviation of the ladder-l runs from the reference at
    /// step n (Frobenius norm, root mean square over repetitions).
    pub sigma: Vec<Vec<f64>>,
    /// Fitted log-log slope of `sigma(t_target)` against the sample count.
    pub slope_at_target: f64,
    pub target_index: usize,
}

/// Standard-deviation study against a high-sample reference run: for each
/// ladder entry, `repetitions` independent runs are compared to the
/// reference trajectory. The deviation at the target time should scale as
/// the inverse square root of the sample count.
pub fn convergence_study(
    cfg: &RunConfig,
    ladder: &[u32],
    reference_m0: u32,
    t_target: f64,
) -> Result<ConvergenceStudy> {
    ensure!(ladder.len() >= 3, "need a ladder of at least three sizes");
    ensure!(
        cfg.solver != SolverKind::BareDqmc,
        "convergence studies cover the stepping solvers"
    );
    let mut reference_cfg = cfg.clone();
    reference_cfg.sampling.m0_hat = reference_m0;
    let reference = solve(&reference_cfg)?.matrices;

    let n_steps = cfg.sampling.n_steps as usize;
    let target_index = (t_target / cfg.sampling.h).round() as usize;
    ensure!(
        target_index <= n_steps,
        "target time beyond the configured horizon"
    );

    let mut sigma: Vec<Vec<f64>> = Vec::new();
    for &m0 in ladder {
        let mut acc = vec![0.0f64; n_steps + 1];
        for rep in 0..cfg.repetitions {
            let mut sub = cfg.clone();
            sub.sampling.m0_hat = m0;
            sub.sampling.seed = mix_seed(cfg.sampling.seed, 0x5eed_0000 + rep as u64);
            let run = solve(&sub)?;
            for n in 0..=n_steps {
                acc[n] += (run.matrices[n] - reference[n]).fro_norm().powi(2);
            }
        }
        sigma.push(
            acc.into_iter()
                .map(|s| (s / cfg.repetitions as f64).sqrt())
                .collect(),
        );
    }

    // Least-squares slope of log sigma against log m0 at the target step.
    let xs: Vec<f64> = ladder.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = sigma.iter().map(|s| s[target_index].ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;

    Ok(ConvergenceStudy {
        ladder: ladder.to_vec(),
        sigma,
        slope_at_target: slope,
        target_index,
    })
}

pub fn convergence_table(cfg: &RunConfig, study: &ConvergenceStudy) -> CsvTable {
    let mut header = vec!["t".to_string()];
    for m0 in &study.ladder {
        header.push(format!("sigma_m0_{m0}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = CsvTable::new(&header_refs);
    let n_steps = cfg.sampling.n_steps as usize;
    for n in 0..=n_steps {
        let mut row = vec![fmt_f64(n as f64 * cfg.sampling.h)];
        for s in &study.sigma {
            row.push(fmt_f64(s[n]));
        }
        table.push_row(row);
    }
    table
}

// ---- efficiency report ---------------------------------------------------

pub struct EfficiencyReport {
    pub reuse: CostReport,
    pub no_reuse: CostReport,
    pub ratios: CsvTable,
    /// Measured overall saving from the two runs' counters.
    pub r_time_measured: f64,
}

/// Predicted fresh/total counts per order for an n-step run, from the
/// allocation formulas alone.
fn predicted_counts(
    cfg: &RunConfig,
    sampling: &SamplingConfig,
    n: u32,
) -> (BTreeMap<u32, u64>, BTreeMap<u32, u64>) {
    let mut fresh: BTreeMap<u32, u64> = sampling.orders().map(|m| (m, 0)).collect();
    let mut total = fresh.clone();
    match cfg.solver {
        SolverKind::Dyson | SolverKind::BareDqmc => {
            for j in 1..=n {
                let alloc = allocate_dyson(sampling, j);
                for (m, c) in &alloc {
                    *fresh.get_mut(m).unwrap() += c;
                    // Batch j is reused at steps j..n.
                    *total.get_mut(m).unwrap() += c * (n - j + 1) as u64;
                }
            }
        }
        SolverKind::Inchworm => {
            for p in -(n as i32)..=-1 {
                for k in 0..=n as i32 {
                    let alloc = allocate_inch(sampling, p, k);
                    for (m, c) in &alloc {
                        *fresh.get_mut(m).unwrap() += c;
                        // Fresh batch (p,k) serves every region down its
                        // anti-diagonal within the n-step window: descendants
                        // (p-j, k+j) until either index hits the boundary.
                        let reach = (n as i32 + p).min(n as i32 - k) + 1;
                        *total.get_mut(m).unwrap() += c * reach as u64;
                    }
                }
            }
        }
    }
    (fresh, total)
}

/// Run reuse and reuse-free modes with one seed, demand bit-identical
/// trajectories, and assemble the ratio table.
pub fn efficiency_report(cfg: &RunConfig) -> Result<EfficiencyReport> {
    ensure!(
        cfg.solver != SolverKind::BareDqmc,
        "efficiency reports cover the stepping solvers"
    );
    ensure!(
        cfg.mode != ModeKind::Deterministic,
        "efficiency reports need the Monte Carlo modes"
    );
    let mut reuse_cfg = cfg.clone();
    reuse_cfg.mode = ModeKind::Reuse;
    let mut noreuse_cfg = cfg.clone();
    noreuse_cfg.mode = ModeKind::NoReuse;

    let reuse = solve(&reuse_cfg)?;
    let no_reuse = solve(&noreuse_cfg)?;
    for (n, (a, b)) in reuse.matrices.iter().zip(&no_reuse.matrices).enumerate() {
        for r in 0..2 {
            for c in 0..2 {
                if a.e[r][c].re.to_bits() != b.e[r][c].re.to_bits()
                    || a.e[r][c].im.to_bits() != b.e[r][c].im.to_bits()
                {
                    bail!("reuse and no-reuse trajectories differ at step {n}");
                }
            }
        }
    }

    let sampling = cfg.sampling_config()?;
    let n = sampling.n_steps;
    // Cross-check the measured counters against the allocation formulas.
    let (fresh_n, total_n) = predicted_counts(cfg, &sampling, n);
    for m in sampling.orders() {
        ensure!(
            reuse.report.per_m[&m].fresh_count == fresh_n[&m],
            "fresh counter mismatch at order {m}"
        );
        ensure!(
            reuse.report.per_m[&m].total_count == total_n[&m],
            "membership counter mismatch at order {m}"
        );
    }

    let weights: BTreeMap<u32, f64> = sampling
        .orders()
        .map(|m| {
            (
                m,
                match cfg.solver {
                    SolverKind::Inchworm => inch_weight(m),
                    _ => dyson_weight(m),
                },
            )
        })
        .collect();

    let mut header: Vec<String> = vec!["n".into()];
    for m in sampling.orders() {
        header.push(format!("r{m}"));
    }
    header.push("rt_model".into());
    header.push("rt_real".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = CsvTable::new(&header_refs);
    for step in 1..=n {
        let mut row = vec![step.to_string()];
        for m in sampling.orders() {
            let r = match cfg.solver {
                SolverKind::Inchworm => r_inch(m, step),
                _ => r_dyson(m, step),
            };
            row.push(fmt_f64(r));
        }
        let (fresh_s, total_s) = predicted_counts(cfg, &sampling, step);
        let rt_model = r_time(&weights, &fresh_s, &total_s)
            .map(fmt_f64)
            .unwrap_or_else(|_| "nan".into());
        row.push(rt_model);
        let t_hat = reuse.report.cumulative_bath_seconds[step as usize];
        let t_all = no_reuse.report.cumulative_bath_seconds[step as usize];
        let rt_real = if t_all > 0.0 {
            fmt_f64(1.0 - t_hat / t_all)
        } else {
            "nan".into()
        };
        row.push(rt_real);
        table.push_row(row);
    }

    let r_time_measured = r_time(
        &weights,
        &reuse.report.fresh_counts(),
        &reuse.report.total_counts(),
    )
    .context("measured r_time")?;

    Ok(EfficiencyReport {
        reuse: reuse.report,
        no_reuse: no_reuse.report,
        ratios: table,
        r_time_measured,
    })
}

/// Closed-form ratio curves for both solvers, without running anything.
pub fn ratio_curves(m_bar: u32, n_max: u32) -> CsvTable {
    let orders: Vec<u32> = (1..=m_bar).step_by(2).collect();
    let mut header: Vec<String> = vec!["n".into()];
    for m in &orders {
        header.push(format!("dyson_r{m}"));
        header.push(format!("dyson_r{m}_asymptotic"));
        header.push(format!("inch_r{m}"));
        header.push(format!("inch_r{m}_asymptotic"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = CsvTable::new(&header_refs);
    for n in 1..=n_max {
        let mut row = vec![n.to_string()];
        for &m in &orders {
            row.push(fmt_f64(r_dyson(m, n)));
            row.push(fmt_f64(spinboson::costmodel::r_dyson_asymptotic(m, n)));
            row.push(fmt_f64(r_inch(m, n)));
            row.push(fmt_f64(spinboson::costmodel::r_inch_asymptotic(m, n)));
        }
        table.push_row(row);
    }
    table
}

/// JSON view of a report in the `{m: {fresh_count, total_count,
/// wall_seconds}}` shape.
pub fn report_json(report: &CostReport) -> String {
    serde_json::to_string_pretty(&report.per_m).expect("report serializes")
}
