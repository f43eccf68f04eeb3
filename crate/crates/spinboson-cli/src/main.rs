use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use spinboson_cli::config::{ModeKind, RunConfig, SolverKind, StepperKind};
use spinboson_cli::output::{fmt_f64, write_text, CsvTable};
use spinboson_cli::runner;

#[derive(Parser)]
#[command(
    name = "spinboson",
    about = "Spin-boson dynamics via Dyson series and inchworm Monte Carlo with bath-functional reuse"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults to the fig6-left preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Named preset (fig6-left, fig6-right) used instead of --config.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the solver (dyson, inchworm, bare-dqmc).
    #[arg(long, global = true)]
    solver: Option<String>,
    /// Override the mode (reuse, no-reuse, deterministic).
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Override the stepper (heun, euler).
    #[arg(long, global = true)]
    stepper: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trajectory and write trajectory.csv plus cost_report.json.
    Simulate {
        /// Also write the full propagator grid (inchworm only).
        #[arg(long)]
        dump_grid: bool,
    },
    /// Rerun the trajectory over a ladder of step lengths and report the
    /// observed convergence orders.
    Accuracy {
        /// Comma-separated step lengths, largest first.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
        h_ladder: Vec<f64>,
    },
    /// Standard-deviation study against a high-sample reference run.
    Convergence {
        /// Comma-separated sample-size ladder.
        #[arg(long, value_delimiter = ',', default_value = "125,500,2000")]
        ladder: Vec<u32>,
        /// Sample count of the reference run.
        #[arg(long, default_value_t = 10_000)]
        reference: u32,
        /// Time at which the log-log slope is fitted.
        #[arg(long, default_value_t = 1.0)]
        t_target: f64,
    },
    /// Run reuse and no-reuse modes with one seed, check they agree, and
    /// write the saving-ratio table plus both cost reports.
    Efficiency,
    /// Closed-form saving-ratio curves for both solvers.
    Ratios {
        #[arg(long, default_value_t = 11)]
        m_bar: u32,
        #[arg(long, default_value_t = 100)]
        n_max: u32,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text)?
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::preset_fig6_left(),
    };
    if let Some(seed) = common.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(solver) = &common.solver {
        cfg.solver = match solver.as_str() {
            "dyson" => SolverKind::Dyson,
            "inchworm" => SolverKind::Inchworm,
            "bare-dqmc" => SolverKind::BareDqmc,
            other => anyhow::bail!("unknown solver '{other}'"),
        };
    }
    if let Some(mode) = &common.mode {
        cfg.mode = match mode.as_str() {
            "reuse" => ModeKind::Reuse,
            "no-reuse" => ModeKind::NoReuse,
            "deterministic" => ModeKind::Deterministic,
            other => anyhow::bail!("unknown mode '{other}'"),
        };
    }
    if let Some(stepper) = &common.stepper {
        cfg.stepper = match stepper.as_str() {
            "heun" => StepperKind::Heun,
            "euler" => StepperKind::Euler,
            other => anyhow::bail!("unknown stepper '{other}'"),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let out = &cli.common.out_dir;
    match &cli.command {
        Command::Simulate { dump_grid } => {
            let cfg = load_config(&cli.common)?;
            let run = runner::solve(&cfg)?;
            runner::trajectory_table(&cfg, &run)?.write(&out.join("trajectory.csv"))?;
            write_text(
                &out.join("cost_report.json"),
                &runner::report_json(&run.report),
            )?;
            write_text(&out.join("config.json"), &cfg.to_json())?;
            if *dump_grid {
                runner::grid_table(&cfg)?.write(&out.join("grid.csv"))?;
            }
            println!(
                "wrote {} steps to {}",
                cfg.sampling.n_steps,
                out.join("trajectory.csv").display()
            );
        }
        Command::Accuracy { h_ladder } => {
            let cfg = load_config(&cli.common)?;
            let study = runner::accuracy_study(&cfg, h_ladder)?;
            for (h, table) in &study.tables {
                table.write(&out.join(format!("accuracy_h{h}.csv")))?;
            }
            let mut summary = CsvTable::new(&["h_coarse", "h_fine", "sup_diff", "order"]);
            for (i, d) in study.diffs.iter().enumerate() {
                summary.push_row(vec![
                    fmt_f64(h_ladder[i]),
                    fmt_f64(h_ladder[i + 1]),
                    fmt_f64(*d),
                    study
                        .orders
                        .get(i)
                        .map(|o| fmt_f64(*o))
                        .unwrap_or_else(|| "nan".into()),
                ]);
            }
            summary.write(&out.join("accuracy_summary.csv"))?;
            for (i, o) in study.orders.iter().enumerate() {
                println!("order between rung {i} and {}: {o:.3}", i + 1);
            }
        }
        Command::Convergence {
            ladder,
            reference,
            t_target,
        } => {
            let cfg = load_config(&cli.common)?;
            let study = runner::convergence_study(&cfg, ladder, *reference, *t_target)?;
            runner::convergence_table(&cfg, &study).write(&out.join("convergence.csv"))?;
            let mut summary = CsvTable::new(&["t_target", "slope"]);
            summary.push_row(vec![fmt_f64(*t_target), fmt_f64(study.slope_at_target)]);
            summary.write(&out.join("convergence_summary.csv"))?;
            println!("slope at t = {t_target}: {:.4}", study.slope_at_target);
        }
        Command::Efficiency => {
            let cfg = load_config(&cli.common)?;
            let report = runner::efficiency_report(&cfg)?;
            report.ratios.write(&out.join("ratios.csv"))?;
            write_text(
                &out.join("cost_reuse.json"),
                &runner::report_json(&report.reuse),
            )?;
            write_text(
                &out.join("cost_noreuse.json"),
                &runner::report_json(&report.no_reuse),
            )?;
            println!(
                "trajectories agree; measured weighted saving {:.4}",
                report.r_time_measured
            );
        }
        Command::Ratios { m_bar, n_max } => {
            runner::ratio_curves(*m_bar, *n_max).write(&out.join("ratio_curves.csv"))?;
            println!("wrote {}", out.join("ratio_curves.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
