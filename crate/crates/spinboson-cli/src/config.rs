//! JSON run configuration: one file describes the model, the bath, the
//! sampling setup, and which solver/mode/stepper to run. Command-line flags
//! override individual fields after parsing.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spinboson::bath::{build_bath, BathCorrelation, BathSpec};
use spinboson::matrix::Matrix2;
use spinboson::sampling::SamplingConfig;
use spinboson::spinsys::ModelConfig;
use spinboson::{Mode, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub observable: Observable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    #[default]
    SigmaZ,
    SigmaX,
    SigmaY,
}

impl Observable {
    pub fn matrix(&self) -> Matrix2 {
        match self {
            Observable::SigmaZ => Matrix2::sigma_z(),
            Observable::SigmaX => Matrix2::sigma_x(),
            Observable::SigmaY => Matrix2::sigma_y(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathSection {
    pub xi: f64,
    pub omega_c: f64,
    /// Defaults to `4 * omega_c` when omitted.
    #[serde(default)]
    pub omega_max: Option<f64>,
    pub beta: f64,
    pub modes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSection {
    pub b_emp: f64,
    pub m_bar: u32,
    pub m0_hat: u32,
    pub h: f64,
    pub n_steps: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Dyson,
    Inchworm,
    BareDqmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    Reuse,
    NoReuse,
    Deterministic,
}

impl From<ModeKind> for Mode {
    fn from(m: ModeKind) -> Mode {
        match m {
            ModeKind::Reuse => Mode::Reuse,
            ModeKind::NoReuse => Mode::NoReuse,
            ModeKind::Deterministic => Mode::Deterministic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepperKind {
    Heun,
    Euler,
}

impl From<StepperKind> for Stepper {
    fn from(s: StepperKind) -> Stepper {
        match s {
            StepperKind::Heun => Stepper::Heun,
            StepperKind::Euler => Stepper::Euler,
        }
    }
}

fn default_mode() -> ModeKind {
    ModeKind::Reuse
}

fn default_stepper() -> StepperKind {
    StepperKind::Heun
}

fn default_repetitions() -> u32 {
    1
}

/// The complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSection,
    pub bath: BathSection,
    pub sampling: SamplingSection,
    pub solver: SolverKind,
    #[serde(default = "default_mode")]
    pub mode: ModeKind,
    #[serde(default = "default_stepper")]
    pub stepper: StepperKind,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
}

impl RunConfig {
    /// Weak-coupling preset: xi = 0.2 with allocation constant 0.1;
    /// epsilon = delta = 1, beta = 5, omega_c = 2.5, 400 modes, order
    /// truncation 11, h = 0.05.
    pub fn preset_fig6_left() -> RunConfig {
        RunConfig {
            model: ModelSection {
                epsilon: 1.0,
                delta: 1.0,
                observable: Observable::SigmaZ,
            },
            bath: BathSection {
                xi: 0.2,
                omega_c: 2.5,
                omega_max: None,
                beta: 5.0,
                modes: 400,
            },
            sampling: SamplingSection {
                b_emp: 0.1,
                m_bar: 11,
                m0_hat: 10_000,
                h: 0.05,
                n_steps: 60,
                seed: 1,
            },
            solver: SolverKind::Dyson,
            mode: ModeKind::Reuse,
            stepper: StepperKind::Heun,
            repetitions: 1,
        }
    }

    /// Strong-coupling preset: xi = 0.4 with allocation constant 0.2;
    /// everything else as in `preset_fig6_left`.
    pub fn preset_fig6_right() -> RunConfig {
        let mut cfg = Self::preset_fig6_left();
        cfg.bath.xi = 0.4;
        cfg.sampling.b_emp = 0.2;
        cfg
    }

    pub fn preset(name: &str) -> Result<RunConfig> {
        match name {
            "fig6-left" => Ok(Self::preset_fig6_left()),
            "fig6-right" => Ok(Self::preset_fig6_right()),
            other => bail!("unknown preset '{other}' (try fig6-left or fig6-right)"),
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).context("parsing run config")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let base = ModelConfig::new(self.model.epsilon, self.model.delta)?;
        Ok(base.with_observable(self.model.observable.matrix())?)
    }

    pub fn bath_spec(&self) -> BathSpec {
        BathSpec {
            xi: self.bath.xi,
            omega_c: self.bath.omega_c,
            omega_max: self.bath.omega_max.unwrap_or(4.0 * self.bath.omega_c),
            beta: self.bath.beta,
            num_modes: self.bath.modes,
        }
    }

    pub fn build_bath(&self) -> Result<BathCorrelation> {
        Ok(build_bath(&self.bath_spec())?)
    }

    pub fn sampling_config(&self) -> Result<SamplingConfig> {
        Ok(SamplingConfig::new(
            self.sampling.b_emp,
            self.sampling.m_bar,
            self.sampling.m0_hat,
            self.sampling.h,
            self.sampling.n_steps,
            self.sampling.seed,
        )?)
    }

    /// Validate every section by constructing the solver inputs.
    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        self.build_bath()?;
        self.sampling_config()?;
        if self.mode == ModeKind::Deterministic && self.sampling.m_bar != 1 {
            bail!("deterministic mode requires m_bar = 1");
        }
        if self.repetitions == 0 {
            bail!("repetitions must be >= 1");
        }
        Ok(())
    }
}
