//! Run configuration, read from a TOML file with the sections `[model]`,
//! `[cost]`, `[solver]`, `[nets]`, `[trainer]` and `[cli]`.

use std::path::Path;

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ArmParams, CostField, Ellipse, ModelKind, ModelSpec, Region, Task};
use crate::ilqr::{ControlLimits, RegularizerConfig, SolveOptions};
use crate::nets::Activation;
use crate::{lit, Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub lengths: [f64; 3],
    pub masses: [f64; 3],
    pub armature: f64,
    pub damping: f64,
    #[serde(default)]
    pub base: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub horizon: usize,
    pub u_max: Vec<f64>,
    pub workspace_lower: Vec<f64>,
    pub workspace_upper: Vec<f64>,
    pub hard_lower: Vec<f64>,
    pub hard_upper: Vec<f64>,
    #[serde(default)]
    pub arm: Option<ArmConfig>,
}

fn default_dt() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipseConfig {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    #[serde(default)]
    pub angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub target: [f64; 2],
    pub obstacles: Vec<EllipseConfig>,
    pub obstacle_weight: f64,
    pub obstacle_sharpness: f64,
    pub target_reward_weight: f64,
    pub target_reward_radius: f64,
    pub control_weight: f64,
    pub distance_weight: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            target: [0.0, 0.0],
            obstacles: Vec::new(),
            obstacle_weight: 0.0,
            obstacle_sharpness: 1.0,
            target_reward_weight: 0.0,
            target_reward_radius: 1.0,
            control_weight: 0.0,
            distance_weight: 0.0,
        }
    }
}

/// Source of the initial control guesses for calibration probes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmSource {
    /// Rollouts of the actor trained in the first iteration.
    #[default]
    Actor,
    /// The same naive guesses used for `p_first`.
    Naive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Iteration cap for calibration probes and evaluation solves.
    pub max_iter_cap: usize,
    pub reg_eps: f64,
    pub tol: f64,
    pub limits: ControlLimits,
    pub probe_count: usize,
    pub p_first: f64,
    pub p_later: f64,
    /// Warm starts used by the probes behind `p_later`.
    pub later_probe_warm: WarmSource,
    /// Skip calibration and use these caps directly.
    pub max_iter_first: Option<usize>,
    pub max_iter_later: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter_cap: 1000,
            reg_eps: 1e-6,
            tol: 1e-6,
            limits: ControlLimits::Clamp,
            probe_count: 200,
            p_first: 99.0,
            p_later: 50.0,
            later_probe_warm: WarmSource::Actor,
            max_iter_first: None,
            max_iter_later: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetsConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub std_lr: f64,
    pub batch_size: usize,
    /// Weight of the gradient term after normalizing both terms by their target magnitudes.
    pub k_s: f64,
    pub bootstrap: bool,
    pub polyak_tau: f64,
    pub sigma_min: f64,
}

impl Default for NetsConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            activation: Activation::Elu,
            critic_lr: 1e-3,
            actor_lr: 1e-3,
            std_lr: 1e-3,
            batch_size: 128,
            k_s: 1.0,
            bootstrap: true,
            polyak_tau: 0.005,
            sigma_min: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// TO episodes in the first iteration (`N`).
    pub n_first: usize,
    pub episode_fraction: f64,
    pub candidate_multiplier: usize,
    /// Network update cycles per iteration (`M`).
    pub updates_per_iter: usize,
    /// Lookahead `K` of the partial cost-to-go targets.
    pub lookahead: usize,
    pub iterations: usize,
    pub bic: bool,
    pub eval_count: usize,
    pub eval_with_to: bool,
    pub seed: u64,
    pub randomize_initial_time: bool,
    pub buffer_capacity: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n_first: 300,
            episode_fraction: 0.25,
            candidate_multiplier: 10,
            updates_per_iter: 500,
            lookahead: 60,
            iterations: 5,
            bic: true,
            eval_count: 100,
            eval_with_to: true,
            seed: 0,
            randomize_initial_time: false,
            buffer_capacity: crate::buffer::DEFAULT_CAPACITY,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Worker threads for batched solves; all logical cores when absent.
    pub workers: Option<usize>,
    pub out_dir: Option<String>,
    /// Fill the timing columns of `reports.csv` (which makes it run-dependent).
    pub record_timings: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub nets: NetsConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub cli: CliConfig,
}

fn dvec<T: Scalar>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| lit::<T>(x)))
}

fn require(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.to_string()))
    }
}

impl TrainConfig {
    /// Parses and validates; parse errors carry the line and column.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        require(t.n_first >= 1, "trainer.n_first must be at least 1")?;
        require(
            t.episode_fraction > 0.0 && t.episode_fraction <= 1.0,
            "trainer.episode_fraction must lie in (0, 1]",
        )?;
        require(t.candidate_multiplier >= 1, "trainer.candidate_multiplier must be at least 1")?;
        require(t.lookahead >= 1, "trainer.lookahead must be at least 1")?;
        require(t.updates_per_iter >= 1, "trainer.updates_per_iter must be at least 1")?;
        require(t.eval_count >= 1, "trainer.eval_count must be at least 1")?;
        require(t.buffer_capacity >= 1, "trainer.buffer_capacity must be at least 1")?;
        let n = &self.nets;
        require(n.batch_size >= 1, "nets.batch_size must be at least 1")?;
        require(n.k_s >= 0.0, "nets.k_s must be non-negative")?;
        require(n.sigma_min > 0.0, "nets.sigma_min must be positive")?;
        require(n.polyak_tau > 0.0 && n.polyak_tau <= 1.0, "nets.polyak_tau must lie in (0, 1]")?;
        require(
            n.critic_lr > 0.0 && n.actor_lr > 0.0 && n.std_lr > 0.0,
            "nets learning rates must be positive",
        )?;
        require(n.hidden.iter().all(|&h| h >= 1), "nets.hidden sizes must be positive")?;
        let s = &self.solver;
        require(s.max_iter_cap >= 1, "solver.max_iter_cap must be at least 1")?;
        require(s.reg_eps > 0.0, "solver.reg_eps must be positive")?;
        require(s.tol >= 0.0, "solver.tol must be non-negative")?;
        require(s.probe_count >= 10, "solver.probe_count must be at least 10")?;
        require(
            s.p_first > 0.0 && s.p_first <= 100.0 && s.p_later > 0.0 && s.p_later <= 100.0,
            "solver percentiles must lie in (0, 100]",
        )?;
        require(
            s.max_iter_first != Some(0) && s.max_iter_later != Some(0),
            "solver iteration overrides must be at least 1",
        )?;
        require(
            self.cost.obstacles.iter().all(|o| o.semi_axes[0] > 0.0 && o.semi_axes[1] > 0.0),
            "cost.obstacles semi-axes must be positive",
        )?;
        require(self.cost.target_reward_radius > 0.0, "cost.target_reward_radius must be positive")?;
        require(self.cost.obstacle_sharpness > 0.0, "cost.obstacle_sharpness must be positive")?;
        self.model_spec::<f64>().map(|_| ())
    }

    /// Episodes per iteration from the second on, `round(fraction · N)`.
    pub fn later_episodes(&self) -> usize {
        ((self.trainer.episode_fraction * self.trainer.n_first as f64).round() as usize).max(1)
    }

    pub fn model_spec<T: Scalar>(&self) -> Result<ModelSpec<T>> {
        let m = &self.model;
        let region = |lo: &[f64], hi: &[f64]| Region::new(dvec(lo), dvec(hi));
        let spec = ModelSpec::new(
            m.kind,
            lit(m.dt),
            m.horizon,
            dvec(&m.u_max),
            region(&m.workspace_lower, &m.workspace_upper)?,
            region(&m.hard_lower, &m.hard_upper)?,
        )
        .map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(match &m.arm {
            Some(a) => spec.with_arm(ArmParams {
                lengths: a.lengths.map(lit),
                masses: a.masses.map(lit),
                armature: lit(a.armature),
                damping: lit(a.damping),
                base: a.base.map(lit),
            }),
            None => spec,
        })
    }

    pub fn cost_field<T: Scalar>(&self) -> CostField<T> {
        let c = &self.cost;
        CostField {
            target: Vector2::new(lit(c.target[0]), lit(c.target[1])),
            obstacles: c
                .obstacles
                .iter()
                .map(|o| Ellipse {
                    center: Vector2::new(lit(o.center[0]), lit(o.center[1])),
                    semi_axes: Vector2::new(lit(o.semi_axes[0]), lit(o.semi_axes[1])),
                    angle: lit(o.angle),
                })
                .collect(),
            obstacle_weight: lit(c.obstacle_weight),
            obstacle_sharpness: lit(c.obstacle_sharpness),
            target_reward_weight: lit(c.target_reward_weight),
            target_reward_radius: lit(c.target_reward_radius),
            control_weight: lit(c.control_weight),
            distance_weight: lit(c.distance_weight),
        }
    }

    pub fn task<T: Scalar>(&self) -> Result<Task<T>> {
        Ok(Task::new(self.model_spec()?, self.cost_field()))
    }

    pub fn solve_options<T: Scalar>(&self, max_iter: usize) -> SolveOptions<T> {
        SolveOptions {
            max_iter,
            reg: RegularizerConfig {
                eps: lit(self.solver.reg_eps),
            },
            tol: lit(self.solver.tol),
            limits: self.solver.limits,
        }
    }
}
