//! The outer training loop: batches of trajectory optimization feed the
//! replay buffer, the networks are updated from it, and the std-critic picks
//! the next batch of initial states.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::buffer::ReplayBuffer;
use crate::config::{TrainConfig, WarmSource};
use crate::envs::{SampleRegion, Task, TimeState};
use crate::ilqr::{
    calibrate_max_iter, kstep_targets, nearest_rank_percentile, Calibration, naive_warm_start, solve_batch, SolveOptions, SolveResult, Trajectory,
};
use crate::nets::{
    actor_loss, actor_rollout_batch, adam_step, augment_batch, critic_loss, std_critic_loss, AdamState, Bootstrap,
    MlpParams, OutputMap, TOSample,
};
use crate::{lit, to_f64, Error, Problem, Result, Scalar};

const STREAM_NETS: u64 = 1;
const STREAM_EVAL: u64 = 2;

/// Summary of one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub episodes: usize,
    pub episodes_cum: usize,
    pub max_iter: usize,
    pub to_mean_cost: f64,
    pub to_median_cost: f64,
    pub converged_frac: f64,
    pub critic_loss: f64,
    pub std_loss: f64,
    pub eval_mean_cost: f64,
    pub t_to_s: f64,
    pub t_nets_s: f64,
    pub t_eval_s: f64,
}

/// The `keep` candidates with the largest std-critic output, highest first.
/// Equal scores keep candidate order.
pub fn select_initial_states_bic<T: Scalar>(
    candidates: &[TimeState<T>],
    std_critic: &MlpParams<T>,
    keep: usize,
) -> Result<Vec<TimeState<T>>> {
    if keep > candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {keep} of {} candidates",
            candidates.len()
        )));
    }
    if keep == 0 {
        return Ok(Vec::new());
    }
    let scores = std_critic.forward_batch(&augment_batch(candidates))?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| to_f64(scores[(0, b)]).total_cmp(&to_f64(scores[(0, a)])));
    Ok(order[..keep].iter().map(|&i| candidates[i].clone()).collect())
}

/// Per-start result of a policy evaluation.
#[derive(Clone, Debug)]
pub struct EvalOutcome<T: Scalar> {
    pub start: TimeState<T>,
    pub rollout: Trajectory<T>,
    /// Refinement of the rollout by a full solve, when requested.
    pub refined: Option<SolveResult<T>>,
}

impl<T: Scalar> EvalOutcome<T> {
    pub fn cost(&self) -> T {
        match &self.refined {
            Some(r) => r.cost,
            None => self.rollout.total_cost(),
        }
    }

    pub fn final_state(&self) -> &TimeState<T> {
        match &self.refined {
            Some(r) => r.traj.final_state(),
            None => self.rollout.final_state(),
        }
    }
}

/// Rolls the actor out from every start, optionally refining each rollout
/// with a solve warm-started from it.
pub fn evaluate_policy_detailed<T: Scalar, P: Problem<T>>(
    actor: &MlpParams<T>,
    problem: &P,
    starts: &[TimeState<T>],
    refine: Option<&SolveOptions<T>>,
) -> Result<Vec<EvalOutcome<T>>> {
    if starts.is_empty() {
        return Err(Error::Empty("evaluation start set"));
    }
    let rollouts = actor_rollout_batch(actor, problem, starts)?;
    let refined: Vec<Option<SolveResult<T>>> = match refine {
        Some(opts) => {
            let warm: Vec<Vec<DVector<T>>> = rollouts.iter().map(|r| r.controls.clone()).collect();
            solve_batch(problem, starts, &warm, opts)?
                .into_iter()
                .map(|r| r.map(Some))
                .collect::<Result<_>>()?
        }
        None => vec![None; starts.len()],
    };
    Ok(starts
        .iter()
        .zip(rollouts)
        .zip(refined)
        .map(|((start, rollout), refined)| EvalOutcome {
            start: start.clone(),
            rollout,
            refined,
        })
        .collect())
}

/// Mean cost of the actor (or of solves warm-started by it) over `starts`.
pub fn evaluate_policy<T: Scalar, P: Problem<T>>(
    actor: &MlpParams<T>,
    problem: &P,
    starts: &[TimeState<T>],
    refine: Option<&SolveOptions<T>>,
) -> Result<T> {
    let outcomes = evaluate_policy_detailed(actor, problem, starts, refine)?;
    let total = outcomes.iter().fold(T::zero(), |acc, o| acc + o.cost());
    Ok(total / lit::<T>(outcomes.len() as f64))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

/// Full training state. Every random draw comes from generators seeded by
/// `config.trainer.seed`, so two trainers built from the same configuration
/// produce identical reports.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub task: Task<T>,
    pub actor: MlpParams<T>,
    pub critic: MlpParams<T>,
    pub target_critic: MlpParams<T>,
    pub std_critic: MlpParams<T>,
    actor_opt: AdamState<T>,
    critic_opt: AdamState<T>,
    std_opt: AdamState<T>,
    pub buffer: ReplayBuffer<T>,
    rng: ChaCha8Rng,
    pub eval_starts: Vec<TimeState<T>>,
    pub max_iter_first: Option<usize>,
    pub max_iter_later: Option<usize>,
    pub episodes_cum: usize,
    pub iteration: usize,
    /// Sobolev weight after normalization by the target magnitudes.
    k_s_effective: T,
    pub reports: Vec<IterationReport>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let task: Task<T> = config.task()?;
        let model = &task.model;
        let (n, m, horizon) = (model.n(), model.m(), model.horizon);
        let seed = config.trainer.seed;

        let mut offset = model.workspace.midpoint().as_slice().to_vec();
        let mut scale: Vec<T> = model
            .workspace
            .half_widths()
            .iter()
            .map(|&h| if h > T::zero() { h } else { T::one() })
            .collect();
        let half_t = lit::<T>((horizon as f64 / 2.0).max(1.0));
        offset.push(half_t);
        scale.push(half_t);
        let offset = DVector::from_vec(offset);
        let scale = DVector::from_vec(scale);

        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        init_rng.set_stream(STREAM_NETS);
        let nets = &config.nets;
        let sizes = |out: usize| {
            let mut s = vec![n + 1];
            s.extend(&nets.hidden);
            s.push(out);
            s
        };
        let critic = MlpParams::new(
            &sizes(1),
            nets.activation,
            OutputMap::Linear {
                scale: T::one(),
                offset: T::zero(),
            },
            offset.clone(),
            scale.clone(),
            &mut init_rng,
        )?;
        let actor = MlpParams::new(
            &sizes(m),
            nets.activation,
            OutputMap::ScaledTanh {
                bound: model.u_max.clone(),
            },
            offset.clone(),
            scale.clone(),
            &mut init_rng,
        )?;
        let std_critic = MlpParams::new(
            &sizes(1),
            nets.activation,
            OutputMap::PositiveSoftplus {
                scale: T::one(),
                floor: lit(nets.sigma_min),
            },
            offset,
            scale,
            &mut init_rng,
        )?;

        let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
        eval_rng.set_stream(STREAM_EVAL);
        let eval_starts =
            model.sample_initial_states_with(config.trainer.eval_count, &mut eval_rng, SampleRegion::HardRegion)?;

        Ok(Self {
            actor_opt: AdamState::new(&actor, lit(nets.actor_lr)),
            critic_opt: AdamState::new(&critic, lit(nets.critic_lr)),
            std_opt: AdamState::new(&std_critic, lit(nets.std_lr)),
            target_critic: critic.clone(),
            buffer: ReplayBuffer::new(config.trainer.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_iter_first: config.solver.max_iter_first,
            max_iter_later: config.solver.max_iter_later,
            k_s_effective: lit(nets.k_s),
            episodes_cum: 0,
            iteration: 0,
            reports: Vec::new(),
            eval_starts,
            actor,
            critic,
            std_critic,
            task,
            config,
        })
    }

    fn opts(&self, max_iter: usize) -> SolveOptions<T> {
        self.config.solve_options(max_iter)
    }

    fn uniform_starts(&mut self, count: usize) -> Result<Vec<TimeState<T>>> {
        let mut starts = self
            .task
            .model
            .sample_initial_states_with(count, &mut self.rng, SampleRegion::Workspace)?;
        if self.config.trainer.randomize_initial_time {
            let horizon = self.task.model.horizon;
            for s in &mut starts {
                s.t = self.rng.random_range(0..horizon);
            }
        }
        Ok(starts)
    }

    fn actor_warm_starts(&self, starts: &[TimeState<T>]) -> Result<Vec<Vec<DVector<T>>>> {
        Ok(actor_rollout_batch(&self.actor, &self.task, starts)?
            .into_iter()
            .map(|t| t.controls)
            .collect())
    }

    fn naive_warm_starts(&self, starts: &[TimeState<T>]) -> Vec<Vec<DVector<T>>> {
        starts.iter().map(|s| naive_warm_start(&self.task, s)).collect()
    }

    fn calibrate(&mut self, actor_warm: bool, percentile: f64) -> Result<Calibration> {
        let probes = self.uniform_starts(self.config.solver.probe_count)?;
        let warm = if actor_warm {
            self.actor_warm_starts(&probes)?
        } else {
            self.naive_warm_starts(&probes)
        };
        let cap = self.config.solver.max_iter_cap;
        let cal = calibrate_max_iter(&self.task, &probes, &warm, cap, percentile, &self.opts(cap))?;
        log::info!(
            "calibrated max_iter = {} (p{percentile}, {} warm starts)",
            cal.max_iter,
            if actor_warm { "actor" } else { "naive" }
        );
        Ok(cal)
    }

    /// Chooses this iteration's initial states, warm starts and iteration cap.
    fn plan_batch(&mut self) -> Result<(Vec<TimeState<T>>, Vec<Vec<DVector<T>>>, usize)> {
        if self.iteration == 0 {
            let max_iter = match self.max_iter_first {
                Some(v) => v,
                None => {
                    let cal = self.calibrate(false, self.config.solver.p_first)?;
                    if self.max_iter_later.is_none() && self.config.solver.later_probe_warm == WarmSource::Naive {
                        let later = nearest_rank_percentile(&cal.counts, self.config.solver.p_later)?;
                        log::info!("calibrated later max_iter = {later} (p{}, naive warm starts)", self.config.solver.p_later);
                        self.max_iter_later = Some(later);
                    }
                    self.max_iter_first = Some(cal.max_iter);
                    cal.max_iter
                }
            };
            let starts = self.uniform_starts(self.config.trainer.n_first)?;
            let warm = self.naive_warm_starts(&starts);
            return Ok((starts, warm, max_iter));
        }
        let max_iter = match self.max_iter_later {
            Some(v) => v,
            None => {
                let actor_warm = self.config.solver.later_probe_warm == WarmSource::Actor;
                let v = self.calibrate(actor_warm, self.config.solver.p_later)?.max_iter;
                self.max_iter_later = Some(v);
                v
            }
        };
        let keep = self.config.later_episodes();
        let starts = if self.config.trainer.bic {
            let candidates = self.uniform_starts(self.config.trainer.candidate_multiplier * keep)?;
            select_initial_states_bic(&candidates, &self.std_critic, keep)?
        } else {
            self.uniform_starts(keep)?
        };
        let warm = self.actor_warm_starts(&starts)?;
        Ok((starts, warm, max_iter))
    }

    /// Sets the output scales of the value networks and the effective
    /// Sobolev weight from the first batch of targets.
    fn fit_output_scales(&mut self, samples: &[TOSample<T>]) {
        let values: Vec<f64> = samples.iter().map(|s| to_f64(s.v_bar)).collect();
        let (mean, std) = mean_std(&values);
        let std = std.max(1e-3 * (1.0 + mean.abs()));
        let grad_sq = samples.iter().map(|s| to_f64(s.v_bar_x.norm_squared())).sum::<f64>() / samples.len() as f64;
        let value_var = std * std;
        self.k_s_effective = if grad_sq > 0.0 {
            lit(self.config.nets.k_s * value_var / grad_sq)
        } else {
            lit(self.config.nets.k_s)
        };
        self.critic.output = OutputMap::Linear {
            scale: lit(std),
            offset: lit(mean),
        };
        self.target_critic.output = self.critic.output.clone();
        self.std_critic.output = OutputMap::PositiveSoftplus {
            scale: lit(std),
            floor: lit(self.config.nets.sigma_min),
        };
    }

    fn bootstrap(&self) -> Option<Bootstrap<'_, T>> {
        self.config.nets.bootstrap.then_some(Bootstrap {
            critic: &self.target_critic,
            horizon: self.task.model.horizon,
        })
    }

    /// `M` critic/actor cycles followed by `M` std-critic steps; returns the mean losses.
    fn update_networks(&mut self) -> Result<(f64, f64)> {
        let cycles = self.config.trainer.updates_per_iter;
        let batch_size = self.config.nets.batch_size;
        let horizon = self.task.model.horizon;
        let tau = lit::<T>(self.config.nets.polyak_tau);
        let bootstrap = self.config.nets.bootstrap;
        let mut critic_total = 0.0;
        for _ in 0..cycles {
            let batch = self.buffer.sample_minibatch(batch_size, &mut self.rng)?;
            let out = critic_loss(
                &self.critic,
                &self.target_critic,
                &batch,
                self.k_s_effective,
                bootstrap,
                horizon,
            )?;
            critic_total += to_f64(out.loss);
            let (critic, opt) = adam_step(&self.critic, &self.critic_opt, &out.grads)?;
            self.critic = critic;
            self.critic_opt = opt;

            let states: Vec<TimeState<T>> = batch.iter().map(|s| s.state.clone()).collect();
            let out = actor_loss(&self.actor, &self.critic, &self.task, &states)?;
            let (actor, opt) = adam_step(&self.actor, &self.actor_opt, &out.grads)?;
            self.actor = actor;
            self.actor_opt = opt;

            self.target_critic.polyak_toward(&self.critic, tau);
        }
        let mut std_total = 0.0;
        for _ in 0..cycles {
            let batch = self.buffer.sample_minibatch(batch_size, &mut self.rng)?;
            let out = std_critic_loss(&self.std_critic, &self.critic, &batch, self.bootstrap())?;
            std_total += to_f64(out.loss);
            let (std_critic, opt) = adam_step(&self.std_critic, &self.std_opt, &out.grads)?;
            self.std_critic = std_critic;
            self.std_opt = opt;
        }
        if !(self.critic.is_finite() && self.actor.is_finite() && self.std_critic.is_finite()) {
            return Err(Error::NonFinite {
                what: "network parameters",
                step: self.iteration,
            });
        }
        Ok((critic_total / cycles as f64, std_total / cycles as f64))
    }

    fn targets(&self, results: &[SolveResult<T>]) -> Result<Vec<TOSample<T>>> {
        let lookahead = self.config.trainer.lookahead;
        let target = &self.target_critic;
        let hook = |s: &TimeState<T>| {
            target
                .value_and_state_gradient(s)
                .expect("critic input matches the augmented state")
        };
        let use_hook = self.config.nets.bootstrap && !self.buffer.is_empty();
        let mut samples = Vec::new();
        for r in results {
            samples.extend(kstep_targets(
                &self.task,
                r,
                lookahead,
                if use_hook { Some(&hook) } else { None },
            )?);
        }
        Ok(samples)
    }

    /// Mean cost over the frozen Hard Region evaluation set.
    pub fn evaluate(&self) -> Result<f64> {
        let opts = self.opts(self.config.solver.max_iter_cap);
        let refine = self.config.trainer.eval_with_to.then_some(&opts);
        Ok(to_f64(evaluate_policy(&self.actor, &self.task, &self.eval_starts, refine)?))
    }

    /// One outer iteration: solve a batch, store its targets, update the networks.
    pub fn run_iteration(&mut self) -> Result<IterationReport> {
        let t0 = Instant::now();
        let (starts, warm, max_iter) = self.plan_batch()?;
        let results: Vec<SolveResult<T>> = solve_batch(&self.task, &starts, &warm, &self.opts(max_iter))?
            .into_iter()
            .collect::<Result<_>>()?;
        let costs: Vec<f64> = results.iter().map(|r| to_f64(r.cost)).collect();
        let converged = results.iter().filter(|r| r.converged).count();
        let samples = self.targets(&results)?;
        if self.buffer.is_empty() {
            self.fit_output_scales(&samples);
        }
        self.buffer.push_many(samples);
        let t_to = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let (critic_loss, std_loss) = self.update_networks()?;
        let t_nets = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let eval_mean_cost = self.evaluate()?;
        let t_eval = t2.elapsed().as_secs_f64();

        self.iteration += 1;
        self.episodes_cum += starts.len();
        let report = IterationReport {
            iteration: self.iteration,
            episodes: starts.len(),
            episodes_cum: self.episodes_cum,
            max_iter,
            to_mean_cost: mean_std(&costs).0,
            to_median_cost: median(&costs),
            converged_frac: converged as f64 / results.len() as f64,
            critic_loss,
            std_loss,
            eval_mean_cost,
            t_to_s: t_to,
            t_nets_s: t_nets,
            t_eval_s: t_eval,
        };
        log::info!(
            "iteration {}: episodes {} eval {:.3} TO mean {:.3} critic {:.4} std {:.4}",
            report.iteration,
            report.episodes_cum,
            report.eval_mean_cost,
            report.to_mean_cost,
            report.critic_loss,
            report.std_loss
        );
        self.reports.push(report.clone());
        Ok(report)
    }
}

/// Trained networks and the per-iteration reports.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub actor: MlpParams<T>,
    pub critic: MlpParams<T>,
    pub std_critic: MlpParams<T>,
    pub reports: Vec<IterationReport>,
}

/// Runs `config.trainer.iterations` iterations, calling `on_iteration`
/// after each one (for checkpoints and streamed reports).
pub fn train_with<T: Scalar>(
    config: TrainConfig,
    mut on_iteration: impl FnMut(&Trainer<T>, &IterationReport) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(config)?;
    for _ in 0..trainer.config.trainer.iterations {
        let report = trainer.run_iteration()?;
        on_iteration(&trainer, &report)?;
    }
    Ok(TrainOutcome {
        actor: trainer.actor,
        critic: trainer.critic,
        std_critic: trainer.std_critic,
        reports: trainer.reports,
    })
}

pub fn train<T: Scalar>(config: TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(config, |_, _| Ok(()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub x0: f64,
    pub v_bar: f64,
    pub v_critic: f64,
    pub v_std: f64,
    /// Local minimum reached by the naive-warm-start solve (0 = left, 1 = right).
    pub basin: usize,
}

#[derive(Clone, Debug)]
pub struct Toy1dDiagnostic {
    pub rows: Vec<DiagnosticRow>,
    /// Index `i` of the largest `|V̄[i+1] - V̄[i]|`.
    pub jump_index: usize,
    /// Number of basin changes along the grid.
    pub basin_changes: usize,
    pub std_argmax: usize,
    pub report: IterationReport,
}

pub const DIAGNOSTIC_GRID: usize = 400;

/// Naive-warm-start values on a dense grid of the Toy1D workspace, together
/// with the critic and std-critic after one training iteration.
pub fn toy1d_diagnostic(config: &TrainConfig) -> Result<Toy1dDiagnostic> {
    if config.model.kind != crate::envs::ModelKind::Toy1d {
        return Err(Error::InvalidArgument(format!(
            "the diagnostic needs the toy1d model, not {}",
            config.model.kind
        )));
    }
    let mut trainer: Trainer<f64> = Trainer::new(config.clone())?;
    let ws = &trainer.task.model.workspace;
    let (lo, hi) = (ws.lower[0], ws.upper[0]);
    let grid: Vec<TimeState<f64>> = (0..DIAGNOSTIC_GRID)
        .map(|i| TimeState::from_slice(&[lo + (hi - lo) * i as f64 / (DIAGNOSTIC_GRID - 1) as f64], 0))
        .collect();
    let warm: Vec<_> = grid.iter().map(|s| naive_warm_start(&trainer.task, s)).collect();
    let opts = config.solve_options::<f64>(config.solver.max_iter_cap);
    let results: Vec<SolveResult<f64>> = solve_batch(&trainer.task, &grid, &warm, &opts)?
        .into_iter()
        .collect::<Result<_>>()?;

    // Two clusters of final states, split at the widest gap.
    let finals: Vec<f64> = results.iter().map(|r| r.traj.final_state().x[0]).collect();
    let mut sorted = finals.clone();
    sorted.sort_by(f64::total_cmp);
    let split = (0..sorted.len() - 1)
        .max_by(|&a, &b| (sorted[a + 1] - sorted[a]).total_cmp(&(sorted[b + 1] - sorted[b])))
        .map(|i| 0.5 * (sorted[i] + sorted[i + 1]))
        .unwrap_or(0.0);
    let basins: Vec<usize> = finals.iter().map(|&x| usize::from(x > split)).collect();
    let basin_changes = basins.windows(2).filter(|w| w[0] != w[1]).count();

    let report = trainer.run_iteration()?;
    let inputs = augment_batch(&grid);
    let critic = trainer.critic.forward_batch(&inputs)?;
    let std = trainer.std_critic.forward_batch(&inputs)?;
    let rows: Vec<DiagnosticRow> = (0..grid.len())
        .map(|i| DiagnosticRow {
            x0: grid[i].x[0],
            v_bar: results[i].cost,
            v_critic: critic[(0, i)],
            v_std: std[(0, i)],
            basin: basins[i],
        })
        .collect();
    let jump_index = (0..rows.len() - 1)
        .max_by(|&a, &b| {
            let ga = (rows[a + 1].v_bar - rows[a].v_bar).abs();
            let gb = (rows[b + 1].v_bar - rows[b].v_bar).abs();
            ga.total_cmp(&gb)
        })
        .unwrap_or(0);
    let std_argmax = (0..rows.len())
        .max_by(|&a, &b| rows[a].v_std.total_cmp(&rows[b].v_std))
        .unwrap_or(0);
    Ok(Toy1dDiagnostic {
        rows,
        jump_index,
        basin_changes,
        std_argmax,
        report,
    })
}
