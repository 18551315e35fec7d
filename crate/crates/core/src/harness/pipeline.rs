use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::egnn::{adam_update, backward_weighted, AdamState, EgnnParams, GradientBundle, TrainingSample};
use crate::error::{Error, Result};
use crate::planner::{cd_plus_s, mpc_loop, relocation_goal, rollout, EpisodeRecord, Goal, MpcOptions};
use crate::worlds::{generate_dataset_with, generate_episodes_with, make_world_posed, Episode, InteractionSequence, World};

use super::config::{seeds, ExperimentConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Equal to the training loss when nothing is held out.
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub params: EgnnParams,
    pub curve: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    /// Training-set loss of the initial weights.
    pub initial_loss: f64,
}

/// Training sequences for the configured object.
pub fn training_data(cfg: &ExperimentConfig, n: usize) -> Result<Vec<InteractionSequence>> {
    generate_dataset_with(&cfg.world_spec(), n, cfg.sub_seed(seeds::TRAIN_DATA), &cfg.learner())
}

/// Held-out multi-action episodes, long enough for the largest horizon.
pub fn eval_data(cfg: &ExperimentConfig) -> Result<Vec<Episode>> {
    let h = *cfg.horizons.last().expect("validated horizons");
    generate_episodes_with(&cfg.world_spec(), cfg.eval_episodes, h, cfg.sub_seed(seeds::EVAL_DATA), &cfg.learner())
}

fn mean_loss(samples: &[&TrainingSample], params: &EgnnParams, shape_weight: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += s.evaluate(params, shape_weight)?.total;
    }
    Ok(total / samples.len().max(1) as f64)
}

fn clip(grads: &mut GradientBundle, max_norm: f64) {
    let norm = grads.flat().iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Fits the network to `(state, action, tracked target)` samples with Adam,
/// holding out a fraction of sequences for checkpoint selection.
pub fn train_on(sequences: &[InteractionSequence], cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    if sequences.is_empty() {
        return Err(Error::InvalidInput("no training sequences".into()));
    }
    let samples: Vec<TrainingSample> = sequences.iter().map(|s| s.training_sample()).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(seeds::TRAINING));

    let degree = 2.0 * samples[0].edges.len() as f64 / samples[0].positions.len() as f64;
    let coord_scale = 1.0 / degree.max(1.0);
    let mut params = EgnnParams::init(cfg.model, coord_scale, &mut rng)?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if samples.len() > 1 {
        ((cfg.training.val_fraction * samples.len() as f64).round() as usize).min(samples.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let train: Vec<&TrainingSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val: Vec<&TrainingSample> = val_idx.iter().map(|&i| &samples[i]).collect();

    let tc = &cfg.training;
    let initial_loss = mean_loss(&train, &params, tc.shape_weight)?;
    let mut adam = AdamState::new(&params);
    let mut best: Option<(f64, usize, EgnnParams)> = None;
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut batch_order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..tc.epochs {
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in batch_order.chunks(tc.batch_size) {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (mut grads, l) = backward_weighted(&batch, &params, tc.shape_weight).map_err(|_| Error::Training { epoch })?;
            if let Some(c) = tc.grad_clip {
                clip(&mut grads, c);
            }
            adam_update(&mut params, &grads, &mut adam, tc.lr)?;
            epoch_loss += l * chunk.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(&val, &params, tc.shape_weight).map_err(|_| Error::Training { epoch })?
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training { epoch });
        }
        log::debug!("epoch {epoch}: train={train_loss:.4e} val={val_loss:.4e}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        curve,
        best_epoch,
        initial_loss,
    })
}

/// Generates the configured training data and fits a model to it.
pub fn train(cfg: &ExperimentConfig) -> Result<(TrainOutcome, Vec<InteractionSequence>)> {
    cfg.validate()?;
    let data = training_data(cfg, cfg.data_size())?;
    Ok((train_on(&data, cfg)?, data))
}

/// Mean and spread of CD+S at one horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonStats {
    pub horizon: usize,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

/// CD+S of autoregressive predictions against the world after each of the
/// first `h` actions, per episode. A rollout that blows up scores infinity
/// from that step on.
pub fn episode_errors(model: &EgnnParams, episodes: &[Episode], horizons: &[usize], guided: bool, cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let learner = cfg.learner();
    let h_max = horizons.iter().copied().max().unwrap_or(0);
    let mut per_h = vec![Vec::with_capacity(episodes.len()); horizons.len()];
    for (e, ep) in episodes.iter().enumerate() {
        if ep.actions.len() < h_max {
            return Err(Error::InvalidInput(format!("episode has {} actions, horizon {h_max} requested", ep.actions.len())));
        }
        let graph = ep.learner_graph()?;
        let pairs = graph.pairs();
        let mut traj = vec![ep.initial_state.clone()];
        for a in &ep.actions[..h_max] {
            let last = traj.last().expect("starts with the initial state");
            match rollout(last, &graph, std::slice::from_ref(a), model, guided, &learner) {
                Ok(mut t) => traj.push(t.pop().expect("rollout returns the next state")),
                Err(err) if err.is_numeric() => {
                    log::warn!("episode {e}: rollout diverged after {} actions: {err}", traj.len() - 1);
                    break;
                }
                Err(err) => return Err(err),
            }
        }
        for (k, &h) in horizons.iter().enumerate() {
            let err = match traj.get(h) {
                Some(s) => cd_plus_s(s, &ep.states[h - 1], &pairs)?,
                None => f64::INFINITY,
            };
            per_h[k].push(err);
        }
    }
    Ok(per_h)
}

/// Mean ± std CD+S per horizon.
pub fn eval_dynamics(model: &EgnnParams, episodes: &[Episode], horizons: &[usize], guided: bool, cfg: &ExperimentConfig) -> Result<Vec<HorizonStats>> {
    if episodes.is_empty() {
        return Err(Error::InvalidInput("no evaluation episodes".into()));
    }
    let errs = episode_errors(model, episodes, horizons, guided, cfg)?;
    Ok(horizons
        .iter()
        .zip(errs)
        .map(|(&horizon, e)| {
            let n = e.len() as f64;
            let mean = e.iter().sum::<f64>() / n;
            let std = if mean.is_finite() {
                (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
            } else {
                f64::INFINITY
            };
            HorizonStats {
                horizon,
                mean,
                std,
                episodes: e.len(),
            }
        })
        .collect())
}

/// One relocation task: a starting pose and a goal, shared across modes.
#[derive(Clone, Debug)]
pub struct PlanningTask {
    pub goal_index: usize,
    pub repeat: usize,
    pub world: World,
    pub goal: Goal,
    pub seed: u64,
}

/// The goal × repeat grid, identical for every model evaluated under `cfg`.
pub fn planning_tasks(cfg: &ExperimentConfig) -> Result<Vec<PlanningTask>> {
    let p = &cfg.planning;
    let spec = cfg.world_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(seeds::PLANNING));
    let mut tasks = Vec::with_capacity(p.goals * p.repeats);
    for goal_index in 0..p.goals {
        let mut world = make_world_posed(&spec, rng.gen())?;
        world.learner = cfg.learner();
        let mut goal = relocation_goal(&world.state.positions, p.goal_shift, p.goal_max_turn_deg.to_radians(), &mut rng)?;
        goal.success_threshold = p.success_threshold;
        for repeat in 0..p.repeats {
            tasks.push(PlanningTask {
                goal_index,
                repeat,
                world: world.clone(),
                goal: goal.clone(),
                seed: rng.gen(),
            });
        }
    }
    Ok(tasks)
}

/// Closed-loop relocation over the task grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanningRun {
    pub guided: bool,
    pub records: Vec<EpisodeRecord>,
}

impl PlanningRun {
    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    pub fn success_rate(&self) -> f64 {
        self.successes() as f64 / self.records.len().max(1) as f64
    }

    pub fn final_chamfers(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.final_chamfer()).collect()
    }

    /// Fraction of episodes ending within each threshold.
    pub fn success_curve(&self, thresholds: &[f64]) -> Vec<(f64, f64)> {
        let finals = self.final_chamfers();
        thresholds
            .iter()
            .map(|&t| {
                let hit = finals.iter().filter(|c| **c <= t).count();
                (t, hit as f64 / finals.len().max(1) as f64)
            })
            .collect()
    }

    /// Actions used by successful episodes.
    pub fn steps_to_solve(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.success).map(|r| r.steps).collect()
    }
}

/// Runs model-predictive control on every task.
pub fn eval_planning(model: &EgnnParams, tasks: &[PlanningTask], guided: bool, cfg: &ExperimentConfig) -> Result<PlanningRun> {
    let opts = MpcOptions {
        max_steps: cfg.planning.max_steps,
        guided,
        record_wall_time: cfg.planning.record_wall_time,
    };
    let mut records = Vec::with_capacity(tasks.len());
    for t in tasks {
        let mut world = t.world.clone();
        world.learner = cfg.planning_learner();
        let rec = mpc_loop(&mut world, &t.goal, model, &cfg.cem, opts, t.seed)?;
        log::info!(
            "goal {} repeat {} ({}): success={} steps={} chamfer={:.4}",
            t.goal_index,
            t.repeat,
            if guided { "guided" } else { "unguided" },
            rec.success,
            rec.steps,
            rec.final_chamfer()
        );
        records.push(rec);
    }
    Ok(PlanningRun { guided, records })
}
