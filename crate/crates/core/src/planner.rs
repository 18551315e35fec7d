//! Evaluation metrics and sampling-based model-predictive control.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::action::{action_contacts, canonicalize, start_is_clear};
use crate::egnn::{egnn_forward, loss, EgnnParams};
use crate::error::{check_len, Error, Result};
use crate::guidance::guided_step;
use crate::types::{centroid, ParticleState, PointCloud, PushAction, SpringGraph, Vec3};
use crate::worlds::{grasp_target, world_step, AgentMode, LearnerModel, World, PARTICLE_MASS};

/// Mean paired distance between corresponding particles.
pub fn particle_distance(a: &ParticleState, b: &[Vec3]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if b.is_empty() {
        return Err(Error::InvalidInput("no particles to compare".into()));
    }
    Ok(a.positions.iter().zip(b).map(|(p, q)| p.distance(*q)).sum::<f64>() / b.len() as f64)
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| p.distance(*q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric chamfer distance over raw point slices.
pub fn chamfer_points(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("chamfer distance needs two nonempty clouds".into()));
    }
    Ok(mean_nearest(a, b) + mean_nearest(b, a))
}

/// Mean unsquared nearest-neighbour distance from `a` to `b` plus from `b`
/// to `a`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_points(&a.points, &b.points)
}

/// `100 * (chamfer + shape loss)`.
pub fn cd_plus_s(pred: &ParticleState, target: &ParticleState, pairs: &[(usize, usize)]) -> Result<f64> {
    check_len(target.len(), pred.len())?;
    let (_, _, shape) = loss(&pred.positions, &target.positions, pairs)?;
    Ok(100.0 * (chamfer_points(&pred.positions, &target.positions)? + shape))
}

/// `P(x < y) - P(x > y)` over all pairs.
pub fn cliffs_delta(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidInput("Cliff's delta needs two nonempty samples".into()));
    }
    let mut score: i64 = 0;
    for x in xs {
        for y in ys {
            if x < y {
                score += 1;
            } else if x > y {
                score -= 1;
            }
        }
    }
    Ok(score as f64 / (xs.len() * ys.len()) as f64)
}

/// Target configuration for planning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub cloud: PointCloud,
    pub success_threshold: f64,
}

impl Goal {
    pub fn new(cloud: PointCloud) -> Self {
        Goal {
            cloud,
            success_threshold: 0.1,
        }
    }

    pub fn distance(&self, positions: &[Vec3]) -> Result<f64> {
        chamfer_points(positions, &self.cloud.points)
    }
}

/// A relocation goal: the object's current shape moved by a random planar
/// translation of length within `shift` and turned by at most `max_turn`
/// radians about its centroid. Points keep the particle order.
pub fn relocation_goal<R: Rng + ?Sized>(positions: &[Vec3], shift: (f64, f64), max_turn: f64, rng: &mut R) -> Result<Goal> {
    if positions.is_empty() {
        return Err(Error::InvalidInput("cannot build a goal from no particles".into()));
    }
    let c = centroid(positions);
    let dist = rng.gen_range(shift.0..=shift.1);
    let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let turn = rng.gen_range(-max_turn..=max_turn);
    let offset = Vec3::new(dist * heading.cos(), dist * heading.sin(), 0.0);
    let points = positions.iter().map(|p| c + (*p - c).rotate_z(turn) + offset).collect();
    Ok(Goal::new(PointCloud::new(points)?))
}

/// Chains network predictions over `actions`. With `guided` each prediction
/// is projected through the learner's spring-mass model; without it the raw
/// predicted positions are used. Velocities are zero between actions.
pub fn rollout(
    state: &ParticleState,
    graph: &SpringGraph,
    actions: &[PushAction],
    model: &EgnnParams,
    guided: bool,
    learner: &LearnerModel,
) -> Result<Vec<ParticleState>> {
    let pairs = graph.pairs();
    let mut cur = state.clone();
    cur.zero_velocities();
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(cur.clone());
    for a in actions {
        let feats = canonicalize(&cur.positions, a, learner.sim.ground_height)?;
        let pred = egnn_forward(&cur.positions, &feats, &pairs, model)?;
        cur = if guided {
            let mut s = guided_step(&cur, graph, &pred, &learner.guidance.gains, &learner.guidance.convergence, &learner.sim)?;
            s.zero_velocities();
            s
        } else {
            ParticleState::new(pred, vec![Vec3::ZERO; cur.len()], cur.masses.clone())?
        };
        out.push(cur.clone());
    }
    Ok(out)
}

/// Which terminal distance the planner minimises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanCost {
    #[default]
    Chamfer,
    Particle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub n_samples: usize,
    pub n_iters: usize,
    pub elite_frac: f64,
    /// Actions per plan.
    pub horizon: usize,
    /// Initial standard deviation of every action coordinate.
    pub init_std: f64,
    pub min_std: f64,
    /// Coordinates are clamped to `[-bound, bound]`.
    pub bound: f64,
    /// Longer pushes are shortened to this length.
    pub max_push: f64,
    /// Added to the cost of actions that miss the object or start inside it.
    pub invalid_penalty: f64,
    pub cost: PlanCost,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            n_samples: 500,
            n_iters: 30,
            elite_frac: 0.1,
            horizon: 1,
            init_std: 0.15,
            min_std: 1e-3,
            bound: 1.5,
            max_push: 0.25,
            invalid_penalty: 1.0,
            cost: PlanCost::Chamfer,
        }
    }
}

impl CemConfig {
    pub fn n_elites(&self) -> usize {
        ((self.elite_frac * self.n_samples as f64).round() as usize).clamp(1, self.n_samples.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_iters == 0 || self.horizon == 0 {
            return Err(Error::InvalidInput("CEM needs samples, iterations and a horizon".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(Error::InvalidInput("elite fraction must lie in (0, 1]".into()));
        }
        if !(self.init_std > 0.0 && self.min_std > 0.0 && self.bound > 0.0 && self.max_push > 0.0) {
            return Err(Error::InvalidInput("CEM spreads and bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of a cross-entropy search.
#[derive(Clone, Debug, PartialEq)]
pub struct CemResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Best cost after each iteration.
    pub history: Vec<f64>,
}

/// Cross-entropy minimisation of `cost` over a diagonal Gaussian, clamped to
/// `[lo, hi]` per coordinate. The best sample so far joins every elite set.
/// Failed evaluations count as infinitely bad.
#[allow(clippy::too_many_arguments)]
pub fn cem_minimize<F>(
    mean: Vec<f64>,
    std: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    cfg: &CemConfig,
    rng: &mut ChaCha8Rng,
    mut cost: F,
) -> Result<CemResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    let d = mean.len();
    check_len(d, std.len())?;
    check_len(d, lo.len())?;
    check_len(d, hi.len())?;
    let mut mean = mean;
    let mut std = std;
    let k = cfg.n_elites();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::with_capacity(cfg.n_iters);

    for _ in 0..cfg.n_iters {
        let mut scored: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.n_samples + 1);
        for _ in 0..cfg.n_samples {
            let x: Vec<f64> = (0..d)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(rng);
                    (mean[j] + std[j] * z).clamp(lo[j], hi[j])
                })
                .collect();
            let c = match cost(&x) {
                Ok(c) if c.is_finite() => c,
                Ok(_) | Err(_) => f64::INFINITY,
            };
            scored.push((x, c));
        }
        if let Some(b) = &best {
            scored.push(b.clone());
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        if !scored[0].1.is_finite() {
            continue;
        }
        best = Some(scored[0].clone());
        history.push(scored[0].1);

        let elites: Vec<&Vec<f64>> = scored.iter().take(k).filter(|s| s.1.is_finite()).map(|s| &s.0).collect();
        let m = elites.len() as f64;
        for j in 0..d {
            let mu = elites.iter().map(|e| e[j]).sum::<f64>() / m;
            let var = elites.iter().map(|e| (e[j] - mu).powi(2)).sum::<f64>() / m;
            mean[j] = mu;
            std[j] = var.sqrt().max(cfg.min_std);
        }
    }
    match best {
        Some((best, best_cost)) => Ok(CemResult {
            best,
            best_cost,
            history,
        }),
        None => Err(Error::Planning("every candidate failed to evaluate".into())),
    }
}

/// What the planner needs besides the state and goal.
#[derive(Clone, Copy, Debug)]
pub struct PlanContext<'a> {
    pub model: &'a EgnnParams,
    pub graph: &'a SpringGraph,
    pub learner: &'a LearnerModel,
    pub guided: bool,
    pub agent_mode: AgentMode,
    /// Radius of the end effector: pushes must pass this close to a particle
    /// and must not start this close to one.
    pub contact_radius: f64,
    /// How far from its start a pick may find a particle.
    pub grasp_reach: f64,
    pub duration: f64,
}

impl PlanContext<'_> {
    /// Whether `action` would move the object at all: a push must start clear
    /// of it and sweep past a particle, a pick must start near one.
    pub fn action_is_effective(&self, positions: &[Vec3], action: &PushAction) -> bool {
        match self.agent_mode {
            AgentMode::Pusher => {
                action_contacts(positions, action, self.contact_radius) && start_is_clear(positions, action, self.contact_radius)
            }
            AgentMode::Picker => grasp_target(positions, action, self.grasp_reach).is_some(),
        }
    }
}

/// Decodes `[sx, sy, ex, ey]*` into actions, shortening pushes longer than
/// `max_push`. `None` for a zero-length push.
pub fn decode_actions(x: &[f64], max_push: f64, duration: f64) -> Option<Vec<PushAction>> {
    x.chunks_exact(4)
        .map(|c| {
            let s = [c[0], c[1]];
            let (mut dx, mut dy) = (c[2] - c[0], c[3] - c[1]);
            let len = dx.hypot(dy);
            if len > max_push {
                dx *= max_push / len;
                dy *= max_push / len;
            }
            PushAction::new(s, [s[0] + dx, s[1] + dy], duration).ok()
        })
        .collect()
}

fn terminal_cost(positions: &[Vec3], goal: &Goal, kind: PlanCost) -> Result<f64> {
    match kind {
        PlanCost::Chamfer => goal.distance(positions),
        PlanCost::Particle if positions.len() == goal.cloud.len() => {
            Ok(positions.iter().zip(&goal.cloud.points).map(|(p, q)| p.distance(*q)).sum::<f64>() / positions.len() as f64)
        }
        PlanCost::Particle => goal.distance(positions),
    }
}

/// Predicted terminal cost of an action sequence. Actions that would not
/// move the object leave the state unchanged and add a penalty.
pub fn sequence_cost(state: &ParticleState, actions: &[PushAction], goal: &Goal, ctx: &PlanContext, cfg: &CemConfig) -> Result<f64> {
    let mut cur = state.clone();
    let mut penalty = 0.0;
    for a in actions {
        if !ctx.action_is_effective(&cur.positions, a) {
            penalty += cfg.invalid_penalty;
            continue;
        }
        let traj = rollout(&cur, ctx.graph, std::slice::from_ref(a), ctx.model, ctx.guided, ctx.learner)?;
        cur = traj.into_iter().last().expect("rollout returns the initial state");
    }
    Ok(terminal_cost(&cur.positions, goal, cfg.cost)? + penalty)
}

/// Plans `cfg.horizon` pushes toward `goal`. The search starts from pushes
/// running from the object's centroid toward the goal's.
pub fn cem_plan(state: &ParticleState, goal: &Goal, ctx: &PlanContext, cfg: &CemConfig, seed: u64) -> Result<(Vec<PushAction>, f64)> {
    cfg.validate()?;
    let c = centroid(&state.positions);
    let g = centroid(&goal.cloud.points);
    let mut mean = Vec::with_capacity(4 * cfg.horizon);
    for _ in 0..cfg.horizon {
        mean.extend_from_slice(&[c.x, c.y, g.x, g.y]);
    }
    let d = mean.len();
    let lo: Vec<f64> = mean.iter().map(|m| m - cfg.bound).collect();
    let hi: Vec<f64> = mean.iter().map(|m| m + cfg.bound).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = cem_minimize(mean, vec![cfg.init_std; d], &lo, &hi, cfg, &mut rng, |x| {
        let actions = decode_actions(x, cfg.max_push, ctx.duration).ok_or_else(|| Error::InvalidAction("zero-length push".into()))?;
        sequence_cost(state, &actions, goal, ctx, cfg)
    })?;
    let actions = decode_actions(&res.best, cfg.max_push, ctx.duration).ok_or_else(|| Error::Planning("best plan is degenerate".into()))?;
    Ok((actions, res.best_cost))
}

/// Per-episode log of a closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub initial_chamfer: f64,
    /// Chamfer distance to the goal after every executed action.
    pub chamfer: Vec<f64>,
    pub particle_distance: Vec<f64>,
    pub predicted_cost: Vec<f64>,
    pub actions: Vec<PushAction>,
    /// Planning wall time per step; zero unless timing was requested.
    pub wall_ms: Vec<f64>,
    pub success: bool,
    pub steps: usize,
}

impl EpisodeRecord {
    pub fn final_chamfer(&self) -> f64 {
        self.chamfer.last().copied().unwrap_or(self.initial_chamfer)
    }
}

/// Options for [`mpc_loop`] beyond the planner's.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MpcOptions {
    pub max_steps: usize,
    pub guided: bool,
    pub record_wall_time: bool,
}

/// Plan, execute the first action in the world, observe, repeat; stops once
/// the goal is within its success threshold or after `max_steps` actions.
pub fn mpc_loop(world: &mut World, goal: &Goal, model: &EgnnParams, cfg: &CemConfig, opts: MpcOptions, seed: u64) -> Result<EpisodeRecord> {
    if opts.max_steps == 0 {
        return Err(Error::InvalidInput("max_steps must be at least 1".into()));
    }
    let graph = world.learner_graph()?;
    let learner = world.learner;
    let ctx = PlanContext {
        model,
        graph: &graph,
        learner: &learner,
        guided: opts.guided,
        agent_mode: world.spec.agent_mode,
        contact_radius: world.spec.effector_radius,
        grasp_reach: world.spec.grasp_reach(),
        duration: world.spec.action_duration,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_chamfer = goal.distance(&world.state.positions)?;
    let mut rec = EpisodeRecord {
        initial_chamfer,
        chamfer: Vec::new(),
        particle_distance: Vec::new(),
        predicted_cost: Vec::new(),
        actions: Vec::new(),
        wall_ms: Vec::new(),
        success: initial_chamfer <= goal.success_threshold,
        steps: 0,
    };
    while !rec.success && rec.steps < opts.max_steps {
        let started = Instant::now();
        let obs = ParticleState::at_rest(world.state.positions.clone(), PARTICLE_MASS)?;
        let (plan, predicted) = cem_plan(&obs, goal, &ctx, cfg, rng.gen())?;
        let mut action = plan[0];
        if !ctx.action_is_effective(&obs.positions, &action) {
            log::debug!("planner found no effective action; sampling one");
            action = world.sample_action(&mut rng)?;
        }
        rec.wall_ms.push(if opts.record_wall_time { started.elapsed().as_secs_f64() * 1e3 } else { 0.0 });
        world_step(world, &action)?;
        let c = goal.distance(&world.state.positions)?;
        let pd = if goal.cloud.len() == world.state.len() {
            particle_distance(&world.state, &goal.cloud.points)?
        } else {
            f64::NAN
        };
        rec.steps += 1;
        rec.chamfer.push(c);
        rec.particle_distance.push(pd);
        rec.predicted_cost.push(predicted);
        rec.actions.push(action);
        rec.success = c <= goal.success_threshold;
        log::debug!("mpc step {}: chamfer={c:.4} predicted={predicted:.4}", rec.steps);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egnn::EgnnConfig;
    use crate::worlds::{make_world, ObjectKind, WorldSpec};

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn cloud(p: &[Vec3]) -> PointCloud {
        PointCloud::new(p.to_vec()).unwrap()
    }

    #[test]
    fn particle_distance_examples() {
        let a = ParticleState::at_rest(vec![v(0., 0., 0.), v(1., 2., 3.)], 1.0).unwrap();
        assert_eq!(particle_distance(&a, &a.positions).unwrap(), 0.0);
        let b: Vec<Vec3> = a.positions.iter().map(|p| *p + v(1., 0., 0.)).collect();
        assert!((particle_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!(particle_distance(&a, &b[..1]).is_err());
    }

    #[test]
    fn particle_distance_by_hand() {
        let a = ParticleState::at_rest(vec![v(0., 0., 0.), v(1., 1., 0.), v(2., 0., 0.), v(0., 3., 0.), v(5., 5., 5.)], 1.0).unwrap();
        let b = [v(3., 4., 0.), v(1., 1., 0.), v(2., 0., 2.), v(0., 0., 4.), v(5., 5., 6.)];
        // 5 + 0 + 2 + 5 + 1
        assert!((particle_distance(&a, &b).unwrap() - 13.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn chamfer_examples() {
        let a = [v(0., 0., 0.), v(1., 1., 0.)];
        assert_eq!(chamfer_distance(&cloud(&a), &cloud(&a)).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&cloud(&[v(0., 0., 0.)]), &cloud(&[v(1., 0., 0.)])).unwrap(), 2.0);
        assert_eq!(chamfer_distance(&cloud(&[v(0., 0., 0.), v(2., 0., 0.)]), &cloud(&[v(0., 0., 0.)])).unwrap(), 1.0);
        assert!(chamfer_points(&[], &a).is_err());
    }

    #[test]
    fn cd_plus_s_examples() {
        let t = ParticleState::at_rest(vec![v(0., 0., 0.), v(1., 0., 0.), v(1., 1., 0.)], 1.0).unwrap();
        let pairs = [(0, 1), (1, 2)];
        assert_eq!(cd_plus_s(&t, &t, &pairs).unwrap(), 0.0);
        let d = 0.1;
        let moved = ParticleState::at_rest(t.positions.iter().map(|p| *p + v(d, 0., 0.)).collect(), 1.0).unwrap();
        assert!((cd_plus_s(&moved, &t, &pairs).unwrap() - 100.0 * 2.0 * d).abs() < 1e-12);
    }

    #[test]
    fn cd_plus_s_by_hand() {
        let pred = ParticleState::at_rest(vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.), v(3., 0., 0.)], 1.0).unwrap();
        let target = ParticleState::at_rest(vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 2., 0.), v(3., 0., 0.)], 1.0).unwrap();
        // pred->target nearest: 0, 0, 1 (to (0,0,0) or (0,2,0)), 0 -> 0.25
        // target->pred nearest: 0, 0, 1, 0 -> 0.25
        // shape over (0,2),(1,3): (0,-1,0)-(0,-2,0) -> 1; (-2,0,0)-(-2,0,0) -> 0 -> 0.5
        let got = cd_plus_s(&pred, &target, &[(0, 2), (1, 3)]).unwrap();
        assert!((got - 100.0 * (0.5 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn cliffs_delta_examples() {
        assert_eq!(cliffs_delta(&[1., 2., 3.], &[3., 1., 2.]).unwrap(), 0.0);
        assert_eq!(cliffs_delta(&[1., 2.], &[3., 4.]).unwrap(), 1.0);
        assert_eq!(cliffs_delta(&[1., 3.], &[2.]).unwrap(), 0.0);
        assert!(cliffs_delta(&[], &[1.]).is_err());
    }

    #[test]
    fn cem_finds_a_one_dimensional_optimum() {
        let cfg = CemConfig {
            n_samples: 100,
            n_iters: 30,
            init_std: 1.0,
            min_std: 1e-6,
            ..CemConfig::default()
        };
        let target = 0.7317;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = cem_minimize(vec![0.0], vec![1.0], &[-5.0], &[5.0], &cfg, &mut rng, |x| Ok((x[0] - target).powi(2))).unwrap();
        assert!((r.best[0] - target).abs() <= 1e-3);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn cem_reports_total_failure() {
        let cfg = CemConfig {
            n_samples: 5,
            n_iters: 2,
            ..CemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = cem_minimize(vec![0.0], vec![1.0], &[-1.0], &[1.0], &cfg, &mut rng, |_| Err(Error::Numeric("boom".into())));
        assert!(matches!(r, Err(Error::Planning(_))));
    }

    fn setup() -> (World, EgnnParams, SpringGraph) {
        let w = make_world(&WorldSpec::new(ObjectKind::Tblock, 2)).unwrap();
        let g = w.learner_graph().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = EgnnParams::random(EgnnConfig::new(2, 8), 0.05, &mut rng).unwrap();
        (w, model, g)
    }

    #[test]
    fn rollout_contract() {
        let (w, model, g) = setup();
        let traj = rollout(&w.state, &g, &[], &model, true, &w.learner).unwrap();
        assert_eq!(traj, vec![w.state.clone()]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = w.sample_action(&mut rng).unwrap();
        let guided = rollout(&w.state, &g, &[a, a], &model, true, &w.learner).unwrap();
        assert_eq!(guided.len(), 3);
        for s in &guided {
            assert!(s.positions.iter().all(|p| p.z >= -1e-9));
        }
        let raw = rollout(&w.state, &g, &[a], &model, false, &w.learner).unwrap();
        assert!(raw[1].velocities.iter().all(|v| *v == Vec3::ZERO));
    }

    #[test]
    fn planning_is_deterministic_and_prefers_staying_at_goal() {
        let (w, model, g) = setup();
        let ctx = PlanContext {
            model: &model,
            graph: &g,
            learner: &w.learner,
            guided: true,
            agent_mode: w.spec.agent_mode,
            contact_radius: w.spec.effector_radius,
            grasp_reach: w.spec.grasp_reach(),
            duration: 1.0,
        };
        let cfg = CemConfig {
            n_samples: 16,
            n_iters: 3,
            ..CemConfig::default()
        };
        let goal = Goal::new(w.observe());
        let (p1, c1) = cem_plan(&w.state, &goal, &ctx, &cfg, 5).unwrap();
        let (p2, c2) = cem_plan(&w.state, &goal, &ctx, &cfg, 5).unwrap();
        assert_eq!((p1, c1), (p2, c2));
        assert!(c1 < 0.05, "cost {c1}");
    }

    #[test]
    fn satisfied_goal_needs_no_actions() {
        let (mut w, model, _) = setup();
        let goal = Goal::new(w.observe());
        let opts = MpcOptions {
            max_steps: 5,
            guided: true,
            record_wall_time: false,
        };
        let rec = mpc_loop(&mut w, &goal, &model, &CemConfig::default(), opts, 0).unwrap();
        assert!(rec.success);
        assert_eq!(rec.steps, 0);
        assert!(rec.chamfer.is_empty());
    }

    #[test]
    fn episode_length_is_bounded() {
        let (mut w, model, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let goal = relocation_goal(&w.state.positions, (0.3, 0.3), 0.0, &mut rng).unwrap();
        let cfg = CemConfig {
            n_samples: 8,
            n_iters: 2,
            ..CemConfig::default()
        };
        let opts = MpcOptions {
            max_steps: 2,
            guided: false,
            record_wall_time: false,
        };
        let rec = mpc_loop(&mut w, &goal, &model, &cfg, opts, 1).unwrap();
        assert!(rec.chamfer.len() <= 2);
        assert_eq!(rec.steps, rec.chamfer.len());
    }
}
