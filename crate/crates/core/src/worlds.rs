//! Synthetic ground-truth worlds standing in for a robot and camera rig.
//!
//! Each world is a spring-mass object simulated with hidden, perturbed
//! parameters at a finer time step than the learner uses. A kinematic
//! end effector (a planar disc for pushing, or a grasp for picking) moves
//! along the action segment; observations are the particle positions.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{canonicalize, sample_push_action};
use crate::egnn::TrainingSample;
use crate::error::{Error, Result};
use crate::guidance::{nearest_point_setpoints, track_to_setpoints, Controller, ConvergenceSpec, PidGains};
use crate::physics::{euler_step, net_forces, ForceField, SimConfig, DEFAULT_DAMPING};
use crate::types::{build_graph, centroid, downsample_cloud, ParticleState, PointCloud, PushAction, SpringGraph, Vec3};

/// Uniform particle mass used by worlds and learner alike.
pub const PARTICLE_MASS: f64 = 1.0;

/// Observations per action duration.
pub const FRAMES_PER_ACTION: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Tblock,
    StiffRope,
    BendyRope,
    Cloth,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [
        ObjectKind::Tblock,
        ObjectKind::StiffRope,
        ObjectKind::BendyRope,
        ObjectKind::Cloth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Tblock => "tblock",
            ObjectKind::StiffRope => "stiff-rope",
            ObjectKind::BendyRope => "bendy-rope",
            ObjectKind::Cloth => "cloth",
        }
    }

    /// Stiffness of the ground-truth object before per-object perturbation.
    pub fn world_stiffness(self) -> f64 {
        match self {
            ObjectKind::Tblock => 20000.0,
            ObjectKind::StiffRope => 20000.0,
            ObjectKind::BendyRope => 1000.0,
            ObjectKind::Cloth => 2000.0,
        }
    }

    /// Stiffness the learner's spring-mass model assumes. Lower than the
    /// world's because the learner integrates with a coarser step.
    pub fn learner_stiffness(self) -> f64 {
        match self {
            ObjectKind::Tblock => 1000.0,
            ObjectKind::StiffRope => 1000.0,
            ObjectKind::BendyRope => 100.0,
            ObjectKind::Cloth => 300.0,
        }
    }

    /// Connection radius as a multiple of the largest nearest-neighbour gap.
    fn connect_factor(self) -> f64 {
        match self {
            ObjectKind::StiffRope | ObjectKind::BendyRope => 2.05,
            _ => 1.5,
        }
    }

    /// Cloth is dragged by a grasped particle; everything else is pushed.
    pub fn default_agent_mode(self) -> AgentMode {
        match self {
            ObjectKind::Cloth => AgentMode::Picker,
            _ => AgentMode::Pusher,
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "tblock" | "t-block" => Ok(ObjectKind::Tblock),
            "stiff-rope" => Ok(ObjectKind::StiffRope),
            "bendy-rope" => Ok(ObjectKind::BendyRope),
            "cloth" => Ok(ObjectKind::Cloth),
            other => Err(Error::InvalidInput(format!("unknown object kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    #[default]
    Pusher,
    Picker,
}

/// Index of the particle nearest the action's start, if within `reach`.
pub fn grasp_target(positions: &[Vec3], action: &PushAction, reach: f64) -> Option<usize> {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p.x - action.start[0]).hypot(p.y - action.start[1])))
        .filter(|(_, d)| *d <= reach)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// How tracking matches observed frames to model particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetpointMode {
    /// Observation point `i` belongs to particle `i`.
    #[default]
    Correspondence,
    /// Closest observed point.
    NearestPoint,
}

/// The learner's side of the world: its nominal spring-mass model and the
/// controllers that track observations and follow network predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerModel {
    pub sim: SimConfig,
    pub stiffness: f64,
    pub damping: f64,
    /// Drives the model through observed frames to build training targets;
    /// stiff enough to follow them to within tolerance.
    pub tracking: Controller,
    /// Pulls the model toward network predictions.
    pub guidance: Controller,
    pub setpoints: SetpointMode,
}

impl LearnerModel {
    pub fn for_kind(kind: ObjectKind) -> Self {
        LearnerModel {
            sim: SimConfig::default(),
            stiffness: kind.learner_stiffness(),
            damping: DEFAULT_DAMPING,
            tracking: Controller {
                gains: PidGains {
                    kp: 400.0,
                    ki: 400.0,
                    kd: 40.0,
                },
                convergence: ConvergenceSpec::default(),
            },
            // Stiff and well damped but without integral action, so an
            // infeasible prediction cannot wind the particles past what the
            // springs allow.
            guidance: Controller {
                gains: PidGains {
                    kp: 1000.0,
                    ki: 0.0,
                    kd: 60.0,
                },
                convergence: ConvergenceSpec::default(),
            },
            setpoints: SetpointMode::Correspondence,
        }
    }

    /// Spring graph over an observation, rest lengths taken from it.
    pub fn graph_for(&self, positions: &[Vec3], connect_radius: f64) -> Result<SpringGraph> {
        build_graph(positions, connect_radius, self.stiffness, self.damping)
    }

    pub fn setpoints_for(&self, state: &ParticleState, frame: &PointCloud) -> Result<Vec<Vec3>> {
        match self.setpoints {
            SetpointMode::Correspondence if frame.len() == state.len() => Ok(frame.points.clone()),
            _ => nearest_point_setpoints(state, frame),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub object_kind: ObjectKind,
    pub particle_count: usize,
    pub agent_mode: AgentMode,
    /// Identifies the physical object: hidden parameters derive from it.
    pub seed: u64,
    pub effector_radius: f64,
    pub dt: f64,
    /// Upper bound on free simulation after the effector stops.
    pub settle_time: f64,
    pub push_length: (f64, f64),
    pub action_duration: f64,
}

impl WorldSpec {
    pub fn new(object_kind: ObjectKind, seed: u64) -> Self {
        WorldSpec {
            object_kind,
            particle_count: 50,
            agent_mode: object_kind.default_agent_mode(),
            seed,
            effector_radius: 0.035,
            dt: 0.001,
            settle_time: 1.0,
            push_length: (0.08, 0.25),
            action_duration: 1.0,
        }
    }

    /// Push paths are sampled to pass within this distance of a particle.
    pub fn contact_margin(&self) -> f64 {
        2.0 * self.effector_radius
    }

    /// A picker grasps the nearest particle within this distance of the
    /// action's start.
    pub fn grasp_reach(&self) -> f64 {
        2.0 * self.contact_margin()
    }

    pub fn validate(&self) -> Result<()> {
        if self.particle_count < 2 {
            return Err(Error::InvalidInput("a world needs at least two particles".into()));
        }
        let positive = [self.effector_radius, self.dt, self.settle_time, self.action_duration];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("world parameters must be positive".into()));
        }
        let (lo, hi) = self.push_length;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidInput("invalid push length range".into()));
        }
        Ok(())
    }
}

/// Parameters the learner never sees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenParams {
    pub stiffness: f64,
    /// Velocity retention per world step.
    pub damping: f64,
    pub friction: f64,
}

impl HiddenParams {
    /// Stiffness scaled by a log-uniform factor in [0.5, 2], damping and
    /// friction jittered around the learner's defaults. The stiffness factor
    /// is drawn first so objects sharing a seed share it.
    fn draw(spec: &WorldSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let factor = 2f64.powf(rng.gen_range(-1.0..=1.0));
        let learner_dt = SimConfig::default().dt;
        let per_learner_step = (DEFAULT_DAMPING + rng.gen_range(-0.05..=0.05)).clamp(0.9, 0.995);
        let friction = SimConfig::default().friction + rng.gen_range(-0.1..=0.1);
        HiddenParams {
            stiffness: spec.object_kind.world_stiffness() * factor,
            damping: per_learner_step.powf(spec.dt / learner_dt),
            friction,
        }
    }
}

/// A ground-truth object on the table.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub hidden: HiddenParams,
    pub state: ParticleState,
    pub graph: SpringGraph,
    pub cfg: SimConfig,
    /// Spring connection radius for this object's particle spacing.
    pub connect_radius: f64,
    pub learner: LearnerModel,
}

fn lattice(cols: usize, rows: usize, spacing: f64, x0: usize, y0: usize, out: &mut Vec<Vec3>) {
    for r in 0..rows {
        for c in 0..cols {
            out.push(Vec3::new((x0 + c) as f64 * spacing, (y0 + r) as f64 * spacing, 0.0));
        }
    }
}

/// Rest shape centred on the origin, before downsampling.
fn template(kind: ObjectKind, count: usize) -> Vec<Vec3> {
    let mut pts = Vec::new();
    match kind {
        ObjectKind::Tblock => {
            // 10x3 bar over a centred 4x5 stem: exactly 50 sites per refinement level
            let mut f = 1;
            while 50 * f * f < count {
                f += 1;
            }
            let s = 0.05 / f as f64;
            lattice(4 * f, 5 * f, s, 3 * f, 0, &mut pts);
            lattice(10 * f, 3 * f, s, 0, 5 * f, &mut pts);
        }
        ObjectKind::StiffRope | ObjectKind::BendyRope => {
            // A gentle S-bend: a dead-straight chain has only collinear edges,
            // and an equivariant coordinate update could then never move it
            // sideways.
            let n = count.max(2);
            for k in 0..n {
                let t = k as f64 / (n - 1) as f64;
                pts.push(Vec3::new(0.02 * k as f64, 0.06 * (2.0 * PI * t).sin(), 0.0));
            }
            pts.truncate(count);
        }
        ObjectKind::Cloth => {
            let cols = ((2 * count) as f64).sqrt().ceil() as usize;
            let rows = count.div_ceil(cols);
            lattice(cols, rows, 0.06, 0, 0, &mut pts);
        }
    }
    let c = centroid(&pts);
    pts.iter().map(|p| *p - c).collect()
}

fn max_nearest_gap(pts: &[Vec3]) -> f64 {
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| p.distance(*q))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Builds the hidden-parameter object for `spec` in a pose drawn from
/// `pose_seed`, at rest on the table.
pub fn make_world_posed(spec: &WorldSpec, pose_seed: u64) -> Result<World> {
    spec.validate()?;
    let kind = spec.object_kind;
    let rest = template(kind, spec.particle_count);
    let rest = if rest.len() > spec.particle_count {
        downsample_cloud(&PointCloud::new(rest)?, spec.particle_count, spec.seed)?.points
    } else {
        rest
    };
    let mut radius = kind.connect_factor() * max_nearest_gap(&rest);
    let hidden = HiddenParams::draw(spec);
    let mut graph = build_graph(&rest, radius, hidden.stiffness, hidden.damping)?;
    while !graph.is_connected(rest.len()) {
        radius *= 1.1;
        graph = build_graph(&rest, radius, hidden.stiffness, hidden.damping)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(pose_seed);
    let theta = rng.gen_range(-PI..PI);
    let shift = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0);
    let positions: Vec<Vec3> = rest.iter().map(|p| p.rotate_z(theta) + shift).collect();

    let cfg = SimConfig {
        dt: spec.dt,
        friction: hidden.friction,
        ..SimConfig::default()
    };
    Ok(World {
        spec: spec.clone(),
        hidden,
        state: ParticleState::at_rest(positions, PARTICLE_MASS)?,
        graph,
        cfg,
        connect_radius: radius,
        learner: LearnerModel::for_kind(kind),
    })
}

/// The world for `spec`, posed by its own seed.
pub fn make_world(spec: &WorldSpec) -> Result<World> {
    make_world_posed(spec, spec.seed)
}

impl World {
    pub fn parts(&self) -> (ParticleState, SpringGraph, SimConfig) {
        (self.state.clone(), self.graph.clone(), self.cfg)
    }

    pub fn observe(&self) -> PointCloud {
        self.state.to_cloud()
    }

    /// The learner's spring graph over the current observation.
    pub fn learner_graph(&self) -> Result<SpringGraph> {
        self.learner.graph_for(&self.state.positions, self.connect_radius)
    }

    /// Samples an action that meets the object in its current pose.
    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PushAction> {
        sample_push_action(
            &self.state.positions,
            self.spec.push_length,
            self.spec.contact_margin(),
            self.spec.action_duration,
            rng,
        )
    }

    fn free_step(&mut self, zero: &ForceField) -> Result<()> {
        let f = net_forces(&self.state, &self.graph, zero, &self.cfg)?;
        self.state = euler_step(&self.state, &f, &self.graph, &self.cfg)?;
        Ok(())
    }

    /// Pushes particles out of the effector disc and removes any velocity
    /// into it.
    fn resolve_disc(&mut self, centre: [f64; 2], vel: [f64; 2], dir: [f64; 2]) {
        let r = self.spec.effector_radius;
        for (x, v) in self.state.positions.iter_mut().zip(self.state.velocities.iter_mut()) {
            let (dx, dy) = (x.x - centre[0], x.y - centre[1]);
            let d = dx.hypot(dy);
            if d >= r {
                continue;
            }
            let (nx, ny) = if d > 1e-12 { (dx / d, dy / d) } else { (dir[0], dir[1]) };
            x.x = centre[0] + nx * r;
            x.y = centre[1] + ny * r;
            let vn = v.x * nx + v.y * ny;
            let un = vel[0] * nx + vel[1] * ny;
            if vn < un {
                v.x += (un - vn) * nx;
                v.y += (un - vn) * ny;
            }
        }
    }

    /// Runs the end effector along the action, lets the object settle, and
    /// advances the world to the settled state. Returns the frames observed
    /// along the way, the last being the settled object.
    fn execute(&mut self, action: &PushAction) -> Result<Vec<PointCloud>> {
        action.validate()?;
        let n = self.state.len();
        let zero = ForceField::zeros(n);
        let steps = ((action.duration / self.cfg.dt).round() as usize).max(FRAMES_PER_ACTION);
        let [dx, dy] = action.displacement();
        let len = action.length();
        let dir = [dx / len, dy / len];
        let vel = [dx / action.duration, dy / action.duration];

        let grasped = match self.spec.agent_mode {
            AgentMode::Pusher => None,
            AgentMode::Picker => grasp_target(&self.state.positions, action, self.spec.grasp_reach())
                .map(|i| (i, self.state.positions[i] - Vec3::new(action.start[0], action.start[1], 0.0))),
        };

        let mut frames = Vec::with_capacity(FRAMES_PER_ACTION + 1);
        for step in 1..=steps {
            let t = step as f64 / steps as f64;
            let centre = [action.start[0] + t * dx, action.start[1] + t * dy];
            self.free_step(&zero)?;
            match (self.spec.agent_mode, grasped) {
                (AgentMode::Pusher, _) => self.resolve_disc(centre, vel, dir),
                (AgentMode::Picker, Some((i, offset))) => {
                    let p = Vec3::new(centre[0], centre[1], 0.0) + offset;
                    self.state.positions[i] = p;
                    self.state.velocities[i] = Vec3::new(vel[0], vel[1], 0.0);
                }
                (AgentMode::Picker, None) => {}
            }
            if (step * FRAMES_PER_ACTION).is_multiple_of(steps) {
                frames.push(self.observe());
            }
        }

        let settle_steps = (self.spec.settle_time / self.cfg.dt).ceil() as usize;
        for _ in 0..settle_steps {
            self.free_step(&zero)?;
            let fastest = self.state.velocities.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if fastest < 1e-4 {
                break;
            }
        }
        self.state.zero_velocities();
        frames.push(self.observe());
        Ok(frames)
    }
}

/// One action and what was seen while executing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSequence {
    pub initial_state: ParticleState,
    pub action: PushAction,
    pub frames: Vec<PointCloud>,
    /// The world's settled state after the action.
    pub final_state: ParticleState,
    /// The learner's spring-mass model tracked through the frames.
    pub final_tracked_state: ParticleState,
    pub tracking_converged: bool,
    pub connect_radius: f64,
    pub learner: LearnerModel,
}

impl InteractionSequence {
    pub fn learner_graph(&self) -> Result<SpringGraph> {
        self.learner.graph_for(&self.initial_state.positions, self.connect_radius)
    }

    /// `(state, canonical action, tracked target)` for supervised training.
    pub fn training_sample(&self) -> Result<TrainingSample> {
        let positions = self.initial_state.positions.clone();
        Ok(TrainingSample {
            features: canonicalize(&positions, &self.action, self.learner.sim.ground_height)?,
            edges: self.learner_graph()?.pairs(),
            target: self.final_tracked_state.positions.clone(),
            positions,
        })
    }
}

/// Tracks the learner's model from `initial` through `frames`, one solve per
/// frame.
pub fn track_frames(
    initial: &ParticleState,
    graph: &SpringGraph,
    frames: &[PointCloud],
    learner: &LearnerModel,
) -> Result<(ParticleState, bool)> {
    let mut cur = initial.clone();
    let mut converged = true;
    for frame in frames {
        let setpoints = learner.setpoints_for(&cur, frame)?;
        let r = track_to_setpoints(&cur, graph, &setpoints, &learner.tracking.gains, &learner.tracking.convergence, &learner.sim)?;
        converged &= r.converged;
        cur = r.state;
    }
    cur.zero_velocities();
    Ok((cur, converged))
}

/// Executes `action` in the world, advancing it, and records the sequence.
pub fn world_step(world: &mut World, action: &PushAction) -> Result<InteractionSequence> {
    let initial = world.state.clone();
    let learner_graph = world.learner_graph()?;
    let frames = world.execute(action)?;
    let observed = ParticleState::at_rest(initial.positions.clone(), PARTICLE_MASS)?;
    let (tracked, converged) = track_frames(&observed, &learner_graph, &frames, &world.learner)?;
    Ok(InteractionSequence {
        initial_state: initial,
        action: *action,
        frames,
        final_state: world.state.clone(),
        final_tracked_state: tracked,
        tracking_converged: converged,
        connect_radius: world.connect_radius,
        learner: world.learner,
    })
}

/// `n` single-action sequences on the object `spec` describes, each from a
/// fresh random pose. Deterministic per `seed`.
pub fn generate_dataset(spec: &WorldSpec, n: usize, seed: u64) -> Result<Vec<InteractionSequence>> {
    generate_dataset_with(spec, n, seed, &LearnerModel::for_kind(spec.object_kind))
}

/// As [`generate_dataset`], tracking with the given learner model.
pub fn generate_dataset_with(spec: &WorldSpec, n: usize, seed: u64, learner: &LearnerModel) -> Result<Vec<InteractionSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut world = make_world_posed(spec, rng.gen())?;
        world.learner = *learner;
        let action = world.sample_action(&mut rng)?;
        let seq = world_step(&mut world, &action)?;
        log::debug!("sequence {k}: tracking converged={}", seq.tracking_converged);
        out.push(seq);
    }
    Ok(out)
}

/// A chain of actions executed back to back, with the world state after each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub initial_state: ParticleState,
    pub actions: Vec<PushAction>,
    pub states: Vec<ParticleState>,
    pub connect_radius: f64,
    pub learner: LearnerModel,
}

impl Episode {
    pub fn learner_graph(&self) -> Result<SpringGraph> {
        self.learner.graph_for(&self.initial_state.positions, self.connect_radius)
    }
}

/// `n` multi-action episodes of `horizon` sampled actions each.
pub fn generate_episodes(spec: &WorldSpec, n: usize, horizon: usize, seed: u64) -> Result<Vec<Episode>> {
    generate_episodes_with(spec, n, horizon, seed, &LearnerModel::for_kind(spec.object_kind))
}

/// As [`generate_episodes`], recording the given learner model.
pub fn generate_episodes_with(spec: &WorldSpec, n: usize, horizon: usize, seed: u64, learner: &LearnerModel) -> Result<Vec<Episode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut world = make_world_posed(spec, rng.gen())?;
        world.learner = *learner;
        let initial_state = world.state.clone();
        let mut actions = Vec::with_capacity(horizon);
        let mut states = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let a = world.sample_action(&mut rng)?;
            world.execute(&a)?;
            actions.push(a);
            states.push(world.state.clone());
        }
        out.push(Episode {
            initial_state,
            actions,
            states,
            connect_radius: world.connect_radius,
            learner: world.learner,
        });
    }
    Ok(out)
}

/// First line of every dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: String,
    pub spec: WorldSpec,
    pub records: usize,
}

impl DatasetHeader {
    pub fn new(spec: &WorldSpec, records: usize) -> Self {
        DatasetHeader {
            format: "gdyn-dataset".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            spec: spec.clone(),
            records,
        }
    }
}

/// Writes a header line followed by one JSON record per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, header: &DatasetHeader, records: &[T]) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<(DatasetHeader, Vec<T>)> {
    let mut lines = r.lines();
    let header: DatasetHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l?)?,
        None => return Err(Error::Format("empty dataset file".into())),
    };
    if header.format != "gdyn-dataset" {
        return Err(Error::Format(format!("unknown dataset format {:?}", header.format)));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    if out.len() != header.records {
        return Err(Error::Format(format!("header promises {} records, found {}", header.records, out.len())));
    }
    Ok((header, out))
}

/// Least-squares planar rotation taking `from` onto `to` (paired points).
pub fn planar_rotation(from: &[Vec3], to: &[Vec3]) -> f64 {
    let (ca, cb) = (centroid(from), centroid(to));
    let (mut s, mut c) = (0.0, 0.0);
    for (a, b) in from.iter().zip(to) {
        let (p, q) = (*a - ca, *b - cb);
        c += p.x * q.x + p.y * q.y;
        s += p.x * q.y - p.y * q.x;
    }
    s.atan2(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::action_contacts;

    fn spec(kind: ObjectKind, seed: u64) -> WorldSpec {
        WorldSpec::new(kind, seed)
    }

    #[test]
    fn tblock_has_fifty_particles_in_a_t() {
        let w = make_world(&spec(ObjectKind::Tblock, 3)).unwrap();
        assert_eq!(w.state.len(), 50);
        assert!(w.graph.is_connected(50));
        // undo the pose: the bar is 10 wide and 3 deep, the stem 4 by 5
        let rest = template(ObjectKind::Tblock, 50);
        let xs: Vec<f64> = rest.iter().map(|p| (p.x * 20.0).round()).collect();
        let ys: Vec<f64> = rest.iter().map(|p| p.y).collect();
        let top = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bottom = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let width = |y: f64| xs.iter().zip(&ys).filter(|(_, yy)| (**yy - y).abs() < 1e-9).count();
        assert_eq!(width(top), 10);
        assert_eq!(width(bottom), 4);
        assert!(((top - bottom) / 0.05 - 7.0).abs() < 1e-9);
    }

    #[test]
    fn other_counts_are_honoured() {
        for kind in ObjectKind::ALL {
            for count in [2, 17, 80] {
                let mut s = spec(kind, 1);
                s.particle_count = count;
                let w = make_world(&s).unwrap();
                assert_eq!(w.state.len(), count);
                assert!(w.graph.is_connected(count), "{kind} with {count}");
            }
        }
        let mut s = spec(ObjectKind::Cloth, 1);
        s.particle_count = 1;
        assert!(make_world(&s).is_err());
    }

    #[test]
    fn ropes_share_topology_and_differ_in_stiffness() {
        let stiff = make_world(&spec(ObjectKind::StiffRope, 9)).unwrap();
        let bendy = make_world(&spec(ObjectKind::BendyRope, 9)).unwrap();
        assert_eq!(stiff.graph.pairs(), bendy.graph.pairs());
        assert!(stiff.hidden.stiffness / bendy.hidden.stiffness >= 10.0);
    }

    #[test]
    fn fresh_worlds_are_at_rest() {
        for kind in ObjectKind::ALL {
            let mut w = make_world(&spec(kind, 4)).unwrap();
            let before = w.state.positions.clone();
            let zero = ForceField::zeros(w.state.len());
            for _ in 0..100 {
                w.free_step(&zero).unwrap();
            }
            for (a, b) in before.iter().zip(&w.state.positions) {
                assert!(a.distance(*b) <= 1e-3);
            }
        }
    }

    #[test]
    fn push_far_away_changes_nothing() {
        let mut w = make_world(&spec(ObjectKind::Tblock, 5)).unwrap();
        let c = centroid(&w.state.positions);
        let a = PushAction::new([c.x + 3.0, c.y + 3.0], [c.x + 3.0 + 1e-6, c.y + 3.0], 1.0).unwrap();
        let seq = world_step(&mut w, &a).unwrap();
        assert_eq!(seq.final_state.positions, seq.initial_state.positions);
        assert!(seq.frames.len() >= 2);
    }

    fn push_tblock(offset_along_bar: f64) -> (f64, Vec3, Vec3) {
        // unrotated pose so the stem points along -y
        let s = spec(ObjectKind::Tblock, 11);
        let mut w = make_world_posed(&s, 0).unwrap();
        let rest = template(ObjectKind::Tblock, 50);
        w.state.positions = rest.clone();
        let bottom = rest.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let c0 = centroid(&rest);
        let x = c0.x + offset_along_bar;
        let a = PushAction::new([x, bottom - 0.05], [x, bottom + 0.15], 1.0).unwrap();
        let seq = world_step(&mut w, &a).unwrap();
        let rot = planar_rotation(&rest, &seq.final_state.positions);
        (rot, c0, centroid(&seq.final_state.positions))
    }

    #[test]
    fn centre_push_translates_without_much_rotation() {
        let (rot, c0, c1) = push_tblock(0.0);
        let moved = c1 - c0;
        assert!(moved.y > 0.03, "moved {moved:?}");
        assert!(moved.x.abs() < 0.5 * moved.y);
        assert!(rot.abs() < 15f64.to_radians(), "rotation {}", rot.to_degrees());
    }

    #[test]
    fn off_centre_push_rotates_more() {
        let (centre, _, _) = push_tblock(0.0);
        let (off, _, _) = push_tblock(0.06);
        assert!(off.abs() > centre.abs(), "{} vs {}", off.to_degrees(), centre.to_degrees());
    }

    #[test]
    fn world_dynamics_are_deterministic() {
        let s = spec(ObjectKind::BendyRope, 2);
        let run = || {
            let mut w = make_world(&s).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let a = w.sample_action(&mut rng).unwrap();
            world_step(&mut w, &a).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dataset_contract() {
        let s = spec(ObjectKind::Tblock, 1);
        assert!(generate_dataset(&s, 0, 3).unwrap().is_empty());
        let a = generate_dataset(&s, 20, 3).unwrap();
        assert_eq!(a.len(), 20);
        for seq in &a {
            assert!(seq.frames.len() >= 2);
            assert_eq!(seq.final_tracked_state.len(), seq.initial_state.len());
            assert_eq!(seq.final_state.len(), seq.initial_state.len());
            assert!(action_contacts(&seq.initial_state.positions, &seq.action, s.contact_margin()));
        }
        let b = generate_dataset(&s, 20, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tracked_rigid_targets_match_the_world() {
        let s = spec(ObjectKind::Tblock, 6);
        for seq in generate_dataset(&s, 5, 8).unwrap() {
            let tol = seq.learner.tracking.convergence.tol;
            let n = seq.final_state.len() as f64;
            let err = seq
                .final_state
                .positions
                .iter()
                .zip(&seq.final_tracked_state.positions)
                .map(|(a, b)| a.distance(*b))
                .sum::<f64>()
                / n;
            assert!(err <= 2.0 * tol, "tracking error {err}");
        }
    }

    #[test]
    fn picker_drags_the_grasped_particle() {
        let mut s = spec(ObjectKind::BendyRope, 3);
        s.agent_mode = AgentMode::Picker;
        let mut w = make_world_posed(&s, 0).unwrap();
        let p0 = w.state.positions[0];
        let a = PushAction::new([p0.x, p0.y], [p0.x, p0.y + 0.1], 1.0).unwrap();
        let seq = world_step(&mut w, &a).unwrap();
        let moved = seq.final_state.positions[0] - p0;
        assert!(moved.y > 0.05, "{moved:?}");
    }

    #[test]
    fn dataset_file_round_trip() {
        let s = spec(ObjectKind::Cloth, 1);
        let data = generate_dataset(&s, 2, 1).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &DatasetHeader::new(&s, data.len()), &data).unwrap();
        let (h, back): (_, Vec<InteractionSequence>) = read_jsonl(&buf[..]).unwrap();
        assert_eq!(h.spec, s);
        assert_eq!(back, data);
        assert!(read_jsonl::<_, InteractionSequence>(&b""[..]).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in ObjectKind::ALL {
            assert_eq!(k.name().parse::<ObjectKind>().unwrap(), k);
        }
        assert_eq!("stiff_rope".parse::<ObjectKind>().unwrap(), ObjectKind::StiffRope);
        assert!("sponge".parse::<ObjectKind>().is_err());
    }
}
