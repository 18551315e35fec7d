//! Per-particle PID tracking. A bank of PID controllers turns the distance
//! between each particle and its setpoint into an external force, and the
//! spring-mass system is stepped until it settles on the setpoints or the
//! iteration budget runs out. Springs and the table keep the result feasible
//! even when the setpoints are not.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::physics::{euler_step, net_forces, ForceField, SimConfig};
use crate::types::{ParticleState, PointCloud, SpringGraph, Vec3};

/// Gains applied per unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains { kp: 50.0, ki: 1.0, kd: 10.0 }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        let all = [self.kp, self.ki, self.kd];
        if all.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidInput("PID gains must be finite and non-negative".into()));
        }
        if all.iter().all(|g| *g == 0.0) {
            return Err(Error::InvalidInput("at least one PID gain must be positive".into()));
        }
        Ok(())
    }
}

/// When to stop tracking.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSpec {
    /// Mean per-particle setpoint distance regarded as converged.
    pub tol: f64,
    pub max_iters: usize,
    /// Bound on each integral component; `None` means ten times the
    /// proportional force at the tolerance, divided by `ki`.
    #[serde(default)]
    pub integral_clamp: Option<f64>,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec {
            tol: 1e-3,
            max_iters: 2000,
            integral_clamp: None,
        }
    }
}

impl ConvergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidInput("convergence needs tol > 0 and max_iters >= 1".into()));
        }
        if let Some(c) = self.integral_clamp {
            if !(c > 0.0) {
                return Err(Error::InvalidInput("integral clamp must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn clamp_for(&self, gains: &PidGains) -> f64 {
        self.integral_clamp.unwrap_or_else(|| {
            if gains.ki > 0.0 {
                10.0 * gains.kp.max(1.0) * self.tol / gains.ki
            } else {
                1.0
            }
        })
    }
}

/// Gains and stopping rule for one use of the controller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Controller {
    pub gains: PidGains,
    pub convergence: ConvergenceSpec,
}

impl Controller {
    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.convergence.validate()
    }
}

/// Controller memory for every particle of one tracking run.
#[derive(Clone, Debug, PartialEq)]
pub struct PidControllerBank {
    pub gains: PidGains,
    pub integral: Vec<Vec3>,
    pub prev_error: Vec<Vec3>,
    pub integral_clamp: f64,
}

impl PidControllerBank {
    pub fn new(gains: PidGains, n: usize, integral_clamp: f64) -> Result<Self> {
        gains.validate()?;
        if !(integral_clamp > 0.0) {
            return Err(Error::InvalidInput("integral clamp must be positive".into()));
        }
        Ok(PidControllerBank {
            gains,
            integral: vec![Vec3::ZERO; n],
            prev_error: vec![Vec3::ZERO; n],
            integral_clamp,
        })
    }

    /// PID output for particle `i` given its current error; updates that
    /// particle's integral (rectangle rule, then clamped) and stored error.
    pub fn pid_force(&mut self, i: usize, error: Vec3, dt: f64) -> Result<Vec3> {
        if !error.is_finite() {
            return Err(Error::NumericParticle { index: i });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        let c = self.integral_clamp;
        let mut acc = self.integral[i] + error * dt;
        acc.x = acc.x.clamp(-c, c);
        acc.y = acc.y.clamp(-c, c);
        acc.z = acc.z.clamp(-c, c);
        self.integral[i] = acc;
        let rate = (error - self.prev_error[i]) / dt;
        self.prev_error[i] = error;
        let g = self.gains;
        Ok(error * g.kp + acc * g.ki + rate * g.kd)
    }
}

/// For each particle, the closest observed point (lowest index on ties).
pub fn nearest_point_setpoints(state: &ParticleState, observed: &PointCloud) -> Result<Vec<Vec3>> {
    if observed.points.is_empty() {
        return Err(Error::InvalidInput("observed cloud is empty".into()));
    }
    Ok(state
        .positions
        .iter()
        .map(|x| {
            let mut best = observed.points[0];
            let mut best_d = x.distance(best);
            for p in &observed.points[1..] {
                let d = x.distance(*p);
                if d < best_d {
                    best_d = d;
                    best = *p;
                }
            }
            best
        })
        .collect())
}

/// Outcome of a tracking solve.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub state: ParticleState,
    pub converged: bool,
    pub iters: usize,
    pub mean_error: f64,
}

fn mean_error(positions: &[Vec3], setpoints: &[Vec3]) -> f64 {
    positions.iter().zip(setpoints).map(|(x, s)| x.distance(*s)).sum::<f64>() / positions.len() as f64
}

/// Drives the spring-mass system toward `setpoints` with PID forces until
/// the mean setpoint distance drops to `spec.tol` or `spec.max_iters` steps
/// have run.
pub fn track_to_setpoints(
    state: &ParticleState,
    graph: &SpringGraph,
    setpoints: &[Vec3],
    gains: &PidGains,
    spec: &ConvergenceSpec,
    cfg: &SimConfig,
) -> Result<TrackResult> {
    let n = state.len();
    check_len(n, setpoints.len())?;
    spec.validate()?;
    let mut bank = PidControllerBank::new(*gains, n, spec.clamp_for(gains))?;
    // no derivative kick on the first step
    for i in 0..n {
        bank.prev_error[i] = setpoints[i] - state.positions[i];
    }
    let initial = mean_error(&state.positions, setpoints);
    let limit = 1e3 * initial.max(spec.tol);

    let mut cur = state.clone();
    let mut ext = ForceField::zeros(n);
    let mut err = initial;
    for iter in 1..=spec.max_iters {
        for i in 0..n {
            let e = setpoints[i] - cur.positions[i];
            ext.per_particle[i] = bank.pid_force(i, e, cfg.dt)? * cur.masses[i];
        }
        let f = net_forces(&cur, graph, &ext, cfg)?;
        cur = euler_step(&cur, &f, graph, cfg)?;
        err = mean_error(&cur.positions, setpoints);
        if !err.is_finite() || err > limit {
            return Err(Error::Divergence {
                kp: gains.kp,
                ki: gains.ki,
                kd: gains.kd,
                error: err,
                limit,
            });
        }
        if err <= spec.tol {
            log::debug!("tracking converged: iteration={iter} mean_error={err:.3e}");
            return Ok(TrackResult {
                state: cur,
                converged: true,
                iters: iter,
                mean_error: err,
            });
        }
    }
    log::debug!("tracking stopped: iteration={} mean_error={err:.3e}", spec.max_iters);
    Ok(TrackResult {
        state: cur,
        converged: false,
        iters: spec.max_iters,
        mean_error: err,
    })
}

/// Uses a neural prediction as the setpoint configuration and returns the
/// physically feasible state the spring-mass system settles into.
pub fn guided_step(
    state: &ParticleState,
    graph: &SpringGraph,
    prediction: &[Vec3],
    gains: &PidGains,
    spec: &ConvergenceSpec,
    cfg: &SimConfig,
) -> Result<ParticleState> {
    Ok(track_to_setpoints(state, graph, prediction, gains, spec, cfg)?.state)
}

/// Largest relative spring elongation `|d - r| / r` over the graph.
/// Springs with zero rest length are skipped.
pub fn max_strain(positions: &[Vec3], graph: &SpringGraph) -> f64 {
    graph
        .edges
        .iter()
        .filter(|e| e.rest_length > 0.0)
        .map(|e| (positions[e.i].distance(positions[e.j]) - e.rest_length).abs() / e.rest_length)
        .fold(0.0, f64::max)
}
