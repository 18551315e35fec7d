//! Spring-mass dynamics: Hookean springs, gravity along -z, a table plane
//! with projection contact, and damped semi-implicit Euler integration.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::types::{ParticleState, SpringGraph, Vec3};

/// Below this separation a spring has no defined direction.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

/// A particle whose height is within this band of the table counts as resting on it.
pub const CONTACT_EPS: f64 = 1e-9;

pub const DEFAULT_DAMPING: f64 = 0.98;

/// Integration and environment parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub gravity: f64,
    pub ground_height: f64,
    pub restitution: f64,
    pub friction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            gravity: 9.81,
            ground_height: 0.0,
            restitution: 0.0,
            friction: 0.3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        if !(self.friction >= 0.0) {
            return Err(Error::InvalidInput("friction must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::InvalidInput("restitution must lie in [0, 1]".into()));
        }
        if !self.gravity.is_finite() || self.ground_height.is_nan() {
            return Err(Error::InvalidInput("gravity and ground height must be numbers".into()));
        }
        Ok(())
    }

    /// Same parameters without a table plane.
    pub fn without_ground(mut self) -> Self {
        self.ground_height = f64::NEG_INFINITY;
        self
    }
}

/// Per-particle forces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceField {
    pub per_particle: Vec<Vec3>,
}

impl ForceField {
    pub fn zeros(n: usize) -> Self {
        ForceField {
            per_particle: vec![Vec3::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.per_particle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_particle.is_empty()
    }
}

/// Result of a single spring evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpringForce {
    /// Force on the first particle; the second receives the negation.
    pub force: Vec3,
    /// Set when the endpoints coincide and the force was zeroed.
    pub degenerate: bool,
}

/// Hooke force on particle `i` from a spring to particle `j`.
pub fn spring_force(xi: Vec3, xj: Vec3, k: f64, r: f64) -> SpringForce {
    let d = xj - xi;
    let len = d.norm();
    if len <= DEGENERATE_DISTANCE {
        return SpringForce {
            force: Vec3::ZERO,
            degenerate: true,
        };
    }
    SpringForce {
        force: d * (k * (len - r) / len),
        degenerate: false,
    }
}

fn on_ground(z: f64, cfg: &SimConfig) -> bool {
    z <= cfg.ground_height + CONTACT_EPS
}

/// Net force per particle: springs, gravity, external forces and the table's
/// normal support for particles resting on it.
pub fn net_forces(state: &ParticleState, graph: &SpringGraph, ext: &ForceField, cfg: &SimConfig) -> Result<ForceField> {
    let n = state.len();
    check_len(n, state.velocities.len())?;
    check_len(n, state.masses.len())?;
    check_len(n, ext.len())?;
    let mut f = ext.per_particle.clone();
    for e in &graph.edges {
        if e.i >= n || e.j >= n {
            return Err(Error::InvalidInput(format!("edge ({}, {}) out of range", e.i, e.j)));
        }
        let sf = spring_force(state.positions[e.i], state.positions[e.j], e.stiffness, e.rest_length);
        if sf.degenerate {
            log::warn!("degenerate spring between particles {} and {}", e.i, e.j);
        }
        f[e.i] += sf.force;
        f[e.j] -= sf.force;
    }
    for i in 0..n {
        f[i].z -= state.masses[i] * cfg.gravity;
        if on_ground(state.positions[i].z, cfg) && f[i].z < 0.0 {
            f[i].z = 0.0;
        }
    }
    Ok(ForceField { per_particle: f })
}

/// One damped semi-implicit Euler step followed by table contact resolution.
///
/// `v' = δ (v + F/m dt)`, `x' = x + v' dt`. Particles resting on or striking
/// the table lose tangential speed by `μ |v_n|`, where `|v_n|` is the normal
/// speed the table absorbs during the step (weight support plus impact).
pub fn euler_step(state: &ParticleState, forces: &ForceField, graph: &SpringGraph, cfg: &SimConfig) -> Result<ParticleState> {
    let n = state.len();
    check_len(n, forces.len())?;
    check_len(n, state.velocities.len())?;
    check_len(n, state.masses.len())?;
    let dt = cfg.dt;
    let damping = graph.damping;
    let mut next = state.clone();
    for i in 0..n {
        let f = forces.per_particle[i];
        if !f.is_finite() {
            return Err(Error::NumericParticle { index: i });
        }
        let x = state.positions[i];
        let mut v = (state.velocities[i] + f * (dt / state.masses[i])) * damping;

        let resting = on_ground(x.z, cfg) && f.z <= 0.0;
        let impacting = x.z + v.z * dt < cfg.ground_height;
        if resting || impacting {
            let mut normal_speed = (-v.z).max(0.0);
            if resting {
                normal_speed += cfg.gravity.max(0.0) * dt;
            }
            let vt = (v.x * v.x + v.y * v.y).sqrt();
            if vt > 0.0 {
                let scale = (1.0 - cfg.friction * normal_speed / vt).max(0.0);
                v.x *= scale;
                v.y *= scale;
            }
        }

        let mut p = x + v * dt;
        if p.z < cfg.ground_height {
            p.z = cfg.ground_height;
            if v.z < 0.0 {
                v.z *= -cfg.restitution;
            }
        }
        if !p.is_finite() || !v.is_finite() {
            return Err(Error::NumericParticle { index: i });
        }
        next.positions[i] = p;
        next.velocities[i] = v;
    }
    Ok(next)
}

/// Rolls the system forward `n_steps`, applying `ext(t)` at step `t`.
/// Returns `n_steps + 1` states starting with the input.
pub fn simulate<F>(
    state: &ParticleState,
    graph: &SpringGraph,
    mut ext: F,
    n_steps: usize,
    cfg: &SimConfig,
) -> Result<Vec<ParticleState>>
where
    F: FnMut(usize) -> ForceField,
{
    let mut traj = Vec::with_capacity(n_steps + 1);
    traj.push(state.clone());
    let mut cur = state.clone();
    for t in 0..n_steps {
        let f = net_forces(&cur, graph, &ext(t), cfg)?;
        cur = euler_step(&cur, &f, graph, cfg)?;
        traj.push(cur.clone());
    }
    Ok(traj)
}

/// Kinetic plus spring potential plus gravitational potential energy.
pub fn total_energy(state: &ParticleState, graph: &SpringGraph, cfg: &SimConfig) -> f64 {
    let mut e = 0.0;
    for i in 0..state.len() {
        e += 0.5 * state.masses[i] * state.velocities[i].norm_sq();
        e += state.masses[i] * cfg.gravity * state.positions[i].z;
    }
    for s in &graph.edges {
        let d = state.positions[s.i].distance(state.positions[s.j]) - s.rest_length;
        e += 0.5 * s.stiffness * d * d;
    }
    e
}

pub fn write_trajectory_jsonl<W: Write>(mut w: W, traj: &[ParticleState]) -> Result<()> {
    for s in traj {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<Vec<ParticleState>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ParticleState = serde_json::from_str(&line)?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{build_graph, Spring};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn hooke_examples() {
        assert_eq!(spring_force(v(0., 0., 0.), v(2., 0., 0.), 10., 1.).force, v(10., 0., 0.));
        assert_eq!(spring_force(v(0., 0., 0.), v(1., 0., 0.), 10., 1.).force, v(0., 0., 0.));
        assert_eq!(spring_force(v(0., 0., 0.), v(0.5, 0., 0.), 10., 1.).force, v(-5., 0., 0.));
        let d = spring_force(v(1., 1., 1.), v(1., 1., 1.), 10., 1.);
        assert!(d.degenerate);
        assert_eq!(d.force, Vec3::ZERO);
    }

    #[test]
    fn gravity_only_single_particle() {
        let s = ParticleState::at_rest(vec![v(0., 0., 1.)], 1.0).unwrap();
        let g = SpringGraph { edges: vec![], damping: 1.0 };
        let f = net_forces(&s, &g, &ForceField::zeros(1), &SimConfig::default()).unwrap();
        assert_eq!(f.per_particle[0], v(0., 0., -9.81));
    }

    #[test]
    fn resting_pair_feels_no_net_force() {
        let s = ParticleState::at_rest(vec![v(0., 0., 0.), v(0.3, 0., 0.)], 1.0).unwrap();
        let g = build_graph(&s.positions, 1.0, 50.0, 0.98).unwrap();
        let f = net_forces(&s, &g, &ForceField::zeros(2), &SimConfig::default()).unwrap();
        assert_eq!(f.per_particle, vec![Vec3::ZERO; 2]);
    }

    #[test]
    fn chain_forces_match_pairwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos: Vec<Vec3> = (0..3)
            .map(|i| v(i as f64 + rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        let s = ParticleState::at_rest(pos.clone(), 1.0).unwrap();
        let g = SpringGraph {
            edges: vec![
                Spring { i: 0, j: 1, stiffness: 7.0, rest_length: 1.0 },
                Spring { i: 1, j: 2, stiffness: 7.0, rest_length: 1.0 },
            ],
            damping: 1.0,
        };
        let cfg = SimConfig { gravity: 0.0, ..SimConfig::default() }.without_ground();
        let f = net_forces(&s, &g, &ForceField::zeros(3), &cfg).unwrap();
        // brute force over all ordered pairs that share a spring
        for i in 0..3 {
            let mut expect = Vec3::ZERO;
            for j in 0..3 {
                if (i as i64 - j as i64).abs() == 1 {
                    let d = pos[j] - pos[i];
                    let l = d.norm();
                    expect += d * (7.0 * (l - 1.0) / l);
                }
            }
            assert!((f.per_particle[i] - expect).max_abs() < 1e-12);
        }
    }

    #[test]
    fn euler_examples() {
        let cfg = SimConfig { dt: 0.1, ..SimConfig::default() }.without_ground();
        let g = SpringGraph { edges: vec![], damping: 1.0 };
        let s = ParticleState::at_rest(vec![Vec3::ZERO], 1.0).unwrap();
        let next = euler_step(&s, &ForceField { per_particle: vec![v(1., 0., 0.)] }, &g, &cfg).unwrap();
        assert!((next.velocities[0] - v(0.1, 0., 0.)).max_abs() < 1e-15);
        assert!((next.positions[0] - v(0.01, 0., 0.)).max_abs() < 1e-15);

        let g = SpringGraph { edges: vec![], damping: 0.9 };
        let mut s = s;
        s.velocities[0] = v(1., 0., 0.);
        let next = euler_step(&s, &ForceField::zeros(1), &g, &cfg).unwrap();
        assert_eq!(next.velocities[0], v(0.9, 0., 0.));
    }

    #[test]
    fn euler_rejects_non_finite_force() {
        let s = ParticleState::at_rest(vec![Vec3::ZERO, Vec3::ZERO], 1.0).unwrap();
        let g = SpringGraph { edges: vec![], damping: 1.0 };
        let f = ForceField { per_particle: vec![Vec3::ZERO, v(f64::NAN, 0., 0.)] };
        assert_eq!(euler_step(&s, &f, &g, &SimConfig::default()), Err(Error::NumericParticle { index: 1 }));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = ParticleState::at_rest(vec![Vec3::ZERO], 1.0).unwrap();
        let g = SpringGraph { edges: vec![], damping: 1.0 };
        assert!(matches!(
            net_forces(&s, &g, &ForceField::zeros(2), &SimConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rest_configuration_is_a_fixed_point() {
        let pos = vec![v(0., 0., 0.), v(0.2, 0., 0.), v(0.1, 0.15, 0.)];
        let s = ParticleState::at_rest(pos, 1.0).unwrap();
        let g = build_graph(&s.positions, 0.5, 100.0, 0.98).unwrap();
        let cfg = SimConfig::default();
        let traj = simulate(&s, &g, |_| ForceField::zeros(3), 50, &cfg).unwrap();
        assert_eq!(traj.len(), 51);
        assert!(traj.iter().all(|t| *t == s));
        assert_eq!(simulate(&s, &g, |_| ForceField::zeros(3), 0, &cfg).unwrap(), vec![s.clone()]);
    }

    #[test]
    fn oscillator_energy_drift_is_small() {
        // two unit masses, k=10, no gravity or table
        let cfg = SimConfig { gravity: 0.0, ..SimConfig::default() }.without_ground();
        let s0 = ParticleState::new(
            vec![v(0., 0., 0.), v(1.3, 0., 0.)],
            vec![Vec3::ZERO; 2],
            vec![1.0, 1.0],
        )
        .unwrap();
        let g = SpringGraph {
            edges: vec![Spring { i: 0, j: 1, stiffness: 10.0, rest_length: 1.0 }],
            damping: 1.0,
        };
        // relative coordinate oscillates with omega = sqrt(2k/m)
        let period = 2.0 * std::f64::consts::PI / (20.0f64).sqrt();
        let run = |dt: f64| {
            let c = SimConfig { dt, ..cfg };
            let steps = (period / dt).round() as usize;
            let traj = simulate(&s0, &g, |_| ForceField::zeros(2), steps, &c).unwrap();
            let e: Vec<f64> = traj.iter().map(|t| total_energy(t, &g, &c)).collect();
            let e0 = e[0];
            e.iter().map(|x| (x - e0).abs() / e0).fold(0.0, f64::max)
        };
        let reference = run(1e-5);
        let coarse = run(0.005);
        assert!(reference < 1e-4, "reference drift {reference}");
        assert!(coarse < 0.05, "coarse drift {coarse}");
    }

    #[test]
    fn trajectory_jsonl_round_trip() {
        let s = ParticleState::at_rest(vec![v(0., 1., 2.)], 2.0).unwrap();
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &[s.clone(), s.clone()]).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        assert_eq!(read_trajectory_jsonl(&buf[..]).unwrap(), vec![s.clone(), s]);
    }
}
