//! Randomised property suites shared by `self-test` and the acceptance run.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action::canonicalize;
use crate::egnn::{backward, egnn_forward, EgnnConfig, EgnnParams, TrainingSample};
use crate::error::Result;
use crate::guidance::{guided_step, max_strain};
use crate::physics::{euler_step, net_forces, spring_force, ForceField, SimConfig};
use crate::types::{build_graph, ParticleState, PushAction, SpringGraph, Vec3};
use crate::worlds::{make_world_posed, ObjectKind, WorldSpec};

/// Outcome of one property suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn point<R: Rng>(rng: &mut R, half: f64, zmax: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(0.0..=zmax))
}

fn random_action<R: Rng>(rng: &mut R, half: f64) -> PushAction {
    loop {
        let s = [rng.gen_range(-half..half), rng.gen_range(-half..half)];
        let e = [rng.gen_range(-half..half), rng.gen_range(-half..half)];
        if let Ok(a) = PushAction::new(s, e, 1.0) {
            if a.length() > 1e-3 {
                return a;
            }
        }
    }
}

/// Rotation by `theta` about z followed by a planar shift.
#[derive(Clone, Copy, Debug)]
struct Isometry {
    theta: f64,
    shift: [f64; 2],
}

impl Isometry {
    fn random<R: Rng>(rng: &mut R) -> Self {
        Isometry {
            theta: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            shift: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
        }
    }

    fn point(&self, p: Vec3) -> Vec3 {
        p.rotate_z(self.theta) + Vec3::new(self.shift[0], self.shift[1], 0.0)
    }

    fn action(&self, a: &PushAction) -> PushAction {
        let f = |q: [f64; 2]| self.point(Vec3::new(q[0], q[1], 0.0)).xy();
        PushAction::new(f(a.start), f(a.end), a.duration).expect("isometries keep pushes nondegenerate")
    }
}

/// Canonical features are unchanged when scene and action move together.
pub fn canonical_invariance(cases: usize, seed: u64) -> CheckOutcome {
    timed("canonicalization invariance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..cases {
            let n = rng.gen_range(1..=30);
            let pos: Vec<Vec3> = (0..n).map(|_| point(&mut rng, 1.0, 0.2)).collect();
            let a = random_action(&mut rng, 1.0);
            let g = Isometry::random(&mut rng);
            let moved: Vec<Vec3> = pos.iter().map(|p| g.point(*p)).collect();
            let before = canonicalize(&pos, &a, 0.0)?;
            let after = canonicalize(&moved, &g.action(&a), 0.0)?;
            for (p, q) in before.per_particle.iter().zip(&after.per_particle) {
                worst = worst.max((*p - *q).max_abs());
            }
            worst = worst.max((before.magnitude - after.magnitude).abs());
        }
        Ok((worst <= 1e-9, format!("{cases} cases, max deviation {worst:.2e} (limit 1e-9)")))
    })
}

type Scene = (Vec<Vec3>, PushAction, Vec<(usize, usize)>);

fn random_scene<R: Rng>(rng: &mut R, n: usize) -> Result<Scene> {
    let pos: Vec<Vec3> = (0..n).map(|_| point(rng, 0.5, 0.1)).collect();
    let graph = build_graph(&pos, 0.6, 1.0, 1.0)?;
    Ok((pos, random_action(rng, 0.6), graph.pairs()))
}

fn random_params<R: Rng>(rng: &mut R) -> Result<EgnnParams> {
    let cfg = EgnnConfig {
        n_layers: rng.gen_range(1..=4),
        hidden_dim: rng.gen_range(4..=16),
        length_scale: rng.gen_range(0.05..1.0),
    };
    EgnnParams::random(cfg, rng.gen_range(0.05..0.5), rng)
}

/// Canonicalising and predicting commutes with planar isometries up to
/// round-off, and with particle relabelling exactly.
pub fn pipeline_equivariance(cases: usize, seed: u64) -> CheckOutcome {
    timed("pipeline equivariance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut perm_exact = true;
        for _ in 0..cases {
            let params = random_params(&mut rng)?;
            let n = rng.gen_range(2..=20);
            let (pos, a, edges) = random_scene(&mut rng, n)?;
            let out = egnn_forward(&pos, &canonicalize(&pos, &a, 0.0)?, &edges, &params)?;

            let g = Isometry::random(&mut rng);
            let moved: Vec<Vec3> = pos.iter().map(|p| g.point(*p)).collect();
            let ga = g.action(&a);
            let out_moved = egnn_forward(&moved, &canonicalize(&moved, &ga, 0.0)?, &edges, &params)?;
            let num: f64 = out_moved.iter().zip(&out).map(|(o, p)| (*o - g.point(*p)).norm_sq()).sum();
            let den: f64 = out_moved.iter().map(|o| o.norm_sq()).sum();
            worst = worst.max((num / den.max(1e-300)).sqrt());

            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            // particle i moves to slot perm[i]
            let mut ppos = vec![Vec3::ZERO; n];
            for i in 0..n {
                ppos[perm[i]] = pos[i];
            }
            let pedges: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
            let pout = egnn_forward(&ppos, &canonicalize(&ppos, &a, 0.0)?, &pedges, &params)?;
            perm_exact &= (0..n).all(|i| pout[perm[i]] == out[i]);
        }
        Ok((
            worst <= 1e-6 && perm_exact,
            format!("{cases} scenes, isometry relative error {worst:.2e} (limit 1e-6), permutation exact: {perm_exact}"),
        ))
    })
}

fn training_sample<R: Rng>(rng: &mut R, n: usize) -> Result<TrainingSample> {
    let (positions, a, edges) = random_scene(rng, n)?;
    let features = canonicalize(&positions, &a, 0.0)?;
    let target = positions.iter().map(|p| *p + point(rng, 0.1, 0.05)).collect();
    Ok(TrainingSample {
        positions,
        features,
        edges,
        target,
    })
}

/// Worst relative error between the analytic gradient and central finite
/// differences with step `1e-5`, over every parameter.
pub fn gradient_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = EgnnParams::random(
        EgnnConfig {
            n_layers: 3,
            hidden_dim: 8,
            length_scale: 0.3,
        },
        0.3,
        &mut rng,
    )?;
    let batch = vec![training_sample(&mut rng, 5)?, training_sample(&mut rng, 5)?];
    let (g, _) = backward(&batch, &params)?;
    let analytic = g.flat();
    let base = params.flat();
    let mut p = params.clone();
    let mut eval = |v: &[f64]| -> Result<f64> {
        p.set_flat(v)?;
        let mut total = 0.0;
        for s in &batch {
            total += s.evaluate(&p, 1.0)?.total;
        }
        Ok(total / batch.len() as f64)
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut v = base.clone();
    for k in 0..base.len() {
        v[k] = base[k] + h;
        let up = eval(&v)?;
        v[k] = base[k] - h;
        let down = eval(&v)?;
        v[k] = base[k];
        let numeric = (up - down) / (2.0 * h);
        // entries whose gradient is below the difference quotient's noise floor compare absolutely
        let rel = (numeric - analytic[k]).abs() / (numeric.abs() + analytic[k].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn gradient_correctness(seeds: usize, seed: u64) -> CheckOutcome {
    timed("gradient correctness", || {
        let mut worst = 0.0f64;
        for s in 0..seeds as u64 {
            worst = worst.max(gradient_error(seed + s)?);
        }
        Ok((worst <= 1e-4, format!("{seeds} seeds, worst relative error {worst:.2e} (limit 1e-4)")))
    })
}

fn momentum(s: &ParticleState) -> Vec3 {
    s.velocities.iter().zip(&s.masses).fold(Vec3::ZERO, |acc, (v, m)| acc + *v * *m)
}

/// Pairwise antisymmetry, momentum conservation, rest fixed points and
/// table non-penetration.
pub fn physics_invariants(steps: usize, seed: u64) -> CheckOutcome {
    timed("physics invariants", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut antisymmetric = true;
        for _ in 0..1000 {
            let (a, b) = (point(&mut rng, 1.0, 1.0), point(&mut rng, 1.0, 1.0));
            let (k, r) = (rng.gen_range(1.0..1e4), rng.gen_range(0.0..1.0));
            antisymmetric &= spring_force(a, b, k, r).force == -spring_force(b, a, k, r).force;
        }

        let free = SimConfig {
            gravity: 0.0,
            ..SimConfig::default()
        }
        .without_ground();
        let mut drift = 0.0f64;
        for _ in 0..100 {
            let n = rng.gen_range(2..=12);
            let rest: Vec<Vec3> = (0..n).map(|_| point(&mut rng, 0.3, 0.3)).collect();
            let mut graph = build_graph(&rest, 0.4, rng.gen_range(10.0..500.0), 1.0)?;
            graph.damping = 1.0;
            let pos: Vec<Vec3> = rest.iter().map(|p| *p + point(&mut rng, 0.02, 0.02)).collect();
            let vel: Vec<Vec3> = (0..n).map(|_| point(&mut rng, 0.5, 0.5)).collect();
            let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let mut s = ParticleState::new(pos, vel, masses)?;
            for _ in 0..20 {
                let f = net_forces(&s, &graph, &ForceField::zeros(n), &free)?;
                let next = euler_step(&s, &f, &graph, &free)?;
                drift = drift.max((momentum(&next) - momentum(&s)).max_abs());
                s = next;
            }
        }

        let table = SimConfig::default();
        let mut rest_motion = 0.0f64;
        for _ in 0..100 {
            let n = rng.gen_range(1..=12);
            let pos: Vec<Vec3> = (0..n)
                .map(|_| {
                    let mut p = point(&mut rng, 0.3, 0.0);
                    p.z = table.ground_height;
                    p
                })
                .collect();
            let graph = build_graph(&pos, 0.3, rng.gen_range(10.0..500.0), 0.98)?;
            let s = ParticleState::at_rest(pos, 1.0)?;
            let f = net_forces(&s, &graph, &ForceField::zeros(n), &table)?;
            let next = euler_step(&s, &f, &graph, &table)?;
            for (a, b) in s.positions.iter().zip(&next.positions) {
                rest_motion = rest_motion.max((*a - *b).max_abs());
            }
        }

        let mut lowest = f64::INFINITY;
        let n = 8;
        let rest: Vec<Vec3> = (0..n).map(|_| point(&mut rng, 0.2, 0.2)).collect();
        let graph = build_graph(&rest, 0.3, 200.0, 0.98)?;
        let mut s = ParticleState::at_rest(rest.clone(), 1.0)?;
        for step in 0..steps {
            if step % 1000 == 0 {
                s = ParticleState::new(
                    rest.iter().map(|p| *p + point(&mut rng, 0.05, 0.3)).collect(),
                    (0..n).map(|_| point(&mut rng, 2.0, 2.0)).collect(),
                    vec![1.0; n],
                )?;
            }
            let ext = ForceField {
                per_particle: (0..n).map(|_| point(&mut rng, 20.0, 0.0) - Vec3::new(0.0, 0.0, rng.gen_range(0.0..50.0))).collect(),
            };
            let f = net_forces(&s, &graph, &ext, &table)?;
            s = euler_step(&s, &f, &graph, &table)?;
            lowest = lowest.min(s.positions.iter().map(|p| p.z - table.ground_height).fold(f64::INFINITY, f64::min));
        }

        let passed = antisymmetric && drift <= 1e-12 && rest_motion <= 1e-12 && lowest >= -1e-9;
        Ok((
            passed,
            format!(
                "antisymmetric: {antisymmetric}, momentum drift {drift:.2e} (limit 1e-12), rest motion {rest_motion:.2e} (limit 1e-12), lowest height {lowest:.2e} over {steps} steps (limit -1e-9)"
            ),
        ))
    })
}

/// Guiding the learner's spring-mass model with distorted network
/// predictions never ends more strained than the prediction itself, and
/// stays on the table.
pub fn guidance_feasibility(cases: usize, seed: u64) -> CheckOutcome {
    timed("guidance feasibility", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = 0usize;
        let mut worst_excess = f64::NEG_INFINITY;
        let mut lowest = f64::INFINITY;
        let mut raw_strain_sum = 0.0;
        let mut guided_strain_sum = 0.0;
        let mut done = 0usize;
        while done < cases {
            let kind = ObjectKind::ALL[done % ObjectKind::ALL.len()];
            let world = make_world_posed(&WorldSpec::new(kind, rng.gen()), rng.gen())?;
            let learner = world.learner;
            let graph: SpringGraph = world.learner_graph()?;
            let state = ParticleState::at_rest(world.state.positions.clone(), 1.0)?;
            let c = crate::types::centroid(&state.positions);
            let a = PushAction::new(
                [c.x + rng.gen_range(-0.3..0.3), c.y + rng.gen_range(-0.3..0.3)],
                [c.x + rng.gen_range(-0.3..0.3), c.y + rng.gen_range(-0.3..0.3)],
                1.0,
            );
            let Ok(a) = a else { continue };
            let params = EgnnParams::random(
                EgnnConfig {
                    n_layers: 2,
                    hidden_dim: 8,
                    length_scale: 0.1,
                },
                rng.gen_range(0.5..2.0),
                &mut rng,
            )?;
            let feats = canonicalize(&state.positions, &a, learner.sim.ground_height)?;
            let pred = egnn_forward(&state.positions, &feats, &graph.pairs(), &params)?;
            let raw = max_strain(&pred, &graph);
            if raw <= 1e-3 {
                continue;
            }
            let guided = guided_step(&state, &graph, &pred, &learner.guidance.gains, &learner.guidance.convergence, &learner.sim)?;
            let g = max_strain(&guided.positions, &graph);
            worst_excess = worst_excess.max(g - raw);
            if g > raw + 1e-6 {
                violations += 1;
            }
            lowest = lowest.min(guided.positions.iter().map(|p| p.z - learner.sim.ground_height).fold(f64::INFINITY, f64::min));
            raw_strain_sum += raw;
            guided_strain_sum += g;
            done += 1;
        }
        let passed = violations == 0 && lowest >= -1e-9;
        Ok((
            passed,
            format!(
                "{cases} predictions, mean max strain raw {:.3} guided {:.3}, {violations} above raw, worst excess {worst_excess:.2e}, lowest height {lowest:.2e}",
                raw_strain_sum / cases as f64,
                guided_strain_sum / cases as f64
            ),
        ))
    })
}

/// The full-size suites.
pub fn property_suite(seed: u64) -> Vec<CheckOutcome> {
    vec![
        canonical_invariance(1000, seed),
        pipeline_equivariance(100, seed.wrapping_add(1)),
        gradient_correctness(10, seed.wrapping_add(2)),
        physics_invariants(100_000, seed.wrapping_add(3)),
        guidance_feasibility(200, seed.wrapping_add(4)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        for c in [
            canonical_invariance(50, 1),
            pipeline_equivariance(10, 2),
            physics_invariants(2000, 3),
            guidance_feasibility(8, 4),
        ] {
            assert!(c.passed, "{}", c.line());
        }
        assert!(gradient_error(5).unwrap() <= 1e-4);
    }

    #[test]
    fn outcome_line_format() {
        let c = CheckOutcome {
            name: "x".into(),
            passed: false,
            detail: "d".into(),
            seconds: 0.5,
        };
        assert_eq!(c.line(), "[FAIL] x: d (0.5s)");
    }
}
