//! Push actions: the per-particle canonical representation fed to the
//! network, contact checks, and seeded sampling of contacting pushes.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PushAction, Vec3};

/// Number of scalar features per particle: canonical x, y, height, push length.
pub const FEATURE_DIM: usize = 4;

/// Each particle's position relative to the push end point, expressed in a
/// frame whose x axis is the push direction, plus the push length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalAction {
    pub per_particle: Vec<Vec3>,
    pub magnitude: f64,
}

impl CanonicalAction {
    pub fn len(&self) -> usize {
        self.per_particle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_particle.is_empty()
    }

    /// Node feature rows `[cx, cy, cz, |e - s|]`.
    pub fn features(&self) -> Vec<[f64; FEATURE_DIM]> {
        self.per_particle
            .iter()
            .map(|c| [c.x, c.y, c.z, self.magnitude])
            .collect()
    }
}

fn canonicalize_with_offset(positions: &[Vec3], action: &PushAction, ground_height: f64, offset: f64) -> Result<CanonicalAction> {
    action.validate()?;
    let [dx, dy] = action.displacement();
    let theta = dy.atan2(dx);
    let angle = -(theta + offset);
    let e = Vec3::new(action.end[0], action.end[1], 0.0);
    let per_particle = positions
        .iter()
        .map(|x| {
            let rel = Vec3::new(x.x - e.x, x.y - e.y, 0.0).rotate_z(angle);
            Vec3::new(rel.x, rel.y, x.z - ground_height)
        })
        .collect();
    Ok(CanonicalAction {
        per_particle,
        magnitude: dx.hypot(dy),
    })
}

/// Rotates every particle's planar offset from the push end point by
/// `-(atan2(e - s) + 2π)`; heights are taken relative to the table.
pub fn canonicalize(positions: &[Vec3], action: &PushAction, ground_height: f64) -> Result<CanonicalAction> {
    canonicalize_with_offset(positions, action, ground_height, TAU)
}

/// Planar distance from `p` to the segment `a -> b`.
pub fn segment_point_distance(a: [f64; 2], b: [f64; 2], p: Vec3) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p.x - a[0], p.y - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * abx - p.x, a[1] + t * aby - p.y);
    cx.hypot(cy)
}

/// True when the push path passes within `margin` of some particle.
pub fn action_contacts(positions: &[Vec3], action: &PushAction, margin: f64) -> bool {
    positions
        .iter()
        .any(|p| segment_point_distance(action.start, action.end, *p) <= margin)
}

/// True when the end effector can be placed at the start point without
/// overlapping the object, i.e. every particle is at least `clearance` away.
pub fn start_is_clear(positions: &[Vec3], action: &PushAction, clearance: f64) -> bool {
    positions
        .iter()
        .all(|p| (p.x - action.start[0]).hypot(p.y - action.start[1]) >= clearance)
}

/// Samples a push that meets the object.
///
/// Picks a target particle and a direction, walks back along the direction to
/// the first particle whose lateral offset from that line is at most
/// `contact_margin / 2`, and starts the push `contact_margin` behind it. The
/// length is drawn from `[max(lo, contact_margin), hi]` so the path always
/// reaches that first particle.
pub fn sample_push_action<R: Rng + ?Sized>(
    positions: &[Vec3],
    length_range: (f64, f64),
    contact_margin: f64,
    duration: f64,
    rng: &mut R,
) -> Result<PushAction> {
    if positions.is_empty() {
        return Err(Error::InvalidInput("no object particles to push".into()));
    }
    let (lo, hi) = length_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid push length range ({lo}, {hi})")));
    }
    if !(contact_margin > 0.0 && contact_margin.is_finite()) {
        return Err(Error::InvalidInput("contact margin must be positive".into()));
    }
    if hi < contact_margin {
        return Err(Error::InvalidInput("longest push cannot reach past the contact margin".into()));
    }
    if !(duration > 0.0) {
        return Err(Error::InvalidInput("push duration must be positive".into()));
    }
    let target = positions[rng.gen_range(0..positions.len())];
    let phi = rng.gen_range(-PI..PI);
    let (dy, dx) = phi.sin_cos();
    let band = 0.5 * contact_margin;
    let first = positions
        .iter()
        .filter_map(|p| {
            let (rx, ry) = (p.x - target.x, p.y - target.y);
            let along = rx * dx + ry * dy;
            let lateral = (rx * dy - ry * dx).abs();
            (lateral <= band).then_some(along)
        })
        .fold(0.0f64, f64::min);
    let back = first - contact_margin;
    let start = [target.x + back * dx, target.y + back * dy];
    let length = rng.gen_range(lo.max(contact_margin)..=hi);
    let end = [start[0] + length * dx, start[1] + length * dy];
    PushAction::new(start, end, duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn identity_rotation_example() {
        let a = PushAction::new([0., 0.], [1., 0.], 1.0).unwrap();
        let c = canonicalize(&[v(2., 0., 0.)], &a, 0.0).unwrap();
        assert!((c.per_particle[0] - v(1., 0., 0.)).max_abs() < 1e-12);
        assert_eq!(c.magnitude, 1.0);
    }

    #[test]
    fn quarter_turn_example() {
        let a = PushAction::new([0., 0.], [0., 1.], 1.0).unwrap();
        let c = canonicalize(&[v(1., 1., 0.)], &a, 0.0).unwrap();
        assert!((c.per_particle[0] - v(0., -1., 0.)).max_abs() < 1e-12);
    }

    #[test]
    fn height_is_relative_to_table() {
        let a = PushAction::new([0., 0.], [1., 0.], 1.0).unwrap();
        let c = canonicalize(&[v(0., 0., 0.75)], &a, 0.25).unwrap();
        assert!((c.per_particle[0].z - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_action_is_rejected() {
        let a = PushAction { start: [1., 1.], end: [1., 1.], duration: 1.0 };
        assert!(matches!(canonicalize(&[Vec3::ZERO], &a, 0.0), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn full_turn_offset_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let pos: Vec<Vec3> = (0..5).map(|_| v(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0)).collect();
            let a = PushAction::new(
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                1.0,
            )
            .unwrap();
            let with = canonicalize(&pos, &a, 0.0).unwrap();
            let without = canonicalize_with_offset(&pos, &a, 0.0, 0.0).unwrap();
            for (p, q) in with.per_particle.iter().zip(&without.per_particle) {
                assert!((*p - *q).max_abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rotated_object_under_same_action_is_distinguished() {
        let pos = vec![v(0.3, 0.1, 0.), v(0.5, 0.1, 0.), v(0.5, 0.4, 0.)];
        let a = PushAction::new([0., 0.], [0.2, 0.], 1.0).unwrap();
        let c = crate::types::centroid(&pos);
        let rotated: Vec<Vec3> = pos.iter().map(|p| c + (*p - c).rotate_z(0.7)).collect();
        let x = canonicalize(&pos, &a, 0.0).unwrap();
        let y = canonicalize(&rotated, &a, 0.0).unwrap();
        let diff = x
            .per_particle
            .iter()
            .zip(&y.per_particle)
            .map(|(p, q)| (*p - *q).max_abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let pos: Vec<Vec3> = (0..10).map(|i| v(i as f64 * 0.05, 0.0, 0.0)).collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_push_action(&pos, (0.1, 0.3), 0.05, 1.0, &mut rng).unwrap()
        };
        assert_eq!(draw(3), draw(3));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = sample_push_action(&pos, (0.1, 0.3), 0.05, 1.0, &mut rng).unwrap();
            assert!((0.1 - 1e-12..=0.3 + 1e-12).contains(&a.length()));
        }
    }

    #[test]
    fn sampling_rejects_degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_push_action(&[Vec3::ZERO], (0.1, 0.2), 0.0, 1.0, &mut rng).is_err());
        assert!(sample_push_action(&[], (0.1, 0.2), 0.05, 1.0, &mut rng).is_err());
        assert!(sample_push_action(&[Vec3::ZERO], (0.3, 0.2), 0.05, 1.0, &mut rng).is_err());
    }

    #[test]
    fn sampled_pushes_touch_a_unit_square_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let blob: Vec<Vec3> = (0..60).map(|_| v(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), 0.0)).collect();
        let margin = 0.05;
        for _ in 0..1000 {
            let a = sample_push_action(&blob, (0.02, 0.4), margin, 1.0, &mut rng).unwrap();
            // brute force: closest particle to the segment
            let best = blob
                .iter()
                .map(|p| segment_point_distance(a.start, a.end, *p))
                .fold(f64::INFINITY, f64::min);
            assert!(best <= margin, "segment misses the blob by {best}");
            assert!(start_is_clear(&blob, &a, 0.5 * margin - 1e-12));
        }
    }
}
