//! Geometric and particle data types shared by every other module, plus the
//! two point-cloud utilities used to initialise a particle object:
//! farthest-point downsampling and distance-threshold spring graphs.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A point or vector in scene units. `z` is the gravity axis, +z up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation about the z axis by `angle` radians (counter-clockwise).
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn xy(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

/// Mean of a non-empty set of points.
pub fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = Vec3::ZERO;
    for p in points {
        c += *p;
    }
    c / points.len().max(1) as f64
}

/// Positions, velocities and masses of an N-particle object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
}

impl ParticleState {
    pub fn new(positions: Vec<Vec3>, velocities: Vec<Vec3>, masses: Vec<f64>) -> Result<Self> {
        let s = ParticleState {
            positions,
            velocities,
            masses,
        };
        s.validate()?;
        Ok(s)
    }

    /// Particles at rest with a uniform mass.
    pub fn at_rest(positions: Vec<Vec3>, mass: f64) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![Vec3::ZERO; n], vec![mass; n])
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::InvalidInput("particle state has no particles".into()));
        }
        check_len(n, self.velocities.len())?;
        check_len(n, self.masses.len())?;
        for (i, m) in self.masses.iter().enumerate() {
            if !(m.is_finite() && *m > 0.0) {
                return Err(Error::InvalidInput(format!("mass of particle {i} is not positive")));
            }
        }
        for i in 0..n {
            if !self.positions[i].is_finite() || !self.velocities[i].is_finite() {
                return Err(Error::NumericParticle { index: i });
            }
        }
        Ok(())
    }

    pub fn zero_velocities(&mut self) {
        for v in &mut self.velocities {
            *v = Vec3::ZERO;
        }
    }

    pub fn to_cloud(&self) -> PointCloud {
        PointCloud {
            points: self.positions.clone(),
        }
    }
}

/// One undirected spring between particles `i` and `j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub stiffness: f64,
    pub rest_length: f64,
}

/// Spring topology of an object plus the global velocity damping factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringGraph {
    pub edges: Vec<Spring>,
    pub damping: f64,
}

impl SpringGraph {
    /// Checks the structural invariants against a particle count.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping {} outside (0, 1]", self.damping)));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.edges.len());
        for e in &self.edges {
            if e.i == e.j {
                return Err(Error::InvalidInput(format!("self-loop on particle {}", e.i)));
            }
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) out of range for {n} particles",
                    e.i, e.j
                )));
            }
            if !(e.stiffness > 0.0) || !(e.rest_length >= 0.0) {
                return Err(Error::InvalidInput(format!("edge ({}, {}) has invalid parameters", e.i, e.j)));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::InvalidInput(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        Ok(())
    }

    /// Undirected index pairs, one per spring, in edge order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    pub fn with_stiffness(mut self, k: f64) -> Self {
        for e in &mut self.edges {
            e.stiffness = k;
        }
        self
    }

    /// Mean number of springs per particle.
    pub fn average_degree(&self, n: usize) -> f64 {
        2.0 * self.edges.len() as f64 / n.max(1) as f64
    }

    /// True when every particle is reachable from particle 0.
    pub fn is_connected(&self, n: usize) -> bool {
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Planar push: end-effector start `s`, end `e`, and how long the push takes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushAction {
    #[serde(rename = "s")]
    pub start: [f64; 2],
    #[serde(rename = "e")]
    pub end: [f64; 2],
    #[serde(rename = "dt")]
    pub duration: f64,
}

impl PushAction {
    pub fn new(start: [f64; 2], end: [f64; 2], duration: f64) -> Result<Self> {
        let a = PushAction { start, end, duration };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.start[0], self.start[1], self.end[0], self.end[1], self.duration];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidAction("non-finite action parameter".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidAction("duration must be positive".into()));
        }
        if self.start == self.end {
            return Err(Error::InvalidAction("start and end coincide".into()));
        }
        Ok(())
    }

    pub fn displacement(&self) -> [f64; 2] {
        [self.end[0] - self.start[0], self.end[1] - self.start[1]]
    }

    pub fn length(&self) -> f64 {
        let d = self.displacement();
        d[0].hypot(d[1])
    }
}

/// An observed or goal point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty point cloud".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NumericParticle { index: i });
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Farthest-point sampling of `k` points, starting from a seeded random point.
///
/// When `k >= M` the cloud is returned unchanged (same order).
pub fn downsample_cloud(cloud: &PointCloud, k: usize, seed: u64) -> Result<PointCloud> {
    if cloud.points.is_empty() {
        return Err(Error::InvalidInput("cannot downsample an empty cloud".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("downsample count must be at least 1".into()));
    }
    let m = cloud.points.len();
    if k >= m {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..m);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(first);
    let mut dist: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| p.distance(cloud.points[first]))
        .collect();
    while chosen.len() < k {
        // first index wins ties
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        chosen.push(best);
        let p = cloud.points[best];
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = cloud.points[i].distance(p);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(PointCloud {
        points: chosen.into_iter().map(|i| cloud.points[i]).collect(),
    })
}

/// Connects every pair within `threshold` with a spring whose rest length is
/// the current distance.
pub fn build_graph(positions: &[Vec3], threshold: f64, stiffness: f64, damping: f64) -> Result<SpringGraph> {
    if positions.is_empty() {
        return Err(Error::InvalidInput("cannot build a graph over zero particles".into()));
    }
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidInput("connection threshold must be positive".into()));
    }
    if !(stiffness > 0.0 && stiffness.is_finite()) {
        return Err(Error::InvalidInput("stiffness must be positive".into()));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
    }
    let mut edges = Vec::new();
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d = positions[i].distance(positions[j]);
            if d <= threshold {
                edges.push(Spring {
                    i,
                    j,
                    stiffness,
                    rest_length: d,
                });
            }
        }
    }
    Ok(SpringGraph { edges, damping })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    fn min_pairwise(points: &[Vec3]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                best = best.min(points[i].distance(points[j]));
            }
        }
        best
    }

    #[test]
    fn downsample_returns_small_cloud_unchanged() {
        let c = PointCloud::new(vec![Vec3::new(0., 0., 0.), Vec3::new(1., 0., 0.), Vec3::new(0., 2., 0.)]).unwrap();
        assert_eq!(downsample_cloud(&c, 5, 3).unwrap(), c);
        let one = downsample_cloud(&c, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert!(c.points.contains(&one.points[0]));
    }

    #[test]
    fn downsample_rejects_empty_and_zero() {
        let empty = PointCloud { points: vec![] };
        assert!(matches!(downsample_cloud(&empty, 3, 0), Err(Error::InvalidInput(_))));
        assert!(downsample_cloud(&grid(2), 0, 0).is_err());
    }

    #[test]
    fn fps_spreads_points_better_than_random_choice() {
        let cloud = grid(10);
        let a = downsample_cloud(&cloud, 50, 11).unwrap();
        let b = downsample_cloud(&cloud, 50, 11).unwrap();
        assert_eq!(a, b);
        // random subset with the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let idx = rand::seq::index::sample(&mut rng, cloud.len(), 50);
        let random: Vec<Vec3> = idx.iter().map(|i| cloud.points[i]).collect();
        assert!(min_pairwise(&a.points) >= min_pairwise(&random));
    }

    #[test]
    fn graph_threshold_examples() {
        let g = build_graph(&[Vec3::ZERO, Vec3::new(0.5, 0., 0.)], 1.0, 10.0, 0.9).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].rest_length, 0.5);
        let g = build_graph(&[Vec3::ZERO, Vec3::new(2.0, 0., 0.)], 1.0, 10.0, 0.9).unwrap();
        assert!(g.edges.is_empty());
        let chain = [Vec3::ZERO, Vec3::new(1., 0., 0.), Vec3::new(2., 0., 0.)];
        let g = build_graph(&chain, 1.5, 10.0, 0.9).unwrap();
        assert_eq!(g.pairs(), vec![(0, 1), (1, 2)]);
        assert!(build_graph(&[], 1.0, 1.0, 1.0).is_err());
        assert!(build_graph(&chain, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn serde_shapes() {
        let c = PointCloud::new(vec![Vec3::new(1., 2., 3.)]).unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "[[1.0,2.0,3.0]]");
        let a = PushAction::new([0., 0.], [1., 0.], 0.5).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"s":[0.0,0.0],"e":[1.0,0.0],"dt":0.5}"#);
        let g = build_graph(&[Vec3::ZERO, Vec3::new(0.5, 0., 0.)], 1.0, 10.0, 0.9).unwrap();
        let v: serde_json::Value = serde_json::to_value(&g).unwrap();
        assert!(v.get("edges").is_some() && v.get("damping").is_some());
    }

    #[test]
    fn push_action_rejects_zero_length() {
        assert!(matches!(PushAction::new([1., 1.], [1., 1.], 1.0), Err(Error::InvalidAction(_))));
    }

    proptest! {
        #[test]
        fn graph_has_no_loops_or_duplicates(
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 1..25),
            thr in 0.1f64..3.0,
        ) {
            let positions: Vec<Vec3> = pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect();
            let g = build_graph(&positions, thr, 5.0, 0.9).unwrap();
            prop_assert!(g.validate(positions.len()).is_ok());
            let again = build_graph(&positions, thr, 5.0, 0.9).unwrap();
            prop_assert_eq!(&g, &again);
            for e in &g.edges {
                prop_assert_eq!(e.rest_length.to_bits(), positions[e.i].distance(positions[e.j]).to_bits());
            }
        }

        #[test]
        fn downsample_is_subset_and_deterministic(
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 1..40),
            k in 1usize..30,
            seed in any::<u64>(),
        ) {
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect()).unwrap();
            let a = downsample_cloud(&cloud, k, seed).unwrap();
            prop_assert_eq!(a.len(), k.min(cloud.len()));
            for p in &a.points {
                prop_assert!(cloud.points.contains(p));
            }
            prop_assert_eq!(a, downsample_cloud(&cloud, k, seed).unwrap());
        }
    }
}
