//! Directed minimally rigid observation graphs and the geometric episode
//! conditions (formation kept, collision, success).
//!
//! Graphs follow a directed vertex-addition construction: agent 1 observes
//! agent 0, and every agent `i >= 2` observes agents `i - 1` and `i - 2`. That
//! yields `2n - 3` edges, which is minimal rigidity in the plane.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se2::{Point2, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// Observing agent.
    pub from: usize,
    /// Observed agent.
    pub to: usize,
    /// Desired distance in meters.
    pub length: f64,
}

/// Tolerances (meters) for the formation, collision and goal tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub eps_form: f64,
    pub eps_coll: f64,
    pub eps_goal: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps_form: 0.10,
            eps_coll: 0.20,
            eps_goal: 0.15,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.eps_form, self.eps_coll, self.eps_goal]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "thresholds must be strictly positive: {self:?}"
            )))
        }
    }
}

/// Observation graph plus desired inter-agent distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FormationDoc", into = "FormationDoc")]
pub struct FormationSpec {
    n_agents: usize,
    edges: Vec<Edge>,
    /// Which side of the directed segment `(i-2) -> (i-1)` agent `i` sits on
    /// when the shape is laid out. Entries 0 and 1 are unused.
    left_turns: Vec<bool>,
}

/// On-disk layout: `{"n": 3, "edges": [[1, 0, 1.0], ...]}`.
#[derive(Serialize, Deserialize)]
struct FormationDoc {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left_turns: Option<Vec<bool>>,
}

impl TryFrom<FormationDoc> for FormationSpec {
    type Error = Error;

    fn try_from(doc: FormationDoc) -> Result<Self> {
        let canonical = canonical_edges(doc.n)?;
        if doc.edges.len() != canonical.len() {
            return Err(Error::UnrealizableShape(format!(
                "expected {} edges for {} agents, got {}",
                canonical.len(),
                doc.n,
                doc.edges.len()
            )));
        }
        let mut lengths = vec![f64::NAN; canonical.len()];
        for &(i, j, len) in &doc.edges {
            let slot = canonical
                .iter()
                .position(|&(a, b)| a == i && b == j)
                .ok_or_else(|| {
                    Error::UnrealizableShape(format!("edge ({i}, {j}) is not part of the rigid construction"))
                })?;
            if !lengths[slot].is_nan() {
                return Err(Error::UnrealizableShape(format!("duplicate edge ({i}, {j})")));
            }
            lengths[slot] = len;
        }
        let mut spec = build_rigid_graph(doc.n, &lengths)?;
        if let Some(turns) = doc.left_turns {
            if turns.len() != doc.n {
                return Err(Error::UnrealizableShape(
                    "left_turns must have one entry per agent".into(),
                ));
            }
            spec.left_turns = turns;
        }
        Ok(spec)
    }
}

impl From<FormationSpec> for FormationDoc {
    fn from(spec: FormationSpec) -> Self {
        let default_turns = spec.left_turns.iter().all(|&t| t);
        FormationDoc {
            n: spec.n_agents,
            edges: spec.edges.iter().map(|e| (e.from, e.to, e.length)).collect(),
            left_turns: (!default_turns).then_some(spec.left_turns),
        }
    }
}

fn canonical_edges(n: usize) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::TooFewAgents(n));
    }
    let mut edges = vec![(1, 0)];
    for i in 2..n {
        edges.push((i, i - 1));
        edges.push((i, i - 2));
    }
    Ok(edges)
}

/// Build the canonical rigid graph for `n` agents.
///
/// `lengths` lists desired distances in canonical edge order:
/// `(1,0), (2,1), (2,0), (3,2), (3,1), ...`.
pub fn build_rigid_graph(n: usize, lengths: &[f64]) -> Result<FormationSpec> {
    let pairs = canonical_edges(n)?;
    if lengths.len() != pairs.len() {
        return Err(Error::UnrealizableShape(format!(
            "{} agents need {} edge lengths, got {}",
            n,
            pairs.len(),
            lengths.len()
        )));
    }
    if let Some(bad) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::UnrealizableShape(format!(
            "edge lengths must be positive and finite, got {bad}"
        )));
    }
    let edges: Vec<Edge> = pairs
        .iter()
        .zip(lengths)
        .map(|(&(from, to), &length)| Edge { from, to, length })
        .collect();
    let spec = FormationSpec {
        n_agents: n,
        edges,
        left_turns: vec![true; n],
    };
    for i in 2..n {
        let a = spec.length(i, i - 1).unwrap();
        let b = spec.length(i, i - 2).unwrap();
        let c = spec.length(i - 1, i - 2).unwrap();
        if !(a + b > c && a + c > b && b + c > a) {
            return Err(Error::UnrealizableShape(format!(
                "triangle ({}, {}, {}) violates the triangle inequality: {a}, {b}, {c}",
                i,
                i - 1,
                i - 2
            )));
        }
    }
    Ok(spec)
}

/// Equilateral triangle with the given side.
pub fn triangle(side: f64) -> Result<FormationSpec> {
    build_rigid_graph(3, &[side, side, side])
}

impl FormationSpec {
    /// Derive desired lengths (and layout chirality) from target coordinates.
    pub fn from_positions(points: &[Point2]) -> Result<Self> {
        let pairs = canonical_edges(points.len())?;
        let lengths: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| points[i].distance(&points[j]))
            .collect();
        let mut spec = build_rigid_graph(points.len(), &lengths)?;
        for i in 2..points.len() {
            let base = points[i - 1].sub(&points[i - 2]);
            let rel = points[i].sub(&points[i - 2]);
            spec.left_turns[i] = base.x * rel.y - base.y * rel.x > 0.0;
        }
        Ok(spec)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Desired length of the directed edge `from -> to`, if present.
    pub fn length(&self, from: usize, to: usize) -> Option<f64> {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.length)
    }

    pub fn out_edges(&self, agent: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == agent)
    }

    pub fn out_degree(&self, agent: usize) -> usize {
        self.out_edges(agent).count()
    }

    /// Number of distinct unordered agent pairs joined by an edge.
    pub fn undirected_edge_count(&self) -> usize {
        let mut pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|e| (e.from.min(e.to), e.from.max(e.to)))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs.len()
    }

    /// Canonical layout of the shape, centered on its centroid.
    pub fn reference_positions(&self) -> Vec<Point2> {
        let mut pts = Vec::with_capacity(self.n_agents);
        pts.push(Point2::ZERO);
        pts.push(Point2::new(self.edges[0].length, 0.0));
        for i in 2..self.n_agents {
            let a = pts[i - 2];
            let b = pts[i - 1];
            let r_a = self.length(i, i - 2).unwrap();
            let r_b = self.length(i, i - 1).unwrap();
            let base = b.sub(&a);
            let span = base.norm();
            let u = base.scale(1.0 / span);
            let along = (r_a * r_a - r_b * r_b + span * span) / (2.0 * span);
            let h = (r_a * r_a - along * along).max(0.0).sqrt();
            let side = if self.left_turns[i] { h } else { -h };
            pts.push(a.add(&u.scale(along)).add(&Point2::new(-u.y, u.x).scale(side)));
        }
        let c = centroid(&pts);
        pts.iter().map(|p| p.sub(&c)).collect()
    }

    /// Largest distance from the centroid to any agent in the layout.
    pub fn radius(&self) -> f64 {
        self.reference_positions()
            .iter()
            .map(Point2::norm)
            .fold(0.0, f64::max)
    }

    /// Smallest pairwise distance in the canonical layout.
    pub fn min_separation(&self) -> f64 {
        let pts = self.reference_positions();
        let mut best = f64::INFINITY;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                best = best.min(pts[i].distance(&pts[j]));
            }
        }
        best
    }

    /// A legal formation must not itself trigger the collision test.
    pub fn check_clearance(&self, th: &Thresholds) -> Result<()> {
        if let Some(e) = self.edges.iter().find(|e| e.length <= th.eps_coll) {
            return Err(Error::UnrealizableShape(format!(
                "edge ({}, {}) length {} is within the collision distance {}",
                e.from, e.to, e.length, th.eps_coll
            )));
        }
        let sep = self.min_separation();
        if sep <= th.eps_coll {
            return Err(Error::UnrealizableShape(format!(
                "layout places two agents {sep:.3} m apart (collision distance {})",
                th.eps_coll
            )));
        }
        Ok(())
    }
}

/// `|d_ij − d̄_ij|` per edge, in edge order.
pub fn edge_errors(positions: &[Point2], spec: &FormationSpec) -> Vec<f64> {
    spec.edges
        .iter()
        .map(|e| (positions[e.from].distance(&positions[e.to]) - e.length).abs())
        .collect()
}

pub fn formation_condition(positions: &[Point2], spec: &FormationSpec, th: &Thresholds) -> bool {
    spec.edges
        .iter()
        .all(|e| (positions[e.from].distance(&positions[e.to]) - e.length).abs() <= th.eps_form)
}

/// True when any unordered pair of agents is within `eps_coll`.
pub fn collision_condition(positions: &[Point2], th: &Thresholds) -> bool {
    positions.iter().enumerate().any(|(i, p)| {
        positions[i + 1..]
            .iter()
            .any(|q| p.distance(q) <= th.eps_coll)
    })
}

pub fn centroid(positions: &[Point2]) -> Point2 {
    let n = positions.len() as f64;
    let (sx, sy) = positions
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point2::new(sx / n, sy / n)
}

pub fn success_condition(
    positions: &[Point2],
    goal: &Point2,
    spec: &FormationSpec,
    th: &Thresholds,
) -> bool {
    formation_condition(positions, spec, th) && centroid(positions).distance(goal) <= th.eps_goal
}

/// Lay the formation out around `center`, rotated by `orientation`, with
/// headings drawn uniformly from `(-π, π]`.
pub fn place_formation<R: Rng + ?Sized>(
    center: Point2,
    spec: &FormationSpec,
    orientation: f64,
    rng: &mut R,
) -> Vec<Pose> {
    spec.reference_positions()
        .iter()
        .map(|p| {
            let q = p.rotate(orientation).add(&center);
            let heading = rng.random_range(-PI..PI);
            Pose::new(q.x, q.y, heading)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn equilateral() -> Vec<Point2> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.5, 3f64.sqrt() / 2.0),
        ]
    }

    #[test]
    fn triangle_graph() {
        let spec = triangle(1.0).unwrap();
        assert_eq!(spec.undirected_edge_count(), 3);
        assert_eq!(
            (0..3).map(|i| spec.out_degree(i)).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn four_agents_have_five_edges() {
        let spec = build_rigid_graph(4, &[1.0; 5]).unwrap();
        assert_eq!(spec.undirected_edge_count(), 2 * 4 - 3);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            build_rigid_graph(3, &[1.0, 1.0, 3.0]),
            Err(Error::UnrealizableShape(_))
        ));
        assert!(matches!(build_rigid_graph(1, &[]), Err(Error::TooFewAgents(1))));
        assert!(matches!(
            build_rigid_graph(3, &[1.0, 1.0]),
            Err(Error::UnrealizableShape(_))
        ));
        assert!(build_rigid_graph(2, &[0.0]).is_err());
        // Degenerate (collinear) triangles are not strictly realizable.
        assert!(build_rigid_graph(3, &[1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn edge_error_examples() {
        let spec = triangle(1.0).unwrap();
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.5, 0.866),
        ];
        assert!(edge_errors(&pts, &spec).iter().all(|e| *e < 1e-3));
        let exact = equilateral();
        assert!(edge_errors(&exact, &spec).iter().all(|e| *e < 1e-15));

        // Push agent 1 outward along the 0-1 edge.
        let mut moved = exact.clone();
        moved[1] = Point2::new(1.2, 0.0);
        let errs = edge_errors(&moved, &spec);
        let idx = spec.edges().iter().position(|e| e.from == 1 && e.to == 0).unwrap();
        assert!((errs[idx] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn formation_condition_boundaries() {
        let th = Thresholds::default();
        let spec = build_rigid_graph(2, &[1.0]).unwrap();
        let at = |d: f64| vec![Point2::new(0.0, 0.0), Point2::new(d, 0.0)];
        assert!(formation_condition(&at(1.0), &spec, &th));
        assert!(!formation_condition(&at(1.12), &spec, &th));
        // Inclusive boundary, checked with binary-exact values.
        let spec = build_rigid_graph(2, &[0.5]).unwrap();
        let th_exact = Thresholds {
            eps_form: 0.25,
            ..th
        };
        assert!(formation_condition(&at(0.75), &spec, &th_exact));
        assert!(!formation_condition(&at(0.7500001), &spec, &th_exact));
    }

    #[test]
    fn collision_examples() {
        let th = Thresholds::default();
        assert!(collision_condition(
            &[Point2::new(0.0, 0.0), Point2::new(0.15, 0.0)],
            &th
        ));
        assert!(!collision_condition(&equilateral(), &th));
        assert!(collision_condition(
            &[Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)],
            &th
        ));
        // Pairs outside the graph count as well.
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(5.0, 5.0),
            Point2::new(0.1, 0.0),
        ];
        assert!(collision_condition(&pts, &th));
        let at_boundary = [Point2::new(0.0, 0.0), Point2::new(0.25, 0.0)];
        assert!(collision_condition(
            &at_boundary,
            &Thresholds {
                eps_coll: 0.25,
                ..th
            }
        ));
    }

    #[test]
    fn centroid_examples() {
        let c = centroid(&[
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.5, 0.866),
        ]);
        assert!((c.x - 0.5).abs() < 1e-12);
        assert!((c.y - 0.866 / 3.0).abs() < 1e-12);
        assert!((c.y - 0.2887).abs() < 1e-4);
        assert_eq!(centroid(&[Point2::new(3.0, -2.0)]), Point2::new(3.0, -2.0));
        let sq = [
            Point2::new(1.0, 1.0),
            Point2::new(3.0, 1.0),
            Point2::new(3.0, 3.0),
            Point2::new(1.0, 3.0),
        ];
        assert_eq!(centroid(&sq), Point2::new(2.0, 2.0));
    }

    #[test]
    fn success_examples() {
        let th = Thresholds::default();
        let spec = triangle(1.0).unwrap();
        let pts = equilateral();
        let c = centroid(&pts);
        assert!(success_condition(&pts, &c, &spec, &th));
        assert!(!success_condition(&pts, &c.add(&Point2::new(0.16, 0.0)), &spec, &th));
        let mut broken = pts.clone();
        broken[2] = Point2::new(0.5, 1.2);
        let c = centroid(&broken);
        assert!(!success_condition(&broken, &c, &spec, &th));
    }

    #[test]
    fn placement_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = triangle(1.0).unwrap();
        let th = Thresholds::default();
        let center = Point2::new(5.0, 5.0);
        let poses = place_formation(center, &spec, 0.0, &mut rng);
        let pts: Vec<Point2> = poses.iter().map(Pose::position).collect();
        assert!(centroid(&pts).distance(&center) < 1e-12);
        assert!(edge_errors(&pts, &spec).iter().all(|e| *e < 1e-9));
        assert!(formation_condition(&pts, &spec, &th));

        let flipped = place_formation(center, &spec, PI, &mut rng);
        for (a, b) in poses.iter().zip(&flipped) {
            let reflected = Point2::new(2.0 * center.x - a.x, 2.0 * center.y - a.y);
            assert!(reflected.distance(&b.position()) < 1e-12);
        }
        for p in poses.iter().chain(&flipped) {
            assert!(p.theta() > -PI && p.theta() <= PI);
        }
    }

    #[test]
    fn from_positions_keeps_chirality() {
        let pts = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
            Point2::new(-0.8, 0.4),
        ];
        let spec = FormationSpec::from_positions(&pts).unwrap();
        let layout = spec.reference_positions();
        let c = centroid(&pts);
        for (a, b) in pts.iter().zip(&layout) {
            assert!(a.sub(&c).distance(b) < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let spec = build_rigid_graph(4, &[1.0, 1.1, 1.2, 0.9, 1.3]).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.starts_with(r#"{"n":4,"edges":[[1,0,1.0]"#));
        let back: FormationSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);

        let bad = r#"{"n": 3, "edges": [[1,0,1.0],[2,1,1.0],[0,2,1.0]]}"#;
        assert!(serde_json::from_str::<FormationSpec>(bad).is_err());
        let shuffled = r#"{"n": 3, "edges": [[2,0,1.0],[1,0,1.0],[2,1,1.0]]}"#;
        assert_eq!(serde_json::from_str::<FormationSpec>(shuffled).unwrap(), triangle(1.0).unwrap());
    }

    #[test]
    fn clearance() {
        let th = Thresholds::default();
        assert!(triangle(1.0).unwrap().check_clearance(&th).is_ok());
        assert!(triangle(0.15).unwrap().check_clearance(&th).is_err());
    }

    #[test]
    fn rigidity_counts_up_to_ten() {
        for n in 2..=10 {
            let spec = build_rigid_graph(n, &vec![1.0; 2 * n - 3]).unwrap();
            assert_eq!(spec.undirected_edge_count(), 2 * n - 3);
            let mut expected = vec![0, 1];
            expected.extend(std::iter::repeat_n(2, n - 2));
            let degrees: Vec<usize> = (0..n).map(|i| spec.out_degree(i)).collect();
            assert_eq!(degrees, expected);
        }
    }

    fn scatter(n: usize) -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), n)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point2::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(pts in scatter(5), angle in -PI..PI, dx in -3.0..3.0f64, dy in -3.0..3.0f64) {
            let spec = build_rigid_graph(5, &[1.0, 1.2, 0.9, 1.1, 1.4, 1.0, 1.3]).unwrap();
            let th = Thresholds::default();
            let moved: Vec<Point2> = pts.iter().map(|p| p.rotate(angle).add(&Point2::new(dx, dy))).collect();
            let before = edge_errors(&pts, &spec);
            let after = edge_errors(&moved, &spec);
            for (a, b) in before.iter().zip(&after) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert_eq!(formation_condition(&pts, &spec, &th), formation_condition(&moved, &spec, &th));
            let expected = centroid(&pts).rotate(angle).add(&Point2::new(dx, dy));
            prop_assert!(centroid(&moved).distance(&expected) < 1e-9);
        }

        #[test]
        fn relabeling_permutes_errors(pts in scatter(4), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
            let spec = build_rigid_graph(4, &[1.0, 1.2, 0.9, 1.1, 1.4]).unwrap();
            // Agent k of the relabeled problem is agent perm[k] of the original.
            let relabeled_pts: Vec<Point2> = perm.iter().map(|&k| pts[k]).collect();
            let inverse: Vec<usize> = (0..4).map(|i| perm.iter().position(|&k| k == i).unwrap()).collect();
            let relabeled_errors: Vec<f64> = spec
                .edges()
                .iter()
                .map(|e| (relabeled_pts[inverse[e.from]].distance(&relabeled_pts[inverse[e.to]]) - e.length).abs())
                .collect();
            let mut a = edge_errors(&pts, &spec);
            let mut b = relabeled_errors;
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn own_centroid_is_success(seed in any::<u64>(), jitter in 0.0..0.04f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = build_rigid_graph(4, &[1.0, 1.2, 0.9, 1.1, 1.4]).unwrap();
            let th = Thresholds::default();
            let pts: Vec<Point2> = place_formation(Point2::new(2.0, 3.0), &spec, 0.3, &mut rng)
                .iter()
                .enumerate()
                .map(|(i, p)| p.position().add(&Point2::new(jitter * (i % 2) as f64, 0.0)))
                .collect();
            if formation_condition(&pts, &spec, &th) {
                prop_assert!(success_condition(&pts, &centroid(&pts), &spec, &th));
            }
        }
    }
}
