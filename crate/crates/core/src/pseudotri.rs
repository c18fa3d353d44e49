//! Unfolding through pointed pseudotriangulations.
//!
//! A pointed pseudotriangulation (every vertex has an incident angle above
//! pi, `2n - 3` non-crossing edges) containing the bars becomes a one
//! degree-of-freedom expansive mechanism once a convex hull edge is dropped.
//! The mechanism is followed until two edges consecutive around a vertex
//! align; the graph is then repaired by a single edge swap, or, when the two
//! aligned edges are bars of the same joint, the joint is frozen straight.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expansion::VelocityField;
use crate::flow::{max_distance_decrease, max_relative_length_error, project_bar_lengths, Frame, MotionTrace, Outcome, StepDiagnostics};
use crate::geometry::{is_simple, segment_intersection, Linkage, Point2, Segment, Simplicity};
use crate::planar::{face_angle, PlaneGraph};

pub const EVENT_TOL: f64 = 1e-10;
const GENERAL_POSITION_EPS: f64 = 1e-12;
const SLIVER_ANGLE: f64 = 1e-8;
const PROBE_DISTANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PtError {
    #[error("vertices {0}, {1}, {2} are collinear")]
    DegeneratePosition(usize, usize, usize),
    #[error("bars ({0}, {1}) and ({2}, {3}) cross")]
    BarsCross(usize, usize, usize, usize),
    #[error("bars extend to only {got} of the {needed} edges of a pseudotriangulation")]
    BarsNotExtendable { got: usize, needed: usize },
    #[error("gauge-fixed mechanism has {0} degrees of freedom, expected 1")]
    UnexpectedDofCount(usize),
    #[error("every convex hull edge is a bar")]
    NoRemovableHullEdge,
    #[error("({0}, {1}) is not a removable convex hull edge")]
    NotAHullEdge(usize, usize),
    #[error("{count} replacement edges are valid at vertex {vertex}")]
    FlipNotUnique { vertex: usize, count: usize },
    #[error("no single edge swap repairs the pseudotriangulation at vertex {0}")]
    NoValidFlip(usize),
    #[error("flip at vertex {0} undoes the previous one")]
    FlipReversed(usize),
    #[error("step size fell below {0:e}")]
    StepSizeUnderflow(f64),
    #[error("section exceeded {0} steps")]
    MaxStepsExceeded(usize),
    #[error("input linkage is not simple")]
    NotSimple,
    #[error("the pseudotriangulation backend handles one chain, got {0}")]
    MultipleChains(usize),
}

pub type Edge2 = (usize, usize);

fn key(i: usize, j: usize) -> Edge2 {
    (i.min(j), i.max(j))
}

/// Interior face: three corners (convex) joined by reflex chains.
#[derive(Clone, Debug, PartialEq)]
pub struct PtFace {
    pub corners: [usize; 3],
    /// `reflex_chains[k]` runs from `corners[k]` to `corners[(k + 1) % 3]`,
    /// both included.
    pub reflex_chains: [Vec<usize>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pseudotriangulation {
    pub n: usize,
    /// Sorted, each pair `(i, j)` with `i < j`.
    pub edges: Vec<Edge2>,
    /// Sorted subset of `edges` that must never be removed.
    pub bars: Vec<Edge2>,
    pub faces: Vec<PtFace>,
}

impl Pseudotriangulation {
    fn from_edges(points: &[Point2], mut edges: Vec<Edge2>, bars: &[Edge2]) -> Self {
        edges.sort();
        edges.dedup();
        let mut bars: Vec<Edge2> = bars.iter().map(|&(i, j)| key(i, j)).collect();
        bars.sort();
        bars.dedup();
        let faces = pt_faces(points, &edges).unwrap_or_default();
        Self {
            n: points.len(),
            edges,
            bars,
            faces,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.binary_search(&key(i, j)).is_ok()
    }

    pub fn is_bar(&self, i: usize, j: usize) -> bool {
        self.bars.binary_search(&key(i, j)).is_ok()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| {
                if i == v {
                    Some(j)
                } else if j == v {
                    Some(i)
                } else {
                    None
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PtReport {
    pub edge_count_ok: bool,
    pub pointed_ok: bool,
    pub faces_ok: bool,
    pub non_crossing_ok: bool,
    pub bars_ok: bool,
}

impl PtReport {
    pub fn all_ok(&self) -> bool {
        self.edge_count_ok && self.pointed_ok && self.faces_ok && self.non_crossing_ok && self.bars_ok
    }
}

/// Convex hull vertices in counterclockwise order, collinear points dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .x
            .total_cmp(&points[b].x)
            .then(points[a].y.total_cmp(&points[b].y))
    });
    if idx.len() < 3 {
        return idx;
    }
    let turn = |o: usize, a: usize, b: usize| (points[a] - points[o]).cross(points[b] - points[o]);
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub fn hull_edges(points: &[Point2]) -> Vec<Edge2> {
    let h = convex_hull(points);
    if h.len() < 2 {
        return Vec::new();
    }
    if h.len() == 2 {
        return vec![key(h[0], h[1])];
    }
    let mut out: Vec<Edge2> = (0..h.len()).map(|k| key(h[k], h[(k + 1) % h.len()])).collect();
    out.sort();
    out
}

pub fn check_general_position(points: &[Point2]) -> Result<(), PtError> {
    let scale = crate::geometry::scale_of(points);
    let n = points.len();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let det = (points[b] - points[a]).cross(points[c] - points[a]);
                if det.abs() <= GENERAL_POSITION_EPS * scale * scale {
                    return Err(PtError::DegeneratePosition(a, b, c));
                }
            }
        }
    }
    Ok(())
}

fn edges_cross(points: &[Point2], e: Edge2, f: Edge2) -> bool {
    if e == f {
        return false;
    }
    let shared = e.0 == f.0 || e.0 == f.1 || e.1 == f.0 || e.1 == f.1;
    let kind = segment_intersection(
        Segment::new(points[e.0], points[e.1]),
        Segment::new(points[f.0], points[f.1]),
    );
    if shared {
        matches!(kind, crate::geometry::IntersectionKind::Overlap(_))
    } else {
        !kind.is_none()
    }
}

/// Edges sharing an endpoint at an angle below `SLIVER_ANGLE`: at an
/// alignment event such a pair would enclose a face of near-zero area.
fn sliver(points: &[Point2], e: Edge2, f: Edge2) -> bool {
    let (v, a, b) = if e.0 == f.0 {
        (e.0, e.1, f.1)
    } else if e.0 == f.1 {
        (e.0, e.1, f.0)
    } else if e.1 == f.0 {
        (e.1, e.0, f.1)
    } else if e.1 == f.1 {
        (e.1, e.0, f.0)
    } else {
        return false;
    };
    let g = ccw_angle(points[a] - points[v], points[b] - points[v]);
    g.min(TAU - g) < SLIVER_ANGLE
}

/// Counterclockwise angle from direction `a` to direction `b`, in `[0, 2pi)`.
fn ccw_angle(a: Point2, b: Point2) -> f64 {
    let d = b.angle() - a.angle();
    d.rem_euclid(TAU)
}

/// Neighbours of `v` sorted counterclockwise by direction.
pub fn rotation_at(points: &[Point2], v: usize, neighbors: &[usize]) -> Vec<usize> {
    let mut out = neighbors.to_vec();
    out.sort_by(|&a, &b| (points[a] - points[v]).angle().total_cmp(&(points[b] - points[v]).angle()));
    out
}

/// Angular gaps between consecutive neighbours in the given cyclic order;
/// gap `k` sits between `order[k]` and `order[k + 1]`.
pub fn angular_gaps(points: &[Point2], v: usize, order: &[usize]) -> Vec<f64> {
    let d = order.len();
    if d < 2 {
        return vec![TAU; d];
    }
    (0..d)
        .map(|k| ccw_angle(points[order[k]] - points[v], points[order[(k + 1) % d]] - points[v]))
        .collect()
}

pub fn is_pointed(points: &[Point2], v: usize, neighbors: &[usize]) -> bool {
    if neighbors.len() < 2 {
        return true;
    }
    let order = rotation_at(points, v, neighbors);
    angular_gaps(points, v, &order).into_iter().any(|g| g > PI)
}

fn adjacency(n: usize, edges: &[Edge2]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    adj
}

/// Bounded faces with their corners; `None` when some face does not have
/// exactly three.
fn pt_faces(points: &[Point2], edges: &[Edge2]) -> Option<Vec<PtFace>> {
    let graph = PlaneGraph::new(points, edges);
    let mut out = Vec::new();
    for face in graph.faces.iter().filter(|f| f.signed_area > 0.0) {
        let m = face.vertices.len();
        let corner_pos: Vec<usize> = (0..m)
            .filter(|&k| face_angle(points, &face.vertices, k) < PI)
            .collect();
        if corner_pos.len() != 3 {
            return None;
        }
        let corners = [
            face.vertices[corner_pos[0]],
            face.vertices[corner_pos[1]],
            face.vertices[corner_pos[2]],
        ];
        let chain = |from: usize, to: usize| -> Vec<usize> {
            let mut c = vec![face.vertices[from]];
            let mut k = from;
            while k != to {
                k = (k + 1) % m;
                c.push(face.vertices[k]);
            }
            c
        };
        out.push(PtFace {
            corners,
            reflex_chains: [
                chain(corner_pos[0], corner_pos[1]),
                chain(corner_pos[1], corner_pos[2]),
                chain(corner_pos[2], corner_pos[0]),
            ],
        });
    }
    Some(out)
}

/// Checks each pseudotriangulation invariant separately.
pub fn verify_pseudotriangulation(points: &[Point2], pt: &Pseudotriangulation) -> PtReport {
    let n = points.len();
    let edge_count_ok = n >= 2 && pt.edges.len() == 2 * n - 3;
    let adj = adjacency(n, &pt.edges);
    let pointed_ok = (0..n).all(|v| is_pointed(points, v, &adj[v]));
    let mut non_crossing_ok = true;
    'outer: for a in 0..pt.edges.len() {
        for b in a + 1..pt.edges.len() {
            if edges_cross(points, pt.edges[a], pt.edges[b]) {
                non_crossing_ok = false;
                break 'outer;
            }
        }
    }
    let faces_ok = non_crossing_ok
        && match pt_faces(points, &pt.edges) {
            Some(faces) => n < 3 || faces.len() == n - 2,
            None => false,
        };
    let bars_ok = pt.bars.iter().all(|&(i, j)| pt.contains(i, j));
    PtReport {
        edge_count_ok,
        pointed_ok,
        faces_ok,
        non_crossing_ok,
        bars_ok,
    }
}

fn is_valid(points: &[Point2], edges: &[Edge2], bars: &[Edge2]) -> bool {
    let pt = Pseudotriangulation::from_edges(points, edges.to_vec(), bars);
    verify_pseudotriangulation(points, &pt).all_ok()
}

/// Greedy construction: bars and hull edges, then the shortest diagonals
/// that cross nothing and keep both endpoints pointed.
pub fn build_pointed_pseudotriangulation(
    points: &[Point2],
    bars: &[Edge2],
) -> Result<Pseudotriangulation, PtError> {
    check_general_position(points)?;
    let n = points.len();
    let bars: Vec<Edge2> = bars.iter().map(|&(i, j)| key(i, j)).collect();
    for a in 0..bars.len() {
        for b in a + 1..bars.len() {
            if edges_cross(points, bars[a], bars[b]) {
                let (e, f) = (bars[a], bars[b]);
                return Err(PtError::BarsCross(e.0, e.1, f.0, f.1));
            }
        }
    }
    let mut edges = bars.clone();
    for h in hull_edges(points) {
        if !edges.contains(&h) {
            edges.push(h);
        }
    }
    let needed = if n >= 2 { 2 * n - 3 } else { 0 };
    let mut adj = adjacency(n, &edges);
    let mut candidates: Vec<Edge2> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|e| !edges.contains(e))
        .collect();
    candidates.sort_by(|a, b| {
        let la = points[a.0].dist(points[a.1]);
        let lb = points[b.0].dist(points[b.1]);
        la.total_cmp(&lb).then(a.cmp(b))
    });
    for c in candidates {
        if edges.len() >= needed {
            break;
        }
        if edges.iter().any(|&e| edges_cross(points, e, c)) {
            continue;
        }
        let mut ni = adj[c.0].clone();
        ni.push(c.1);
        let mut nj = adj[c.1].clone();
        nj.push(c.0);
        if !is_pointed(points, c.0, &ni) || !is_pointed(points, c.1, &nj) {
            continue;
        }
        adj[c.0] = ni;
        adj[c.1] = nj;
        edges.push(c);
    }
    if edges.len() != needed {
        return Err(PtError::BarsNotExtendable {
            got: edges.len(),
            needed,
        });
    }
    Ok(Pseudotriangulation::from_edges(points, edges, &bars))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mechanism {
    pub pt: Pseudotriangulation,
    pub removed_edge: Edge2,
    /// `pin.0` is held fixed and the direction towards `pin.1` kept.
    pub pin: (usize, usize),
}

impl Mechanism {
    pub fn edges(&self) -> impl Iterator<Item = Edge2> + '_ {
        self.pt.edges.iter().copied().filter(move |&e| e != self.removed_edge)
    }

    pub fn with_pin(&self, pin: (usize, usize)) -> Self {
        Self {
            pin,
            ..self.clone()
        }
    }
}

/// Drops a convex hull edge that is not a bar (the lowest-index one unless
/// `choice` names another) and pins the gauge at the first bar.
pub fn make_mechanism(
    pt: &Pseudotriangulation,
    points: &[Point2],
    choice: Option<Edge2>,
) -> Result<Mechanism, PtError> {
    let hull = hull_edges(points);
    let removable: Vec<Edge2> = hull
        .iter()
        .copied()
        .filter(|&(i, j)| pt.contains(i, j) && !pt.is_bar(i, j))
        .collect();
    let removed_edge = match choice {
        Some((i, j)) => {
            let e = key(i, j);
            if !removable.contains(&e) {
                return Err(PtError::NotAHullEdge(e.0, e.1));
            }
            e
        }
        None => *removable.first().ok_or(PtError::NoRemovableHullEdge)?,
    };
    let pin = pt
        .bars
        .first()
        .copied()
        .or_else(|| pt.edges.iter().copied().find(|&e| e != removed_edge))
        .unwrap_or(removed_edge);
    let mech = Mechanism {
        pt: pt.clone(),
        removed_edge,
        pin,
    };
    let dof = nullity(&gauge_fixed_matrix(points, &mech));
    if dof != 1 {
        return Err(PtError::UnexpectedDofCount(dof));
    }
    Ok(mech)
}

/// Rigidity rows of the mechanism's edges followed by three gauge rows:
/// `v_pin = 0` and no rotation of the pinned edge.
pub fn gauge_fixed_matrix(points: &[Point2], mech: &Mechanism) -> DMatrix<f64> {
    let n = points.len();
    let edges: Vec<Edge2> = mech.edges().collect();
    let mut m = DMatrix::zeros(edges.len() + 3, 2 * n);
    for (r, &(i, j)) in edges.iter().enumerate() {
        let d = points[i] - points[j];
        m[(r, 2 * i)] = d.x;
        m[(r, 2 * i + 1)] = d.y;
        m[(r, 2 * j)] = -d.x;
        m[(r, 2 * j + 1)] = -d.y;
    }
    let r = edges.len();
    let (p, q) = mech.pin;
    m[(r, 2 * p)] = 1.0;
    m[(r + 1, 2 * p + 1)] = 1.0;
    let normal = (points[q] - points[p]).rot90();
    m[(r + 2, 2 * q)] = normal.x;
    m[(r + 2, 2 * q + 1)] = normal.y;
    m
}

const RANK_TOL: f64 = 1e-10;

fn padded_svd(m: &DMatrix<f64>) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let (r, c) = m.shape();
    let sq = if r < c { m.clone().insert_rows(r, c - r, 0.0) } else { m.clone() };
    sq.svd(false, true)
}

fn nullity(m: &DMatrix<f64>) -> usize {
    let svd = padded_svd(m);
    let top = svd.singular_values.amax();
    let rank = svd.singular_values.iter().filter(|s| **s > RANK_TOL * top).count();
    m.ncols() - rank
}

/// Unit-norm motion of the mechanism, oriented so the removed edge grows.
pub fn mechanism_velocity(points: &[Point2], mech: &Mechanism) -> Result<VelocityField, PtError> {
    let m = gauge_fixed_matrix(points, mech);
    let svd = padded_svd(&m);
    let top = svd.singular_values.amax();
    let small: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= RANK_TOL * top)
        .collect();
    if small.len() != 1 {
        return Err(PtError::UnexpectedDofCount(small.len()));
    }
    let v_t = svd.v_t.expect("requested V");
    let row = v_t.row(small[0]);
    let mut v: Vec<Point2> = (0..points.len())
        .map(|k| Point2::new(row[2 * k], row[2 * k + 1]))
        .collect();
    let (a, b) = mech.removed_edge;
    if (points[a] - points[b]).dot(v[a] - v[b]) < 0.0 {
        v.iter_mut().for_each(|p| *p = -*p);
    }
    Ok(VelocityField {
        objective_value: v.iter().map(|p| p.norm_squared()).sum(),
        v,
        active_struts: Vec::new(),
        eta_used: 0.0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentEvent {
    /// Time since the start of the section.
    pub t_event: f64,
    pub vertex: usize,
    /// The two edges at `vertex` that became collinear.
    pub edges: [Edge2; 2],
    /// Configuration at the event, on the far side of the alignment by at
    /// most the event tolerance.
    pub config_at_event: Vec<Point2>,
    /// Direction of motion at the event; empty when unknown.
    pub heading: Vec<Point2>,
}

impl AlignmentEvent {
    /// The event configuration moved slightly further along the heading, where
    /// the aligned triple is no longer degenerate.
    pub fn probe(&self) -> Vec<Point2> {
        let x = &self.config_at_event;
        let speed = self.heading.iter().map(|p| p.norm()).fold(0.0, f64::max);
        if speed == 0.0 {
            return x.clone();
        }
        let d = PROBE_DISTANCE * crate::geometry::scale_of(x) / speed;
        x.iter().zip(&self.heading).map(|(p, v)| *p + *v * d).collect()
    }
}

/// Repairs `pt` after `event` with one edge swap valid at `points` (pass
/// `event.probe()` to judge validity just past a degenerate alignment). The
/// removed edge is searched among the non-bar aligned edges first, then the
/// other non-bar edges at the event vertex, then all remaining non-bar
/// edges; the first candidate admitting a replacement must admit exactly
/// one.
pub fn local_revise(
    pt: &Pseudotriangulation,
    event: &AlignmentEvent,
    points: &[Point2],
) -> Result<Pseudotriangulation, PtError> {
    let v = event.vertex;
    let non_bar = |e: &Edge2| pt.contains(e.0, e.1) && !pt.is_bar(e.0, e.1);
    let mut order: Vec<Edge2> = event.edges.iter().map(|&(i, j)| key(i, j)).filter(non_bar).collect();
    order.sort();
    order.dedup();
    let mut incident: Vec<Edge2> = pt
        .edges
        .iter()
        .copied()
        .filter(|e| (e.0 == v || e.1 == v) && non_bar(e) && !order.contains(e))
        .collect();
    incident.sort();
    order.extend(incident);
    let rest: Vec<Edge2> = pt
        .edges
        .iter()
        .copied()
        .filter(|e| non_bar(e) && !order.contains(e))
        .collect();
    order.extend(rest);

    // Removing an aligned edge (v, b) leaves the segment between the far ends
    // of the aligned pair: the same diagonal straightened. It is only the
    // replacement when nothing else is (the hull lost vertex v).
    let far = |e: Edge2| if e.0 == v { e.1 } else { e.0 };
    let straightened = key(far(key(event.edges[0].0, event.edges[0].1)), far(key(event.edges[1].0, event.edges[1].1)));
    let aligned: Vec<Edge2> = event.edges.iter().map(|&(i, j)| key(i, j)).collect();
    let n = pt.n;
    for removed in order {
        let kept: Vec<Edge2> = pt.edges.iter().copied().filter(|&e| e != removed).collect();
        let mut found: Vec<Edge2> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let f = (i, j);
                if f == removed || pt.contains(i, j) {
                    continue;
                }
                if kept.iter().any(|&e| edges_cross(points, e, f) || sliver(points, e, f)) {
                    continue;
                }
                let mut edges = kept.clone();
                edges.push(f);
                if is_valid(points, &edges, &pt.bars) {
                    found.push(f);
                }
            }
        }
        if found.len() > 1 && aligned.contains(&removed) {
            found.retain(|&f| f != straightened);
        }
        match found.len() {
            0 => continue,
            1 => {
                let mut edges = kept;
                edges.push(found[0]);
                log::debug!("flip at vertex {v}: {removed:?} -> {:?}", found[0]);
                return Ok(Pseudotriangulation::from_edges(points, edges, &pt.bars));
            }
            count => {
                log::debug!("removing {removed:?}: candidates {found:?} event {:?}", event.edges);
                return Err(PtError::FlipNotUnique { vertex: v, count });
            }
        }
    }
    Err(PtError::NoValidFlip(v))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PtParams {
    pub straight_tol: f64,
    pub convex_tol: f64,
    pub bar_tol: f64,
    pub expand_tol: f64,
    pub event_tol: f64,
    /// Largest vertex displacement per step as a fraction of the shortest
    /// mechanism edge.
    pub max_step_displacement: f64,
    pub dt_min: f64,
    pub max_steps_per_section: usize,
    pub max_sections: usize,
    pub snapshot_every: usize,
    /// Stop as soon as the linkage is unfolded.
    pub terminate: bool,
}

impl Default for PtParams {
    fn default() -> Self {
        Self {
            straight_tol: 1e-3,
            convex_tol: 1e-3,
            bar_tol: 1e-8,
            expand_tol: 1e-9,
            event_tol: EVENT_TOL,
            max_step_displacement: 0.02,
            dt_min: 1e-14,
            max_steps_per_section: 50_000,
            max_sections: 10_000,
            snapshot_every: 10,
            terminate: true,
        }
    }
}

impl PtParams {
    pub fn for_linkage(linkage: &Linkage) -> Self {
        Self {
            expand_tol: 1e-9 * linkage.scale(),
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Frozen {
    v: usize,
    a: usize,
    b: usize,
    s: f64,
    t: f64,
}

/// A linkage with some joints frozen straight. Frozen joints ride on the
/// segment between their active chain neighbours; the pseudotriangulation
/// lives on the active vertices, indexed locally.
#[derive(Clone, Debug, PartialEq)]
pub struct StreinuState {
    linkage: Linkage,
    active: Vec<usize>,
    frozen: Vec<Frozen>,
}

impl StreinuState {
    pub fn new(linkage: &Linkage) -> Self {
        Self {
            linkage: linkage.clone(),
            active: (0..linkage.vertex_count()).collect(),
            frozen: Vec::new(),
        }
    }

    pub fn linkage(&self) -> &Linkage {
        &self.linkage
    }

    /// Global ids of the active vertices, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.len()
    }

    pub fn points(&self) -> Vec<Point2> {
        let all = self.linkage.positions();
        self.active.iter().map(|&g| all[g]).collect()
    }

    fn local(&self, global: usize) -> usize {
        self.active.binary_search(&global).expect("active vertex")
    }

    fn active_chains(&self) -> Vec<(Vec<usize>, bool)> {
        let offsets = self.linkage.offsets();
        self.linkage
            .chains()
            .iter()
            .zip(offsets)
            .map(|(c, start)| {
                let ids = (start..start + c.len())
                    .filter(|g| self.active.binary_search(g).is_ok())
                    .collect();
                (ids, c.is_closed())
            })
            .collect()
    }

    /// Bars between consecutive active vertices, local indices.
    pub fn bars(&self) -> Vec<Edge2> {
        let mut out = Vec::new();
        for (ids, closed) in self.active_chains() {
            let k = ids.len();
            for w in ids.windows(2) {
                out.push(key(self.local(w[0]), self.local(w[1])));
            }
            if closed && k >= 3 {
                out.push(key(self.local(ids[k - 1]), self.local(ids[0])));
            }
        }
        out.sort();
        out
    }

    /// Full positions from active ones.
    pub fn full_positions(&self, local: &[Point2]) -> Vec<Point2> {
        let mut all = self.linkage.positions();
        for (k, &g) in self.active.iter().enumerate() {
            all[g] = local[k];
        }
        for f in self.frozen.iter().rev() {
            let w = all[f.b] - all[f.a];
            all[f.v] = all[f.a] + w * f.s + w.rot90() * f.t;
        }
        all
    }

    pub fn full_velocity(&self, local_v: &[Point2]) -> Vec<Point2> {
        let mut v = vec![Point2::ZERO; self.linkage.vertex_count()];
        for (k, &g) in self.active.iter().enumerate() {
            v[g] = local_v[k];
        }
        for f in self.frozen.iter().rev() {
            let dw = v[f.b] - v[f.a];
            v[f.v] = v[f.a] + dw * f.s + dw.rot90() * f.t;
        }
        v
    }

    fn with_points(&self, local: &[Point2]) -> Self {
        let all = self.full_positions(local);
        Self {
            linkage: self.linkage.with_positions(&all).expect("same shape"),
            ..self.clone()
        }
    }

    /// Freezes the joint at local vertex `v`, which must have active chain
    /// neighbours on both sides.
    pub fn freeze(&mut self, v: usize) {
        let g = self.active[v];
        let (ids, _) = self
            .active_chains()
            .into_iter()
            .find(|(ids, _)| ids.contains(&g))
            .expect("vertex belongs to a chain");
        let k = ids.iter().position(|&x| x == g).unwrap();
        let a = ids[(k + ids.len() - 1) % ids.len()];
        let b = ids[(k + 1) % ids.len()];
        let p = self.linkage.positions();
        let w = p[b] - p[a];
        let r = p[g] - p[a];
        self.frozen.push(Frozen {
            v: g,
            a,
            b,
            s: r.dot(w) / w.norm_squared(),
            t: r.dot(w.rot90()) / w.norm_squared(),
        });
        self.active.remove(v);
    }

    fn unfolded(&self, params: &PtParams) -> bool {
        self.linkage.is_unfolded(params.straight_tol, params.convex_tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SectionEnd {
    Event(AlignmentEvent),
    Terminated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectionOutcome {
    pub end: SectionEnd,
    pub state: StreinuState,
    pub duration: f64,
    /// Frames inside the section, times relative to its start; the final
    /// configuration is always included.
    pub frames: Vec<Frame>,
    pub diagnostics: Vec<StepDiagnostics>,
}

struct Gaps {
    /// Per vertex: neighbour order fixed at the section start.
    order: Vec<Vec<usize>>,
}

impl Gaps {
    fn new(points: &[Point2], pt: &Pseudotriangulation) -> Self {
        let order = (0..points.len())
            .map(|v| rotation_at(points, v, &pt.neighbors(v)))
            .collect();
        Self { order }
    }

    /// `(vertex, gap index, gap - pi)` for every vertex of degree >= 2.
    fn offsets(&self, points: &[Point2]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (v, order) in self.order.iter().enumerate() {
            if order.len() < 2 {
                continue;
            }
            for (k, g) in angular_gaps(points, v, order).into_iter().enumerate() {
                out.push((v, k, g - PI));
            }
        }
        out
    }

    fn edges_of(&self, v: usize, k: usize) -> [Edge2; 2] {
        let o = &self.order[v];
        [key(v, o[k]), key(v, o[(k + 1) % o.len()])]
    }
}

/// A sign change of `gap - pi` through a jump is a gap passing through zero:
/// two edges at the vertex point the same way.
fn is_wrap(offset: f64) -> bool {
    offset.abs() > 0.5 * PI
}

/// Angular distance from the alignment a crossing is heading for.
fn event_distance(offset: f64) -> f64 {
    if is_wrap(offset) {
        PI - offset.abs()
    } else {
        offset.abs()
    }
}

fn crossed(before: &[(usize, usize, f64)], after: &[(usize, usize, f64)]) -> Vec<(usize, usize, f64)> {
    before
        .iter()
        .zip(after)
        .filter(|(b, a)| (b.2 > 0.0) != (a.2 > 0.0))
        .map(|(_, a)| *a)
        .collect()
}

struct Section<'a> {
    state: &'a StreinuState,
    mech: &'a Mechanism,
    params: &'a PtParams,
    edges: Vec<Edge2>,
    targets: Vec<f64>,
    bars: Vec<Edge2>,
    bar_targets: Vec<f64>,
}

impl Section<'_> {
    /// Mechanism velocity oriented along `reference`. The growth of the
    /// removed edge only fixes the direction at the section start: where it
    /// peaks, the flow must continue through the alignment.
    fn velocity(&self, x: &[Point2], reference: Option<&[Point2]>) -> Result<Vec<Point2>, PtError> {
        let mut v = mechanism_velocity(x, self.mech)?.v;
        if let Some(r) = reference {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a.dot(*b)).sum();
            if dot < 0.0 {
                v.iter_mut().for_each(|p| *p = -*p);
            }
        }
        Ok(v)
    }

    /// One RK4 step followed by projection onto the mechanism's lengths.
    fn advance(&self, x: &[Point2], k1: &[Point2], h: f64) -> Result<Vec<Point2>, PtError> {
        let shift = |base: &[Point2], k: &[Point2], s: f64| -> Vec<Point2> {
            base.iter().zip(k).map(|(p, q)| *p + *q * s).collect()
        };
        let k2 = self.velocity(&shift(x, k1, h / 2.0), Some(k1))?;
        let k3 = self.velocity(&shift(x, &k2, h / 2.0), Some(k1))?;
        let k4 = self.velocity(&shift(x, &k3, h), Some(k1))?;
        let raw: Vec<Point2> = (0..x.len())
            .map(|i| x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0))
            .collect();
        project_bar_lengths(&raw, &self.edges, &self.targets, 1e-13_f64.min(self.params.bar_tol), 25)
            .map(|(p, _)| p)
            .map_err(|_| PtError::StepSizeUnderflow(h))
    }

    fn acceptable(&self, x_full: &[Point2], y_local: &[Point2]) -> Option<(StreinuState, f64)> {
        let next = self.state.with_points(y_local);
        let y_full = next.linkage.positions();
        let drift = max_relative_length_error(&y_full, &self.bars, &self.bar_targets);
        if drift > self.params.bar_tol {
            log::trace!("bar drift {drift:e}");
            return None;
        }
        let shrink = max_distance_decrease(x_full, &y_full);
        if shrink.0 > self.params.expand_tol {
            log::trace!("distance decrease {:e} at {:?}", shrink.0, shrink.1);
            return None;
        }
        if !is_simple(&next.linkage).is_simple() {
            log::trace!("not simple");
            return None;
        }
        Some((next, drift))
    }
}

/// Follows the mechanism until an angular gap at some vertex crosses pi
/// (refined by bisection to `event_tol`) or, with `params.terminate`, until
/// the linkage is unfolded. Termination is checked first.
pub fn flow_to_alignment(
    state: &StreinuState,
    mech: &Mechanism,
    params: &PtParams,
) -> Result<SectionOutcome, PtError> {
    let x0 = state.points();
    let edges: Vec<Edge2> = mech.edges().collect();
    let targets = edges.iter().map(|&(i, j)| x0[i].dist(x0[j])).collect();
    let bars = state.linkage.bars();
    let p0 = state.linkage.positions();
    let bar_targets = bars.iter().map(|&(i, j)| p0[i].dist(p0[j])).collect();
    let sec = Section {
        state,
        mech,
        params,
        edges,
        targets,
        bars,
        bar_targets,
    };
    let gaps = Gaps::new(&x0, &mech.pt);

    let mut cur = state.clone();
    let mut x = x0;
    let mut t = 0.0;
    let mut frames = Vec::new();
    let mut diagnostics = Vec::new();
    let shortest = sec.targets.iter().copied().fold(f64::INFINITY, f64::min);

    let mut offsets = gaps.offsets(&x);
    let mut previous: Option<Vec<Point2>> = None;

    for step in 0.. {
        if params.terminate && cur.unfolded(params) {
            frames.push(Frame { t, step: diagnostics.len(), linkage: cur.linkage.clone() });
            return Ok(SectionOutcome { end: SectionEnd::Terminated, state: cur, duration: t, frames, diagnostics });
        }
        if step == params.max_steps_per_section {
            return Err(PtError::MaxStepsExceeded(step));
        }
        let k1 = sec.velocity(&x, previous.as_deref())?;
        let speed = k1.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let mut h = params.max_step_displacement * shortest / speed;
        let x_full = cur.linkage.positions();
        let mut rejections = 0;
        let (y, next, drift) = loop {
            if h < params.dt_min {
                return Err(PtError::StepSizeUnderflow(params.dt_min));
            }
            match sec.advance(&x, &k1, h) {
                Ok(y) => {
                    if let Some((next, drift)) = sec.acceptable(&x_full, &y) {
                        break (y, next, drift);
                    }
                }
                Err(e) => log::trace!("step {h:e} failed: {e}"),
            }
            rejections += 1;
            h *= 0.5;
        };
        let full_v = cur.full_velocity(&k1);
        let min_rate = min_pair_rate(&x_full, &full_v);
        diagnostics.push(StepDiagnostics { min_strut_slack: min_rate, max_bar_drift: drift, dt: h, rejections });

        if step % 1000 == 999 {
            let closest = offsets.iter().map(|o| o.2.abs()).fold(f64::INFINITY, f64::min);
            log::debug!("step {step}: t {t:.6} h {h:.3e} rejections {rejections} closest gap {closest:.3e} min rate {min_rate:.3e}");
        }
        let new_offsets = gaps.offsets(&y);
        if crossed(&offsets, &new_offsets).is_empty() {
            previous = Some(k1);
            x = y;
            cur = next;
            t += h;
            offsets = new_offsets;
            if diagnostics.len() % params.snapshot_every.max(1) == 0 {
                frames.push(Frame { t, step: diagnostics.len(), linkage: cur.linkage.clone() });
            }
            continue;
        }

        // Bisect for the first crossing inside this step.
        let (mut lo, mut hi) = (0.0, h);
        let mut y_hi = y;
        for _ in 0..200 {
            let hit = crossed(&offsets, &gaps.offsets(&y_hi));
            if hit.iter().all(|c| event_distance(c.2) <= params.event_tol) || hi - lo <= f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let y_mid = sec.advance(&x, &k1, mid)?;
            if crossed(&offsets, &gaps.offsets(&y_mid)).is_empty() {
                lo = mid;
            } else {
                hi = mid;
                y_hi = y_mid;
            }
        }
        let hit = crossed(&offsets, &gaps.offsets(&y_hi));
        let &(v, k, _) = hit
            .iter()
            .min_by_key(|c| (is_wrap(c.2), c.0, c.1))
            .expect("bracket holds a crossing");
        let at_event = cur.with_points(&y_hi);
        if params.terminate && at_event.unfolded(params) {
            frames.push(Frame { t: t + hi, step: diagnostics.len(), linkage: at_event.linkage.clone() });
            return Ok(SectionOutcome {
                end: SectionEnd::Terminated,
                state: at_event,
                duration: t + hi,
                frames,
                diagnostics,
            });
        }
        let heading = sec.velocity(&y_hi, Some(&k1))?;
        // A section starting on an alignment reports it at time zero; the
        // configuration is still the bisected one past the alignment.
        let start = offsets.iter().find(|o| o.0 == v && o.1 == k).map_or(f64::INFINITY, |o| event_distance(o.2));
        let t_event = if step == 0 && start <= params.event_tol { 0.0 } else { t + hi };
        return Ok(finish_event(&gaps, at_event, v, k, t_event, y_hi, heading, frames, diagnostics));
    }
    unreachable!("loop exits by return")
}

#[allow(clippy::too_many_arguments)]
fn finish_event(
    gaps: &Gaps,
    state: StreinuState,
    v: usize,
    k: usize,
    t: f64,
    x: Vec<Point2>,
    heading: Vec<Point2>,
    mut frames: Vec<Frame>,
    diagnostics: Vec<StepDiagnostics>,
) -> SectionOutcome {
    frames.push(Frame { t, step: diagnostics.len(), linkage: state.linkage.clone() });
    SectionOutcome {
        end: SectionEnd::Event(AlignmentEvent {
            t_event: t,
            vertex: v,
            edges: gaps.edges_of(v, k),
            config_at_event: x,
            heading,
        }),
        state,
        duration: t,
        frames,
        diagnostics,
    }
}

fn min_pair_rate(x: &[Point2], v: &[Point2]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            m = m.min((x[i] - x[j]).dot(v[i] - v[j]));
        }
    }
    m
}

/// First edge of `a` missing from `b`.
fn edge_diff(a: &Pseudotriangulation, b: &Pseudotriangulation) -> Edge2 {
    a.edges.iter().copied().find(|e| !b.contains(e.0, e.1)).unwrap_or((0, 0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreinuRun {
    pub trace: MotionTrace,
    /// Mechanism sections flowed.
    pub sections: usize,
    pub flips: usize,
    pub freezes: usize,
    /// Times the pseudotriangulation was rebuilt from scratch after a
    /// failed local revision.
    pub rebuilds: usize,
}

/// Alternates mechanism flows and local revisions until the linkage is
/// unfolded. Single chains only: with several, a hull edge joining two of
/// them can grow without bound while the chains never finish unfolding.
pub fn run_streinu_unfold(linkage: &Linkage, params: &PtParams) -> Result<StreinuRun, PtError> {
    if linkage.chains().len() != 1 {
        return Err(PtError::MultipleChains(linkage.chains().len()));
    }
    if let Simplicity::Violation { .. } = is_simple(linkage) {
        return Err(PtError::NotSimple);
    }
    let mut state = StreinuState::new(linkage);
    let mut frames = vec![Frame { t: 0.0, step: 0, linkage: linkage.clone() }];
    let mut diagnostics = Vec::new();
    let mut run = StreinuRun {
        trace: MotionTrace { frames: Vec::new(), outcome: Outcome::Unfolded, diagnostics: Vec::new() },
        sections: 0,
        flips: 0,
        freezes: 0,
        rebuilds: 0,
    };
    let mut t = 0.0;
    let mut outcome = Outcome::MaxStepsReached;
    if state.unfolded(params) {
        outcome = Outcome::Unfolded;
    } else {
        let mut pt = build_pointed_pseudotriangulation(&state.points(), &state.bars())?;
        // The hull edge freed in the previous section, kept while it stays
        // removable so that consecutive sections continue one motion.
        let mut freed: Option<Edge2> = None;
        let mut last_swap: Option<(Edge2, Edge2)> = None;
        while run.sections < params.max_sections {
            let points = state.points();
            let kept = freed.and_then(|h| make_mechanism(&pt, &points, Some(h)).ok());
            let mech = match kept.map_or_else(|| make_mechanism(&pt, &points, None), Ok) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("no mechanism after {} sections: {e}", run.sections);
                    outcome = Outcome::NumericalFailure(diagnostics.len());
                    break;
                }
            };
            run.sections += 1;
            freed = Some(mech.removed_edge);
            log::debug!("section {}: edges {:?} bars {:?} removed {:?}", run.sections, pt.edges, pt.bars, mech.removed_edge);
            let section = match flow_to_alignment(&state, &mech, params) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("section {} failed: {e}", run.sections);
                    outcome = Outcome::NumericalFailure(diagnostics.len());
                    break;
                }
            };
            let done = diagnostics.len();
            frames.extend(section.frames.into_iter().map(|f| Frame {
                t: t + f.t,
                step: done + f.step,
                linkage: f.linkage,
            }));
            diagnostics.extend(section.diagnostics);
            t += section.duration;
            state = section.state;
            let event = match section.end {
                SectionEnd::Terminated => {
                    outcome = Outcome::Unfolded;
                    break;
                }
                SectionEnd::Event(e) => e,
            };
            if state.unfolded(params) {
                outcome = Outcome::Unfolded;
                break;
            }
            let [e1, e2] = event.edges;
            log::debug!("event at {} t {}: {:?}", event.vertex, event.t_event, event.edges);
            let v = event.vertex;
            let revised = if pt.is_bar(e1.0, e1.1) && pt.is_bar(e2.0, e2.1) {
                run.freezes += 1;
                state.freeze(v);
                freed = None;
                last_swap = None;
                build_pointed_pseudotriangulation(&state.points(), &state.bars())
            } else {
                run.flips += 1;
                let probe = event.probe();
                let flipped = local_revise(&pt, &event, &probe).and_then(|next| {
                    let swap = (edge_diff(&pt, &next), edge_diff(&next, &pt));
                    // Undoing the previous flip means two alignments are
                    // closing in on each other; start over from scratch.
                    if last_swap.is_some_and(|(r, a)| swap == (a, r)) {
                        Err(PtError::FlipReversed(v))
                    } else {
                        last_swap = Some(swap);
                        Ok(next)
                    }
                });
                flipped.or_else(|e| {
                    log::warn!("local revision failed ({e}); rebuilding");
                    run.rebuilds += 1;
                    last_swap = None;
                    build_pointed_pseudotriangulation(&probe, &state.bars())
                })
            };
            pt = match revised {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("pseudotriangulation lost after {} sections: {e}", run.sections);
                    outcome = Outcome::NumericalFailure(diagnostics.len());
                    break;
                }
            };
        }
    }
    // Section ends are always stored; drop exact duplicates of the time axis.
    frames.dedup_by(|b, a| b.t <= a.t);
    log::info!(
        "pseudotriangulation run: {:?} after {} sections ({} flips, {} freezes)",
        outcome,
        run.sections,
        run.flips,
        run.freezes
    );
    run.trace = MotionTrace { frames, outcome, diagnostics };
    Ok(run)
}
