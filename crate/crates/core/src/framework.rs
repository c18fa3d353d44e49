//! Bar-and-strut frameworks over a linkage.
//!
//! Bars are the chain segments; every other vertex pair is a strut that
//! may lengthen but never shorten. This module builds the framework,
//! its rigidity matrix, searches for a nonzero equilibrium stress (the
//! certificate that a framework is stuck), and turns a stress into a
//! polyhedral terrain by planarizing crossings and lifting face by face.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{
    is_simple, scale_of, segment_intersection, vertex_angle, IntersectionKind, Linkage, Point2,
    Segment, SegmentId, Simplicity,
};
use crate::lp::{find_feasible_point, Feasibility, LpError};
use crate::planar::{contains_point, PlaneGraph};

/// Residual sum of infeasibilities below which the stress LP counts as
/// feasible.
pub const STRESS_FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameworkError {
    #[error("linkage is not simple: {first} meets {second}")]
    NotSimple { first: SegmentId, second: SegmentId },
    #[error("edge ({i}, {j}) is invalid for a framework on {n} vertices")]
    InvalidEdge { i: usize, j: usize, n: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("{got} positions given for a framework on {expected} vertices")]
    PositionCount { expected: usize, got: usize },
    #[error("stress has {got} entries, framework has {expected} edges")]
    StressLength { expected: usize, got: usize },
    #[error("stress LP failed: {0}")]
    Lp(#[from] LpError),
    #[error("edges {0} and {1} overlap; planarization needs generic position")]
    Overlap(usize, usize),
    #[error("more than two edges cross at {0}; planarization needs generic position")]
    TripleCrossing(Point2),
    #[error("vertices {0} and {1} coincide")]
    CoincidentVertices(usize, usize),
    #[error("plane graph has {0} components; lifting needs a connected graph")]
    Disconnected(usize),
    #[error("lifting does not close (residual {0:e}); stress is not in equilibrium")]
    NotInEquilibrium(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Bar,
    Strut,
    /// A strut across a straight subchain; it may not be asked to grow.
    TautStrut,
}

impl EdgeKind {
    pub fn is_strut(self) -> bool {
        !matches!(self, EdgeKind::Bar)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub kind: EdgeKind,
}

/// Global index range of one chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainSpan {
    pub start: usize,
    pub len: usize,
    pub closed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Framework {
    n: usize,
    edges: Vec<Edge>,
    chains: Vec<ChainSpan>,
}

impl Framework {
    /// Explicit edge list without chain structure (analysis inputs such as
    /// braced polygons). Edges are normalized to `i < j` and sorted.
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self, FrameworkError> {
        let mut out: Vec<Edge> = Vec::with_capacity(edges.len());
        for e in edges {
            let (i, j) = (e.i.min(e.j), e.i.max(e.j));
            if i == j || j >= n {
                return Err(FrameworkError::InvalidEdge { i: e.i, j: e.j, n });
            }
            out.push(Edge { i, j, kind: e.kind });
        }
        out.sort_by_key(|e| (e.i, e.j));
        for w in out.windows(2) {
            if (w[0].i, w[0].j) == (w[1].i, w[1].j) {
                return Err(FrameworkError::DuplicateEdge(w[0].i, w[0].j));
            }
        }
        Ok(Self {
            n,
            edges: out,
            chains: Vec::new(),
        })
    }

    /// Bars as given, struts on every other pair.
    pub fn complete(
        n: usize,
        bars: &[(usize, usize)],
        chains: Vec<ChainSpan>,
    ) -> Result<Self, FrameworkError> {
        let mut is_bar = vec![false; n * n];
        for &(a, b) in bars {
            if a == b || a >= n || b >= n {
                return Err(FrameworkError::InvalidEdge { i: a, j: b, n });
            }
            let (i, j) = (a.min(b), a.max(b));
            if is_bar[i * n + j] {
                return Err(FrameworkError::DuplicateEdge(i, j));
            }
            is_bar[i * n + j] = true;
        }
        let mut edges = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let kind = if is_bar[i * n + j] {
                    EdgeKind::Bar
                } else {
                    EdgeKind::Strut
                };
                edges.push(Edge { i, j, kind });
            }
        }
        Ok(Self { n, edges, chains })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn chains(&self) -> &[ChainSpan] {
        &self.chains
    }

    pub fn count(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Reclassifies strut `e`; bars are left untouched.
    pub fn set_strut_kind(&mut self, e: usize, kind: EdgeKind) {
        if self.edges[e].kind != EdgeKind::Bar && kind != EdgeKind::Bar {
            self.edges[e].kind = kind;
        }
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by_key(&key, |e| (e.i, e.j))
            .ok()
    }

    fn check_positions(&self, config: &[Point2]) -> Result<(), FrameworkError> {
        if config.len() != self.n {
            return Err(FrameworkError::PositionCount {
                expected: self.n,
                got: config.len(),
            });
        }
        Ok(())
    }
}

pub fn chain_spans(linkage: &Linkage) -> Vec<ChainSpan> {
    linkage
        .chains()
        .iter()
        .zip(linkage.offsets())
        .map(|(c, start)| ChainSpan {
            start,
            len: c.len(),
            closed: c.is_closed(),
        })
        .collect()
}

pub fn build_framework(linkage: &Linkage) -> Result<Framework, FrameworkError> {
    if let Simplicity::Violation { first, second, .. } = is_simple(linkage) {
        return Err(FrameworkError::NotSimple { first, second });
    }
    build_framework_unchecked(linkage, &[])
}

/// Skips the simplicity check and adds `extra_bars` (global indices) to the
/// chain bars.
pub fn build_framework_unchecked(
    linkage: &Linkage,
    extra_bars: &[(usize, usize)],
) -> Result<Framework, FrameworkError> {
    let mut bars = linkage.bars();
    bars.extend_from_slice(extra_bars);
    Framework::complete(linkage.vertex_count(), &bars, chain_spans(linkage))
}

/// Marks struts spanning a straight subchain as taut. A vertex is straight
/// when its angle is within `tol` of pi.
pub fn classify_taut_struts(config: &[Point2], framework: &Framework, tol: f64) -> Framework {
    let mut out = framework.clone();
    let chain_of = |v: usize| {
        framework
            .chains
            .iter()
            .position(|c| v >= c.start && v < c.start + c.len)
    };
    let straight = straight_vertices(config, framework, tol);
    for e in out.edges.iter_mut() {
        if e.kind == EdgeKind::Bar {
            continue;
        }
        e.kind = EdgeKind::Strut;
        let (Some(ci), Some(cj)) = (chain_of(e.i), chain_of(e.j)) else {
            continue;
        };
        if ci != cj {
            continue;
        }
        let c = framework.chains[ci];
        let (a, b) = (e.i - c.start, e.j - c.start);
        let arc_straight =
            |from: usize, to: usize| -> bool {
                let mut k = (from + 1) % c.len;
                while k != to {
                    if !straight[c.start + k] {
                        return false;
                    }
                    k = (k + 1) % c.len;
                }
                true
            };
        let taut = arc_straight(a, b) || (c.closed && arc_straight(b, a));
        if taut {
            e.kind = EdgeKind::TautStrut;
        }
    }
    out
}

/// Vertices whose angle is within `tol` of pi. Endpoints of open chains are
/// never straight.
pub fn straight_vertices(config: &[Point2], framework: &Framework, tol: f64) -> Vec<bool> {
    let mut straight = vec![false; framework.n];
    for c in &framework.chains {
        for k in 0..c.len {
            let (prev, next) = if c.closed {
                ((k + c.len - 1) % c.len, (k + 1) % c.len)
            } else if k == 0 || k + 1 == c.len {
                continue;
            } else {
                (k - 1, k + 1)
            };
            let angle = vertex_angle(
                config[c.start + prev],
                config[c.start + k],
                config[c.start + next],
            );
            straight[c.start + k] = std::f64::consts::PI - angle <= tol;
        }
    }
    straight
}

/// Row `e = (i, j)` holds `p_i - p_j` in the columns of `i` and `p_j - p_i`
/// in those of `j`, so `(R v)_e = <p_i - p_j, v_i - v_j>`.
pub fn rigidity_matrix(config: &[Point2], framework: &Framework) -> DMatrix<f64> {
    rigidity_rows(config, framework.edges.iter().map(|e| (e.i, e.j)), framework.n)
}

pub fn rigidity_rows(
    config: &[Point2],
    pairs: impl Iterator<Item = (usize, usize)>,
    n: usize,
) -> DMatrix<f64> {
    let pairs: Vec<(usize, usize)> = pairs.collect();
    let mut r = DMatrix::zeros(pairs.len(), 2 * n);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        let d = config[i] - config[j];
        r[(row, 2 * i)] = d.x;
        r[(row, 2 * i + 1)] = d.y;
        r[(row, 2 * j)] = -d.x;
        r[(row, 2 * j + 1)] = -d.y;
    }
    r
}

/// Per-edge stresses in framework edge order. Positive stress on `(i, j)`
/// pulls `i` towards `j`; equilibrium at `i` reads
/// `sum_j omega_ij (p_j - p_i) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StressAssignment {
    pub omega: Vec<f64>,
    /// Sum of absolute stresses.
    pub normalization: f64,
}

impl StressAssignment {
    pub fn new(omega: Vec<f64>) -> Self {
        let normalization = omega.iter().map(|w| w.abs()).sum();
        Self {
            omega,
            normalization,
        }
    }

    pub fn zero(edges: usize) -> Self {
        Self::new(vec![0.0; edges])
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::new(self.omega.iter().map(|w| w * c).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.omega.iter().all(|w| *w == 0.0)
    }

    /// `max_i |sum_j omega_ij (p_j - p_i)|`.
    pub fn equilibrium_residual(&self, config: &[Point2], framework: &Framework) -> f64 {
        let mut force = vec![Point2::ZERO; framework.n];
        for (e, w) in framework.edges.iter().zip(&self.omega) {
            let d = config[e.j] - config[e.i];
            force[e.i] += d * *w;
            force[e.j] += -d * *w;
        }
        force.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    pub fn min_strut_stress(&self, framework: &Framework) -> f64 {
        framework
            .edges
            .iter()
            .zip(&self.omega)
            .filter(|(e, _)| e.kind.is_strut())
            .map(|(_, w)| *w)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Searches for a nonzero equilibrium stress with nonnegative strut
/// stresses, normalized to unit absolute sum. `Ok(None)` means only the
/// zero stress exists.
///
/// Two cases cover every nonzero stress: either some strut carries
/// positive stress (a linear feasibility problem with the strut stresses
/// summing to one), or all struts are slack and the bar rows of the
/// rigidity matrix are linearly dependent.
pub fn find_equilibrium_stress(
    config: &[Point2],
    framework: &Framework,
) -> Result<Option<StressAssignment>, FrameworkError> {
    framework.check_positions(config)?;
    let n = framework.n;
    let mut units = Vec::with_capacity(framework.edges.len());
    for e in &framework.edges {
        let d = config[e.j] - config[e.i];
        let len = d.norm();
        if len == 0.0 {
            return Err(FrameworkError::CoincidentVertices(e.i, e.j));
        }
        units.push((d * (1.0 / len), len));
    }
    let finish = |scaled: Vec<f64>| {
        // columns use unit directions; stress = column value / length
        let omega: Vec<f64> = scaled.iter().zip(&units).map(|(w, (_, len))| w / len).collect();
        let total: f64 = omega.iter().map(|w| w.abs()).sum();
        (total > f64::EPSILON)
            .then(|| StressAssignment::new(omega.iter().map(|w| w / total).collect()))
    };

    if framework.edges.iter().any(|e| e.kind.is_strut()) {
        // One column per strut, two (positive and negative part) per bar.
        let mut columns: Vec<(usize, f64)> = Vec::new();
        for (e, edge) in framework.edges.iter().enumerate() {
            columns.push((e, 1.0));
            if edge.kind == EdgeKind::Bar {
                columns.push((e, -1.0));
            }
        }
        let mut a = DMatrix::zeros(2 * n + 1, columns.len());
        for (col, &(e, sign)) in columns.iter().enumerate() {
            let edge = framework.edges[e];
            let u = units[e].0 * sign;
            a[(2 * edge.i, col)] = u.x;
            a[(2 * edge.i + 1, col)] = u.y;
            a[(2 * edge.j, col)] = -u.x;
            a[(2 * edge.j + 1, col)] = -u.y;
            if edge.kind.is_strut() {
                a[(2 * n, col)] = 1.0;
            }
        }
        let mut b = DVector::zeros(2 * n + 1);
        b[2 * n] = 1.0;
        let max_pivots = 50 * (a.nrows() + a.ncols()) + 1000;
        if let Feasibility::Feasible(x) = find_feasible_point(&a, &b, STRESS_FEAS_TOL, max_pivots)? {
            let mut scaled = vec![0.0; framework.edges.len()];
            for (col, &(e, sign)) in columns.iter().enumerate() {
                scaled[e] += sign * x[col];
            }
            if let Some(s) = finish(scaled) {
                return Ok(Some(s));
            }
        }
    }

    // Struts slack: look for a dependency among the bar rows.
    let bars: Vec<usize> = (0..framework.edges.len())
        .filter(|&e| framework.edges[e].kind == EdgeKind::Bar)
        .collect();
    if bars.is_empty() {
        return Ok(None);
    }
    let mut rows = DMatrix::zeros(2 * n, bars.len());
    for (col, &e) in bars.iter().enumerate() {
        let edge = framework.edges[e];
        let u = units[e].0;
        rows[(2 * edge.i, col)] = u.x;
        rows[(2 * edge.i + 1, col)] = u.y;
        rows[(2 * edge.j, col)] = -u.x;
        rows[(2 * edge.j + 1, col)] = -u.y;
    }
    // Pad to at least as many rows as columns so the SVD returns a full V.
    let (r, c) = rows.shape();
    if r < c {
        rows = rows.insert_rows(r, c - r, 0.0);
    }
    let svd = rows.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let top = svd.singular_values.amax();
    let (k, smallest) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, v)| (k, *v))
        .expect("at least one bar");
    if smallest > 1e-9 * top {
        return Ok(None);
    }
    let mut scaled = vec![0.0; framework.edges.len()];
    for (row, &e) in bars.iter().enumerate() {
        scaled[e] = v_t[(k, row)];
    }
    Ok(finish(scaled))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarEdge {
    pub i: usize,
    pub j: usize,
    /// Index of the framework edge this piece subdivides.
    pub parent: usize,
    /// Stress of the parent edge.
    pub stress: f64,
    pub parent_length: f64,
}

impl PlanarEdge {
    /// Force the piece exerts on `i`, directed along the piece: the parent's
    /// `stress * length`, so all pieces of one edge carry the same load.
    pub fn force_on_i(&self, vertices: &[Point2]) -> Point2 {
        let d = vertices[self.j] - vertices[self.i];
        d * (self.stress * self.parent_length / d.norm())
    }
}

/// Plane graph obtained by splitting every edge at its crossings.
#[derive(Clone, Debug)]
pub struct PlanarFramework {
    /// Original vertices first, crossing points after.
    pub vertices: Vec<Point2>,
    pub original_vertices: usize,
    pub edges: Vec<PlanarEdge>,
    pub graph: PlaneGraph,
    pub outer_face: usize,
}

impl PlanarFramework {
    pub fn face_count(&self) -> usize {
        self.graph.faces.len()
    }

    pub fn crossing_count(&self) -> usize {
        self.vertices.len() - self.original_vertices
    }

    /// Equilibrium residual of the subdivided stress at every vertex.
    pub fn equilibrium_residual(&self) -> f64 {
        let mut force = vec![Point2::ZERO; self.vertices.len()];
        for e in &self.edges {
            let f = e.force_on_i(&self.vertices);
            force[e.i] += f;
            force[e.j] += -f;
        }
        force.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }
}

pub fn planarize(
    config: &[Point2],
    framework: &Framework,
    stress: &StressAssignment,
) -> Result<PlanarFramework, FrameworkError> {
    framework.check_positions(config)?;
    if stress.omega.len() != framework.edges.len() {
        return Err(FrameworkError::StressLength {
            expected: framework.edges.len(),
            got: stress.omega.len(),
        });
    }
    let scale = scale_of(config);
    let merge_tol = 1e-9 * scale;
    for a in 0..config.len() {
        for b in a + 1..config.len() {
            if (config[a] - config[b]).max_abs() <= merge_tol {
                return Err(FrameworkError::CoincidentVertices(a, b));
            }
        }
    }

    let edges = framework.edges();
    let mut vertices: Vec<Point2> = config.to_vec();
    // split points per edge: (parameter along edge, vertex id)
    let mut splits: Vec<Vec<(f64, usize)>> = vec![Vec::new(); edges.len()];
    let param = |e: &Edge, p: Point2| {
        let d = config[e.j] - config[e.i];
        (p - config[e.i]).dot(d) / d.norm_squared()
    };
    let near_vertex = |p: Point2, exclude: [usize; 4]| {
        (0..config.len())
            .filter(|v| !exclude.contains(v))
            .find(|&v| (config[v] - p).max_abs() <= merge_tol)
    };

    for (x, e) in edges.iter().enumerate() {
        let se = Segment::new(config[e.i], config[e.j]);
        for (y, f) in edges.iter().enumerate().skip(x + 1) {
            let sf = Segment::new(config[f.i], config[f.j]);
            let shares = e.i == f.i || e.i == f.j || e.j == f.i || e.j == f.j;
            match segment_intersection(se, sf) {
                IntersectionKind::None => {}
                IntersectionKind::Overlap(_) => return Err(FrameworkError::Overlap(x, y)),
                IntersectionKind::SharedEndpoint(_) if shares => {}
                IntersectionKind::SharedEndpoint(p) | IntersectionKind::ProperPoint(p) => {
                    if shares {
                        // Adjacent edges meeting elsewhere would be collinear.
                        return Err(FrameworkError::Overlap(x, y));
                    }
                    // A vertex lying on the other edge (T-junction).
                    if let Some(v) = [e.i, e.j, f.i, f.j]
                        .into_iter()
                        .find(|&v| (config[v] - p).max_abs() <= merge_tol)
                    {
                        let (target, ti) = if v == f.i || v == f.j { (x, e) } else { (y, f) };
                        let t = param(ti, config[v]);
                        if !splits[target].iter().any(|s| s.1 == v) {
                            splits[target].push((t, v));
                        }
                        continue;
                    }
                    if near_vertex(p, [e.i, e.j, f.i, f.j]).is_some() {
                        return Err(FrameworkError::TripleCrossing(p));
                    }
                    if vertices[config.len()..]
                        .iter()
                        .any(|q| (*q - p).max_abs() <= merge_tol)
                    {
                        return Err(FrameworkError::TripleCrossing(p));
                    }
                    let id = vertices.len();
                    vertices.push(p);
                    splits[x].push((param(e, p), id));
                    splits[y].push((param(f, p), id));
                }
            }
        }
    }

    let mut pieces = Vec::new();
    for (x, e) in edges.iter().enumerate() {
        let mut s = std::mem::take(&mut splits[x]);
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prev = e.i;
        let parent_length = config[e.i].dist(config[e.j]);
        for (_, v) in s.into_iter().chain(std::iter::once((1.0, e.j))) {
            pieces.push(PlanarEdge {
                i: prev,
                j: v,
                parent: x,
                stress: stress.omega[x],
                parent_length,
            });
            prev = v;
        }
    }
    let pairs: Vec<(usize, usize)> = pieces.iter().map(|e| (e.i, e.j)).collect();
    let graph = PlaneGraph::new(&vertices, &pairs);
    let outer_face = (0..graph.faces.len())
        .min_by(|&a, &b| {
            graph.faces[a]
                .signed_area
                .total_cmp(&graph.faces[b].signed_area)
        })
        .unwrap_or(0);
    Ok(PlanarFramework {
        vertices,
        original_vertices: config.len(),
        edges: pieces,
        graph,
        outer_face,
    })
}

/// Piecewise-linear height function over the faces of a plane graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Terrain {
    pub face_gradients: Vec<Point2>,
    pub face_offsets: Vec<f64>,
    pub vertex_heights: Vec<f64>,
}

impl Terrain {
    pub fn face_height(&self, face: usize, p: Point2) -> f64 {
        self.face_gradients[face].dot(p) + self.face_offsets[face]
    }

    pub fn max_height(&self) -> f64 {
        self.vertex_heights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_height(&self) -> f64 {
        self.vertex_heights.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn height_scale(pf: &PlanarFramework) -> f64 {
    let extent = scale_of(&pf.vertices);
    let top = pf
        .edges
        .iter()
        .map(|e| e.stress.abs() * e.parent_length)
        .fold(0.0, f64::max);
    top * extent
}

/// Gradient jump across `a -> b` from its left face to its right face.
fn jump(pf: &PlanarFramework, half_edge: usize) -> Point2 {
    let e = &pf.edges[half_edge / 2];
    let a = pf.vertices[pf.graph.tail(half_edge)];
    let b = pf.vertices[pf.graph.head(half_edge)];
    let d = b - a;
    d.rot90() * (e.stress * e.parent_length / d.norm())
}

/// Outer face is flat at height zero; crossing a piece `a -> b` from its
/// left to its right face adds `stress * rot90(b - a)` (scaled to the
/// parent edge's length) to the gradient, which makes positive stresses
/// ridges and negative ones valleys.
pub fn maxwell_cremona_lift(pf: &PlanarFramework) -> Result<Terrain, FrameworkError> {
    let g = &pf.graph;
    let components = g.components();
    if components > 1 {
        return Err(FrameworkError::Disconnected(components));
    }
    let faces = g.faces.len();
    let mut grad = vec![Point2::ZERO; faces];
    let mut offset = vec![0.0; faces];
    let mut seen = vec![false; faces];
    let mut residual: f64 = 0.0;
    let extent = scale_of(&pf.vertices);

    if faces > 0 {
        seen[pf.outer_face] = true;
        let mut queue = VecDeque::from([pf.outer_face]);
        while let Some(f) = queue.pop_front() {
            for &h in &g.faces[f].half_edges {
                let other = g.face_of[h ^ 1];
                let a = pf.vertices[g.tail(h)];
                let ng = grad[f] + jump(pf, h);
                let no = offset[f] + (grad[f] - ng).dot(a);
                if seen[other] {
                    residual = residual
                        .max((grad[other] - ng).max_abs() * extent)
                        .max((offset[other] - no).abs());
                } else {
                    seen[other] = true;
                    grad[other] = ng;
                    offset[other] = no;
                    queue.push_back(other);
                }
            }
        }
    }
    let tol = 1e-8 * height_scale(pf);
    if residual > tol {
        return Err(FrameworkError::NotInEquilibrium(residual));
    }

    let terrain = Terrain {
        face_gradients: grad,
        face_offsets: offset,
        vertex_heights: Vec::new(),
    };
    let heights = (0..pf.vertices.len())
        .map(|v| {
            let face = match g.rotation[v].first() {
                Some(&h) => g.face_of[h],
                None => locate_face(pf, pf.vertices[v]),
            };
            terrain.face_height(face, pf.vertices[v])
        })
        .collect();
    Ok(Terrain {
        vertex_heights: heights,
        ..terrain
    })
}

/// Smallest bounded face containing `p`, or the outer face.
fn locate_face(pf: &PlanarFramework, p: Point2) -> usize {
    let g = &pf.graph;
    (0..g.faces.len())
        .filter(|&f| f != pf.outer_face && g.faces[f].signed_area > 0.0)
        .filter(|&f| contains_point(&pf.vertices, &g.faces[f].vertices, p))
        .min_by(|&a, &b| g.faces[a].signed_area.total_cmp(&g.faces[b].signed_area))
        .unwrap_or(pf.outer_face)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftReport {
    pub max_closure_residual: f64,
    pub is_flat: bool,
    pub mountain_valley_consistent: bool,
}

/// Re-derives heights through a vertex traversal of the graph and checks
/// them, the face planes, the outer face and the gradient jumps against the
/// terrain; also checks ridge/valley orientation of every stressed edge.
pub fn verify_lift(pf: &PlanarFramework, t: &Terrain, tol: f64) -> LiftReport {
    let g = &pf.graph;
    let extent = scale_of(&pf.vertices);
    let mut residual: f64 = 0.0;

    residual = residual
        .max(t.face_gradients[pf.outer_face].max_abs() * extent)
        .max(t.face_offsets[pf.outer_face].abs());

    for (f, face) in g.faces.iter().enumerate() {
        for &v in &face.vertices {
            residual = residual.max((t.vertex_heights[v] - t.face_height(f, pf.vertices[v])).abs());
        }
    }

    let mut consistent = true;
    for (e, piece) in pf.edges.iter().enumerate() {
        let h = 2 * e;
        let (left, right) = (g.face_of[h], g.face_of[h ^ 1]);
        let observed = t.face_gradients[right] - t.face_gradients[left];
        residual = residual.max((observed - jump(pf, h)).max_abs() * extent);
        let n_left = (pf.vertices[piece.j] - pf.vertices[piece.i]).rot90();
        let fold = observed.dot(n_left);
        if piece.stress > tol && fold <= 0.0 || piece.stress < -tol && fold >= 0.0 {
            consistent = false;
        }
    }

    // Depth-first walk over vertices from the outer boundary.
    let n = pf.vertices.len();
    let mut walked = vec![None; n];
    if let Some(&start_h) = g.faces.get(pf.outer_face).and_then(|f| f.half_edges.first()) {
        let root = g.tail(start_h);
        walked[root] = Some(0.0);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            let hv = walked[v].unwrap_or(0.0);
            for &h in g.rotation[v].iter().rev() {
                let w = g.head(h);
                if walked[w].is_none() {
                    let step = t.face_gradients[g.face_of[h]].dot(pf.vertices[w] - pf.vertices[v]);
                    walked[w] = Some(hv + step);
                    stack.push(w);
                }
            }
        }
    }
    for (v, h) in walked.iter().enumerate() {
        if let Some(h) = h {
            residual = residual.max((h - t.vertex_heights[v]).abs());
        }
    }

    LiftReport {
        max_closure_residual: residual,
        is_flat: t.vertex_heights.iter().all(|h| h.abs() <= tol),
        mountain_valley_consistent: consistent,
    }
}

/// When no strut carries stress the negated stress is an equivalent
/// certificate; pick the sign whose lifting has its extreme point on top.
pub fn orient_for_peak(
    framework: &Framework,
    stress: &StressAssignment,
    terrain: &Terrain,
) -> Option<StressAssignment> {
    let strut_loaded = framework
        .edges
        .iter()
        .zip(&stress.omega)
        .any(|(e, w)| e.kind.is_strut() && *w != 0.0);
    if strut_loaded || terrain.max_height() >= -terrain.min_height() {
        None
    } else {
        Some(stress.scaled(-1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Chain;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn open(pts: &[(f64, f64)]) -> Linkage {
        Linkage::single(Chain::open(pts.iter().map(|&q| q.into()).collect()).unwrap())
    }

    pub(crate) fn braced_square() -> (Vec<Point2>, Framework) {
        let cfg = vec![p(0., 0.), p(1., 0.), p(1., 1.), p(0., 1.)];
        let edges: Vec<Edge> = [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2), (1, 3)]
            .iter()
            .map(|&(i, j)| Edge {
                i,
                j,
                kind: EdgeKind::Bar,
            })
            .collect();
        (cfg, Framework::from_edges(4, &edges).unwrap())
    }

    fn side_diagonal_stress(fw: &Framework, side: f64, diagonal: f64) -> StressAssignment {
        StressAssignment::new(
            fw.edges()
                .iter()
                .map(|e| if (e.i + e.j) % 2 == 0 { diagonal } else { side })
                .collect(),
        )
    }

    #[test]
    fn edge_counts() {
        let fw = build_framework(&open(&[(0., 0.), (1., 0.), (1., 1.)])).unwrap();
        assert_eq!((fw.count(EdgeKind::Bar), fw.count(EdgeKind::Strut)), (2, 1));
        assert_eq!(fw.edges()[1], Edge { i: 0, j: 2, kind: EdgeKind::Strut });

        let tri = Linkage::single(
            Chain::closed(vec![p(0., 0.), p(4., 0.), p(2., 3.)]).unwrap(),
        );
        let fw = build_framework(&tri).unwrap();
        assert_eq!((fw.count(EdgeKind::Bar), fw.count(EdgeKind::Strut)), (3, 0));

        let two = Linkage::new(vec![
            Chain::open(vec![p(0., 0.), p(1., 0.)]).unwrap(),
            Chain::open(vec![p(0., 1.), p(1., 1.)]).unwrap(),
        ])
        .unwrap();
        let fw = build_framework(&two).unwrap();
        // 6 pairs, 2 bars
        assert_eq!((fw.count(EdgeKind::Bar), fw.count(EdgeKind::Strut)), (2, 4));
    }

    #[test]
    fn rejects_non_simple() {
        let bad = open(&[(0., 0.), (2., 0.), (1., 1.), (1., -1.)]);
        assert!(matches!(build_framework(&bad), Err(FrameworkError::NotSimple { .. })));
    }

    #[test]
    fn taut_classification() {
        let straight = open(&[(0., 0.), (1., 0.), (2., 0.)]);
        let fw = build_framework(&straight).unwrap();
        let fw = classify_taut_struts(&straight.positions(), &fw, 1e-6);
        assert_eq!(fw.edges()[fw.edge_index(0, 2).unwrap()].kind, EdgeKind::TautStrut);

        let l = open(&[(0., 0.), (1., 0.), (1., 1.)]);
        let fw = classify_taut_struts(&l.positions(), &build_framework(&l).unwrap(), 1e-6);
        assert_eq!(fw.edges()[fw.edge_index(0, 2).unwrap()].kind, EdgeKind::Strut);

        // Only vertex 2 bent: (0,2) taut, (1,3) and (0,3) not.
        let bent = open(&[(0., 0.), (1., 0.), (2., 0.), (2., 1.)]);
        let fw = classify_taut_struts(&bent.positions(), &build_framework(&bent).unwrap(), 1e-6);
        let kind = |i, j| fw.edges()[fw.edge_index(i, j).unwrap()].kind;
        assert_eq!(kind(0, 2), EdgeKind::TautStrut);
        assert_eq!(kind(1, 3), EdgeKind::Strut);
        assert_eq!(kind(0, 3), EdgeKind::Strut);
    }

    #[test]
    fn taut_threshold_follows_vertex_angle() {
        // Vertex 1 bent by 1e-4 rad; vertex 2 bent by 0.5 rad.
        let eps: f64 = 1e-4;
        let q2 = p(1.0 + eps.cos(), eps.sin());
        let q3 = q2 + Point2::new(1.0, 0.0).rotate(eps + 0.5);
        let cfg = vec![p(0., 0.), p(1., 0.), q2, q3];
        let link = Linkage::single(Chain::open(cfg.clone()).unwrap());
        let fw = build_framework(&link).unwrap();
        let loose = classify_taut_struts(&cfg, &fw, 1e-3);
        let tight = classify_taut_struts(&cfg, &fw, 1e-5);
        let kind = |f: &Framework| f.edges()[f.edge_index(0, 2).unwrap()].kind;
        assert_eq!(kind(&loose), EdgeKind::TautStrut);
        assert_eq!(kind(&tight), EdgeKind::Strut);
    }

    #[test]
    fn closed_chain_taut_uses_either_arc() {
        // Square with an extra straight vertex on the bottom side.
        let cfg = vec![p(0., 0.), p(1., 0.), p(2., 0.), p(2., 2.), p(0., 2.)];
        let link = Linkage::single(Chain::closed(cfg.clone()).unwrap());
        let fw = classify_taut_struts(&cfg, &build_framework(&link).unwrap(), 1e-9);
        assert_eq!(fw.count(EdgeKind::TautStrut), 1);
        assert_eq!(fw.edges()[fw.edge_index(0, 2).unwrap()].kind, EdgeKind::TautStrut);
    }

    #[test]
    fn rigidity_rows_and_trivial_motions() {
        let seg = open(&[(0., 0.), (1., 0.)]);
        let fw = build_framework(&seg).unwrap();
        let r = rigidity_matrix(&seg.positions(), &fw);
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![-1., 0., 1., 0.]);

        let l = open(&[(0.3, -0.2), (1.1, 0.4), (0.7, 1.9), (2.0, 2.5)]);
        let cfg = l.positions();
        let r = rigidity_matrix(&cfg, &build_framework(&l).unwrap());
        let translate = DVector::from_fn(8, |k, _| if k % 2 == 0 { 1.0 } else { 0.0 });
        assert!((&r * translate).amax() < 1e-15);
        let rotate = DVector::from_fn(8, |k, _| {
            let q = cfg[k / 2].rot90();
            if k % 2 == 0 {
                q.x
            } else {
                q.y
            }
        });
        assert!((&r * rotate).amax() < 1e-14);
    }

    #[test]
    fn rigidity_row_convention() {
        // For the bar (0,1) between (0,0) and (1,0) the row reads [p0-p1, p1-p0].
        let cfg = [p(0., 0.), p(1., 0.)];
        let fw = Framework::from_edges(2, &[Edge { i: 0, j: 1, kind: EdgeKind::Bar }]).unwrap();
        let r = rigidity_matrix(&cfg, &fw);
        assert_eq!(r.row(0).iter().copied().collect::<Vec<_>>(), vec![-1., 0., 1., 0.]);
    }

    #[test]
    fn stress_search_examples() {
        let l = open(&[(0., 0.), (1., 0.), (1., 1.), (2.5, 0.7)]);
        let fw = build_framework(&l).unwrap();
        assert_eq!(find_equilibrium_stress(&l.positions(), &fw).unwrap(), None);

        let seg = open(&[(0., 0.), (1., 0.)]);
        let fw = build_framework(&seg).unwrap();
        assert_eq!(find_equilibrium_stress(&seg.positions(), &fw).unwrap(), None);

        let (cfg, fw) = braced_square();
        let known = side_diagonal_stress(&fw, 1.0, -1.0);
        assert!(known.equilibrium_residual(&cfg, &fw) < 1e-15);
        let found = find_equilibrium_stress(&cfg, &fw).unwrap().expect("braced square is stressed");
        assert!(found.equilibrium_residual(&cfg, &fw) <= 1e-9);
        assert!((found.normalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn straight_chain_is_stressed() {
        let l = open(&[(0., 0.), (1., 0.), (2., 0.)]);
        let fw = build_framework(&l).unwrap();
        let s = find_equilibrium_stress(&l.positions(), &fw).unwrap().unwrap();
        assert!(s.min_strut_stress(&fw) >= -1e-12);
        assert!(s.equilibrium_residual(&l.positions(), &fw) < 1e-9);
    }

    #[test]
    fn planarize_braced_square() {
        let (cfg, fw) = braced_square();
        let stress = side_diagonal_stress(&fw, 1.0, -1.0);
        let pf = planarize(&cfg, &fw, &stress).unwrap();
        assert_eq!(pf.vertices.len(), 5);
        assert_eq!(pf.vertices[4], p(0.5, 0.5));
        assert_eq!(pf.edges.len(), 8);
        // Euler: v - e + f = 2
        assert_eq!(pf.face_count(), 5);
        assert!(pf.equilibrium_residual() < 1e-15);
        for piece in &pf.edges {
            assert_eq!(piece.stress, stress.omega[piece.parent]);
            let parent = fw.edges()[piece.parent];
            let full = (cfg[parent.j] - cfg[parent.i]).norm() * stress.omega[piece.parent];
            assert!((piece.force_on_i(&pf.vertices).norm() - full.abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn planarize_x_of_struts() {
        let cfg = vec![p(0., 0.), p(2., 2.), p(0., 2.), p(2., 0.)];
        let fw = Framework::from_edges(
            4,
            &[
                Edge { i: 0, j: 1, kind: EdgeKind::Strut },
                Edge { i: 2, j: 3, kind: EdgeKind::Strut },
            ],
        )
        .unwrap();
        let pf = planarize(&cfg, &fw, &StressAssignment::zero(2)).unwrap();
        assert_eq!(pf.crossing_count(), 1);
        assert_eq!(pf.vertices[4], p(1., 1.));
    }

    #[test]
    fn planarize_without_crossings_keeps_graph() {
        let l = open(&[(0., 0.), (1., 0.), (1., 1.)]);
        let fw = build_framework(&l).unwrap();
        let pf = planarize(&l.positions(), &fw, &StressAssignment::zero(3)).unwrap();
        assert_eq!(pf.vertices.len(), 3);
        assert_eq!(pf.edges.len(), 3);
        assert_eq!(pf.face_count(), 2);
    }

    #[test]
    fn planarize_rejects_degenerate_input() {
        let straight = open(&[(0., 0.), (1., 0.), (2., 0.)]);
        let fw = build_framework(&straight).unwrap();
        assert!(matches!(
            planarize(&straight.positions(), &fw, &StressAssignment::zero(3)),
            Err(FrameworkError::Overlap(..))
        ));

        // Three diagonals of a regular hexagon meet at its center.
        let hex: Vec<Point2> = (0..6)
            .map(|k| Point2::new(1.0, 0.0).rotate(k as f64 * std::f64::consts::PI / 3.0))
            .collect();
        let fw = Framework::complete(6, &[], Vec::new()).unwrap();
        let err = planarize(&hex, &fw, &StressAssignment::zero(15)).unwrap_err();
        assert!(matches!(err, FrameworkError::TripleCrossing(_)));
    }

    #[test]
    fn zero_stress_lifts_flat() {
        let (cfg, fw) = braced_square();
        let pf = planarize(&cfg, &fw, &StressAssignment::zero(6)).unwrap();
        let t = maxwell_cremona_lift(&pf).unwrap();
        assert!(t.vertex_heights.iter().all(|h| *h == 0.0));
        let report = verify_lift(&pf, &t, 1e-12);
        assert_eq!(report.max_closure_residual, 0.0);
        assert!(report.is_flat);
    }

    #[test]
    fn braced_square_lifts_to_pyramid() {
        let (cfg, fw) = braced_square();
        // Diagonals positive: ridges meeting at the apex.
        let stress = side_diagonal_stress(&fw, -1.0, 1.0);
        let pf = planarize(&cfg, &fw, &stress).unwrap();
        let t = maxwell_cremona_lift(&pf).unwrap();
        let h = &t.vertex_heights;
        for corner in 0..4 {
            assert!(h[corner].abs() < 1e-15);
        }
        // Apex height from integrating one gradient jump: 0.5.
        assert!((h[4] - 0.5).abs() < 1e-12, "apex at {}", h[4]);
        let report = verify_lift(&pf, &t, 1e-12);
        assert!(report.max_closure_residual <= 1e-9);
        assert!(!report.is_flat);
        assert!(report.mountain_valley_consistent);

        // Opposite sign gives the inverted pyramid, still consistent.
        let pf = planarize(&cfg, &fw, &stress.scaled(-1.0)).unwrap();
        let t = maxwell_cremona_lift(&pf).unwrap();
        assert!((t.vertex_heights[4] + 0.5).abs() < 1e-12);
        assert!(verify_lift(&pf, &t, 1e-12).mountain_valley_consistent);
    }

    #[test]
    fn lifting_is_linear_in_stress() {
        let (cfg, fw) = braced_square();
        let stress = side_diagonal_stress(&fw, -1.0, 1.0);
        let base = maxwell_cremona_lift(&planarize(&cfg, &fw, &stress).unwrap()).unwrap();
        let scaled =
            maxwell_cremona_lift(&planarize(&cfg, &fw, &stress.scaled(3.5)).unwrap()).unwrap();
        for (a, b) in base.vertex_heights.iter().zip(&scaled.vertex_heights) {
            assert!((a * 3.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn non_equilibrium_stress_fails_to_close() {
        let (cfg, fw) = braced_square();
        let mut omega = side_diagonal_stress(&fw, -1.0, 1.0).omega;
        omega[0] = 0.3;
        let pf = planarize(&cfg, &fw, &StressAssignment::new(omega)).unwrap();
        assert!(matches!(maxwell_cremona_lift(&pf), Err(FrameworkError::NotInEquilibrium(_))));
    }

    #[test]
    fn injected_height_fault_is_detected() {
        let (cfg, fw) = braced_square();
        let pf = planarize(&cfg, &fw, &side_diagonal_stress(&fw, -1.0, 1.0)).unwrap();
        let mut t = maxwell_cremona_lift(&pf).unwrap();
        t.vertex_heights[2] += 1e-3;
        let report = verify_lift(&pf, &t, 1e-12);
        assert!(report.max_closure_residual >= 1e-3);
    }

    #[test]
    fn peak_orientation() {
        let (cfg, fw) = braced_square();
        let valley_first = side_diagonal_stress(&fw, 1.0, -1.0);
        let t = maxwell_cremona_lift(&planarize(&cfg, &fw, &valley_first).unwrap()).unwrap();
        let flipped = orient_for_peak(&fw, &valley_first, &t).expect("should flip");
        let t = maxwell_cremona_lift(&planarize(&cfg, &fw, &flipped).unwrap()).unwrap();
        assert!(orient_for_peak(&fw, &flipped, &t).is_none());
        assert!(t.vertex_heights[4] > 0.0);
    }
}
