//! Planar points, chains and linkages, plus the predicates every other
//! module leans on: orientation, segment intersection, simplicity and the
//! two termination tests (straightened / convexified).

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold below which a signed area counts as zero.
pub const COLLINEAR_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("coordinate is not finite: ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("open chain needs at least 2 vertices, got {0}")]
    OpenChainTooShort(usize),
    #[error("closed chain needs at least 3 vertices, got {0}")]
    ClosedChainTooShort(usize),
    #[error("segment {segment} of chain has zero length")]
    ZeroLengthSegment { segment: usize },
    #[error("linkage has no chains")]
    EmptyLinkage,
    #[error("operation requires an open chain")]
    ExpectedOpenChain,
    #[error("operation requires a closed chain")]
    ExpectedClosedChain,
    #[error("position vector has {got} entries, linkage has {expected} vertices")]
    PositionCount { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    /// Counterclockwise quarter turn.
    pub fn rot90(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn lerp(self, other: Point2, t: f64) -> Point2 {
        self + (other - self) * t
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs())
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Point2,
    pub b: Point2,
}

impl Segment {
    pub fn new(a: Point2, b: Point2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntersectionKind {
    None,
    /// A single contact point strictly interior to at least one segment.
    ProperPoint(Point2),
    /// The segments meet only at an endpoint common to both.
    SharedEndpoint(Point2),
    /// Collinear segments sharing a piece of positive length.
    Overlap(Segment),
}

impl IntersectionKind {
    pub fn is_none(&self) -> bool {
        matches!(self, IntersectionKind::None)
    }
}

/// Sign of the signed area of `abc`; zero within the scale-relative
/// collinearity tolerance.
pub fn orient(a: Point2, b: Point2, c: Point2) -> i8 {
    let det = (b - a).cross(c - a);
    let scale = a.max_abs().max(b.max_abs()).max(c.max_abs());
    if det.abs() <= COLLINEAR_EPS * scale * scale {
        0
    } else if det > 0.0 {
        1
    } else {
        -1
    }
}

fn near(p: Point2, q: Point2) -> bool {
    let scale = p.max_abs().max(q.max_abs()).max(1.0);
    (p - q).max_abs() <= COLLINEAR_EPS * scale
}

pub fn segment_intersection(s1: Segment, s2: Segment) -> IntersectionKind {
    let (a, b, c, d) = (s1.a, s1.b, s2.a, s2.b);
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);

    if o1 == 0 && o2 == 0 {
        return collinear_intersection(s1, s2);
    }
    if o1 * o2 > 0 || o3 * o4 > 0 {
        return IntersectionKind::None;
    }

    // Contact at an endpoint common to both segments.
    for p in [a, b] {
        for q in [c, d] {
            if near(p, q) {
                return IntersectionKind::SharedEndpoint(p);
            }
        }
    }

    // An endpoint on the other segment's line only touches it within reach.
    let touching = [(o1, c, s1), (o2, d, s1), (o3, a, s2), (o4, b, s2)];
    if touching.iter().any(|t| t.0 == 0) {
        return touching
            .iter()
            .find(|&&(o, p, s)| o == 0 && within_extent(p, s))
            .map_or(IntersectionKind::None, |&(_, p, _)| IntersectionKind::ProperPoint(p));
    }
    let r = b - a;
    let s = d - c;
    let t = (c - a).cross(s) / r.cross(s);
    IntersectionKind::ProperPoint(a + r * t)
}

fn within_extent(p: Point2, s: Segment) -> bool {
    let dir = s.b - s.a;
    let t = (p - s.a).dot(dir) / dir.norm_squared();
    (-COLLINEAR_EPS..=1.0 + COLLINEAR_EPS).contains(&t)
}

fn collinear_intersection(s1: Segment, s2: Segment) -> IntersectionKind {
    let dir = s1.b - s1.a;
    let len2 = dir.norm_squared();
    let param = |p: Point2| (p - s1.a).dot(dir) / len2;
    let (mut t0, mut t1) = (param(s2.a), param(s2.b));
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    let lo = t0.max(0.0);
    let hi = t1.min(1.0);
    let tol = COLLINEAR_EPS;
    if hi < lo - tol {
        return IntersectionKind::None;
    }
    if hi - lo <= tol {
        let p = s1.a + dir * lo.clamp(0.0, 1.0);
        let at_end_1 = near(p, s1.a) || near(p, s1.b);
        let at_end_2 = near(p, s2.a) || near(p, s2.b);
        return if at_end_1 && at_end_2 {
            IntersectionKind::SharedEndpoint(p)
        } else {
            IntersectionKind::ProperPoint(p)
        };
    }
    IntersectionKind::Overlap(Segment::new(s1.a + dir * lo, s1.a + dir * hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    vertices: Vec<Point2>,
    closed: bool,
}

impl Chain {
    pub fn new(vertices: Vec<Point2>, closed: bool) -> Result<Self, GeometryError> {
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(p.x, p.y));
        }
        if closed && vertices.len() < 3 {
            return Err(GeometryError::ClosedChainTooShort(vertices.len()));
        }
        if !closed && vertices.len() < 2 {
            return Err(GeometryError::OpenChainTooShort(vertices.len()));
        }
        let chain = Self { vertices, closed };
        for (k, seg) in chain.segments().enumerate() {
            if seg.length() == 0.0 {
                return Err(GeometryError::ZeroLengthSegment { segment: k });
            }
        }
        Ok(chain)
    }

    pub fn open(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        Self::new(vertices, false)
    }

    pub fn closed(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        Self::new(vertices, true)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        if self.closed {
            self.vertices.len()
        } else {
            self.vertices.len() - 1
        }
    }

    /// Vertex index pairs of the chain's segments, closing segment last.
    pub fn segment_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.vertices.len();
        (0..self.segment_count()).map(move |k| (k, (k + 1) % n))
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.segment_indices()
            .map(|(i, j)| Segment::new(self.vertices[i], self.vertices[j]))
    }

    pub fn bar_lengths(&self) -> Vec<f64> {
        self.segments().map(|s| s.length()).collect()
    }
}

/// Identifies a segment by chain and position within the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SegmentId {
    pub chain: usize,
    pub segment: usize,
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain {} segment {}", self.chain, self.segment)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Simplicity {
    Simple,
    Violation {
        first: SegmentId,
        second: SegmentId,
        kind: IntersectionKind,
    },
}

impl Simplicity {
    pub fn is_simple(&self) -> bool {
        matches!(self, Simplicity::Simple)
    }
}

/// A collection of chains with global vertex numbering: chains in input
/// order, vertices in listed order within each chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linkage {
    chains: Vec<Chain>,
}

impl Linkage {
    pub fn new(chains: Vec<Chain>) -> Result<Self, GeometryError> {
        if chains.is_empty() {
            return Err(GeometryError::EmptyLinkage);
        }
        Ok(Self { chains })
    }

    pub fn single(chain: Chain) -> Self {
        Self {
            chains: vec![chain],
        }
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn vertex_count(&self) -> usize {
        self.chains.iter().map(Chain::len).sum()
    }

    /// Global index of each chain's first vertex.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.chains
            .iter()
            .map(|c| {
                let start = acc;
                acc += c.len();
                start
            })
            .collect()
    }

    pub fn positions(&self) -> Vec<Point2> {
        self.chains
            .iter()
            .flat_map(|c| c.vertices.iter().copied())
            .collect()
    }

    /// Same chain structure, new coordinates (global order).
    pub fn with_positions(&self, positions: &[Point2]) -> Result<Linkage, GeometryError> {
        let n = self.vertex_count();
        if positions.len() != n {
            return Err(GeometryError::PositionCount {
                expected: n,
                got: positions.len(),
            });
        }
        let mut rest = positions;
        let mut chains = Vec::with_capacity(self.chains.len());
        for c in &self.chains {
            let (head, tail) = rest.split_at(c.len());
            chains.push(Chain::new(head.to_vec(), c.closed)?);
            rest = tail;
        }
        Ok(Linkage { chains })
    }

    /// Global vertex index pairs of every bar, chain by chain.
    pub fn bars(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (c, off) in self.chains.iter().zip(self.offsets()) {
            for (i, j) in c.segment_indices() {
                out.push((off + i, off + j));
            }
        }
        out
    }

    pub fn bar_lengths(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.bar_lengths()).collect()
    }

    /// `max(1, largest coordinate magnitude)`.
    pub fn scale(&self) -> f64 {
        scale_of(&self.positions())
    }

    pub fn is_unfolded(&self, straight_tol: f64, convex_tol: f64) -> bool {
        self.chains.iter().all(|c| {
            if c.closed {
                is_convexified(c, convex_tol).unwrap_or(false)
            } else {
                is_straightened(c, straight_tol).unwrap_or(false)
            }
        })
    }
}

pub fn scale_of(points: &[Point2]) -> f64 {
    points.iter().map(|p| p.max_abs()).fold(1.0, f64::max)
}

/// All-pairs check: non-adjacent segments may not touch at all, adjacent
/// ones only at their shared vertex.
pub fn is_simple(linkage: &Linkage) -> Simplicity {
    struct Seg {
        id: SegmentId,
        ends: (usize, usize),
        geom: Segment,
    }
    let offsets = linkage.offsets();
    let mut segs = Vec::new();
    for (ci, chain) in linkage.chains.iter().enumerate() {
        for (k, (i, j)) in chain.segment_indices().enumerate() {
            segs.push(Seg {
                id: SegmentId {
                    chain: ci,
                    segment: k,
                },
                ends: (offsets[ci] + i, offsets[ci] + j),
                geom: Segment::new(chain.vertices[i], chain.vertices[j]),
            });
        }
    }
    for (x, s) in segs.iter().enumerate() {
        for t in &segs[x + 1..] {
            let kind = segment_intersection(s.geom, t.geom);
            let shared = [s.ends.0, s.ends.1]
                .into_iter()
                .find(|v| *v == t.ends.0 || *v == t.ends.1);
            let allowed = match (shared, kind) {
                (_, IntersectionKind::None) => true,
                (Some(_), IntersectionKind::SharedEndpoint(_)) => true,
                _ => false,
            };
            if !allowed {
                return Simplicity::Violation {
                    first: s.id,
                    second: t.id,
                    kind,
                };
            }
        }
    }
    Simplicity::Simple
}

/// Angle at `v` between the rays towards `a` and `b`, in `[0, pi]`.
pub fn vertex_angle(a: Point2, v: Point2, b: Point2) -> f64 {
    let u = a - v;
    let w = b - v;
    u.cross(w).abs().atan2(u.dot(w))
}

/// Signed exterior (turning) angle at `v` when walking `a -> v -> b`.
pub fn turn_angle(a: Point2, v: Point2, b: Point2) -> f64 {
    let u = v - a;
    let w = b - v;
    u.cross(w).atan2(u.dot(w))
}

pub fn is_straightened(chain: &Chain, tol: f64) -> Result<bool, GeometryError> {
    if chain.closed {
        return Err(GeometryError::ExpectedOpenChain);
    }
    Ok(chain
        .vertices
        .windows(3)
        .all(|w| PI - vertex_angle(w[0], w[1], w[2]) <= tol))
}

pub fn is_convexified(chain: &Chain, tol: f64) -> Result<bool, GeometryError> {
    if !chain.closed {
        return Err(GeometryError::ExpectedClosedChain);
    }
    let v = &chain.vertices;
    let n = v.len();
    let turns: Vec<f64> = (0..n)
        .map(|k| turn_angle(v[(k + n - 1) % n], v[k], v[(k + 1) % n]))
        .collect();
    let total: f64 = turns.iter().sum();
    let ccw = turns.iter().all(|t| *t >= -tol);
    let cw = turns.iter().all(|t| *t <= tol);
    Ok((ccw || cw) && (total.abs() - 2.0 * PI).abs() <= tol)
}

pub fn pairwise_distances(linkage: &Linkage) -> DMatrix<f64> {
    distance_matrix(&linkage.positions())
}

pub fn distance_matrix(points: &[Point2]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| points[i].dist(points[j]))
}
