//! Face extraction for straight-line plane graphs.
//!
//! Half-edges around each vertex are sorted counterclockwise; the face to
//! the left of `u -> v` continues with the half-edge leaving `v` that is
//! next clockwise from `v -> u`. Bounded faces come out counterclockwise
//! (positive area), the unbounded face of each component clockwise.

use std::f64::consts::PI;

use crate::geometry::Point2;

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    /// Vertex cycle, face interior on the left.
    pub vertices: Vec<usize>,
    /// Half-edges of the boundary, `half_edges[k]` runs from
    /// `vertices[k]` to `vertices[k + 1]`.
    pub half_edges: Vec<usize>,
    pub signed_area: f64,
}

#[derive(Clone, Debug)]
pub struct PlaneGraph {
    /// Half-edge `2e` runs `edges[e].0 -> edges[e].1`, `2e + 1` the reverse.
    pub edges: Vec<(usize, usize)>,
    /// Counterclockwise outgoing half-edges per vertex.
    pub rotation: Vec<Vec<usize>>,
    pub faces: Vec<Face>,
    /// Face to the left of each half-edge.
    pub face_of: Vec<usize>,
}

impl PlaneGraph {
    pub fn new(points: &[Point2], edges: &[(usize, usize)]) -> Self {
        let n = points.len();
        let mut rotation = vec![Vec::new(); n];
        for (e, &(i, j)) in edges.iter().enumerate() {
            rotation[i].push(2 * e);
            rotation[j].push(2 * e + 1);
        }
        let head = |h: usize| {
            let (i, j) = edges[h / 2];
            if h % 2 == 0 {
                j
            } else {
                i
            }
        };
        let tail = |h: usize| head(h ^ 1);
        for (v, hs) in rotation.iter_mut().enumerate() {
            hs.sort_by(|&a, &b| {
                let da = (points[head(a)] - points[v]).angle();
                let db = (points[head(b)] - points[v]).angle();
                da.total_cmp(&db).then(a.cmp(&b))
            });
        }
        // position of each half-edge inside its tail's rotation
        let mut slot = vec![0usize; 2 * edges.len()];
        for hs in &rotation {
            for (k, &h) in hs.iter().enumerate() {
                slot[h] = k;
            }
        }
        let next = |h: usize| {
            let v = head(h);
            let twin = h ^ 1;
            let deg = rotation[v].len();
            rotation[v][(slot[twin] + deg - 1) % deg]
        };

        let mut face_of = vec![usize::MAX; 2 * edges.len()];
        let mut faces = Vec::new();
        for start in 0..2 * edges.len() {
            if face_of[start] != usize::MAX {
                continue;
            }
            let id = faces.len();
            let mut vertices = Vec::new();
            let mut half_edges = Vec::new();
            let mut h = start;
            loop {
                face_of[h] = id;
                vertices.push(tail(h));
                half_edges.push(h);
                h = next(h);
                if h == start {
                    break;
                }
            }
            let signed_area = polygon_area(points, &vertices);
            faces.push(Face {
                vertices,
                half_edges,
                signed_area,
            });
        }
        Self {
            edges: edges.to_vec(),
            rotation,
            faces,
            face_of,
        }
    }

    pub fn head(&self, h: usize) -> usize {
        let (i, j) = self.edges[h / 2];
        if h % 2 == 0 {
            j
        } else {
            i
        }
    }

    pub fn tail(&self, h: usize) -> usize {
        self.head(h ^ 1)
    }

    /// Faces with negative area; exactly one for a connected graph.
    pub fn unbounded_faces(&self) -> Vec<usize> {
        (0..self.faces.len())
            .filter(|&f| self.faces[f].signed_area < 0.0)
            .collect()
    }

    /// Number of connected components among vertices with at least one edge.
    pub fn components(&self) -> usize {
        let n = self.rotation.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] || self.rotation[s].is_empty() {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                for &h in &self.rotation[v] {
                    let w = self.head(h);
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

pub fn polygon_area(points: &[Point2], cycle: &[usize]) -> f64 {
    let m = cycle.len();
    0.5 * (0..m)
        .map(|k| points[cycle[k]].cross(points[cycle[(k + 1) % m]]))
        .sum::<f64>()
}

/// Interior angle at `vertices[k]` of a face traversed with its interior on
/// the left, in `(0, 2pi]`.
pub fn face_angle(points: &[Point2], vertices: &[usize], k: usize) -> f64 {
    let m = vertices.len();
    let v = points[vertices[k]];
    let prev = points[vertices[(k + m - 1) % m]];
    let next = points[vertices[(k + 1) % m]];
    let a = (next - v).angle();
    let b = (prev - v).angle();
    let mut d = b - a;
    while d <= 0.0 {
        d += 2.0 * PI;
    }
    while d > 2.0 * PI {
        d -= 2.0 * PI;
    }
    d
}

/// Even-odd point in polygon test.
pub fn contains_point(points: &[Point2], cycle: &[usize], q: Point2) -> bool {
    let m = cycle.len();
    let mut inside = false;
    for k in 0..m {
        let a = points[cycle[k]];
        let b = points[cycle[(k + 1) % m]];
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if q.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_with_center() -> (Vec<Point2>, Vec<(usize, usize)>) {
        let pts = vec![
            Point2::new(0., 0.),
            Point2::new(1., 0.),
            Point2::new(1., 1.),
            Point2::new(0., 1.),
            Point2::new(0.5, 0.5),
        ];
        let edges = vec![(0, 1), (1, 2), (2, 3), (0, 3), (0, 4), (1, 4), (2, 4), (3, 4)];
        (pts, edges)
    }

    #[test]
    fn euler_formula_on_subdivided_square() {
        let (pts, edges) = square_with_center();
        let g = PlaneGraph::new(&pts, &edges);
        assert_eq!(g.faces.len(), 5);
        assert_eq!(g.unbounded_faces().len(), 1);
        let outer = g.unbounded_faces()[0];
        assert!((g.faces[outer].signed_area + 1.0).abs() < 1e-12);
        for (f, face) in g.faces.iter().enumerate() {
            if f != outer {
                assert_eq!(face.vertices.len(), 3);
                assert!((face.signed_area - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tree_has_single_face() {
        let pts = vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(1., 1.)];
        let g = PlaneGraph::new(&pts, &[(0, 1), (1, 2)]);
        assert_eq!(g.faces.len(), 1);
        assert_eq!(g.faces[0].half_edges.len(), 4);
        assert!(g.faces[0].signed_area.abs() < 1e-15);
        assert_eq!(g.components(), 1);
    }

    #[test]
    fn face_angles_of_triangle() {
        let pts = vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(0., 1.)];
        let cycle = [0, 1, 2];
        let total: f64 = (0..3).map(|k| face_angle(&pts, &cycle, k)).sum();
        assert!((total - PI).abs() < 1e-12);
        assert!((face_angle(&pts, &cycle, 0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn point_location() {
        let (pts, _) = square_with_center();
        assert!(contains_point(&pts, &[0, 1, 2, 3], Point2::new(0.3, 0.6)));
        assert!(!contains_point(&pts, &[0, 1, 2, 3], Point2::new(1.3, 0.6)));
    }
}
