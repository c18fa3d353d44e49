#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlock::geometry::{is_simple, Chain, Linkage, Point2};
use unlock::qp::QpProblem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random walk with bar lengths in [0.5, 1.5] and turns within 150 degrees,
/// resampled until simple.
pub fn random_open_chain(rng: &mut ChaCha8Rng, n: usize) -> Linkage {
    loop {
        let mut pts = vec![Point2::ZERO];
        let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        for _ in 1..n {
            let len = rng.gen_range(0.5..1.5);
            let last = *pts.last().unwrap();
            pts.push(last + Point2::new(heading.cos(), heading.sin()) * len);
            heading += rng.gen_range(-2.6..2.6);
        }
        let link = Linkage::single(Chain::open(pts).unwrap());
        if is_simple(&link).is_simple() {
            return link;
        }
    }
}

/// Star-shaped polygon around the origin: sorted angles with a minimum gap,
/// radii in [0.5, 1.5].
pub fn random_polygon(rng: &mut ChaCha8Rng, n: usize) -> Linkage {
    loop {
        let mut angles: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        angles.sort_by(f64::total_cmp);
        let gaps_ok = (0..n).all(|k| {
            let next = if k + 1 < n { angles[k + 1] } else { angles[0] + std::f64::consts::TAU };
            next - angles[k] > 0.1
        });
        if !gaps_ok {
            continue;
        }
        let pts: Vec<Point2> = angles
            .iter()
            .map(|&a| Point2::new(a.cos(), a.sin()) * rng.gen_range(0.5..1.5))
            .collect();
        let link = Linkage::single(Chain::closed(pts).unwrap());
        if is_simple(&link).is_simple() {
            return link;
        }
    }
}

/// Random feasible problem: `neq` equalities and `nineq` inequalities in
/// `dim` variables, all satisfied by a hidden point.
pub fn random_qp(rng: &mut ChaCha8Rng, dim: usize, neq: usize, nineq: usize) -> QpProblem {
    let x0 = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    let eq = DMatrix::from_fn(neq, dim, |_, _| rng.gen_range(-1.0..1.0));
    let ineq = DMatrix::from_fn(nineq, dim, |_, _| rng.gen_range(-1.0..1.0));
    let eq_rhs = &eq * &x0;
    let slack = DVector::from_fn(nineq, |_, _| rng.gen_range(0.0..0.5));
    let ineq_rhs = &ineq * &x0 - slack;
    QpProblem::new(eq, eq_rhs, ineq, ineq_rhs).unwrap()
}

/// Minimizer of `|x|^2` by enumerating every candidate active set: the
/// least-norm point of each face (via pseudo-inverse) is kept when it is
/// feasible, and the smallest one wins.
pub fn enumerate_qp(problem: &QpProblem, feas_tol: f64) -> Option<DVector<f64>> {
    let m = problem.ineq.nrows();
    let dim = problem.dim();
    let mut best: Option<DVector<f64>> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|k| mask & (1 << k) != 0).collect();
        let total = problem.eq.nrows() + rows.len();
        if total > dim {
            continue;
        }
        let mut mat = DMatrix::zeros(total, dim);
        let mut rhs = DVector::zeros(total);
        for r in 0..problem.eq.nrows() {
            mat.set_row(r, &problem.eq.row(r));
            rhs[r] = problem.eq_rhs[r];
        }
        for (k, &r) in rows.iter().enumerate() {
            mat.set_row(problem.eq.nrows() + k, &problem.ineq.row(r));
            rhs[problem.eq.nrows() + k] = problem.ineq_rhs[r];
        }
        let x = if total == 0 {
            DVector::zeros(dim)
        } else {
            let pinv = mat.clone().pseudo_inverse(1e-12).unwrap();
            pinv * &rhs
        };
        if total > 0 && (&mat * &x - &rhs).amax() > feas_tol {
            continue;
        }
        if m > 0 && (&problem.ineq * &x - &problem.ineq_rhs).min() < -feas_tol {
            continue;
        }
        if best.as_ref().is_none_or(|b| x.norm_squared() < b.norm_squared()) {
            best = Some(x);
        }
    }
    best
}

/// Largest decrease of any pairwise distance between two configurations.
pub fn max_distance_decrease(a: &[Point2], b: &[Point2]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            worst = worst.max(a[i].dist(a[j]) - b[i].dist(b[j]));
        }
    }
    worst
}

/// Random points in the unit square with no three within `eps` (relative
/// area) of collinear.
pub fn general_position_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point2> {
    'retry: loop {
        let p: Vec<Point2> = (0..n)
            .map(|_| Point2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
            .collect();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    if ((p[j] - p[i]).cross(p[k] - p[i])).abs() < 1e-3 {
                        continue 'retry;
                    }
                }
            }
        }
        return p;
    }
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// Segments `(a, b)` and `(c, d)` share a point other than a common
/// endpoint. Points are assumed in general position.
pub fn oracle_cross(p: &[Point2], (a, b): (usize, usize), (c, d): (usize, usize)) -> bool {
    if a == c || a == d || b == c || b == d {
        return false;
    }
    let o1 = orient(p[a], p[b], p[c]);
    let o2 = orient(p[a], p[b], p[d]);
    let o3 = orient(p[c], p[d], p[a]);
    let o4 = orient(p[c], p[d], p[b]);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Some angular gap between consecutive incident edges exceeds pi.
pub fn oracle_pointed(p: &[Point2], v: usize, edges: &[(usize, usize)]) -> bool {
    let mut angles: Vec<f64> = edges
        .iter()
        .filter_map(|&(i, j)| match (i == v, j == v) {
            (true, _) => Some(j),
            (_, true) => Some(i),
            _ => None,
        })
        .map(|w| {
            let d = p[w] - p[v];
            d.y.atan2(d.x)
        })
        .collect();
    if angles.len() < 2 {
        return true;
    }
    angles.sort_by(f64::total_cmp);
    let k = angles.len();
    (0..k).any(|i| {
        let gap = if i + 1 < k { angles[i + 1] - angles[i] } else { angles[0] + std::f64::consts::TAU - angles[i] };
        gap > std::f64::consts::PI
    })
}

/// Non-crossing, pointed everywhere and 2n - 3 edges: exactly the pointed
/// pseudotriangulations.
pub fn oracle_is_ppt(p: &[Point2], edges: &[(usize, usize)]) -> bool {
    let n = p.len();
    if edges.len() != 2 * n - 3 {
        return false;
    }
    for a in 0..edges.len() {
        for b in a + 1..edges.len() {
            if oracle_cross(p, edges[a], edges[b]) {
                return false;
            }
        }
    }
    (0..n).all(|v| oracle_pointed(p, v, edges))
}

/// Every pointed pseudotriangulation of `p` containing `bars`, by
/// exhaustive search over edge subsets (small n only).
pub fn enumerate_ppts(p: &[Point2], bars: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let n = p.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let need = 2 * n - 3;
    let mut out = Vec::new();
    for mask in 0u64..(1 << pairs.len()) {
        if mask.count_ones() as usize != need {
            continue;
        }
        let edges: Vec<(usize, usize)> = (0..pairs.len()).filter(|k| mask & (1 << k) != 0).map(|k| pairs[k]).collect();
        if bars.iter().all(|b| edges.contains(&(b.0.min(b.1), b.0.max(b.1)))) && oracle_is_ppt(p, &edges) {
            out.push(edges);
        }
    }
    out
}
