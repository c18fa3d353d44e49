//! Dense active-set solver for the least-norm quadratic program
//!
//! ```text
//!     minimize    |x|^2
//!     subject to  E x  = e
//!                 A x >= b
//! ```
//!
//! The identity Hessian makes every subproblem a least-norm projection, so
//! the dual active-set scheme of Goldfarb and Idnani reduces to a handful of
//! QR factorizations of the working-set normals. The iteration starts from
//! the unconstrained minimizer `x = 0`, so no feasible starting point is
//! needed and infeasibility is detected along the way.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("active-set iteration did not converge within {0} iterations")]
    MaxItersExceeded(usize),
    #[error("constraints are infeasible (detected at constraint {0})")]
    InfeasibleDetected(usize),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        eq: DMatrix<f64>,
        eq_rhs: DVector<f64>,
        ineq: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = eq.ncols().max(ineq.ncols());
        if (eq.nrows() > 0 && eq.ncols() != n) || (ineq.nrows() > 0 && ineq.ncols() != n) {
            return Err(QpError::Shape(format!(
                "equality rows have {} columns, inequality rows {}",
                eq.ncols(),
                ineq.ncols()
            )));
        }
        if eq.nrows() != eq_rhs.len() || ineq.nrows() != ineq_rhs.len() {
            return Err(QpError::Shape("right-hand side length".into()));
        }
        Ok(Self {
            eq,
            eq_rhs,
            ineq,
            ineq_rhs,
        })
    }

    /// Homogeneous equalities `E x = 0`.
    pub fn homogeneous(
        eq: DMatrix<f64>,
        ineq: DMatrix<f64>,
        ineq_rhs: DVector<f64>,
    ) -> Result<Self, QpError> {
        let m = eq.nrows();
        Self::new(eq, DVector::zeros(m), ineq, ineq_rhs)
    }

    pub fn dim(&self) -> usize {
        self.eq.ncols().max(self.ineq.ncols())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    /// Nonnegative at the optimum; zero off the active set.
    pub ineq_multipliers: DVector<f64>,
    /// Inequalities in the final working set, ascending.
    pub active: Vec<usize>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn objective(&self) -> f64 {
        self.x.norm_squared()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// KKT residuals of `(x, mu, lambda)` for `|x|^2` with multipliers entering as
/// `2x = E^T mu + A^T lambda`.
pub fn kkt_residual(
    problem: &QpProblem,
    x: &DVector<f64>,
    eq_multipliers: &DVector<f64>,
    ineq_multipliers: &DVector<f64>,
) -> KktResidual {
    let mut grad = x * 2.0;
    if problem.eq.nrows() > 0 {
        grad -= problem.eq.transpose() * eq_multipliers;
    }
    if problem.ineq.nrows() > 0 {
        grad -= problem.ineq.transpose() * ineq_multipliers;
    }
    let mut primal: f64 = 0.0;
    if problem.eq.nrows() > 0 {
        primal = (&problem.eq * x - &problem.eq_rhs).amax();
    }
    let mut complementarity: f64 = 0.0;
    let mut dual: f64 = 0.0;
    if problem.ineq.nrows() > 0 {
        let slack = &problem.ineq * x - &problem.ineq_rhs;
        for i in 0..slack.len() {
            primal = primal.max(-slack[i]);
            dual = dual.max(-ineq_multipliers[i]);
            complementarity = complementarity.max((ineq_multipliers[i] * slack[i]).abs());
        }
    }
    KktResidual {
        stationarity: grad.amax(),
        primal,
        dual,
        complementarity,
    }
}

#[derive(Clone, Copy, Debug)]
enum Kind {
    Eq { flipped: bool },
    Ineq,
}

#[derive(Clone, Copy, Debug)]
struct Working {
    id: usize,
    kind: Kind,
    multiplier: f64,
}

struct Basis {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Basis {
    fn new(cols: &[DVector<f64>]) -> Option<Self> {
        if cols.is_empty() {
            return None;
        }
        let n = DMatrix::from_columns(cols);
        let qr = n.qr();
        Some(Self {
            q: qr.q(),
            r: qr.r(),
        })
    }

    /// `(P_perp v, N^+ v)`.
    fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let qtv = self.q.transpose() * v;
        let perp = v - &self.q * &qtv;
        let coeffs = self
            .r
            .solve_upper_triangular(&qtv)
            .unwrap_or_else(|| DVector::zeros(qtv.len()));
        (perp, coeffs)
    }
}

/// Solves the least-norm QP. `tol` is the constraint-violation tolerance,
/// measured on normalized rows.
pub fn qp_solve(problem: &QpProblem, tol: f64, max_iters: usize) -> Result<QpSolution, QpError> {
    let n = problem.dim();
    let n_eq = problem.eq.nrows();
    let n_in = problem.ineq.nrows();

    let eq_row = |k: usize| -> DVector<f64> { problem.eq.row(k).transpose() };
    let in_row = |k: usize| -> DVector<f64> { problem.ineq.row(k).transpose() };
    let in_norm: Vec<f64> = (0..n_in).map(|k| in_row(k).norm().max(1e-300)).collect();

    let mut x = DVector::<f64>::zeros(n);
    let mut working: Vec<Working> = Vec::new();
    let mut iterations = 0;

    let normal_of = |w: &Working| -> DVector<f64> {
        match w.kind {
            Kind::Eq { flipped } => {
                let r = eq_row(w.id);
                if flipped {
                    -r
                } else {
                    r
                }
            }
            Kind::Ineq => in_row(w.id),
        }
    };

    // Equalities first, then violated inequalities until none remain.
    let mut pending_eq = 0;
    loop {
        let next = if pending_eq < n_eq {
            let k = pending_eq;
            pending_eq += 1;
            let row = eq_row(k);
            let s = row.dot(&x) - problem.eq_rhs[k];
            let flipped = s > 0.0;
            Some((
                Working {
                    id: k,
                    kind: Kind::Eq { flipped },
                    multiplier: 0.0,
                },
                if flipped { -row } else { row },
                if flipped {
                    -problem.eq_rhs[k]
                } else {
                    problem.eq_rhs[k]
                },
            ))
        } else {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..n_in {
                if working
                    .iter()
                    .any(|w| matches!(w.kind, Kind::Ineq) && w.id == k)
                {
                    continue;
                }
                let v = (in_row(k).dot(&x) - problem.ineq_rhs[k]) / in_norm[k];
                if v < -tol && best.is_none_or(|(_, bv)| v < bv) {
                    best = Some((k, v));
                }
            }
            best.map(|(k, _)| {
                (
                    Working {
                        id: k,
                        kind: Kind::Ineq,
                        multiplier: 0.0,
                    },
                    in_row(k),
                    problem.ineq_rhs[k],
                )
            })
        };
        let Some((mut cand, normal, rhs)) = next else {
            break;
        };
        let is_eq = matches!(cand.kind, Kind::Eq { .. });
        let scale = normal.norm().max(1e-300);

        // Raise the multiplier of `cand` until it becomes active, dropping
        // blocking inequalities on the way.
        loop {
            iterations += 1;
            if iterations > max_iters {
                return Err(QpError::MaxItersExceeded(max_iters));
            }
            let slack = normal.dot(&x) - rhs;
            let cols: Vec<DVector<f64>> = working.iter().map(normal_of).collect();
            let (z, r) = match Basis::new(&cols) {
                Some(b) => {
                    let (perp, coeffs) = b.split(&normal);
                    (perp * 0.5, coeffs)
                }
                None => (&normal * 0.5, DVector::zeros(0)),
            };
            let dependent = z.norm() <= 1e-11 * scale;

            // Partial step: first working inequality whose multiplier hits zero.
            let mut partial: Option<(usize, f64)> = None;
            for (idx, w) in working.iter().enumerate() {
                if matches!(w.kind, Kind::Ineq) && r[idx] > 1e-14 {
                    let t = w.multiplier / r[idx];
                    if partial.is_none_or(|(_, bt)| t < bt) {
                        partial = Some((idx, t));
                    }
                }
            }

            if dependent {
                if is_eq && slack.abs() <= tol * scale {
                    // Redundant equality, already satisfied.
                    break;
                }
                if !is_eq && slack >= -tol * scale {
                    break;
                }
                let Some((idx, t)) = partial else {
                    return Err(QpError::InfeasibleDetected(cand.id));
                };
                for (k, w) in working.iter_mut().enumerate() {
                    w.multiplier -= t * r[k];
                }
                cand.multiplier += t;
                working.remove(idx);
                continue;
            }

            let full = (-slack / normal.dot(&z)).max(0.0);
            let (t, drop) = match partial {
                Some((idx, tp)) if tp < full => (tp, Some(idx)),
                _ => (full, None),
            };
            x += &z * t;
            for (k, w) in working.iter_mut().enumerate() {
                w.multiplier -= t * r[k];
            }
            cand.multiplier += t;
            match drop {
                Some(idx) => {
                    working.remove(idx);
                }
                None => {
                    working.push(cand);
                    break;
                }
            }
        }
    }

    let mut eq_multipliers = DVector::zeros(n_eq);
    let mut ineq_multipliers = DVector::zeros(n_in);
    let mut active = Vec::new();
    for w in &working {
        match w.kind {
            Kind::Eq { flipped } => {
                eq_multipliers[w.id] = if flipped { -w.multiplier } else { w.multiplier };
            }
            Kind::Ineq => {
                ineq_multipliers[w.id] = w.multiplier.max(0.0);
                active.push(w.id);
            }
        }
    }
    active.sort_unstable();
    Ok(QpSolution {
        x,
        eq_multipliers,
        ineq_multipliers,
        active,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(n: usize) -> DMatrix<f64> {
        DMatrix::zeros(0, n)
    }

    #[test]
    fn unconstrained_minimum_is_zero() {
        let p = QpProblem::homogeneous(empty(4), empty(4), DVector::zeros(0)).unwrap();
        let s = qp_solve(&p, 1e-10, 100).unwrap();
        assert_eq!(s.x, DVector::zeros(4));
        assert!(s.active.is_empty());
    }

    #[test]
    fn projection_onto_half_space() {
        let a = DMatrix::from_row_slice(1, 2, &[1., 0.]);
        let p = QpProblem::homogeneous(empty(2), a, DVector::from_vec(vec![1.])).unwrap();
        let s = qp_solve(&p, 1e-12, 100).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && s.x[1].abs() < 1e-15);
        assert_eq!(s.active, vec![0]);
        assert!((s.ineq_multipliers[0] - 2.0).abs() < 1e-12);
        assert!(kkt_residual(&p, &s.x, &s.eq_multipliers, &s.ineq_multipliers).max() < 1e-12);
    }

    #[test]
    fn inactive_constraint_is_ignored() {
        let a = DMatrix::from_row_slice(2, 2, &[1., 0., 1., 1.]);
        let p = QpProblem::homogeneous(empty(2), a, DVector::from_vec(vec![1., -5.])).unwrap();
        let s = qp_solve(&p, 1e-12, 100).unwrap();
        assert_eq!(s.active, vec![0]);
        assert_eq!(s.ineq_multipliers[1], 0.0);
    }

    #[test]
    fn equality_and_inequality() {
        // x0 + x1 = 2, x0 >= 1.5 -> (1.5, 0.5)
        let e = DMatrix::from_row_slice(1, 2, &[1., 1.]);
        let a = DMatrix::from_row_slice(1, 2, &[1., 0.]);
        let p = QpProblem::new(e, DVector::from_vec(vec![2.]), a, DVector::from_vec(vec![1.5]))
            .unwrap();
        let s = qp_solve(&p, 1e-12, 100).unwrap();
        assert!((s.x[0] - 1.5).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
        assert!(kkt_residual(&p, &s.x, &s.eq_multipliers, &s.ineq_multipliers).max() < 1e-12);
    }

    #[test]
    fn requires_dropping_a_constraint() {
        // The most violated constraint at the origin is not active at the optimum.
        let a = DMatrix::from_row_slice(2, 2, &[1., 0., 1., 1.]);
        let p = QpProblem::homogeneous(empty(2), a, DVector::from_vec(vec![1., 3.])).unwrap();
        let s = qp_solve(&p, 1e-12, 100).unwrap();
        assert!((s.x[0] - 1.5).abs() < 1e-12 && (s.x[1] - 1.5).abs() < 1e-12);
        assert_eq!(s.active, vec![1]);
    }

    #[test]
    fn infeasible_pair() {
        let a = DMatrix::from_row_slice(2, 1, &[1., -1.]);
        let p = QpProblem::homogeneous(empty(1), a, DVector::from_vec(vec![1., 1.])).unwrap();
        assert!(matches!(qp_solve(&p, 1e-12, 100), Err(QpError::InfeasibleDetected(_))));
    }

    #[test]
    fn infeasible_with_equality() {
        let e = DMatrix::from_row_slice(1, 2, &[1., 0.]);
        let a = DMatrix::from_row_slice(1, 2, &[1., 0.]);
        let p = QpProblem::homogeneous(e, a, DVector::from_vec(vec![1.])).unwrap();
        assert!(matches!(qp_solve(&p, 1e-12, 100), Err(QpError::InfeasibleDetected(0))));
    }

    #[test]
    fn redundant_equalities() {
        let e = DMatrix::from_row_slice(2, 2, &[1., 1., 2., 2.]);
        let p = QpProblem::new(
            e,
            DVector::from_vec(vec![1., 2.]),
            empty(2),
            DVector::zeros(0),
        )
        .unwrap();
        let s = qp_solve(&p, 1e-12, 100).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let e = DMatrix::<f64>::zeros(1, 2);
        let a = DMatrix::<f64>::zeros(1, 3);
        assert!(QpProblem::homogeneous(e, a, DVector::zeros(1)).is_err());
    }
}
