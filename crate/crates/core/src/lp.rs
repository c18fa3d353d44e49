//! Dense phase-one simplex for feasibility of `A x = b, x >= 0`.
//!
//! Only phase one is needed by the stress search: artificial variables are
//! driven out with Bland's rule and the optimum of their sum decides
//! feasibility.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const PIVOT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
    #[error("constraint matrix has {rows} rows but right-hand side has {rhs}")]
    Shape { rows: usize, rhs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feasibility {
    Feasible(DVector<f64>),
    /// Smallest achievable sum of infeasibilities.
    Infeasible(f64),
}

/// Phase-one simplex. `feas_tol` bounds the residual sum of artificials
/// accepted as feasible.
pub fn find_feasible_point(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    feas_tol: f64,
    max_pivots: usize,
) -> Result<Feasibility, LpError> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(LpError::Shape {
            rows: m,
            rhs: b.len(),
        });
    }
    let width = n + m + 1;
    let rhs = width - 1;
    // rows 0..m constraints, row m reduced costs
    let mut t = DMatrix::<f64>::zeros(m + 1, width);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, rhs)] = sign * b[i];
    }
    for j in 0..n {
        t[(m, j)] = -(0..m).map(|i| t[(i, j)]).sum::<f64>();
    }
    t[(m, rhs)] = -(0..m).map(|i| t[(i, rhs)]).sum::<f64>();
    let mut basis: Vec<usize> = (n..n + m).collect();

    let mut pivots = 0;
    loop {
        let Some(enter) = (0..n + m).find(|&j| t[(m, j)] < -PIVOT_TOL) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let coef = t[(i, enter)];
            if coef > PIVOT_TOL {
                let ratio = t[(i, rhs)] / coef;
                leave = match leave {
                    Some((r, best))
                        if ratio > best + 1e-14 || (ratio >= best - 1e-14 && basis[i] > basis[r]) =>
                    {
                        Some((r, best))
                    }
                    _ => Some((i, ratio)),
                };
            }
        }
        // Phase-one objective is bounded below by zero, so a pivot row exists
        // unless the column is numerically null; treat that as optimal.
        let Some((row, _)) = leave else {
            break;
        };
        pivot(&mut t, row, enter);
        basis[row] = enter;
        pivots += 1;
        if pivots > max_pivots {
            return Err(LpError::IterationLimit(max_pivots));
        }
    }

    let infeasibility = -t[(m, rhs)];
    if infeasibility > feas_tol {
        return Ok(Feasibility::Infeasible(infeasibility));
    }
    let mut x = DVector::zeros(n);
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[(i, rhs)].max(0.0);
        }
    }
    Ok(Feasibility::Feasible(x))
}

fn pivot(t: &mut DMatrix<f64>, row: usize, col: usize) {
    let p = t[(row, col)];
    let width = t.ncols();
    for j in 0..width {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i == row {
            continue;
        }
        let f = t[(i, col)];
        if f != 0.0 {
            for j in 0..width {
                let v = t[(row, j)];
                t[(i, j)] -= f * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_feasible_system() {
        // x + y = 1, x - y = 0
        let a = DMatrix::from_row_slice(2, 2, &[1., 1., 1., -1.]);
        let b = DVector::from_vec(vec![1., 0.]);
        match find_feasible_point(&a, &b, 1e-9, 100).unwrap() {
            Feasibility::Feasible(x) => {
                assert!((x[0] - 0.5).abs() < 1e-12);
                assert!((x[1] - 0.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sign_constraint_makes_it_infeasible() {
        // x = -1 with x >= 0.
        let a = DMatrix::from_row_slice(1, 1, &[1.]);
        let b = DVector::from_vec(vec![-1.]);
        assert!(matches!(
            find_feasible_point(&a, &b, 1e-9, 100).unwrap(),
            Feasibility::Infeasible(r) if (r - 1.0).abs() < 1e-12
        ));
    }

    #[test]
    fn redundant_rows_are_fine() {
        let a = DMatrix::from_row_slice(3, 3, &[1., 1., 1., 2., 2., 2., 1., 0., -1.]);
        let b = DVector::from_vec(vec![1., 2., 0.]);
        match find_feasible_point(&a, &b, 1e-9, 100).unwrap() {
            Feasibility::Feasible(x) => {
                let r = &a * &x - &b;
                assert!(r.amax() < 1e-12);
                assert!(x.iter().all(|v| *v >= 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DVector::zeros(3);
        assert!(matches!(find_feasible_point(&a, &b, 1e-9, 10), Err(LpError::Shape { .. })));
    }
}
