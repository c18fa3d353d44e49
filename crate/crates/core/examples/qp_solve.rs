//! Finds the least-norm point of a small polytope with the active-set QP.

use std::error::Error;

use nalgebra::{DMatrix, DVector};
use unlock::qp::{kkt_residual, qp_solve, QpProblem};

fn main() -> Result<(), Box<dyn Error>> {
    // x + y = 2 and x >= 1.5, so the answer is (1.5, 0.5).
    let problem = QpProblem::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_vec(vec![2.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DVector::from_vec(vec![1.5]),
    )?;
    let sol = qp_solve(&problem, 1e-12, 100)?;
    println!("x = {:?}", sol.x.as_slice());
    println!("active {:?} after {} iterations", sol.active, sol.iterations);
    let kkt = kkt_residual(&problem, &sol.x, &sol.eq_multipliers, &sol.ineq_multipliers);
    println!("KKT residual {:.2e}", kkt.max());
    Ok(())
}
