mod common;

use rand::Rng;
use unlock::qp::{kkt_residual, qp_solve};

#[test]
fn matches_exhaustive_enumeration() {
    let mut rng = common::rng(7);
    for trial in 0..100 {
        let dim = 2 * rng.gen_range(2..=4);
        let neq = rng.gen_range(0..=2);
        let nineq = rng.gen_range(1..=12);
        let problem = common::random_qp(&mut rng, dim, neq, nineq);
        let sol = qp_solve(&problem, 1e-12, 1000).unwrap();
        let oracle = common::enumerate_qp(&problem, 1e-9).expect("feasible by construction");
        let gap = (&sol.x - &oracle).amax();
        assert!(gap <= 1e-8, "trial {trial}: gap {gap}");
        let kkt = kkt_residual(&problem, &sol.x, &sol.eq_multipliers, &sol.ineq_multipliers);
        assert!(kkt.max() <= 1e-8, "trial {trial}: {kkt:?}");
    }
}
