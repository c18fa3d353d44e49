//! Looks for a nonzero equilibrium stress on a chain framework and on a
//! square braced by both diagonals.

use std::error::Error;

use unlock::framework::{build_framework, find_equilibrium_stress, Edge, EdgeKind, Framework};
use unlock::geometry::{Chain, Linkage, Point2};

fn main() -> Result<(), Box<dyn Error>> {
    let chain = Linkage::single(Chain::open(vec![
        Point2::new(0.0, 0.0),
        Point2::new(2.0, 0.0),
        Point2::new(2.0, 1.0),
        Point2::new(0.5, 1.5),
    ])?);
    let fw = build_framework(&chain)?;
    match find_equilibrium_stress(&chain.positions(), &fw)? {
        None => println!("chain: only the zero stress"),
        Some(s) => println!("chain: stress {:?}", s.omega),
    }

    let square = vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(1., 1.), Point2::new(0., 1.)];
    let edges: Vec<Edge> = [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2), (1, 3)]
        .iter()
        .map(|&(i, j)| Edge { i, j, kind: EdgeKind::Bar })
        .collect();
    let braced = Framework::from_edges(4, &edges)?;
    if let Some(s) = find_equilibrium_stress(&square, &braced)? {
        for (e, w) in braced.edges().iter().zip(&s.omega) {
            println!("braced square ({}, {}): {w:+.4}", e.i, e.j);
        }
        println!("residual {:.2e}", s.equilibrium_residual(&square, &braced));
    }
    Ok(())
}
