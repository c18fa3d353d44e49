//! Lifts the stressed braced square to a polyhedral terrain.

use std::error::Error;

use unlock::framework::{
    find_equilibrium_stress, maxwell_cremona_lift, orient_for_peak, planarize, verify_lift, Edge, EdgeKind, Framework,
};
use unlock::geometry::Point2;

fn main() -> Result<(), Box<dyn Error>> {
    let p = vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(1., 1.), Point2::new(0., 1.)];
    let edges: Vec<Edge> = [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2), (1, 3)]
        .iter()
        .map(|&(i, j)| Edge { i, j, kind: EdgeKind::Bar })
        .collect();
    let fw = Framework::from_edges(4, &edges)?;
    let mut stress = find_equilibrium_stress(&p, &fw)?.ok_or("no stress")?;
    let mut pf = planarize(&p, &fw, &stress)?;
    let mut terrain = maxwell_cremona_lift(&pf)?;
    if let Some(flipped) = orient_for_peak(&fw, &stress, &terrain) {
        stress = flipped;
        pf = planarize(&p, &fw, &stress)?;
        terrain = maxwell_cremona_lift(&pf)?;
    }
    println!("{} faces, {} crossings", pf.face_count(), pf.crossing_count());
    for (v, h) in pf.vertices.iter().zip(&terrain.vertex_heights) {
        println!("  {v} height {h:+.4}");
    }
    let report = verify_lift(&pf, &terrain, 1e-9);
    println!("closure residual {:.2e}, flat {}", report.max_closure_residual, report.is_flat);
    Ok(())
}
