//! Builds a pointed pseudotriangulation around a chain and turns it into a
//! one degree of freedom expansive mechanism.

use std::error::Error;

use unlock::geometry::{Chain, Linkage, Point2};
use unlock::pseudotri::{build_pointed_pseudotriangulation, make_mechanism, mechanism_velocity, verify_pseudotriangulation};

fn main() -> Result<(), Box<dyn Error>> {
    let pts = vec![
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.3),
        Point2::new(1.4, 1.2),
        Point2::new(0.5, 1.5),
        Point2::new(0.4, 0.7),
        Point2::new(-0.6, 1.1),
    ];
    let linkage = Linkage::single(Chain::open(pts.clone())?);
    let pt = build_pointed_pseudotriangulation(&pts, &linkage.bars())?;
    println!("{} edges for {} points, {} faces", pt.edges.len(), pts.len(), pt.faces.len());
    println!("{:?}", verify_pseudotriangulation(&pts, &pt));

    let mech = make_mechanism(&pt, &pts, None)?;
    println!("removed hull edge {:?}, pinned {:?}", mech.removed_edge, mech.pin);
    let field = mechanism_velocity(&pts, &mech)?;
    for (k, v) in field.v.iter().enumerate() {
        println!("  v[{k}] = {v}");
    }
    Ok(())
}
