//! Straightens a chain by flowing pseudotriangulation mechanisms from one
//! alignment event to the next.

use std::error::Error;

use unlock::geometry::{Chain, Linkage, Point2};
use unlock::pseudotri::{run_streinu_unfold, PtParams};

fn main() -> Result<(), Box<dyn Error>> {
    let spiral: Vec<Point2> = (0..9)
        .map(|k| {
            let a = 0.9 * k as f64;
            let r = 0.4 + 0.35 * a;
            Point2::new(r * a.cos(), r * a.sin())
        })
        .collect();
    let linkage = Linkage::single(Chain::open(spiral)?);
    let run = run_streinu_unfold(&linkage, &PtParams::for_linkage(&linkage))?;
    println!("outcome {:?}", run.trace.outcome);
    println!(
        "{} sections, {} flips, {} freezes, {} rebuilds, {} steps",
        run.sections,
        run.flips,
        run.freezes,
        run.rebuilds,
        run.trace.steps()
    );
    Ok(())
}
