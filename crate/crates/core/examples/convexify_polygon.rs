//! Opens a dart-shaped polygon until it is convex.

use std::error::Error;

use unlock::expansion::ExpansionParams;
use unlock::flow::{run_unfold, FlowParams};
use unlock::geometry::{is_convexified, Chain, Linkage, Point2};

fn main() -> Result<(), Box<dyn Error>> {
    let dart = vec![Point2::new(0.0, 0.0), Point2::new(4.0, 2.0), Point2::new(0.0, 4.0), Point2::new(1.2, 2.0)];
    let linkage = Linkage::single(Chain::closed(dart)?);
    let trace = run_unfold(
        &linkage,
        &FlowParams::for_linkage(&linkage),
        &ExpansionParams::for_bar_lengths(&linkage.bar_lengths()),
    )?;
    let last = trace.final_linkage();
    println!("outcome {:?} at t = {:.4}", trace.outcome, trace.frames.last().unwrap().t);
    println!("convex: {}", is_convexified(&last.chains()[0], 1e-3)?);
    for p in last.positions() {
        println!("  {p}");
    }
    Ok(())
}
