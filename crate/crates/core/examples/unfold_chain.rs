//! Straightens an open chain with the expansive flow and prints how far
//! the trace is from the invariants.

use std::error::Error;

use unlock::expansion::ExpansionParams;
use unlock::flow::{check_monotone_expansion, run_unfold, FlowParams};
use unlock::geometry::{vertex_angle, Chain, Linkage, Point2};

fn main() -> Result<(), Box<dyn Error>> {
    let zigzag = vec![
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.2, 1.1),
        Point2::new(0.3, 0.4),
    ];
    let linkage = Linkage::single(Chain::open(zigzag)?);
    let flow = FlowParams::for_linkage(&linkage);
    let exp = ExpansionParams::for_bar_lengths(&linkage.bar_lengths());
    let trace = run_unfold(&linkage, &flow, &exp)?;

    println!("outcome {:?} after {} steps, {} frames", trace.outcome, trace.steps(), trace.frames.len());
    let last = trace.final_linkage();
    let v = last.positions();
    for k in 1..v.len() - 1 {
        println!("angle at {k}: {:.6}", vertex_angle(v[k - 1], v[k], v[k + 1]));
    }
    let monotone = check_monotone_expansion(&trace, 1e-6);
    println!("largest pairwise distance decrease {:.2e}", monotone.max_violation);
    Ok(())
}
