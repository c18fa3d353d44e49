//! Unfolds the spiral from the sample data and writes the first and last
//! frames as SVG in a shared view box.

use std::error::Error;
use std::path::PathBuf;

use unlock::expansion::ExpansionParams;
use unlock::flow::{run_unfold, FlowParams};
use unlock::io::{parse_linkage, render_svg, SvgStyle, ViewBox};

fn main() -> Result<(), Box<dyn Error>> {
    let input: PathBuf = [env!("CARGO_MANIFEST_DIR"), "examples", "data", "spiral.json"].iter().collect();
    let linkage = parse_linkage(&std::fs::read_to_string(input)?)?;
    let trace = run_unfold(
        &linkage,
        &FlowParams::for_linkage(&linkage),
        &ExpansionParams::for_bar_lengths(&linkage.bar_lengths()),
    )?;
    let view = ViewBox::for_trace(&trace);
    let out = std::env::temp_dir();
    for (name, frame) in [("first", &trace.frames[0]), ("last", trace.frames.last().unwrap())] {
        let path = out.join(format!("spiral_{name}.svg"));
        std::fs::write(&path, render_svg(&frame.linkage, &SvgStyle::default(), view))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
