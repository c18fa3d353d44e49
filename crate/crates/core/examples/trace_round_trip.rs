//! Writes an unfolding as a JSON-lines trace, reads it back and validates
//! every frame.

use std::error::Error;

use serde_json::Map;
use unlock::cli::{unfold, Method, UnfoldOptions};
use unlock::geometry::{Chain, Linkage, Point2};
use unlock::io::{read_trace, write_trace};

fn main() -> Result<(), Box<dyn Error>> {
    let linkage = Linkage::single(Chain::open(vec![
        Point2::new(0.0, 0.0),
        Point2::new(2.0, 0.0),
        Point2::new(2.0, 1.0),
    ])?);
    let opts = UnfoldOptions { method: Method::Cdr, eta: None, dt: None, max_steps: None, snapshot_every: 5 };
    let run = unfold(&linkage, &opts).map_err(|f| f.message)?;
    let bytes = write_trace(Vec::new(), run.header, &run.trace, Map::new())?;
    println!("{} bytes, {} lines", bytes.len(), bytes.iter().filter(|&&b| b == b'\n').count());
    let file = read_trace(bytes.as_slice())?;
    file.validate(1e-8)?;
    println!("{} frames, status {}", file.frames.len(), file.trailer.map(|t| t.status).unwrap_or_default());
    Ok(())
}
