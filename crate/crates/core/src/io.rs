//! Linkage files, line-delimited motion traces and SVG frames.
//!
//! A linkage file is a JSON document
//! `{"chains": [{"closed": false, "vertices": [[x, y], ...]}, ...]}` with an
//! optional `"braces": [[i, j], ...]` list of extra bars (global vertex
//! indices) used only by the analysis commands.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::flow::{MotionTrace, Outcome, StepDiagnostics};
use crate::geometry::{is_simple, Chain, GeometryError, Linkage, Point2, SegmentId, Simplicity};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{context}: {source}")]
    Structural {
        context: String,
        source: GeometryError,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("linkage is not simple: {first} meets {second}")]
    Simplicity { first: SegmentId, second: SegmentId },
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IoError {
    fn syntax(e: serde_json::Error) -> Self {
        IoError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainRecord {
    pub closed: bool,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkageFile {
    pub chains: Vec<ChainRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub braces: Vec<[usize; 2]>,
}

impl LinkageFile {
    pub fn from_linkage(linkage: &Linkage) -> Self {
        Self {
            chains: chain_records(linkage),
            braces: Vec::new(),
        }
    }

    pub fn to_linkage(&self) -> Result<Linkage, IoError> {
        let chains = self
            .chains
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let pts = c.vertices.iter().map(|&[x, y]| Point2::new(x, y)).collect();
                Chain::new(pts, c.closed).map_err(|source| IoError::Structural {
                    context: format!("chains[{k}]"),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let linkage = Linkage::new(chains).map_err(|source| IoError::Structural {
            context: "chains".into(),
            source,
        })?;
        let n = linkage.vertex_count();
        for (k, &[i, j]) in self.braces.iter().enumerate() {
            if i == j || i >= n || j >= n {
                return Err(IoError::Invalid(format!(
                    "braces[{k}]: ({i}, {j}) is not an edge on {n} vertices"
                )));
            }
        }
        Ok(linkage)
    }

    pub fn brace_pairs(&self) -> Vec<(usize, usize)> {
        self.braces.iter().map(|&[i, j]| (i, j)).collect()
    }
}

pub fn chain_records(linkage: &Linkage) -> Vec<ChainRecord> {
    linkage
        .chains()
        .iter()
        .map(|c| ChainRecord {
            closed: c.is_closed(),
            vertices: c.vertices().iter().map(|p| [p.x, p.y]).collect(),
        })
        .collect()
}

fn linkage_from_records(records: &[ChainRecord]) -> Result<Linkage, IoError> {
    LinkageFile {
        chains: records.to_vec(),
        braces: Vec::new(),
    }
    .to_linkage()
}

pub fn parse_linkage_file(text: &str) -> Result<LinkageFile, IoError> {
    let file: LinkageFile = serde_json::from_str(text).map_err(IoError::syntax)?;
    file.to_linkage()?;
    Ok(file)
}

/// Parses and checks simplicity.
pub fn parse_linkage(text: &str) -> Result<Linkage, IoError> {
    parse_linkage_with(text, true)
}

pub fn parse_linkage_with(text: &str, check_simple: bool) -> Result<Linkage, IoError> {
    let linkage = parse_linkage_file(text)?.to_linkage()?;
    if check_simple {
        check_simplicity(&linkage)?;
    }
    Ok(linkage)
}

pub fn check_simplicity(linkage: &Linkage) -> Result<(), IoError> {
    match is_simple(linkage) {
        Simplicity::Simple => Ok(()),
        Simplicity::Violation { first, second, .. } => Err(IoError::Simplicity { first, second }),
    }
}

/// Coordinates are written in shortest round-trip form, so parsing the
/// output gives back bit-identical values.
pub fn serialize_linkage(linkage: &Linkage) -> String {
    let mut s = serde_json::to_string(&LinkageFile::from_linkage(linkage)).expect("finite coordinates");
    s.push('\n');
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDiag {
    pub min_strut_slack: f64,
    pub max_bar_drift: f64,
    pub dt: f64,
}

impl From<StepDiagnostics> for FrameDiag {
    fn from(d: StepDiagnostics) -> Self {
        Self {
            min_strut_slack: d.min_strut_slack,
            max_bar_drift: d.max_bar_drift,
            dt: d.dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub method: String,
    pub params: Map<String, Value>,
}

impl TraceHeader {
    pub const FORMAT: &'static str = "unlock-trace";

    pub fn new(method: &str, params: Map<String, Value>) -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: 1,
            method: method.into(),
            params,
        }
    }
}

/// One stored frame. `diag` describes the last accepted step before the
/// frame and is null for the initial frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFrame {
    pub t: f64,
    pub chains: Vec<ChainRecord>,
    pub diag: Option<FrameDiag>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceTrailer {
    pub status: String,
    pub steps: usize,
    pub t_final: f64,
    #[serde(default)]
    pub stats: Map<String, Value>,
}

impl TraceTrailer {
    pub fn new(outcome: Outcome, steps: usize, t_final: f64, stats: Map<String, Value>) -> Self {
        Self {
            status: outcome_name(outcome).into(),
            steps,
            t_final,
            stats,
        }
    }
}

pub fn outcome_name(outcome: Outcome) -> &'static str {
    match outcome {
        Outcome::Unfolded => "unfolded",
        Outcome::MaxStepsReached => "max_steps_reached",
        Outcome::NumericalFailure(_) => "numerical_failure",
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Record {
    Header { header: TraceHeader },
    Trailer { outcome: TraceTrailer },
    Frame(TraceFrame),
}

/// Streams a trace one record per line.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, header: TraceHeader) -> Result<Self, IoError> {
        let mut w = Self { out };
        w.record(&Record::Header { header })?;
        Ok(w)
    }

    fn record(&mut self, r: &Record) -> Result<(), IoError> {
        serde_json::to_writer(&mut self.out, r).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn frame(&mut self, frame: TraceFrame) -> Result<(), IoError> {
        self.record(&Record::Frame(frame))
    }

    pub fn finish(mut self, trailer: TraceTrailer) -> Result<W, IoError> {
        self.record(&Record::Trailer { outcome: trailer })?;
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn trace_frames(trace: &MotionTrace) -> Vec<TraceFrame> {
    trace
        .frames
        .iter()
        .map(|f| TraceFrame {
            t: f.t,
            chains: chain_records(&f.linkage),
            diag: f.step.checked_sub(1).map(|s| trace.diagnostics[s].into()),
        })
        .collect()
}

pub fn write_trace<W: Write>(
    out: W,
    header: TraceHeader,
    trace: &MotionTrace,
    stats: Map<String, Value>,
) -> Result<W, IoError> {
    let mut w = TraceWriter::new(out, header)?;
    for f in trace_frames(trace) {
        w.frame(f)?;
    }
    let t_final = trace.frames.last().map_or(0.0, |f| f.t);
    w.finish(TraceTrailer::new(trace.outcome, trace.steps(), t_final, stats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub frames: Vec<TraceFrame>,
    /// Absent when the run did not complete.
    pub trailer: Option<TraceTrailer>,
}

impl TraceFile {
    pub fn linkages(&self) -> Result<Vec<Linkage>, IoError> {
        self.frames.iter().map(|f| linkage_from_records(&f.chains)).collect()
    }

    /// Every frame must be simple and keep the bar lengths of the first
    /// frame to relative tolerance `bar_tol`.
    pub fn validate(&self, bar_tol: f64) -> Result<(), IoError> {
        let linkages = self.linkages()?;
        let Some(first) = linkages.first() else {
            return Ok(());
        };
        let targets = first.bar_lengths();
        for (k, l) in linkages.iter().enumerate() {
            if let Simplicity::Violation { first, second, .. } = is_simple(l) {
                return Err(IoError::Invalid(format!("frame {k}: {first} meets {second}")));
            }
            let lengths = l.bar_lengths();
            if lengths.len() != targets.len() {
                return Err(IoError::Invalid(format!("frame {k}: bar count changed")));
            }
            for (b, (got, want)) in lengths.iter().zip(&targets).enumerate() {
                if (got - want).abs() > bar_tol * want {
                    return Err(IoError::Invalid(format!(
                        "frame {k}: bar {b} has length {got}, expected {want}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn read_trace<R: BufRead>(input: R) -> Result<TraceFile, IoError> {
    let mut header = None;
    let mut frames: Vec<TraceFrame> = Vec::new();
    let mut trailer = None;
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| IoError::Trace {
            line: lineno,
            message,
        };
        if trailer.is_some() {
            return Err(err("record after the outcome trailer".into()));
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        match record {
            Record::Header { header: h } => {
                if header.is_some() || !frames.is_empty() {
                    return Err(err("header must be the first record".into()));
                }
                if h.format != TraceHeader::FORMAT {
                    return Err(err(format!("unknown format {:?}", h.format)));
                }
                header = Some(h);
            }
            Record::Frame(f) => {
                if header.is_none() {
                    return Err(err("frame before header".into()));
                }
                if frames.last().is_some_and(|p| p.t > f.t) {
                    return Err(err(format!("frame time {} goes backwards", f.t)));
                }
                frames.push(f);
            }
            Record::Trailer { outcome } => {
                if header.is_none() {
                    return Err(err("trailer before header".into()));
                }
                trailer = Some(outcome);
            }
        }
    }
    let header = header.ok_or_else(|| IoError::Trace {
        line: 0,
        message: "missing header".into(),
    })?;
    Ok(TraceFile {
        header,
        frames,
        trailer,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewBox {
    pub min_x: f64,
    pub min_y: f64,
    pub width: f64,
    pub height: f64,
}

impl ViewBox {
    /// Bounding box of `linkage` grown by `pad` times its larger side on
    /// every side.
    pub fn around(linkage: &Linkage, pad: f64) -> Self {
        let pts = linkage.positions();
        let (mut lo, mut hi) = (pts[0], pts[0]);
        for p in &pts {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let side = (hi.x - lo.x).max(hi.y - lo.y).max(f64::MIN_POSITIVE);
        let m = pad * side;
        Self {
            min_x: lo.x - m,
            min_y: lo.y - m,
            width: hi.x - lo.x + 2.0 * m,
            height: hi.y - lo.y + 2.0 * m,
        }
    }

    /// Shared box for every frame of a trace: the final frame, padded 10%.
    pub fn for_trace(trace: &MotionTrace) -> Self {
        Self::around(trace.final_linkage(), 0.1)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min_x
            && p.x <= self.min_x + self.width
            && p.y >= self.min_y
            && p.y <= self.min_y + self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvgStyle {
    /// Output width in pixels; the height follows the view box.
    pub width_px: f64,
    pub stroke: String,
    pub vertex_fill: String,
    /// Stroke width and vertex radius as fractions of the view box's larger
    /// side.
    pub stroke_width: f64,
    pub vertex_radius: f64,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width_px: 600.0,
            stroke: "#1f4e79".into(),
            vertex_fill: "#c0392b".into(),
            stroke_width: 0.006,
            vertex_radius: 0.01,
        }
    }
}

/// y is flipped so the picture has the usual mathematical orientation.
pub fn render_svg(linkage: &Linkage, style: &SvgStyle, view: ViewBox) -> String {
    let side = view.width.max(view.height);
    let height_px = style.width_px * view.height / view.width;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="{} {} {} {}">"#,
        num(style.width_px),
        num(height_px),
        num(view.min_x),
        num(-(view.min_y + view.height)),
        num(view.width),
        num(view.height)
    );
    let _ = writeln!(
        s,
        r#"<g fill="none" stroke="{}" stroke-width="{}" stroke-linejoin="round">"#,
        style.stroke,
        num(style.stroke_width * side)
    );
    for c in linkage.chains() {
        let points: Vec<String> = c
            .vertices()
            .iter()
            .map(|p| format!("{},{}", num(p.x), num(-p.y)))
            .collect();
        let tag = if c.is_closed() { "polygon" } else { "polyline" };
        let _ = writeln!(s, r#"<{tag} points="{}"/>"#, points.join(" "));
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<g fill="{}">"#, style.vertex_fill);
    let r = num(style.vertex_radius * side);
    for p in linkage.positions() {
        let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="{r}"/>"#, num(p.x), num(-p.y));
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn num(x: f64) -> String {
    // avoid "-0" in the output
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Frame;

    #[test]
    fn parses_single_segment() {
        let l = parse_linkage(r#"{"chains":[{"closed":false,"vertices":[[0,0],[1,0]]}]}"#).unwrap();
        assert_eq!(l.chains().len(), 1);
        assert_eq!(l.vertex_count(), 2);
        assert!(!l.chains()[0].is_closed());
    }

    #[test]
    fn empty_chain_list_is_structural() {
        let e = parse_linkage(r#"{"chains":[]}"#).unwrap_err();
        assert!(matches!(e, IoError::Structural { .. }), "{e}");
        let e = parse_linkage(r#"{"chains":[{"closed":true,"vertices":[[0,0],[1,0]]}]}"#).unwrap_err();
        assert!(e.to_string().starts_with("chains[0]"), "{e}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_linkage("{\"chains\": [\n {\"closed\": false, \"vertices\": [[0, 0], [1]]}]}").unwrap_err();
        match e {
            IoError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
        let e = parse_linkage(r#"{"chains":[{"vertices":[[0,0],[1,0]]}]}"#).unwrap_err();
        assert!(e.to_string().contains("closed"), "{e}");
    }

    #[test]
    fn self_crossing_names_segments() {
        let text = r#"{"chains":[{"closed":false,"vertices":[[0,0],[2,0],[1,1],[1,-1]]}]}"#;
        match parse_linkage(text).unwrap_err() {
            IoError::Simplicity { first, second } => {
                assert_eq!((first.segment, second.segment), (0, 2));
            }
            other => panic!("{other}"),
        }
        assert!(parse_linkage_with(text, false).is_ok());
    }

    #[test]
    fn braces_are_range_checked() {
        let text = r#"{"chains":[{"closed":true,"vertices":[[0,0],[1,0],[1,1],[0,1]]}],"braces":[[0,4]]}"#;
        assert!(matches!(parse_linkage_file(text), Err(IoError::Invalid(_))));
    }

    #[test]
    fn round_trip_is_exact() {
        let l = Linkage::single(
            Chain::open(vec![
                Point2::new(0.1, 1.0 / 3.0),
                Point2::new(std::f64::consts::PI, -2.5e-17),
                Point2::new(1e300, 7.0),
            ])
            .unwrap(),
        );
        let back = parse_linkage(&serialize_linkage(&l)).unwrap();
        assert_eq!(back, l);
    }

    fn tiny_trace() -> MotionTrace {
        let a = Linkage::single(Chain::open(vec![Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(1., 1.)]).unwrap());
        let b = a
            .with_positions(&[Point2::new(0., 0.), Point2::new(1., 0.), Point2::new(1.5, 0.8660254037844386)])
            .unwrap();
        let d = StepDiagnostics {
            min_strut_slack: 0.25,
            max_bar_drift: 1e-15,
            dt: 0.5,
            rejections: 0,
        };
        MotionTrace {
            frames: vec![Frame { t: 0.0, step: 0, linkage: a }, Frame { t: 1.0, step: 2, linkage: b }],
            outcome: Outcome::MaxStepsReached,
            diagnostics: vec![d, StepDiagnostics { dt: 0.25, ..d }],
        }
    }

    #[test]
    fn trace_round_trip() {
        let trace = tiny_trace();
        let mut params = Map::new();
        params.insert("eta".into(), 0.1.into());
        let bytes = write_trace(Vec::new(), TraceHeader::new("cdr", params), &trace, Map::new()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().contains(r#""diag":null"#));
        let file = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(file.header.method, "cdr");
        assert_eq!(file.frames.len(), 2);
        assert_eq!(file.frames[1].diag.unwrap().dt, 0.25);
        let trailer = file.trailer.as_ref().unwrap();
        assert_eq!((trailer.status.as_str(), trailer.steps), ("max_steps_reached", 2));
        let ls = file.linkages().unwrap();
        assert_eq!(ls[1], trace.frames[1].linkage);
        file.validate(1e-12).unwrap();
    }

    #[test]
    fn truncated_trace_has_no_trailer() {
        let bytes = write_trace(Vec::new(), TraceHeader::new("cdr", Map::new()), &tiny_trace(), Map::new()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        let file = read_trace(cut.join("\n").as_bytes()).unwrap();
        assert!(file.trailer.is_none());
        assert_eq!(file.frames.len(), 2);
    }

    #[test]
    fn trace_reader_rejects_disorder() {
        let bytes = write_trace(Vec::new(), TraceHeader::new("cdr", Map::new()), &tiny_trace(), Map::new()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let swapped = [lines[0], lines[2], lines[1]].join("\n");
        assert!(matches!(read_trace(swapped.as_bytes()), Err(IoError::Trace { line: 3, .. })));
        let headless = lines[1..].join("\n");
        assert!(read_trace(headless.as_bytes()).is_err());
        let after = [lines[0], lines[3], lines[1]].join("\n");
        assert!(read_trace(after.as_bytes()).is_err());
    }

    #[test]
    fn validate_catches_bar_drift() {
        let mut trace = tiny_trace();
        let l = &trace.frames[1].linkage;
        let stretched: Vec<Point2> = l.positions().iter().map(|p| *p * 1.01).collect();
        trace.frames[1].linkage = l.with_positions(&stretched).unwrap();
        let bytes = write_trace(Vec::new(), TraceHeader::new("cdr", Map::new()), &trace, Map::new()).unwrap();
        let file = read_trace(bytes.as_slice()).unwrap();
        assert!(file.validate(1e-8).is_err());
    }

    #[test]
    fn svg_segment_and_triangle() {
        let seg = Linkage::single(Chain::open(vec![Point2::new(0., 0.), Point2::new(1., 0.)]).unwrap());
        let svg = render_svg(&seg, &SvgStyle::default(), ViewBox::around(&seg, 0.1));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<polygon").count(), 0);
        assert!(svg.contains(r#"points="0,0 1,0""#), "{svg}");
        assert_eq!(svg.matches("<circle").count(), 2);

        let tri = Linkage::single(
            Chain::closed(vec![Point2::new(0., 0.), Point2::new(2., 0.), Point2::new(1., 1.)]).unwrap(),
        );
        let view = ViewBox::around(&tri, 0.1);
        let svg = render_svg(&tri, &SvgStyle::default(), view);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert_eq!(svg, render_svg(&tri, &SvgStyle::default(), view));
        assert!((view.min_x + 0.2).abs() < 1e-15 && (view.width - 2.4).abs() < 1e-15);
    }
}
