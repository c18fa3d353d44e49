//! Command-line front end. Results go to standard output as JSON (or as a
//! trace for `unfold` without `--out`); diagnostics go to standard error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::expansion::ExpansionParams;
use crate::flow::{run_unfold, FlowError, FlowParams, MotionTrace, Outcome};
use crate::framework::{
    build_framework_unchecked, classify_taut_struts, find_equilibrium_stress, maxwell_cremona_lift,
    orient_for_peak, planarize, verify_lift, EdgeKind, Framework, StressAssignment,
};
use crate::geometry::{Linkage, Point2};
use crate::io::{
    check_simplicity, parse_linkage_file, render_svg, write_trace, IoError, LinkageFile, SvgStyle,
    TraceHeader, ViewBox,
};
use crate::pseudotri::{
    build_pointed_pseudotriangulation, make_mechanism, run_streinu_unfold,
    verify_pseudotriangulation, PtError, PtParams,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Tolerance for the lifting checks of `certify`.
const LIFT_TOL: f64 = 1e-9;

#[derive(Parser, Debug)]
#[command(name = "unlock", version, about = "Unfold planar linkages by expansive motions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Cdr,
    Streinu,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an unfolding motion and write its trace.
    Unfold {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "cdr")]
        method: Method,
        /// Strut expansion demand (cdr only); defaults to a tenth of the
        /// shortest bar.
        #[arg(long)]
        eta: Option<f64>,
        /// Initial and largest step size (cdr only).
        #[arg(long)]
        dt: Option<f64>,
        /// Step limit: for the whole run (cdr) or per mechanism section
        /// (streinu).
        #[arg(long)]
        max_steps: Option<usize>,
        /// Trace file; the trace goes to standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for one SVG per stored frame.
        #[arg(long)]
        svg_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
    },
    /// Framework statistics and the equilibrium-stress verdict.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        allow_nonsimple: bool,
    },
    /// Planarize, lift and verify an equilibrium stress.
    Certify {
        #[arg(long)]
        input: PathBuf,
        /// JSON array of stresses in framework edge order; searched for
        /// when omitted.
        #[arg(long)]
        stress: Option<PathBuf>,
        #[arg(long)]
        allow_nonsimple: bool,
    },
    /// Build and verify a pointed pseudotriangulation containing the bars.
    Pt {
        #[arg(long)]
        input: PathBuf,
        /// Perturb every coordinate uniformly by at most this much.
        #[arg(long)]
        jitter: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        allow_nonsimple: bool,
    },
}

/// A failed command: exit code plus message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn numerical(message: impl ToString) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(_) => Failure::input(format!("i/o error: {e}")),
            _ => Failure::input(e),
        }
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match run(&cli.command, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Unfold {
            input,
            method,
            eta,
            dt,
            max_steps,
            out: trace_path,
            svg_dir,
            snapshot_every,
        } => {
            let file = load(input)?;
            let linkage = file.to_linkage()?;
            check_simplicity(&linkage)?;
            let opts = UnfoldOptions {
                method: *method,
                eta: *eta,
                dt: *dt,
                max_steps: *max_steps,
                snapshot_every: *snapshot_every,
            };
            let run = unfold(&linkage, &opts)?;
            let bytes = write_trace(Vec::new(), run.header, &run.trace, run.stats.clone())?;
            if let Some(dir) = svg_dir {
                write_svgs(dir, &run.trace)?;
            }
            let summary = json!({
                "method": method_name(*method),
                "outcome": crate::io::outcome_name(run.trace.outcome),
                "steps": run.trace.steps(),
                "frames": run.trace.frames.len(),
                "t_final": run.trace.frames.last().map_or(0.0, |f| f.t),
                "stats": run.stats,
            });
            let mut summary = serde_json::to_vec_pretty(&summary).expect("serializable");
            summary.push(b'\n');
            match trace_path {
                Some(p) => {
                    fs::write(p, &bytes).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
                    out.write_all(&summary).map_err(Failure::input)?;
                }
                None => {
                    out.write_all(&bytes).map_err(Failure::input)?;
                    err.write_all(&summary).map_err(Failure::input)?;
                }
            }
            Ok(match run.trace.outcome {
                Outcome::Unfolded => EXIT_OK,
                _ => EXIT_NUMERICAL,
            })
        }
        Command::Analyze {
            input,
            allow_nonsimple,
        } => {
            let v = analyze(&load(input)?, *allow_nonsimple)?;
            emit(out, &v)
        }
        Command::Certify {
            input,
            stress,
            allow_nonsimple,
        } => {
            let stress = match stress {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
                    let omega: Vec<f64> = serde_json::from_str(&text)
                        .map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
                    Some(omega)
                }
                None => None,
            };
            let v = certify(&load(input)?, stress, *allow_nonsimple)?;
            emit(out, &v)
        }
        Command::Pt {
            input,
            jitter,
            seed,
            allow_nonsimple,
        } => {
            let v = pt(&load(input)?, *jitter, *seed, *allow_nonsimple)?;
            emit(out, &v)
        }
    }
}

fn emit(out: &mut dyn Write, v: &Value) -> Result<i32, Failure> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    out.write_all(s.as_bytes()).map_err(Failure::input)?;
    Ok(EXIT_OK)
}

fn load(path: &Path) -> Result<LinkageFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    parse_linkage_file(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Cdr => "cdr",
        Method::Streinu => "streinu",
    }
}

#[derive(Clone, Debug)]
pub struct UnfoldOptions {
    pub method: Method,
    pub eta: Option<f64>,
    pub dt: Option<f64>,
    pub max_steps: Option<usize>,
    pub snapshot_every: usize,
}

pub struct UnfoldRun {
    pub header: TraceHeader,
    pub trace: MotionTrace,
    pub stats: Map<String, Value>,
}

fn params_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

/// Runs the chosen backend with CLI-level defaults.
pub fn unfold(linkage: &Linkage, opts: &UnfoldOptions) -> Result<UnfoldRun, Failure> {
    match opts.method {
        Method::Cdr => {
            let mut flow = FlowParams::for_linkage(linkage);
            let mut exp = ExpansionParams::for_bar_lengths(&linkage.bar_lengths());
            if let Some(eta) = opts.eta {
                exp.eta = eta;
            }
            if let Some(dt) = opts.dt {
                flow.dt_init = dt;
                flow.dt_min = flow.dt_min.min(dt);
            }
            if let Some(n) = opts.max_steps {
                flow.max_steps = n;
            }
            flow.snapshot_every = opts.snapshot_every;
            exp.validate().map_err(Failure::input)?;
            flow.validate().map_err(Failure::input)?;
            let header = TraceHeader::new(
                "cdr",
                params_map(json!({
                    "eta": exp.eta,
                    "dt_init": flow.dt_init,
                    "dt_min": flow.dt_min,
                    "max_steps": flow.max_steps,
                    "snapshot_every": flow.snapshot_every,
                    "straight_tol": flow.straight_tol,
                    "convex_tol": flow.convex_tol,
                    "bar_tol": flow.bar_tol,
                    "expand_tol": flow.expand_tol,
                    "max_step_displacement": flow.max_step_displacement,
                })),
            );
            let trace = run_unfold(linkage, &flow, &exp).map_err(|e| match e {
                FlowError::InvalidParams(_) => Failure::input(e),
                _ => Failure::numerical(e),
            })?;
            let rejections: usize = trace.diagnostics.iter().map(|d| d.rejections).sum();
            let stats = params_map(json!({ "rejections": rejections }));
            Ok(UnfoldRun { header, trace, stats })
        }
        Method::Streinu => {
            if opts.eta.is_some() || opts.dt.is_some() {
                log::warn!("--eta and --dt only apply to the cdr method; ignored");
            }
            let mut params = PtParams::for_linkage(linkage);
            if let Some(n) = opts.max_steps {
                params.max_steps_per_section = n;
            }
            if opts.snapshot_every == 0 {
                return Err(Failure::input("snapshot_every must be at least 1"));
            }
            params.snapshot_every = opts.snapshot_every;
            let header = TraceHeader::new(
                "streinu",
                params_map(json!({
                    "max_steps_per_section": params.max_steps_per_section,
                    "max_sections": params.max_sections,
                    "snapshot_every": params.snapshot_every,
                    "straight_tol": params.straight_tol,
                    "convex_tol": params.convex_tol,
                    "bar_tol": params.bar_tol,
                    "expand_tol": params.expand_tol,
                    "event_tol": params.event_tol,
                    "max_step_displacement": params.max_step_displacement,
                })),
            );
            let run = run_streinu_unfold(linkage, &params).map_err(pt_failure)?;
            let stats = params_map(json!({
                "sections": run.sections,
                "flips": run.flips,
                "freezes": run.freezes,
                "rebuilds": run.rebuilds,
            }));
            Ok(UnfoldRun {
                header,
                trace: run.trace,
                stats,
            })
        }
    }
}

fn pt_failure(e: PtError) -> Failure {
    match e {
        PtError::DegeneratePosition(..) => {
            Failure::input(format!("{e}; the pseudotriangulation needs general position (try pt --jitter)"))
        }
        PtError::NotSimple | PtError::BarsCross(..) | PtError::MultipleChains(_) => Failure::input(e),
        _ => Failure::numerical(e),
    }
}

pub fn svg_name(k: usize) -> String {
    format!("frame_{k:05}.svg")
}

fn write_svgs(dir: &Path, trace: &MotionTrace) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    let view = ViewBox::for_trace(trace);
    let style = SvgStyle::default();
    for (k, f) in trace.frames.iter().enumerate() {
        let path = dir.join(svg_name(k));
        fs::write(&path, render_svg(&f.linkage, &style, view))
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn framework_for(file: &LinkageFile, allow_nonsimple: bool) -> Result<(Linkage, Framework), Failure> {
    let linkage = file.to_linkage()?;
    if !allow_nonsimple {
        check_simplicity(&linkage)?;
    }
    let fw = build_framework_unchecked(&linkage, &file.brace_pairs()).map_err(Failure::input)?;
    Ok((linkage, fw))
}

fn edge_list(fw: &Framework) -> Value {
    fw.edges()
        .iter()
        .map(|e| {
            let kind = match e.kind {
                EdgeKind::Bar => "bar",
                EdgeKind::Strut => "strut",
                EdgeKind::TautStrut => "taut_strut",
            };
            json!([e.i, e.j, kind])
        })
        .collect()
}

pub fn analyze(file: &LinkageFile, allow_nonsimple: bool) -> Result<Value, Failure> {
    let (linkage, fw) = framework_for(file, allow_nonsimple)?;
    let config = linkage.positions();
    let fw = classify_taut_struts(&config, &fw, FlowParams::default().taut_tol());
    let stress = find_equilibrium_stress(&config, &fw).map_err(Failure::numerical)?;
    let mut v = json!({
        "n": fw.vertex_count(),
        "bars": fw.count(EdgeKind::Bar),
        "struts": fw.count(EdgeKind::Strut) + fw.count(EdgeKind::TautStrut),
        "taut_struts": fw.count(EdgeKind::TautStrut),
    });
    match stress {
        None => {
            v["verdict"] = "no nonzero equilibrium stress".into();
        }
        Some(s) => {
            v["verdict"] = "nonzero equilibrium stress".into();
            v["witness"] = json!({
                "edges": edge_list(&fw),
                "omega": s.omega,
                "equilibrium_residual": s.equilibrium_residual(&config, &fw),
                "min_strut_stress": finite_or_null(s.min_strut_stress(&fw)),
            });
        }
    }
    Ok(v)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        x.into()
    } else {
        Value::Null
    }
}

pub fn certify(file: &LinkageFile, stress: Option<Vec<f64>>, allow_nonsimple: bool) -> Result<Value, Failure> {
    let (linkage, fw) = framework_for(file, allow_nonsimple)?;
    let config = linkage.positions();
    let (stress, source) = match stress {
        Some(omega) => {
            if omega.len() != fw.edges().len() {
                return Err(Failure::input(format!(
                    "stress has {} entries, framework has {} edges",
                    omega.len(),
                    fw.edges().len()
                )));
            }
            (StressAssignment::new(omega), "given")
        }
        None => match find_equilibrium_stress(&config, &fw).map_err(Failure::numerical)? {
            Some(s) => (s, "found"),
            None => (StressAssignment::zero(fw.edges().len()), "zero"),
        },
    };
    let mut pf = planarize(&config, &fw, &stress).map_err(Failure::numerical)?;
    let mut terrain = maxwell_cremona_lift(&pf).map_err(Failure::numerical)?;
    let mut stress = stress;
    if source != "given" {
        if let Some(flipped) = orient_for_peak(&fw, &stress, &terrain) {
            pf = planarize(&config, &fw, &flipped).map_err(Failure::numerical)?;
            terrain = maxwell_cremona_lift(&pf).map_err(Failure::numerical)?;
            stress = flipped;
        }
    }
    let report = verify_lift(&pf, &terrain, LIFT_TOL);
    Ok(json!({
        "stress_source": source,
        "edges": edge_list(&fw),
        "omega": stress.omega,
        "faces": pf.face_count(),
        "crossings": pf.crossing_count(),
        "closure_residual": report.max_closure_residual,
        "is_flat": report.is_flat,
        "mountain_valley_consistent": report.mountain_valley_consistent,
        "vertex_heights": terrain.vertex_heights[..pf.original_vertices].to_vec(),
    }))
}

pub fn jittered(points: &[Point2], eps: f64, seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points
        .iter()
        .map(|p| Point2::new(p.x + rng.gen_range(-eps..=eps), p.y + rng.gen_range(-eps..=eps)))
        .collect()
}

pub fn pt(file: &LinkageFile, jitter: Option<f64>, seed: u64, allow_nonsimple: bool) -> Result<Value, Failure> {
    let linkage = file.to_linkage()?;
    if !allow_nonsimple {
        check_simplicity(&linkage)?;
    }
    let mut points = linkage.positions();
    if let Some(eps) = jitter {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Failure::input("jitter must be a nonnegative number"));
        }
        points = jittered(&points, eps, seed);
    }
    let bars = linkage.bars();
    let ppt = build_pointed_pseudotriangulation(&points, &bars).map_err(pt_failure)?;
    let report = verify_pseudotriangulation(&points, &ppt);
    let mut v = json!({
        "n": ppt.n,
        "edges": ppt.edges,
        "bars": ppt.bars,
        "faces": ppt.faces.len(),
        "report": {
            "edge_count_ok": report.edge_count_ok,
            "pointed_ok": report.pointed_ok,
            "faces_ok": report.faces_ok,
            "non_crossing_ok": report.non_crossing_ok,
            "bars_ok": report.bars_ok,
            "all_ok": report.all_ok(),
        },
    });
    if jitter.is_some() {
        v["positions"] = points.iter().map(|p| json!([p.x, p.y])).collect();
    }
    v["mechanism"] = match make_mechanism(&ppt, &points, None) {
        Ok(mech) => json!({
            "removed_edge": mech.removed_edge,
            "pin": mech.pin,
            "dof": 1,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    if !report.all_ok() {
        return Err(Failure::numerical(format!(
            "pseudotriangulation failed verification: {}",
            serde_json::to_string(&v["report"]).expect("serializable")
        )));
    }
    Ok(v)
}
