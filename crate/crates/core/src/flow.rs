//! Time integration of the expansive velocity field.
//!
//! Each step classifies taut struts, holds straight joints rigid, integrates
//! the field (RK4 with the field re-solved at every stage), projects bar
//! lengths back onto their targets and validates the result. A rejected
//! step is retried with half the step size.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expansion::{
    certificate, expansive_velocity_barrier_with, expansive_velocity_with, ExpansionError,
    ExpansionParams, VelocityField,
};
use crate::framework::{
    build_framework, classify_taut_struts, straight_vertices, EdgeKind, Framework, FrameworkError,
};
use crate::geometry::{is_convexified, is_simple, Chain, Linkage, Point2};

/// Relative bar-length accuracy the projection aims for.
pub const PROJECTION_TOL: f64 = 1e-13;
const PROJECTION_MAX_ITERS: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("step size fell below {dt_min:e} with validation still failing")]
    StepSizeUnderflow { dt_min: f64 },
    #[error("bar-length projection diverged (relative error {0:e})")]
    ProjectionDiverged(f64),
    #[error("invalid flow parameters: {0}")]
    InvalidParams(&'static str),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Framework(#[from] FrameworkError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub dt_init: f64,
    pub dt_min: f64,
    pub max_steps: usize,
    /// Radians.
    pub straight_tol: f64,
    /// Radians.
    pub convex_tol: f64,
    /// Relative.
    pub bar_tol: f64,
    /// Absolute decrease of any pairwise distance tolerated in one step.
    pub expand_tol: f64,
    pub snapshot_every: usize,
    pub integrator: Integrator,
    /// Largest vertex displacement per step, as a fraction of the shortest
    /// bar. Infinity disables the cap.
    pub max_step_displacement: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            dt_init: 1.0,
            dt_min: 1e-12,
            max_steps: 20_000,
            straight_tol: 1e-3,
            convex_tol: 1e-3,
            bar_tol: 1e-8,
            expand_tol: 1e-9,
            snapshot_every: 10,
            integrator: Integrator::Rk4,
            max_step_displacement: 0.02,
        }
    }
}

impl FlowParams {
    /// Defaults with `expand_tol` scaled to the linkage's coordinates.
    pub fn for_linkage(linkage: &Linkage) -> Self {
        Self {
            expand_tol: 1e-9 * linkage.scale(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt_init > 0.0 && self.dt_min > 0.0) {
            return Err(FlowError::InvalidParams("step sizes must be positive"));
        }
        if self.dt_min > self.dt_init {
            return Err(FlowError::InvalidParams("dt_min exceeds dt_init"));
        }
        let tols = [self.straight_tol, self.convex_tol, self.bar_tol, self.expand_tol];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(FlowError::InvalidParams("tolerances must be positive"));
        }
        if self.snapshot_every == 0 {
            return Err(FlowError::InvalidParams("snapshot_every must be at least 1"));
        }
        if !(self.max_step_displacement > 0.0) {
            return Err(FlowError::InvalidParams("max_step_displacement must be positive"));
        }
        Ok(())
    }

    /// Angle tolerance below which a joint counts as straight during the
    /// flow. Half the termination tolerance, so frozen joints never block
    /// termination.
    pub fn taut_tol(&self) -> f64 {
        0.5 * self.straight_tol.min(self.convex_tol)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub min_strut_slack: f64,
    pub max_bar_drift: f64,
    pub dt: f64,
    pub rejections: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub linkage: Linkage,
    pub dt_used: f64,
    pub diagnostics: StepDiagnostics,
    /// The field vanished; the configuration is unchanged.
    pub stationary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    /// Accepted steps taken before this frame.
    pub step: usize,
    pub linkage: Linkage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Unfolded,
    MaxStepsReached,
    NumericalFailure(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrace {
    pub frames: Vec<Frame>,
    pub outcome: Outcome,
    /// One entry per accepted step.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl MotionTrace {
    pub fn steps(&self) -> usize {
        self.diagnostics.len()
    }

    pub fn final_linkage(&self) -> &Linkage {
        &self.frames.last().expect("trace has a first frame").linkage
    }
}

/// Framework for the current configuration plus rigidity rows for straight
/// joints. A joint `m` between chain neighbours `a` and `b` is held at fixed
/// coordinates `(s, t)` in the frame spanned by `p_b - p_a`:
/// `v_m = (1 - s) v_a + s v_b + t rot90(v_b - v_a)`.
/// Struts touching a held joint, and struts inside a chain that is already
/// convex, only have to not shrink.
pub fn constrained_framework(
    config: &[Point2],
    base: &Framework,
    flow: &FlowParams,
) -> (Framework, DMatrix<f64>) {
    let tol = flow.taut_tol();
    let mut fw = classify_taut_struts(config, base, tol);
    let straight = straight_vertices(config, base, tol);
    let mut rows: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    let mut settled = vec![false; base.vertex_count()];
    for c in base.chains() {
        if c.closed {
            let pts = config[c.start..c.start + c.len].to_vec();
            let chain = Chain::closed(pts);
            if chain.is_ok_and(|ch| is_convexified(&ch, flow.convex_tol).unwrap_or(false)) {
                settled[c.start..c.start + c.len].iter_mut().for_each(|s| *s = true);
            }
        }
        for k in 0..c.len {
            let m = c.start + k;
            if !straight[m] {
                continue;
            }
            let a = c.start + (k + c.len - 1) % c.len;
            let b = c.start + (k + 1) % c.len;
            let w = config[b] - config[a];
            let r = config[m] - config[a];
            let s = r.dot(w) / w.norm_squared();
            let t = r.dot(w.rot90()) / w.norm_squared();
            rows.push((m, a, b, s, t));
        }
    }
    let n = base.vertex_count();
    let mut extra = DMatrix::zeros(2 * rows.len(), 2 * n);
    for (r, &(m, a, b, s, t)) in rows.iter().enumerate() {
        let (x, y) = (2 * r, 2 * r + 1);
        extra[(x, 2 * m)] = 1.0;
        extra[(x, 2 * a)] = -(1.0 - s);
        extra[(x, 2 * b)] = -s;
        extra[(x, 2 * b + 1)] = t;
        extra[(x, 2 * a + 1)] = -t;
        extra[(y, 2 * m + 1)] = 1.0;
        extra[(y, 2 * a + 1)] = -(1.0 - s);
        extra[(y, 2 * b + 1)] = -s;
        extra[(y, 2 * b)] = -t;
        extra[(y, 2 * a)] = t;
    }
    for e in 0..fw.edges().len() {
        let edge = fw.edges()[e];
        if edge.kind != EdgeKind::Strut {
            continue;
        }
        let same_settled = settled[edge.i] && settled[edge.j] && same_chain(base, edge.i, edge.j);
        if straight[edge.i] || straight[edge.j] || same_settled {
            fw.set_strut_kind(e, EdgeKind::TautStrut);
        }
    }
    (fw, extra)
}

fn same_chain(fw: &Framework, i: usize, j: usize) -> bool {
    fw.chains()
        .iter()
        .any(|c| (c.start..c.start + c.len).contains(&i) && (c.start..c.start + c.len).contains(&j))
}

fn field(
    config: &[Point2],
    fw: &Framework,
    extra: &DMatrix<f64>,
    exp: &ExpansionParams,
) -> Result<VelocityField, ExpansionError> {
    if exp.barrier_weight > 0.0 {
        expansive_velocity_barrier_with(config, fw, exp, Some(extra))
    } else {
        expansive_velocity_with(config, fw, exp, Some(extra))
    }
}

fn advance(x: &[Point2], v: &[Point2], h: f64) -> Vec<Point2> {
    x.iter().zip(v).map(|(p, q)| *p + *q * h).collect()
}

fn integrate(
    x: &[Point2],
    k1: &[Point2],
    fw: &Framework,
    extra: &DMatrix<f64>,
    exp: &ExpansionParams,
    integrator: Integrator,
    dt: f64,
) -> Result<Vec<Point2>, ExpansionError> {
    match integrator {
        Integrator::Euler => Ok(advance(x, k1, dt)),
        Integrator::Rk4 => {
            let k2 = field(&advance(x, k1, dt / 2.0), fw, extra, exp)?.v;
            let k3 = field(&advance(x, &k2, dt / 2.0), fw, extra, exp)?.v;
            let k4 = field(&advance(x, &k3, dt), fw, extra, exp)?.v;
            Ok((0..x.len())
                .map(|i| x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0))
                .collect())
        }
    }
}

/// Bars of a framework as index pairs, in edge order.
pub fn framework_bars(fw: &Framework) -> Vec<(usize, usize)> {
    fw.edges()
        .iter()
        .filter(|e| e.kind == EdgeKind::Bar)
        .map(|e| (e.i, e.j))
        .collect()
}

pub fn max_relative_length_error(config: &[Point2], bars: &[(usize, usize)], targets: &[f64]) -> f64 {
    bars.iter()
        .zip(targets)
        .map(|(&(i, j), &l)| (config[i].dist(config[j]) - l).abs() / l)
        .fold(0.0, f64::max)
}

/// Gauss-Newton on `|p_i - p_j| - L_ij`, taking the least-norm correction
/// each iteration. Returns the projected configuration and the number of
/// iterations used.
pub fn project_bar_lengths(
    config: &[Point2],
    bars: &[(usize, usize)],
    targets: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<Point2>, usize), FlowError> {
    let n = config.len();
    let mut x = config.to_vec();
    let mut err = max_relative_length_error(&x, bars, targets);
    let mut iters = 0;
    while err > tol {
        if iters == max_iters || !err.is_finite() {
            return Err(FlowError::ProjectionDiverged(err));
        }
        let mut jac = DMatrix::zeros(bars.len(), 2 * n);
        let mut res = DVector::zeros(bars.len());
        for (r, (&(i, j), &l)) in bars.iter().zip(targets).enumerate() {
            let d = x[i] - x[j];
            let len = d.norm();
            let u = d * (1.0 / len);
            jac[(r, 2 * i)] = u.x;
            jac[(r, 2 * i + 1)] = u.y;
            jac[(r, 2 * j)] = -u.x;
            jac[(r, 2 * j + 1)] = -u.y;
            res[r] = len - l;
        }
        let pinv = jac.pseudo_inverse(1e-12).map_err(|_| FlowError::ProjectionDiverged(err))?;
        let delta = pinv * res;
        for k in 0..n {
            x[k] = x[k] - Point2::new(delta[2 * k], delta[2 * k + 1]);
        }
        let next = max_relative_length_error(&x, bars, targets);
        if next > 10.0 * err {
            return Err(FlowError::ProjectionDiverged(next));
        }
        err = next;
        iters += 1;
    }
    Ok((x, iters))
}

/// Largest decrease of a pairwise distance from `a` to `b`, with the pair.
pub fn max_distance_decrease(a: &[Point2], b: &[Point2]) -> (f64, Option<(usize, usize)>) {
    let mut worst = 0.0;
    let mut pair = None;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let drop = a[i].dist(a[j]) - b[i].dist(b[j]);
            if drop > worst {
                worst = drop;
                pair = Some((i, j));
            }
        }
    }
    (worst, pair)
}

/// One validated step of size at most `dt`, halving on rejection.
pub fn step(
    linkage: &Linkage,
    base: &Framework,
    targets: &[f64],
    flow: &FlowParams,
    exp: &ExpansionParams,
    dt: f64,
) -> Result<StepResult, FlowError> {
    let x = linkage.positions();
    let bars = framework_bars(base);
    let (fw, extra) = constrained_framework(&x, base, flow);
    let k1 = field(&x, &fw, &extra, exp)?;
    let speed = k1.max_speed();
    let (slack, _) = certificate(&x, &fw, &k1.v, k1.eta_used);
    if speed == 0.0 {
        return Ok(StepResult {
            linkage: linkage.clone(),
            dt_used: 0.0,
            diagnostics: StepDiagnostics {
                min_strut_slack: slack,
                max_bar_drift: max_relative_length_error(&x, &bars, targets),
                dt: 0.0,
                rejections: 0,
            },
            stationary: true,
        });
    }
    let shortest = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let mut dt = dt.min(flow.max_step_displacement * shortest / speed);
    let mut rejections = 0;
    loop {
        if dt < flow.dt_min {
            return Err(FlowError::StepSizeUnderflow { dt_min: flow.dt_min });
        }
        if let Some((next, drift)) = attempt(linkage, &x, &k1.v, &fw, &extra, &bars, targets, flow, exp, dt) {
            return Ok(StepResult {
                linkage: next,
                dt_used: dt,
                diagnostics: StepDiagnostics {
                    min_strut_slack: slack,
                    max_bar_drift: drift,
                    dt,
                    rejections,
                },
                stationary: false,
            });
        }
        rejections += 1;
        dt *= 0.5;
    }
}

#[allow(clippy::too_many_arguments)]
fn attempt(
    linkage: &Linkage,
    x: &[Point2],
    k1: &[Point2],
    fw: &Framework,
    extra: &DMatrix<f64>,
    bars: &[(usize, usize)],
    targets: &[f64],
    flow: &FlowParams,
    exp: &ExpansionParams,
    dt: f64,
) -> Option<(Linkage, f64)> {
    let raw = integrate(x, k1, fw, extra, exp, flow.integrator, dt)
        .map_err(|e| log::trace!("stage solve failed at dt = {dt:e}: {e}"))
        .ok()?;
    let (projected, _) = project_bar_lengths(&raw, bars, targets, PROJECTION_TOL.min(flow.bar_tol), PROJECTION_MAX_ITERS)
        .map_err(|e| log::trace!("projection failed at dt = {dt:e}: {e}"))
        .ok()?;
    let drift = max_relative_length_error(&projected, bars, targets);
    if drift > flow.bar_tol {
        return None;
    }
    let (decrease, pair) = max_distance_decrease(x, &projected);
    if decrease > flow.expand_tol {
        log::trace!("dt = {dt:e} rejected: pair {pair:?} shrank by {decrease:e}");
        return None;
    }
    let next = linkage.with_positions(&projected).ok()?;
    if !is_simple(&next).is_simple() {
        log::trace!("dt = {dt:e} rejected: not simple");
        return None;
    }
    Some((next, drift))
}

/// Integrates until every open chain is straight and every closed chain
/// convex, or `max_steps` steps have been taken.
pub fn run_unfold(
    linkage: &Linkage,
    flow: &FlowParams,
    exp: &ExpansionParams,
) -> Result<MotionTrace, FlowError> {
    flow.validate()?;
    exp.validate()?;
    let base = build_framework(linkage)?;
    let targets: Vec<f64> = framework_bars(&base)
        .iter()
        .map(|&(i, j)| {
            let p = linkage.positions();
            p[i].dist(p[j])
        })
        .collect();
    let mut frames = vec![Frame {
        t: 0.0,
        step: 0,
        linkage: linkage.clone(),
    }];
    let mut diagnostics = Vec::new();
    let mut current = linkage.clone();
    let mut t = 0.0;
    let mut dt = flow.dt_init;
    let mut last_stored = 0;
    let mut outcome = Outcome::MaxStepsReached;
    for k in 0..=flow.max_steps {
        if current.is_unfolded(flow.straight_tol, flow.convex_tol) {
            outcome = Outcome::Unfolded;
            break;
        }
        if k == flow.max_steps {
            break;
        }
        match step(&current, &base, &targets, flow, exp, dt) {
            Ok(r) if r.stationary => {
                log::warn!("field vanished before unfolding at step {k}");
                outcome = Outcome::NumericalFailure(k);
                break;
            }
            Ok(r) => {
                t += r.dt_used;
                dt = (2.0 * r.dt_used).min(flow.dt_init);
                current = r.linkage;
                diagnostics.push(r.diagnostics);
                if diagnostics.len() % flow.snapshot_every == 0 {
                    frames.push(Frame {
                        t,
                        step: diagnostics.len(),
                        linkage: current.clone(),
                    });
                    last_stored = diagnostics.len();
                }
            }
            Err(e) => {
                log::warn!("flow stopped at step {k}: {e}");
                outcome = Outcome::NumericalFailure(k);
                break;
            }
        }
    }
    if last_stored != diagnostics.len() {
        frames.push(Frame {
            t,
            step: diagnostics.len(),
            linkage: current,
        });
    }
    log::info!("flow finished after {} steps: {:?}", diagnostics.len(), outcome);
    Ok(MotionTrace {
        frames,
        outcome,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneReport {
    pub max_violation: f64,
    /// Vertex pair and frame indices `(k, k + 1)` of the worst decrease.
    pub pair: Option<(usize, usize)>,
    pub frames: Option<(usize, usize)>,
    pub passed: bool,
}

/// Largest decrease of any pairwise distance between consecutive frames.
pub fn check_monotone_expansion(trace: &MotionTrace, tol: f64) -> MonotoneReport {
    let mut report = MonotoneReport {
        max_violation: 0.0,
        pair: None,
        frames: None,
        passed: true,
    };
    for k in 1..trace.frames.len() {
        let a = trace.frames[k - 1].linkage.positions();
        let b = trace.frames[k].linkage.positions();
        let (drop, pair) = max_distance_decrease(&a, &b);
        if drop > report.max_violation {
            report.max_violation = drop;
            report.pair = pair;
            report.frames = Some((k - 1, k));
        }
    }
    report.passed = report.max_violation <= tol;
    report
}
