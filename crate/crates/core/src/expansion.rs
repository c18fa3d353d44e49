//! Instantaneous expansive motions.
//!
//! The velocity field is the least-norm solution of
//!
//! ```text
//!     minimize    sum_i |v_i|^2
//!     subject to  <p_i - p_j, v_i - v_j>  = 0        for every bar
//!                 <p_i - p_j, v_i - v_j> >= demand    for every strut
//! ```
//!
//! where a strut's demand is `eta * min(1, 1 / length)` and zero for taut
//! struts. A smoothed variant replaces the strut inequalities by a
//! logarithmic barrier.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::framework::{rigidity_rows, Edge, EdgeKind, Framework};
use crate::geometry::{scale_of, Point2};
use crate::qp::{qp_solve, QpError, QpProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpansionError {
    #[error("strut demand requested for a bar ({0}, {1})")]
    DemandOnBar(usize, usize),
    #[error("invalid expansion parameters: {0}")]
    InvalidParams(&'static str),
    #[error("no expansive motion found after {0} halvings of eta")]
    InfeasibleAfterRetries(usize),
    #[error("quadratic program did not converge: {0}")]
    QpDidNotConverge(QpError),
    #[error("barrier Newton iteration did not converge in {0} iterations")]
    NewtonDidNotConverge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionParams {
    /// Scale of the expansion demanded from each strut.
    pub eta: f64,
    /// Weight of the log-barrier term; zero selects the hard constraints.
    pub barrier_weight: f64,
    pub qp_tol: f64,
    pub max_qp_iters: usize,
    /// How many times eta may be halved when the demand is infeasible.
    pub max_eta_halvings: usize,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            barrier_weight: 0.0,
            qp_tol: 1e-10,
            max_qp_iters: 5000,
            max_eta_halvings: 20,
        }
    }
}

impl ExpansionParams {
    /// Defaults with `eta` at a tenth of the shortest bar.
    pub fn for_bar_lengths(lengths: &[f64]) -> Self {
        let shortest = lengths.iter().copied().fold(f64::INFINITY, f64::min);
        let eta = if shortest.is_finite() { 0.1 * shortest } else { 0.1 };
        Self {
            eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExpansionError> {
        if !(self.eta > 0.0) {
            return Err(ExpansionError::InvalidParams("eta must be positive"));
        }
        if !(self.qp_tol > 0.0) {
            return Err(ExpansionError::InvalidParams("qp_tol must be positive"));
        }
        if self.max_qp_iters == 0 {
            return Err(ExpansionError::InvalidParams("max_qp_iters must be at least 1"));
        }
        if !(self.barrier_weight >= 0.0) {
            return Err(ExpansionError::InvalidParams("barrier_weight must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub v: Vec<Point2>,
    /// `sum_i |v_i|^2`.
    pub objective_value: f64,
    /// Framework edge indices of struts at their bound.
    pub active_struts: Vec<usize>,
    /// Demand scale the field was computed with (after any halving).
    pub eta_used: f64,
}

impl VelocityField {
    pub fn zero(n: usize, eta: f64) -> Self {
        Self {
            v: vec![Point2::ZERO; n],
            objective_value: 0.0,
            active_struts: Vec::new(),
            eta_used: eta,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(2 * self.v.len(), self.v.iter().flat_map(|p| [p.x, p.y]))
    }
}

pub fn points_from_vector(x: &DVector<f64>) -> Vec<Point2> {
    (0..x.len() / 2)
        .map(|k| Point2::new(x[2 * k], x[2 * k + 1]))
        .collect()
}

/// `<p_i - p_j, v_i - v_j>`, half the rate of change of the squared length.
pub fn length_rate(config: &[Point2], v: &[Point2], i: usize, j: usize) -> f64 {
    (config[i] - config[j]).dot(v[i] - v[j])
}

pub fn strut_demand(config: &[Point2], edge: &Edge, eta: f64) -> Result<f64, ExpansionError> {
    match edge.kind {
        EdgeKind::Bar => Err(ExpansionError::DemandOnBar(edge.i, edge.j)),
        EdgeKind::TautStrut => Ok(0.0),
        EdgeKind::Strut => {
            let len = config[edge.i].dist(config[edge.j]);
            Ok(eta * (1.0 / len).min(1.0))
        }
    }
}

/// Worst violations of a field: `(min strut slack, max |bar rate|)`.
pub fn certificate(config: &[Point2], framework: &Framework, v: &[Point2], eta: f64) -> (f64, f64) {
    let mut slack = f64::INFINITY;
    let mut bar: f64 = 0.0;
    for e in framework.edges() {
        let rate = length_rate(config, v, e.i, e.j);
        match e.kind {
            EdgeKind::Bar => bar = bar.max(rate.abs()),
            _ => {
                let d = strut_demand(config, e, eta).unwrap_or(0.0);
                slack = slack.min(rate - d);
            }
        }
    }
    (slack, bar)
}

struct Split {
    bars: Vec<usize>,
    struts: Vec<usize>,
}

fn split_edges(framework: &Framework) -> Split {
    let (bars, struts) = (0..framework.edges().len()).partition(|&e| framework.edges()[e].kind == EdgeKind::Bar);
    Split { bars, struts }
}

fn stack(rows: DMatrix<f64>, extra: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    match extra {
        Some(x) if x.nrows() > 0 => {
            let r = rows.nrows();
            let mut out = rows.insert_rows(r, x.nrows(), 0.0);
            out.rows_mut(r, x.nrows()).copy_from(x);
            out
        }
        _ => rows,
    }
}

fn rows_for(config: &[Point2], framework: &Framework, ids: &[usize]) -> DMatrix<f64> {
    let edges = framework.edges();
    rigidity_rows(
        config,
        ids.iter().map(|&e| (edges[e].i, edges[e].j)),
        framework.vertex_count(),
    )
}

/// Least-norm expansive velocity; halves eta while the demand is
/// infeasible.
pub fn expansive_velocity(
    config: &[Point2],
    framework: &Framework,
    params: &ExpansionParams,
) -> Result<VelocityField, ExpansionError> {
    expansive_velocity_with(config, framework, params, None)
}

/// As [`expansive_velocity`], with additional homogeneous equality rows
/// `extra_eq * v = 0` (used to hold straight joints rigid).
pub fn expansive_velocity_with(
    config: &[Point2],
    framework: &Framework,
    params: &ExpansionParams,
    extra_eq: Option<&DMatrix<f64>>,
) -> Result<VelocityField, ExpansionError> {
    params.validate()?;
    let n = framework.vertex_count();
    let split = split_edges(framework);
    if split.struts.is_empty() {
        return Ok(VelocityField::zero(n, params.eta));
    }
    let eq = stack(rows_for(config, framework, &split.bars), extra_eq);
    let ineq = rows_for(config, framework, &split.struts);
    let scale = scale_of(config);

    let mut eta = params.eta;
    for _ in 0..=params.max_eta_halvings {
        let rhs = DVector::from_iterator(
            split.struts.len(),
            split
                .struts
                .iter()
                .map(|&e| strut_demand(config, &framework.edges()[e], eta).expect("strut")),
        );
        let problem = QpProblem::homogeneous(eq.clone(), ineq.clone(), rhs)
            .map_err(ExpansionError::QpDidNotConverge)?;
        match qp_solve(&problem, params.qp_tol, params.max_qp_iters) {
            Ok(sol) => {
                let v = points_from_vector(&sol.x);
                let active = active_struts(config, framework, &split.struts, &v, eta, params.qp_tol * scale);
                return Ok(VelocityField {
                    objective_value: sol.objective(),
                    v,
                    active_struts: active,
                    eta_used: eta,
                });
            }
            Err(QpError::InfeasibleDetected(_)) => {
                log::debug!("expansion demand infeasible at eta = {eta:e}, halving");
                eta *= 0.5;
            }
            Err(e) => return Err(ExpansionError::QpDidNotConverge(e)),
        }
    }
    Err(ExpansionError::InfeasibleAfterRetries(params.max_eta_halvings))
}

fn active_struts(
    config: &[Point2],
    framework: &Framework,
    struts: &[usize],
    v: &[Point2],
    eta: f64,
    tol: f64,
) -> Vec<usize> {
    struts
        .iter()
        .copied()
        .filter(|&e| {
            let edge = framework.edges()[e];
            let d = strut_demand(config, &edge, eta).expect("strut");
            length_rate(config, v, edge.i, edge.j) - d <= tol
        })
        .collect()
}

/// Orthonormal basis of the null space of `rows` (columns of the result).
pub fn null_space(rows: &DMatrix<f64>, n: usize, rel_tol: f64) -> DMatrix<f64> {
    if rows.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let mut padded = rows.clone();
    if padded.nrows() < n {
        padded = padded.insert_rows(rows.nrows(), n - rows.nrows(), 0.0);
    }
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let top = svd.singular_values.amax();
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] <= rel_tol * top)
        .map(|k| v_t.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Barrier-smoothed field: minimizes
/// `sum |v_i|^2 - weight * sum log(<u_s, v> - demand_s)` over the
/// non-taut struts, with bars (and taut struts that bind) held exactly.
/// Newton starts from the hard solution scaled by 1.1, which is strictly
/// inside every non-taut strut constraint.
pub fn expansive_velocity_barrier(
    config: &[Point2],
    framework: &Framework,
    params: &ExpansionParams,
) -> Result<VelocityField, ExpansionError> {
    expansive_velocity_barrier_with(config, framework, params, None)
}

pub fn expansive_velocity_barrier_with(
    config: &[Point2],
    framework: &Framework,
    params: &ExpansionParams,
    extra_eq: Option<&DMatrix<f64>>,
) -> Result<VelocityField, ExpansionError> {
    params.validate()?;
    if params.barrier_weight <= 0.0 {
        return Err(ExpansionError::InvalidParams("barrier mode needs barrier_weight > 0"));
    }
    let hard = expansive_velocity_with(config, framework, params, extra_eq)?;
    let n = framework.vertex_count();
    let eta = hard.eta_used;
    let edges = framework.edges();
    let split = split_edges(framework);
    let loose: Vec<usize> = split
        .struts
        .iter()
        .copied()
        .filter(|&e| edges[e].kind == EdgeKind::Strut)
        .collect();
    if loose.is_empty() {
        return Ok(hard);
    }
    let scale = scale_of(config);
    let tol = params.qp_tol * scale;
    let taut: Vec<usize> = split
        .struts
        .iter()
        .copied()
        .filter(|&e| edges[e].kind == EdgeKind::TautStrut)
        .collect();
    let mut held: Vec<usize> = split.bars.clone();
    held.extend(
        taut.iter()
            .copied()
            .filter(|&e| length_rate(config, &hard.v, edges[e].i, edges[e].j) <= tol),
    );

    let a = rows_for(config, framework, &loose);
    let d = DVector::from_iterator(
        loose.len(),
        loose.iter().map(|&e| strut_demand(config, &edges[e], eta).expect("strut")),
    );
    let mu = params.barrier_weight;
    let start = hard.to_vector() * 1.1;

    loop {
        let c = stack(rows_for(config, framework, &held), extra_eq);
        let z = null_space(&c, 2 * n, 1e-10);
        let v = newton_barrier(&a, &d, mu, &start, &z)?;
        let pts = points_from_vector(&v);
        let violated: Vec<usize> = taut
            .iter()
            .copied()
            .filter(|e| !held.contains(e))
            .filter(|&e| length_rate(config, &pts, edges[e].i, edges[e].j) < -tol)
            .collect();
        if violated.is_empty() {
            let active = active_struts(config, framework, &split.struts, &pts, eta, tol);
            return Ok(VelocityField {
                objective_value: v.norm_squared(),
                v: pts,
                active_struts: active,
                eta_used: eta,
            });
        }
        held.extend(violated);
    }
}

fn newton_barrier(
    a: &DMatrix<f64>,
    d: &DVector<f64>,
    mu: f64,
    start: &DVector<f64>,
    z: &DMatrix<f64>,
) -> Result<DVector<f64>, ExpansionError> {
    const MAX_ITERS: usize = 200;
    let objective = |v: &DVector<f64>| -> Option<f64> {
        let s = a * v - d;
        if s.iter().any(|x| *x <= 0.0) {
            return None;
        }
        Some(v.norm_squared() - mu * s.iter().map(|x| x.ln()).sum::<f64>())
    };
    let mut v = start.clone();
    if z.ncols() == 0 {
        return Ok(v);
    }
    let mut f = objective(&v).expect("strictly feasible start");
    for _ in 0..MAX_ITERS {
        let s = a * &v - d;
        let inv = s.map(|x| 1.0 / x);
        let grad = &v * 2.0 - a.transpose() * (&inv * mu);
        let weighted = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * inv[r]);
        let hess = DMatrix::identity(v.len(), v.len()) * 2.0
            + weighted.transpose() * &weighted * mu;
        let gr = z.transpose() * &grad;
        let hr = z.transpose() * &hess * z;
        let Some(chol) = hr.cholesky() else {
            return Err(ExpansionError::NewtonDidNotConverge(0));
        };
        let dy = -chol.solve(&gr);
        let decrement = -gr.dot(&dy);
        if decrement <= 1e-22 * (1.0 + f.abs()) {
            return Ok(v);
        }
        let dv = z * dy;
        let mut step = 1.0;
        loop {
            let cand = &v + &dv * step;
            if let Some(fc) = objective(&cand) {
                if fc <= f - 0.25 * step * decrement {
                    v = cand;
                    f = fc;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-20 {
                // No further decrease representable; accept the current point.
                return Ok(v);
            }
        }
    }
    Err(ExpansionError::NewtonDidNotConverge(MAX_ITERS))
}
