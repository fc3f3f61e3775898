//! Consistent trajectories and higher state derivatives.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::compiled::{Compiled, Valuation};
use crate::error::{Error, Result};
use crate::expr::{Differentiator, Expr, Func, SymbolKind, SymbolTable, Tape, Var};
use crate::model::{DaeModel, Residuals};
use crate::ranktest::EvalPoint;

pub const DEFAULT_DT: f64 = 1e-3;
/// Tolerance accepted on `f2` before projecting an initial condition.
pub const PROJECTION_ACCEPT: f64 = 1e-3;

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Per time, `[x', ..., x^(sigma)]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derivative_arrays: Option<Vec<Vec<Vec<f64>>>>,
    /// Per time, `max |f2|` (or the constraint residual for the pendulum).
    pub consistency_residuals: Vec<f64>,
    pub dt: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub samples: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub max_consistency_residual: f64,
    pub derivative_order: usize,
    pub algebraic_tolerance: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        self.consistency_residuals.iter().fold(0.0, |m, &r| m.max(r))
    }

    /// Evaluation point at sample `i`; requires derivative arrays.
    pub fn point(&self, i: usize, theta: &[f64]) -> Result<EvalPoint> {
        let d = self
            .derivative_arrays
            .as_ref()
            .ok_or_else(|| Error::Usage("trajectory has no derivative arrays".into()))?;
        let mut derivatives = vec![self.states[i].clone()];
        derivatives.extend(d[i].iter().cloned());
        Ok(EvalPoint { theta: theta.to_vec(), derivatives, time: self.times[i] })
    }

    /// Keeps every `stride`-th sample (the last sample is always kept).
    pub fn thin(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let mut keep: Vec<usize> = (0..self.len()).step_by(stride).collect();
        if !self.is_empty() && keep.last() != Some(&(self.len() - 1)) {
            keep.push(self.len() - 1);
        }
        Trajectory {
            state_names: self.state_names.clone(),
            times: keep.iter().map(|&i| self.times[i]).collect(),
            states: keep.iter().map(|&i| self.states[i].clone()).collect(),
            derivative_arrays: self.derivative_arrays.as_ref().map(|d| keep.iter().map(|&i| d[i].clone()).collect()),
            consistency_residuals: keep.iter().map(|&i| self.consistency_residuals[i]).collect(),
            dt: self.dt * stride as f64,
        }
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            dt: self.dt,
            samples: self.len(),
            t_start: self.times.first().copied().unwrap_or(0.0),
            t_end: self.times.last().copied().unwrap_or(0.0),
            max_consistency_residual: self.max_residual(),
            derivative_order: self.derivative_arrays.as_ref().and_then(|d| d.first()).map_or(0, |d| d.len()),
            algebraic_tolerance: 1e-10,
        }
    }

    /// CSV with header `t, x..., [x'..., x''..., ...]`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let order = self.derivative_arrays.as_ref().and_then(|d| d.first()).map_or(0, |d| d.len());
        let mut header = vec!["t".to_string()];
        header.extend(self.state_names.iter().cloned());
        for k in 1..=order {
            header.extend(self.state_names.iter().map(|s| format!("{s}{}", "'".repeat(k))));
        }
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.states[i].iter().map(|v| v.to_string()));
            if let Some(d) = &self.derivative_arrays {
                for level in &d[i] {
                    row.extend(level.iter().map(|v| v.to_string()));
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Time derivative rule shared with the stack: parameters are constant.
fn total_leaf(table: &SymbolTable) -> impl Fn(Var) -> Expr + Send + Sync + 'static {
    let kinds: Vec<SymbolKind> = (0..table.len() as u32).map(|b| table.base_kind(Var::new(b, 0))).collect();
    move |v: Var| match kinds[v.base as usize] {
        SymbolKind::Parameter => Expr::zero(),
        SymbolKind::Time if v.order == 0 => Expr::one(),
        _ => Expr::var(v.derivative()),
    }
}

/// Consistent `x', ..., x^(sigma)` of an index-1 semi-explicit model.
///
/// `x1^(k+1)` is the k-th total derivative of `f1`. The (k+1)-th total
/// derivative of `f2` is affine in `x2^(k+1)` with coefficient `df2/dx2`,
/// which gives `x2^(k+1)` from one linear solve per order.
#[derive(Clone, Debug)]
pub struct DerivativeOracle {
    model: DaeModel,
    sigma: usize,
    f1_levels: Vec<Compiled>,
    f2_levels: Vec<Compiled>,
}

impl DerivativeOracle {
    pub fn new(model: &DaeModel, sigma: usize) -> Result<DerivativeOracle> {
        let Residuals::SemiExplicit { f1, f2 } = model.residuals() else {
            return Err(Error::NotSemiExplicit);
        };
        let mut d = Differentiator::new(total_leaf(model.symbols()));
        let mut f1_levels = Vec::new();
        let mut level = f1.clone();
        for _ in 0..sigma {
            f1_levels.push(Compiled::new(&level, model.roles())?);
            level = level.iter().map(|e| d.diff(e)).collect();
        }
        let mut f2_levels = Vec::new();
        let mut level = f2.clone();
        for _ in 0..sigma {
            level = level.iter().map(|e| d.diff(e)).collect();
            f2_levels.push(Compiled::new(&level, model.roles())?);
        }
        Ok(DerivativeOracle { model: model.clone(), sigma, f1_levels, f2_levels })
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    /// `[x', ..., x^(sigma)]` at the consistent state `x`.
    pub fn derivatives(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let m = &self.model;
        let (n1, n2) = (m.n1(), m.n2());
        if x.len() != m.n() {
            return Err(Error::Dimension(format!("state has {} entries, expected {}", x.len(), m.n())));
        }
        let params = m.parameter_values();
        let mut levels = vec![x.to_vec()];
        let lu = if n2 > 0 { Some(m.jacobian_f2_x2(x)?.lu()) } else { None };
        for k in 0..self.sigma {
            let v = Valuation { states: &levels, params, time: 0.0 };
            let mut next = self.f1_levels[k].eval(&v)?;
            next.resize(n1 + n2, 0.0);
            levels.push(next);
            if let Some(lu) = &lu {
                let v = Valuation { states: &levels, params, time: 0.0 };
                let r = self.f2_levels[k].eval(&v)?;
                let x2 = lu
                    .solve(&DVector::from_column_slice(&r))
                    .filter(|s| s.iter().all(|a| a.is_finite()))
                    .ok_or(Error::SingularJacobian { iteration: 0 })?;
                for j in 0..n2 {
                    levels[k + 1][n1 + j] = -x2[j];
                }
            }
        }
        levels.remove(0);
        Ok(levels)
    }

    /// Evaluation point with derivatives up to `sigma`.
    pub fn point(&self, x: &[f64], theta: &[f64], time: f64) -> Result<EvalPoint> {
        let mut derivatives = vec![x.to_vec()];
        derivatives.extend(self.derivatives(x)?);
        Ok(EvalPoint { theta: theta.to_vec(), derivatives, time })
    }
}

pub fn consistent_derivatives(m: &DaeModel, x: &[f64], sigma: usize) -> Result<Vec<Vec<f64>>> {
    DerivativeOracle::new(m, sigma)?.derivatives(x)
}

/// `max |f2(x)|` for semi-explicit models, `max |F(x, x')|` for implicit ones.
pub fn consistency_residual(m: &DaeModel, x: &[f64], xdot: Option<&[f64]>) -> Result<f64> {
    match m.residuals() {
        Residuals::SemiExplicit { .. } => Ok(max_abs(&m.eval_f2(x)?)),
        Residuals::Implicit(_) => {
            let xdot = xdot.ok_or_else(|| Error::Usage("implicit models need a supplied state derivative".into()))?;
            Ok(max_abs(&m.eval_implicit(x, xdot)?))
        }
    }
}

struct Stepper<'a> {
    m: &'a DaeModel,
}

impl Stepper<'_> {
    /// One backward Euler step solving `x1+ = x1 + h f1(x+)`, `0 = f2(x+)` jointly.
    fn backward_euler(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        let (n1, n) = (self.m.n1(), self.m.n());
        let mut y = x.to_vec();
        for iteration in 0..30 {
            let f1 = self.m.eval_f1(&y)?;
            let f2 = self.m.eval_f2(&y)?;
            let mut g = DVector::zeros(n);
            for i in 0..n1 {
                g[i] = y[i] - x[i] - h * f1[i];
            }
            for (j, v) in f2.iter().enumerate() {
                g[n1 + j] = *v;
            }
            let mut jac = DMatrix::zeros(n, n);
            let j1 = self.m.jacobian_f1(&y)?;
            for i in 0..n1 {
                for c in 0..n {
                    jac[(i, c)] = -h * j1[(i, c)];
                }
                jac[(i, i)] += 1.0;
            }
            if n > n1 {
                let j21 = self.m.jacobian_f2_x1(&y)?;
                let j22 = self.m.jacobian_f2_x2(&y)?;
                for r in 0..n - n1 {
                    for c in 0..n1 {
                        jac[(n1 + r, c)] = j21[(r, c)];
                    }
                    for c in 0..n - n1 {
                        jac[(n1 + r, n1 + c)] = j22[(r, c)];
                    }
                }
            }
            let delta = jac.lu().solve(&g).ok_or(Error::SingularJacobian { iteration })?;
            let mut small = true;
            for i in 0..n {
                y[i] -= delta[i];
                if delta[i].abs() > 1e-13 * (1.0 + y[i].abs()) {
                    small = false;
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NoConvergence { iterations: iteration + 1, residual: f64::INFINITY });
            }
            if small {
                return Ok(y);
            }
        }
        Err(Error::NoConvergence { iterations: 30, residual: max_abs(&self.m.eval_f2(&y)?) })
    }

    /// Richardson-extrapolated step (second order), then projection onto `f2 = 0`.
    fn step(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        let full = self.backward_euler(x, h)?;
        let half = self.backward_euler(&self.backward_euler(x, 0.5 * h)?, 0.5 * h)?;
        let n1 = self.m.n1();
        let mut y: Vec<f64> = (0..self.m.n()).map(|i| if i < n1 { 2.0 * half[i] - full[i] } else { half[i] }).collect();
        if self.m.n2() > 0 {
            let x2 = self.m.solve_algebraic(&y[..n1], &y[n1..])?;
            y[n1..].copy_from_slice(&x2);
        }
        Ok(y)
    }
}

fn step_count(t_span: (f64, f64), dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(t_span.1 > t_span.0) || !dt.is_finite() {
        return Err(Error::Usage(format!("invalid time span {:?} or step {dt}", t_span)));
    }
    let steps = ((t_span.1 - t_span.0) / dt).round();
    if steps > 1e8 {
        return Err(Error::Usage("too many steps".into()));
    }
    Ok(steps.max(1.0) as usize)
}

/// Fixed-step simulation of an index-1 semi-explicit model.
pub fn simulate_index1(m: &DaeModel, x0: &[f64], t_span: (f64, f64), dt: f64) -> Result<Trajectory> {
    if !m.is_semi_explicit() {
        return Err(Error::NotSemiExplicit);
    }
    if x0.len() != m.n() {
        return Err(Error::Dimension(format!("initial state has {} entries, expected {}", x0.len(), m.n())));
    }
    let steps = step_count(t_span, dt)?;
    let h = (t_span.1 - t_span.0) / steps as f64;
    let pre = consistency_residual(m, x0, None)?;
    if pre > PROJECTION_ACCEPT {
        return Err(Error::Inconsistent { residual: pre, tolerance: PROJECTION_ACCEPT });
    }
    let mut x = m.project(x0)?;
    let stepper = Stepper { m };
    let mut tr = Trajectory { state_names: m.state_names(), dt: h, ..Default::default() };
    for i in 0..=steps {
        if i > 0 {
            x = stepper.step(&x, h)?;
        }
        tr.times.push(t_span.0 + i as f64 * h);
        tr.consistency_residuals.push(consistency_residual(m, &x, None)?);
        tr.states.push(x.clone());
    }
    Ok(tr)
}

/// Attaches consistent derivative arrays up to `sigma` to every sample.
pub fn attach_derivatives(m: &DaeModel, tr: &mut Trajectory, sigma: usize) -> Result<()> {
    let oracle = DerivativeOracle::new(m, sigma)?;
    let arrays = tr.states.iter().map(|x| oracle.derivatives(x)).collect::<Result<Vec<_>>>()?;
    tr.derivative_arrays = Some(arrays);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PendulumParams {
    pub m: f64,
    pub g: f64,
    pub l: f64,
}

impl PendulumParams {
    pub fn from_model(model: &DaeModel) -> Result<PendulumParams> {
        let get = |n: &str| model.parameter_value(n).ok_or_else(|| Error::UnknownParameter(n.to_string()));
        Ok(PendulumParams { m: get("m")?, g: get("g")?, l: get("L")? })
    }
}

/// Cartesian pendulum state and its derivatives as functions of the angle
/// `phi` and angular velocity `omega` (angle measured from the downward vertical).
#[derive(Clone, Debug)]
pub struct PendulumOracle {
    params: PendulumParams,
    sigma: usize,
    tape: Arc<Tape>,
    phi: Var,
}

impl PendulumOracle {
    pub fn new(params: PendulumParams, sigma: usize) -> Result<PendulumOracle> {
        let PendulumParams { m, g, l } = params;
        if !(l > 0.0 && m > 0.0) {
            return Err(Error::Usage("pendulum requires L > 0 and m > 0".into()));
        }
        let mut t = SymbolTable::new();
        let phi = t.declare("phi", SymbolKind::State)?;
        let omega = t.declare("omega", SymbolKind::State)?;
        let (p, w) = (Expr::var(phi), Expr::var(omega));
        let c = Expr::constant;
        let sin = Expr::call(Func::Sin, p.clone());
        let cos = Expr::call(Func::Cos, p.clone());
        let x1 = c(l) * sin.clone();
        let x2 = -(c(l) * cos.clone());
        let x3 = c(l) * cos * w.clone();
        let x4 = c(l) * sin.clone() * w.clone();
        let x5 = c(m / (l * l)) * (c(g) * x2.clone() - Expr::powi(x3.clone(), 2) - Expr::powi(x4.clone(), 2));
        let accel = -(c(g / l) * sin);
        let mut d = Differentiator::new(move |v: Var| if v == phi { w.clone() } else { accel.clone() });
        let mut all = Vec::new();
        let mut level = vec![x1, x2, x3, x4, x5];
        for k in 0..=sigma {
            all.extend(level.iter().cloned());
            if k < sigma {
                level = level.iter().map(|e| d.diff(e)).collect();
            }
        }
        let tape = Tape::compile(&all);
        debug_assert!(tape.vars().iter().all(|v| *v == phi || *v == omega));
        Ok(PendulumOracle { params, sigma, tape: Arc::new(tape), phi })
    }

    /// `[x, x', ..., x^(sigma)]` at the angle state.
    pub fn levels(&self, phi: f64, omega: f64) -> Result<Vec<Vec<f64>>> {
        let vals = self.tape.eval(&|v| Some(if v == self.phi { phi } else { omega }))?;
        Ok(vals.chunks(5).map(|c| c.to_vec()).collect())
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    pub fn params(&self) -> PendulumParams {
        self.params
    }
}

/// RK4 in angle coordinates, mapped to the Cartesian state.
pub fn simulate_pendulum(
    params: PendulumParams,
    phi0: f64,
    omega0: f64,
    t_span: (f64, f64),
    dt: f64,
    sigma: Option<usize>,
) -> Result<Trajectory> {
    let oracle = PendulumOracle::new(params, sigma.unwrap_or(0))?;
    let steps = step_count(t_span, dt)?;
    let h = (t_span.1 - t_span.0) / steps as f64;
    let k = params.g / params.l;
    let rhs = |s: [f64; 2]| [s[1], -k * s[0].sin()];
    let mut s = [phi0, omega0];
    let mut tr = Trajectory {
        state_names: (1..=5).map(|i| format!("x{i}")).collect(),
        dt: h,
        derivative_arrays: sigma.map(|_| Vec::new()),
        ..Default::default()
    };
    for i in 0..=steps {
        if i > 0 {
            let k1 = rhs(s);
            let k2 = rhs([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
            let k3 = rhs([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
            let k4 = rhs([s[0] + h * k3[0], s[1] + h * k3[1]]);
            for j in 0..2 {
                s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        let mut levels = oracle.levels(s[0], s[1])?;
        let x = levels.remove(0);
        tr.times.push(t_span.0 + i as f64 * h);
        tr.consistency_residuals.push((x[0] * x[0] + x[1] * x[1] - params.l * params.l).abs());
        tr.states.push(x);
        if let Some(d) = tr.derivative_arrays.as_mut() {
            d.push(levels);
        }
    }
    Ok(tr)
}

/// `1/2 m (x3^2 + x4^2) + m g x2`.
pub fn pendulum_energy(p: PendulumParams, x: &[f64]) -> f64 {
    0.5 * p.m * (x[2] * x[2] + x[3] * x[3]) + p.m * p.g * x[1]
}
