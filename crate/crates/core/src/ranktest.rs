//! Numerical rank, 1-fullness and the observability / identifiability loops.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::linalg::SVD;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compiled::{Compiled, Valuation};
use crate::error::{Error, Result};
use crate::expr::{diff_partial, Differentiator, Expr, Var};
use crate::model::{AugmentedModel, DaeModel};
use crate::stack::{CompiledBlocks, Partition, StackCache, StackSystem};

/// Singular values in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Svd("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Svd("iteration did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

fn count_above(s: &[f64], tol: f64) -> usize {
    s.iter().filter(|&&v| v > tol).count()
}

/// Number of singular values strictly greater than `tol`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> Result<usize> {
    Ok(count_above(&singular_values(m)?, tol))
}

/// Spacing of doubles at magnitude `b`; zero maps to the smallest positive normal.
pub fn ulp(b: f64) -> f64 {
    let b = b.abs();
    if b == 0.0 {
        f64::MIN_POSITIVE
    } else {
        b.next_up() - b
    }
}

/// `sigma * n * ulp(||M||_2)`.
pub fn default_tolerance(m: &DMatrix<f64>, sigma: usize, n: usize) -> Result<f64> {
    let norm = singular_values(m)?.first().copied().unwrap_or(0.0);
    Ok(tolerance_from_norm(norm, sigma, n))
}

pub fn tolerance_from_norm(norm: f64, sigma: usize, n: usize) -> f64 {
    (sigma.max(1) * n.max(1)) as f64 * ulp(norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct OneFull {
    pub one_full: bool,
    pub rank: usize,
    pub rank_right: usize,
}

/// Whether `M = [M1 M2]` with `m1` leading columns satisfies `rank M = m1 + rank M2`.
pub fn is_one_full(m: &DMatrix<f64>, m1: usize, tol: f64) -> Result<OneFull> {
    if m1 > m.ncols() {
        return Err(Error::Dimension(format!("m1 = {m1} exceeds {} columns", m.ncols())));
    }
    let rank = numerical_rank(m, tol)?;
    let rank_right = numerical_rank(&m.columns(m1, m.ncols() - m1).into_owned(), tol)?;
    Ok(OneFull { one_full: rank == m1 + rank_right, rank, rank_right })
}

/// State derivatives `x, x', ..., x^(k)` and parameter values at one instant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    #[serde(default)]
    pub theta: Vec<f64>,
    /// `derivatives[k]` is the k-th time derivative of the full state.
    pub derivatives: Vec<Vec<f64>>,
    #[serde(default)]
    pub time: f64,
}

impl EvalPoint {
    pub fn state(&self) -> &[f64] {
        self.derivatives.first().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Highest derivative order present.
    pub fn order(&self) -> usize {
        self.derivatives.len().saturating_sub(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Satisfied,
    NotSatisfied,
}

impl Verdict {
    pub fn is_satisfied(self) -> bool {
        self == Verdict::Satisfied
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Satisfied,
    /// Rank of the full matrix unchanged between consecutive orders.
    Stabilized,
    MaxOrder,
    /// Orders were fixed by the caller.
    FixedOrder,
    /// `p = 0` or `q = 0`.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub test: String,
    pub verdict: Verdict,
    pub rank_full: usize,
    pub rank_right: usize,
    pub required: usize,
    /// `required - rank_full`.
    pub deficit: usize,
    pub mu: usize,
    pub nu: usize,
    pub sigma: usize,
    pub n: usize,
    pub p: usize,
    pub tolerance: f64,
    /// Smallest counted singular value over the tolerance, across both matrices.
    pub margin: Option<f64>,
    pub ill_conditioned: bool,
    pub stop: StopReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub singular_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub singular_values_right: Option<Vec<f64>>,
    pub point: EvalPoint,
}

#[derive(Clone, Debug, Default)]
pub struct RankOptions {
    /// Largest `mu = nu` tried by the loop; defaults to `n + p`.
    pub max_order: Option<usize>,
    /// Fixed orders; disables the loop.
    pub orders: Option<(usize, usize)>,
    /// Absolute tolerance replacing the default formula.
    pub tolerance: Option<f64>,
    pub keep_singular_values: bool,
}

/// Rank decision of a left/right partitioned matrix.
pub fn partitioned_rank(
    m: &DMatrix<f64>,
    n_left: usize,
    sigma: usize,
    n_states: usize,
    tol_override: Option<f64>,
) -> Result<(usize, usize, f64, Option<f64>, Vec<f64>, Vec<f64>)> {
    let s = singular_values(m)?;
    let right = m.columns(n_left, m.ncols() - n_left).into_owned();
    let sr = singular_values(&right)?;
    let tol = tol_override.unwrap_or_else(|| tolerance_from_norm(s.first().copied().unwrap_or(0.0), sigma, n_states));
    let (r, rr) = (count_above(&s, tol), count_above(&sr, tol));
    let margin = [r.checked_sub(1).map(|i| s[i]), rr.checked_sub(1).map(|i| sr[i])]
        .into_iter()
        .flatten()
        .map(|v| v / tol)
        .reduce(f64::min);
    Ok((r, rr, tol, margin, s, sr))
}

/// Shared state for repeated tests of one model: the symbolic stack and
/// compiled Jacobians are built once per order and reused for every point.
pub struct Analyzer {
    partition: Partition,
    n: usize,
    p: usize,
    q: usize,
    params: Vec<Option<f64>>,
    theta_index: Vec<usize>,
    cache: Mutex<StackCache>,
    compiled: Mutex<HashMap<(usize, usize), Arc<CompiledBlocks>>>,
}

impl Analyzer {
    pub fn observability(m: &DaeModel) -> Analyzer {
        Analyzer {
            partition: Partition::Observability,
            n: m.n(),
            p: 0,
            q: m.q(),
            params: m.parameter_values().to_vec(),
            theta_index: Vec::new(),
            cache: Mutex::new(StackCache::new(StackSystem::from_model(m))),
            compiled: Mutex::default(),
        }
    }

    pub fn identifiability(a: &AugmentedModel) -> Analyzer {
        Analyzer {
            partition: Partition::Identifiability,
            n: a.base().n(),
            p: a.p(),
            q: a.base().q(),
            params: a.known_values().to_vec(),
            theta_index: a.theta_index().to_vec(),
            cache: Mutex::new(StackCache::new(StackSystem::from_augmented(a))),
            compiled: Mutex::default(),
        }
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    /// Number of left columns: `n` for observability, `p` for identifiability.
    pub fn left_dim(&self) -> usize {
        match self.partition {
            Partition::Observability => self.n,
            Partition::Identifiability => self.p,
        }
    }

    pub fn default_max_order(&self) -> usize {
        self.n + self.p
    }

    pub fn blocks(&self, mu: usize, nu: usize) -> Result<Arc<CompiledBlocks>> {
        let mut compiled = self.compiled.lock().expect("compiled cache poisoned");
        if let Some(b) = compiled.get(&(mu, nu)) {
            return Ok(b.clone());
        }
        let mut cache = self.cache.lock().expect("stack cache poisoned");
        let stack = cache.build(mu, nu);
        let blocks = cache.blocks(&stack, self.partition);
        let c = Arc::new(blocks.compile(cache.system().roles())?);
        compiled.insert((mu, nu), c.clone());
        Ok(c)
    }

    /// Symbolic stack listing for audit output.
    pub fn dump_stack(&self, mu: usize, nu: usize) -> String {
        let mut cache = self.cache.lock().expect("stack cache poisoned");
        let stack = cache.build(mu, nu);
        stack.dump(cache.system().symbols())
    }

    fn parameter_values(&self, pt: &EvalPoint) -> Result<Vec<Option<f64>>> {
        if self.partition == Partition::Identifiability && pt.theta.len() != self.p {
            return Err(Error::Dimension(format!("point has {} theta values, expected {}", pt.theta.len(), self.p)));
        }
        let mut params = self.params.clone();
        if self.partition == Partition::Identifiability {
            for (&i, &v) in self.theta_index.iter().zip(&pt.theta) {
                params[i] = Some(v);
            }
        }
        Ok(params)
    }

    fn validate(&self, pt: &EvalPoint, sigma: usize) -> Result<()> {
        if pt.derivatives.len() <= sigma {
            return Err(Error::MissingDerivatives { needed: sigma, have: pt.order() });
        }
        for (k, d) in pt.derivatives.iter().enumerate().take(sigma + 1) {
            if d.len() != self.n {
                return Err(Error::Dimension(format!("derivative order {k} has {} entries, expected {}", d.len(), self.n)));
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dimension(format!("derivative order {k} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// The numeric observability or identifiability matrix at fixed orders.
    pub fn matrix(&self, pt: &EvalPoint, mu: usize, nu: usize) -> Result<DMatrix<f64>> {
        let sigma = (mu + 1).max(nu);
        self.validate(pt, sigma)?;
        let params = self.parameter_values(pt)?;
        let blocks = self.blocks(mu, nu)?;
        blocks.eval(&Valuation { states: &pt.derivatives[..=sigma], params: &params, time: pt.time })
    }

    fn degenerate(&self) -> Option<Verdict> {
        match self.partition {
            Partition::Identifiability if self.p == 0 => Some(Verdict::Satisfied),
            _ if self.q == 0 => Some(Verdict::NotSatisfied),
            Partition::Observability if self.n == 0 => Some(Verdict::Satisfied),
            _ => None,
        }
    }

    fn test_name(&self) -> String {
        match self.partition {
            Partition::Observability => "observability".into(),
            Partition::Identifiability => "identifiability".into(),
        }
    }

    /// Single test at fixed `(mu, nu)`.
    pub fn test_at(&self, pt: &EvalPoint, mu: usize, nu: usize, opts: &RankOptions) -> Result<RankReport> {
        let sigma = (mu + 1).max(nu);
        if let Some(v) = self.degenerate() {
            return Ok(self.degenerate_report(pt, v, mu, nu));
        }
        let m = self.matrix(pt, mu, nu)?;
        let left = self.left_dim();
        let (rank_full, rank_right, tolerance, margin, s, sr) = partitioned_rank(&m, left, sigma, self.n, opts.tolerance)?;
        let required = left + rank_right;
        Ok(RankReport {
            test: self.test_name(),
            verdict: if rank_full == required { Verdict::Satisfied } else { Verdict::NotSatisfied },
            rank_full,
            rank_right,
            required,
            deficit: required.saturating_sub(rank_full),
            mu,
            nu,
            sigma,
            n: self.n,
            p: self.p,
            tolerance,
            margin,
            ill_conditioned: margin.is_some_and(|r| (1.0..=10.0).contains(&r)),
            stop: StopReason::FixedOrder,
            singular_values: opts.keep_singular_values.then_some(s),
            singular_values_right: opts.keep_singular_values.then_some(sr),
            point: pt.clone(),
        })
    }

    fn degenerate_report(&self, pt: &EvalPoint, verdict: Verdict, mu: usize, nu: usize) -> RankReport {
        RankReport {
            test: self.test_name(),
            verdict,
            rank_full: 0,
            rank_right: 0,
            required: 0,
            deficit: 0,
            mu,
            nu,
            sigma: (mu + 1).max(nu),
            n: self.n,
            p: self.p,
            tolerance: 0.0,
            margin: None,
            ill_conditioned: false,
            stop: StopReason::Degenerate,
            singular_values: None,
            singular_values_right: None,
            point: pt.clone(),
        }
    }

    /// Increments `mu = nu` from zero until the rank condition holds, the
    /// rank of the full matrix stops growing, or `max_order` is reached.
    pub fn check(&self, pt: &EvalPoint, opts: &RankOptions) -> Result<RankReport> {
        if let Some((mu, nu)) = opts.orders {
            return self.test_at(pt, mu, nu, opts);
        }
        if let Some(v) = self.degenerate() {
            return Ok(self.degenerate_report(pt, v, 0, 0));
        }
        let max_order = opts.max_order.unwrap_or_else(|| self.default_max_order());
        let mut prev: Option<usize> = None;
        for k in 0..=max_order {
            let mut r = self.test_at(pt, k, k, opts)?;
            if r.verdict.is_satisfied() {
                r.stop = StopReason::Satisfied;
                return Ok(r);
            }
            if prev == Some(r.rank_full) {
                r.stop = StopReason::Stabilized;
                return Ok(r);
            }
            if k == max_order {
                r.stop = StopReason::MaxOrder;
                return Ok(r);
            }
            prev = Some(r.rank_full);
        }
        unreachable!()
    }
}

/// Observability check with a fresh analyzer.
pub fn check_observability(m: &DaeModel, pt: &EvalPoint, max_order: usize) -> Result<RankReport> {
    if max_order < 1 {
        return Err(Error::Usage("max_order must be at least 1".into()));
    }
    Analyzer::observability(m).check(pt, &RankOptions { max_order: Some(max_order), ..Default::default() })
}

/// Identifiability check for the promoted parameters of `a`.
pub fn check_identifiability(a: &AugmentedModel, pt: &EvalPoint, max_order: usize) -> Result<RankReport> {
    if max_order < 1 {
        return Err(Error::Usage("max_order must be at least 1".into()));
    }
    Analyzer::identifiability(a).check(pt, &RankOptions { max_order: Some(max_order), ..Default::default() })
}

/// Stacked Lie derivatives `h, L_f h, ..., L_f^nu h` of a pure ODE model.
pub fn lie_derivatives(m: &DaeModel, nu: usize) -> Result<Vec<Expr>> {
    let f1 = match m.residuals() {
        crate::model::Residuals::SemiExplicit { f1, .. } if m.n2() == 0 => f1.clone(),
        _ => return Err(Error::NotOde),
    };
    let states = m.states();
    let mut levels = vec![m.outputs().to_vec()];
    // L_f e = sum_i de/dx_i f_i, with partials shared across levels
    let mut partials: Vec<Differentiator<Box<dyn Fn(Var) -> Expr>>> = states
        .iter()
        .map(|&s| Differentiator::new(Box::new(move |v: Var| if v == s { Expr::one() } else { Expr::zero() }) as Box<dyn Fn(Var) -> Expr>))
        .collect();
    for _ in 0..nu {
        let next = levels
            .last()
            .unwrap()
            .iter()
            .map(|e| {
                partials
                    .iter_mut()
                    .zip(&f1)
                    .fold(Expr::zero(), |acc, (d, f)| acc + d.diff(e) * f.clone())
            })
            .collect();
        levels.push(next);
    }
    Ok(levels.concat())
}

/// Rank of the Lie-derivative Jacobian against the state dimension.
pub fn lie_observability(m: &DaeModel, pt: &EvalPoint, nu: usize) -> Result<RankReport> {
    let psi_rows = lie_derivatives(m, nu)?;
    let states = m.states();
    let entries: Vec<Expr> = psi_rows.iter().flat_map(|r| states.iter().map(move |s| diff_partial(r, *s))).collect();
    let c = Compiled::new(&entries, m.roles())?;
    let x = pt.state();
    if x.len() != m.n() {
        return Err(Error::Dimension(format!("state has {} entries, expected {}", x.len(), m.n())));
    }
    let vals = c.eval(&Valuation { states: &[x.to_vec()], params: m.parameter_values(), time: pt.time })?;
    let psi = DMatrix::from_row_slice(psi_rows.len(), m.n(), &vals);
    let s = singular_values(&psi)?;
    let tol = tolerance_from_norm(s.first().copied().unwrap_or(0.0), nu + 1, m.n());
    let rank = count_above(&s, tol);
    let margin = rank.checked_sub(1).map(|i| s[i] / tol);
    Ok(RankReport {
        test: "lie-observability".into(),
        verdict: if rank == m.n() { Verdict::Satisfied } else { Verdict::NotSatisfied },
        rank_full: rank,
        rank_right: 0,
        required: m.n(),
        deficit: m.n() - rank,
        mu: nu,
        nu,
        sigma: nu + 1,
        n: m.n(),
        p: 0,
        tolerance: tol,
        margin,
        ill_conditioned: margin.is_some_and(|r| (1.0..=10.0).contains(&r)),
        stop: StopReason::FixedOrder,
        singular_values: None,
        singular_values_right: None,
        point: pt.clone(),
    })
}
