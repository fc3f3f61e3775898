//! Stacked derivative arrays and their partitioned Jacobians.
//!
//! Level `k` of `Fbar` holds the k-th total time derivative of the residuals,
//! level `k` of `Hbar` the k-th derivative of the outputs. Parameter derivatives
//! are identically zero, so every parameter symbol of order one or higher is
//! replaced by the zero constant while stacking; the `theta' = 0` rows of an
//! augmented model therefore appear as zero rows.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::compiled::{Compiled, Roles, Valuation};
use crate::error::Result;
use crate::expr::{Differentiator, Expr, SymbolKind, SymbolTable, Var};
use crate::model::{AugmentedModel, DaeModel};

type Leaf = Box<dyn Fn(Var) -> Expr + Send + Sync>;

/// The residuals, outputs and column symbols a stack is built over.
#[derive(Clone, Debug)]
pub struct StackSystem {
    symbols: Arc<SymbolTable>,
    states: Vec<Var>,
    theta: Vec<Var>,
    residuals: Vec<Expr>,
    outputs: Vec<Expr>,
    roles: Roles,
}

impl StackSystem {
    pub fn from_model(m: &DaeModel) -> StackSystem {
        StackSystem {
            symbols: m.symbols_arc(),
            states: m.states(),
            theta: Vec::new(),
            residuals: m.implicit_residuals(),
            outputs: m.outputs().to_vec(),
            roles: m.roles().clone(),
        }
    }

    pub fn from_augmented(a: &AugmentedModel) -> StackSystem {
        StackSystem { theta: a.theta().to_vec(), residuals: a.residuals(), ..StackSystem::from_model(a.base()) }
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    pub fn q(&self) -> usize {
        self.outputs.len()
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub fn states(&self) -> &[Var] {
        &self.states
    }

    pub fn theta(&self) -> &[Var] {
        &self.theta
    }

    pub(crate) fn roles(&self) -> &Roles {
        &self.roles
    }
}

#[derive(Clone, Debug)]
pub struct DerivativeStack {
    pub fbar: Vec<Expr>,
    pub hbar: Vec<Expr>,
    pub mu: usize,
    pub nu: usize,
    pub sigma: usize,
    /// Residual rows per level (`n`, or `n + p` when augmented).
    pub residual_rows: usize,
    pub output_rows: usize,
}

impl DerivativeStack {
    /// Human-readable listing of every stacked row.
    pub fn dump(&self, table: &SymbolTable) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# mu = {}, nu = {}, sigma = {}", self.mu, self.nu, self.sigma);
        for (i, e) in self.fbar.iter().enumerate() {
            let (k, r) = (i / self.residual_rows.max(1), i % self.residual_rows.max(1));
            let _ = writeln!(s, "F[{k}][{r}] = {}", e.to_string_with(table));
        }
        for (i, e) in self.hbar.iter().enumerate() {
            let (k, r) = (i / self.output_rows.max(1), i % self.output_rows.max(1));
            let _ = writeln!(s, "H[{k}][{r}] = {}", e.to_string_with(table));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    /// Columns `(x | w)`, `w = (x', ..., x^(sigma))`.
    Observability,
    /// Columns `(theta | z)`, `z = (x, x', ..., x^(sigma))`.
    Identifiability,
}

/// Symbolic Jacobian of `(Fbar, Hbar)` with a left/right column split.
#[derive(Clone, Debug)]
pub struct JacobianBlocks {
    pub partition: Partition,
    pub f_rows: usize,
    pub h_rows: usize,
    pub left: Vec<Var>,
    pub right: Vec<Var>,
    /// Row-major entries over `left` followed by `right`.
    pub entries: Vec<Vec<Expr>>,
    pub sigma: usize,
}

impl JacobianBlocks {
    pub fn rows(&self) -> usize {
        self.f_rows + self.h_rows
    }

    pub fn cols(&self) -> usize {
        self.left.len() + self.right.len()
    }

    fn sub(&self, top: bool, left: bool) -> Vec<Vec<Expr>> {
        let rows = if top { 0..self.f_rows } else { self.f_rows..self.rows() };
        let cols = if left { 0..self.left.len() } else { self.left.len()..self.cols() };
        rows.map(|r| self.entries[r][cols.clone()].to_vec()).collect()
    }

    pub fn top_left(&self) -> Vec<Vec<Expr>> {
        self.sub(true, true)
    }

    pub fn top_right(&self) -> Vec<Vec<Expr>> {
        self.sub(true, false)
    }

    pub fn bottom_left(&self) -> Vec<Vec<Expr>> {
        self.sub(false, true)
    }

    pub fn bottom_right(&self) -> Vec<Vec<Expr>> {
        self.sub(false, false)
    }

    pub fn compile(&self, roles: &Roles) -> Result<CompiledBlocks> {
        let mut exprs = Vec::new();
        let mut nz = Vec::new();
        for (r, row) in self.entries.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                if !e.is_zero() {
                    nz.push((r, c));
                    exprs.push(e.clone());
                }
            }
        }
        Ok(CompiledBlocks {
            compiled: Compiled::new(&exprs, roles)?,
            nz,
            rows: self.rows(),
            cols: self.cols(),
            n_left: self.left.len(),
            sigma: self.sigma,
        })
    }
}

/// Numeric form of [`JacobianBlocks`].
#[derive(Clone, Debug)]
pub struct CompiledBlocks {
    compiled: Compiled,
    nz: Vec<(usize, usize)>,
    pub rows: usize,
    pub cols: usize,
    pub n_left: usize,
    pub sigma: usize,
}

impl CompiledBlocks {
    pub fn eval(&self, v: &Valuation) -> Result<DMatrix<f64>> {
        let vals = self.compiled.eval(v)?;
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (&(r, c), x) in self.nz.iter().zip(vals) {
            m[(r, c)] = x;
        }
        Ok(m)
    }
}

/// Incrementally extended stack for one system; levels and partial
/// derivatives computed once are reused by every larger order.
pub struct StackCache {
    sys: StackSystem,
    total: Differentiator<Leaf>,
    f_levels: Vec<Vec<Expr>>,
    h_levels: Vec<Vec<Expr>>,
    partials: HashMap<Var, Differentiator<Leaf>>,
}

impl StackCache {
    pub fn new(sys: StackSystem) -> StackCache {
        let kinds: Vec<SymbolKind> =
            (0..sys.symbols.len() as u32).map(|b| sys.symbols.base_kind(Var::new(b, 0))).collect();
        let leaf: Leaf = Box::new(move |v: Var| match kinds[v.base as usize] {
            SymbolKind::Parameter => Expr::zero(),
            SymbolKind::Time if v.order == 0 => Expr::one(),
            _ => Expr::var(v.derivative()),
        });
        let pinned: Vec<Expr> = sys.residuals.iter().map(|e| pin_parameter_derivatives(e, &sys.symbols)).collect();
        StackCache {
            total: Differentiator::new(leaf),
            f_levels: vec![pinned],
            h_levels: vec![sys.outputs.clone()],
            partials: HashMap::new(),
            sys,
        }
    }

    pub fn system(&self) -> &StackSystem {
        &self.sys
    }

    fn extend(&mut self, mu: usize, nu: usize) {
        while self.f_levels.len() <= mu {
            let next = self.f_levels.last().unwrap().iter().map(|e| self.total.diff(e)).collect();
            self.f_levels.push(next);
        }
        while self.h_levels.len() <= nu {
            let next = self.h_levels.last().unwrap().iter().map(|e| self.total.diff(e)).collect();
            self.h_levels.push(next);
        }
    }

    pub fn build(&mut self, mu: usize, nu: usize) -> DerivativeStack {
        self.extend(mu, nu);
        DerivativeStack {
            fbar: self.f_levels[..=mu].concat(),
            hbar: self.h_levels[..=nu].concat(),
            mu,
            nu,
            sigma: (mu + 1).max(nu),
            residual_rows: self.sys.residuals.len(),
            output_rows: self.sys.q(),
        }
    }

    fn partial(&mut self, e: &Expr, s: Var) -> Expr {
        self.partials
            .entry(s)
            .or_insert_with(|| {
                let leaf: Leaf = Box::new(move |v: Var| if v == s { Expr::one() } else { Expr::zero() });
                Differentiator::new(leaf)
            })
            .diff(e)
    }

    pub fn blocks(&mut self, stack: &DerivativeStack, partition: Partition) -> JacobianBlocks {
        let n = self.sys.n();
        let states = self.sys.states.clone();
        let at = |k: usize| states.iter().map(move |v| Var::new(v.base, k as u32));
        let (left, right): (Vec<Var>, Vec<Var>) = match partition {
            Partition::Observability => (at(0).collect(), (1..=stack.sigma).flat_map(at).collect()),
            Partition::Identifiability => (self.sys.theta.clone(), (0..=stack.sigma).flat_map(at).collect()),
        };
        debug_assert!(partition == Partition::Identifiability || left.len() == n);
        let cols: Vec<Var> = left.iter().chain(&right).copied().collect();
        let mut entries = Vec::with_capacity(stack.fbar.len() + stack.hbar.len());
        for row in stack.fbar.iter().chain(&stack.hbar) {
            let free = row.free_vars();
            let r = cols.iter().map(|c| if free.contains(c) { self.partial(row, *c) } else { Expr::zero() }).collect();
            entries.push(r);
        }
        JacobianBlocks {
            partition,
            f_rows: stack.fbar.len(),
            h_rows: stack.hbar.len(),
            left,
            right,
            entries,
            sigma: stack.sigma,
        }
    }
}

/// Convenience wrapper building one stack without a long-lived cache.
pub fn build_stack(sys: &StackSystem, mu: usize, nu: usize) -> DerivativeStack {
    StackCache::new(sys.clone()).build(mu, nu)
}

fn pin_parameter_derivatives(e: &Expr, table: &SymbolTable) -> Expr {
    e.substitute(&|v| (v.order > 0 && table.base_kind(v) == SymbolKind::Parameter).then(Expr::zero))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::evaluate;
    use crate::model::DaeModel;

    fn reactor() -> DaeModel {
        DaeModel::from_json(include_str!("../fixtures/reactor.json")).unwrap()
    }

    #[test]
    fn reactor_stack_sizes() {
        let m = reactor();
        let s = build_stack(&StackSystem::from_model(&m), 2, 2);
        assert_eq!((s.fbar.len(), s.hbar.len(), s.sigma), (9, 3, 3));
        let t = m.symbols();
        let h: Vec<String> = s.hbar.iter().map(|e| e.to_string_with(t)).collect();
        assert_eq!(h, ["x1", "x1'", "x1''"]);
        let a = m.augment(&["Tc"]).unwrap();
        let s = build_stack(&StackSystem::from_augmented(&a), 2, 2);
        assert_eq!(s.fbar.len(), 12);
        for k in 0..3 {
            assert!(s.fbar[4 * k + 3].is_zero());
        }
    }

    #[test]
    fn zero_order_stack_is_the_model() {
        let m = reactor();
        let sys = StackSystem::from_model(&m);
        let s = build_stack(&sys, 0, 0);
        assert_eq!(s.sigma, 1);
        assert_eq!(s.fbar, m.implicit_residuals());
        assert_eq!(s.hbar, m.outputs().to_vec());
    }

    #[test]
    fn reactor_theta_column_has_single_level_zero_entry() {
        let m = reactor();
        let a = m.augment(&["Tc"]).unwrap();
        let mut cache = StackCache::new(StackSystem::from_augmented(&a));
        let s = cache.build(2, 2);
        let b = cache.blocks(&s, Partition::Identifiability);
        assert_eq!((b.left.len(), b.right.len()), (1, 12));
        let col: Vec<&Expr> = b.entries.iter().map(|r| &r[0]).collect();
        let nonzero: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_zero()).collect();
        assert_eq!(nonzero, vec![1]);
        let k3 = m.parameter_value("k3").unwrap();
        let empty: HashMap<Var, f64> = [(m.parameters()[2], k3)].into_iter().collect();
        assert_eq!(evaluate(col[1], &empty).unwrap(), 2.0921);
    }

    #[test]
    fn observability_columns() {
        let m = reactor();
        let mut cache = StackCache::new(StackSystem::from_model(&m));
        let s = cache.build(1, 1);
        let b = cache.blocks(&s, Partition::Observability);
        assert_eq!((b.rows(), b.left.len(), b.right.len()), (8, 3, 6));
        assert_eq!(b.top_left().len(), 6);
        assert_eq!(b.bottom_right()[0].len(), 6);
    }
}
