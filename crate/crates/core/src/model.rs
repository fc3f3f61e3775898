//! DAE model declarations, parameter augmentation and algebraic projection.
//!
//! A model is either implicit, `F(x, x', theta) = 0`, or semi-explicit,
//! `x1' = f1(x1, x2)`, `0 = f2(x1, x2)`, with outputs `y = h(x)`. The state
//! vector is always ordered as `x = (x1, x2)`.

use std::sync::{Arc, OnceLock};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compiled::{Compiled, Roles, Valuation};
use crate::error::{Error, Result};
use crate::expr::{diff_partial, parse, Expr, SymbolKind, SymbolTable, Var};

/// On-disk model description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    pub states_differential: Vec<String>,
    #[serde(default)]
    pub states_algebraic: Vec<String>,
    /// `null` marks a parameter without a nominal value.
    #[serde(default)]
    pub parameters: IndexMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f2: Option<Vec<String>>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub implicit: Option<Vec<String>>,
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_condition: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<String>,
}

#[derive(Clone, Debug)]
pub enum Residuals {
    Implicit(Vec<Expr>),
    SemiExplicit { f1: Vec<Expr>, f2: Vec<Expr> },
}

#[derive(Debug)]
struct Kernels {
    f1: Compiled,
    f2: Compiled,
    /// df2/dx2, row-major
    j22: Compiled,
    /// df2/dx1, row-major
    j21: Compiled,
    /// df1/dx, row-major
    j1: Compiled,
}

#[derive(Clone, Debug)]
pub struct DaeModel {
    name: String,
    symbols: Arc<SymbolTable>,
    differential: Vec<Var>,
    algebraic: Vec<Var>,
    parameters: Vec<Var>,
    values: Vec<Option<f64>>,
    residuals: Residuals,
    outputs: Vec<Expr>,
    initial_condition: Option<Vec<f64>>,
    roles: Roles,
    kernels: Arc<OnceLock<std::result::Result<Kernels, String>>>,
}

fn parse_all(srcs: &[String], table: &SymbolTable, what: &str) -> Result<Vec<Expr>> {
    srcs.iter()
        .enumerate()
        .map(|(i, s)| parse(s, table).map_err(|e| Error::Parse { context: format!("{what}[{i}]"), source: e }))
        .collect()
}

impl DaeModel {
    pub fn from_file(file: &ModelFile) -> Result<DaeModel> {
        let mut table = SymbolTable::new();
        let mut differential = Vec::new();
        for s in &file.states_differential {
            differential.push(table.declare(s, SymbolKind::State)?);
        }
        let mut algebraic = Vec::new();
        for s in &file.states_algebraic {
            algebraic.push(table.declare(s, SymbolKind::AlgebraicState)?);
        }
        let mut parameters = Vec::new();
        let mut values = Vec::new();
        for (name, v) in &file.parameters {
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(Error::InvalidModel(format!("parameter `{name}` is not finite")));
                }
            }
            parameters.push(table.declare(name, SymbolKind::Parameter)?);
            values.push(*v);
        }
        if let Some(t) = &file.time {
            table.declare(t, SymbolKind::Time)?;
        }
        let (n1, n2) = (differential.len(), algebraic.len());
        let residuals = match (&file.f1, &file.f2, &file.implicit) {
            (Some(f1), f2, None) => {
                let f1 = parse_all(f1, &table, "f1")?;
                let f2 = parse_all(f2.as_deref().unwrap_or(&[]), &table, "f2")?;
                if f1.len() != n1 || f2.len() != n2 {
                    return Err(Error::InvalidModel(format!(
                        "expected {n1} f1 and {n2} f2 rows, got {} and {}",
                        f1.len(),
                        f2.len()
                    )));
                }
                if f1.iter().chain(&f2).any(|e| e.max_order() > 0) {
                    return Err(Error::InvalidModel("semi-explicit right-hand sides may not contain derivatives".into()));
                }
                Residuals::SemiExplicit { f1, f2 }
            }
            (None, None, Some(f)) => {
                let f = parse_all(f, &table, "F")?;
                if f.len() != n1 + n2 {
                    return Err(Error::InvalidModel(format!("expected {} implicit rows, got {}", n1 + n2, f.len())));
                }
                if f.iter().any(|e| e.max_order() > 1) {
                    return Err(Error::InvalidModel("implicit residuals may contain first derivatives only".into()));
                }
                Residuals::Implicit(f)
            }
            _ => return Err(Error::InvalidModel("give either `f1` (with optional `f2`) or `F`".into())),
        };
        let outputs = parse_all(&file.outputs, &table, "outputs")?;
        let mut model = DaeModel {
            name: file.name.clone(),
            roles: Roles::default(),
            symbols: Arc::new(table),
            differential,
            algebraic,
            parameters,
            values,
            residuals,
            outputs: Vec::new(),
            initial_condition: file.initial_condition.clone(),
            kernels: Arc::default(),
        };
        model.roles = Roles::build(&model.symbols, &model.states(), &model.parameters);
        model.check_residual_symbols()?;
        model.set_outputs(outputs)?;
        if let Some(ic) = &model.initial_condition {
            if ic.len() != model.n() || ic.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("initial condition must have {} finite entries", model.n())));
            }
        }
        Ok(model)
    }

    pub fn from_json(text: &str) -> Result<DaeModel> {
        DaeModel::from_file(&serde_json::from_str(text)?)
    }

    fn check_residual_symbols(&self) -> Result<()> {
        for e in self.implicit_residuals() {
            for v in e.free_vars() {
                if self.symbols.base_kind(v) == SymbolKind::Parameter && v.order > 0 {
                    return Err(Error::InvalidModel(format!("parameter derivative `{}` in residuals", self.symbols.name(v))));
                }
            }
        }
        Ok(())
    }

    fn set_outputs(&mut self, outputs: Vec<Expr>) -> Result<()> {
        for (i, h) in outputs.iter().enumerate() {
            if h.max_order() > 0 {
                return Err(Error::InvalidModel(format!("output {i} contains a derivative symbol")));
            }
        }
        self.outputs = outputs;
        Ok(())
    }

    /// Copy of the model measuring `outputs` instead.
    pub fn with_outputs<S: AsRef<str>>(&self, outputs: &[S]) -> Result<DaeModel> {
        let srcs: Vec<String> = outputs.iter().map(|s| s.as_ref().to_string()).collect();
        let parsed = parse_all(&srcs, &self.symbols, "outputs")?;
        let mut m = self.clone();
        m.set_outputs(parsed)?;
        Ok(m)
    }

    /// Copy of the model with a parameter's nominal value replaced.
    pub fn with_parameter(&self, name: &str, value: Option<f64>) -> Result<DaeModel> {
        let i = self.parameter_index(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let mut m = self.clone();
        m.values[i] = value;
        m.kernels = Arc::default();
        Ok(m)
    }

    pub fn to_file(&self) -> ModelFile {
        let t = &*self.symbols;
        let show = |es: &[Expr]| es.iter().map(|e| e.to_string_with(t)).collect::<Vec<_>>();
        let (f1, f2, implicit) = match &self.residuals {
            Residuals::SemiExplicit { f1, f2 } => (Some(show(f1)), Some(show(f2)), None),
            Residuals::Implicit(f) => (None, None, Some(show(f))),
        };
        ModelFile {
            name: self.name.clone(),
            states_differential: self.differential.iter().map(|v| t.name(*v)).collect(),
            states_algebraic: self.algebraic.iter().map(|v| t.name(*v)).collect(),
            parameters: self.parameters.iter().zip(&self.values).map(|(v, x)| (t.name(*v), *x)).collect(),
            f1,
            f2,
            implicit,
            outputs: show(&self.outputs),
            initial_condition: self.initial_condition.clone(),
            time: t.of_kind(SymbolKind::Time).first().map(|v| t.name(*v)),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model file serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn symbols(&self) -> &SymbolTable {
        &self.symbols
    }

    pub(crate) fn symbols_arc(&self) -> Arc<SymbolTable> {
        self.symbols.clone()
    }

    pub(crate) fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn n1(&self) -> usize {
        self.differential.len()
    }

    pub fn n2(&self) -> usize {
        self.algebraic.len()
    }

    pub fn n(&self) -> usize {
        self.n1() + self.n2()
    }

    pub fn q(&self) -> usize {
        self.outputs.len()
    }

    /// Full state `x = (x1, x2)`.
    pub fn states(&self) -> Vec<Var> {
        self.differential.iter().chain(&self.algebraic).copied().collect()
    }

    pub fn differential_states(&self) -> &[Var] {
        &self.differential
    }

    pub fn algebraic_states(&self) -> &[Var] {
        &self.algebraic
    }

    pub fn state_names(&self) -> Vec<String> {
        self.states().iter().map(|v| self.symbols.name(*v)).collect()
    }

    pub fn parameters(&self) -> &[Var] {
        &self.parameters
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters.iter().map(|v| self.symbols.name(*v)).collect()
    }

    pub fn parameter_values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        let v = self.symbols.lookup(name)?;
        self.parameters.iter().position(|p| *p == v)
    }

    pub fn parameter_value(&self, name: &str) -> Option<f64> {
        self.parameter_index(name).and_then(|i| self.values[i])
    }

    pub fn residuals(&self) -> &Residuals {
        &self.residuals
    }

    pub fn outputs(&self) -> &[Expr] {
        &self.outputs
    }

    pub fn initial_condition(&self) -> Option<&[f64]> {
        self.initial_condition.as_deref()
    }

    pub fn is_semi_explicit(&self) -> bool {
        matches!(self.residuals, Residuals::SemiExplicit { .. })
    }

    /// `F(x, x')` for either form; semi-explicit models give `[f1 - x1'; f2]`.
    pub fn implicit_residuals(&self) -> Vec<Expr> {
        match &self.residuals {
            Residuals::Implicit(f) => f.clone(),
            Residuals::SemiExplicit { f1, f2 } => f1
                .iter()
                .zip(&self.differential)
                .map(|(f, v)| f.clone() - Expr::var(v.derivative()))
                .chain(f2.iter().cloned())
                .collect(),
        }
    }

    pub fn to_implicit(&self) -> Result<DaeModel> {
        if !self.is_semi_explicit() {
            return Err(Error::AlreadyImplicit);
        }
        let mut m = self.clone();
        m.residuals = Residuals::Implicit(self.implicit_residuals());
        m.kernels = Arc::default();
        Ok(m)
    }

    pub fn augment<S: AsRef<str>>(&self, theta: &[S]) -> Result<AugmentedModel> {
        if theta.is_empty() {
            return Err(Error::EmptyTheta);
        }
        let mut idx = Vec::new();
        for name in theta {
            let name = name.as_ref();
            let i = self.parameter_index(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
            if idx.contains(&i) {
                return Err(Error::InvalidModel(format!("parameter `{name}` listed twice")));
            }
            idx.push(i);
        }
        let mut known = self.values.clone();
        for &i in &idx {
            known[i] = None;
        }
        Ok(AugmentedModel {
            theta: idx.iter().map(|&i| self.parameters[i]).collect(),
            nominal: idx.iter().map(|&i| self.values[i]).collect(),
            theta_index: idx,
            known,
            base: self.clone(),
        })
    }

    fn kernels(&self) -> Result<&Kernels> {
        let k = self.kernels.get_or_init(|| self.build_kernels().map_err(|e| e.to_string()));
        k.as_ref().map_err(|e| Error::InvalidModel(e.clone()))
    }

    fn build_kernels(&self) -> Result<Kernels> {
        let Residuals::SemiExplicit { f1, f2 } = &self.residuals else {
            return Err(Error::NotSemiExplicit);
        };
        let jac = |rows: &[Expr], cols: &[Var]| -> Vec<Expr> {
            rows.iter().flat_map(|r| cols.iter().map(move |c| diff_partial(r, *c))).collect()
        };
        let states = self.states();
        Ok(Kernels {
            f1: Compiled::new(f1, &self.roles)?,
            f2: Compiled::new(f2, &self.roles)?,
            j22: Compiled::new(&jac(f2, &self.algebraic), &self.roles)?,
            j21: Compiled::new(&jac(f2, &self.differential), &self.roles)?,
            j1: Compiled::new(&jac(f1, &states), &self.roles)?,
        })
    }

    fn valuation<'a>(&'a self, states: &'a [Vec<f64>]) -> Valuation<'a> {
        Valuation { states, params: &self.values, time: 0.0 }
    }

    fn check_len(&self, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(Error::Dimension(format!("{what} has {got} entries, expected {want}")));
        }
        Ok(())
    }

    /// `f1(x)` at the full state `x`.
    pub fn eval_f1(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len("state", x.len(), self.n())?;
        self.kernels()?.f1.eval(&self.valuation(&[x.to_vec()]))
    }

    /// `f2(x)` at the full state `x`.
    pub fn eval_f2(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len("state", x.len(), self.n())?;
        self.kernels()?.f2.eval(&self.valuation(&[x.to_vec()]))
    }

    /// Evaluates the implicit residual `F(x, x')`.
    pub fn eval_implicit(&self, x: &[f64], xdot: &[f64]) -> Result<Vec<f64>> {
        self.check_len("state", x.len(), self.n())?;
        self.check_len("state derivative", xdot.len(), self.n())?;
        let c = Compiled::new(&self.implicit_residuals(), &self.roles)?;
        c.eval(&self.valuation(&[x.to_vec(), xdot.to_vec()]))
    }

    pub(crate) fn jacobian_f1(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.kernels()?.j1.eval(&self.valuation(&[x.to_vec()]))?;
        Ok(DMatrix::from_row_slice(self.n1(), self.n(), &v))
    }

    /// `df2/dx2` at `x`.
    pub fn jacobian_f2_x2(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.kernels()?.j22.eval(&self.valuation(&[x.to_vec()]))?;
        Ok(DMatrix::from_row_slice(self.n2(), self.n2(), &v))
    }

    /// `df2/dx1` at `x`.
    pub fn jacobian_f2_x1(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.kernels()?.j21.eval(&self.valuation(&[x.to_vec()]))?;
        Ok(DMatrix::from_row_slice(self.n2(), self.n1(), &v))
    }

    /// Solves `f2(x1, x2) = 0` for `x2` by damped Newton iteration from `guess`.
    pub fn solve_algebraic(&self, x1: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        self.check_len("x1", x1.len(), self.n1())?;
        self.check_len("x2 guess", guess.len(), self.n2())?;
        self.kernels()?;
        let n1 = self.n1();
        let mut x: Vec<f64> = x1.iter().chain(guess).copied().collect();
        let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        let mut r = self.eval_f2(&x)?;
        const MAX_ITER: usize = 50;
        for iteration in 0..=MAX_ITER {
            let rn = norm(&r);
            if rn <= 1e-10 * (1.0 + norm(&x[n1..])) {
                return Ok(x[n1..].to_vec());
            }
            if iteration == MAX_ITER {
                return Err(Error::NoConvergence { iterations: MAX_ITER, residual: rn });
            }
            let j = self.jacobian_f2_x2(&x)?;
            let step = j
                .lu()
                .solve(&DVector::from_column_slice(&r))
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or(Error::SingularJacobian { iteration })?;
            // halve the step while the residual does not decrease
            let mut lambda = 1.0;
            let mut last = None;
            for _ in 0..=10 {
                let trial: Vec<f64> =
                    x.iter().enumerate().map(|(i, v)| if i < n1 { *v } else { v - lambda * step[i - n1] }).collect();
                if let Ok(tr) = self.eval_f2(&trial) {
                    let decreased = norm(&tr) < rn;
                    last = Some((trial, tr));
                    if decreased {
                        break;
                    }
                }
                lambda *= 0.5;
            }
            let (nx, nr) = last.ok_or(Error::NoConvergence { iterations: iteration, residual: rn })?;
            x = nx;
            r = nr;
        }
        unreachable!()
    }

    /// Projects a full state onto the constraint manifold, keeping `x1`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len("state", x.len(), self.n())?;
        if self.n2() == 0 {
            return Ok(x.to_vec());
        }
        let x2 = self.solve_algebraic(&x[..self.n1()], &x[self.n1()..])?;
        Ok(x[..self.n1()].iter().copied().chain(x2).collect())
    }
}

/// Model with the parameters `theta` promoted to constant states.
#[derive(Clone, Debug)]
pub struct AugmentedModel {
    base: DaeModel,
    theta: Vec<Var>,
    theta_index: Vec<usize>,
    nominal: Vec<Option<f64>>,
    known: Vec<Option<f64>>,
}

impl AugmentedModel {
    pub fn base(&self) -> &DaeModel {
        &self.base
    }

    pub fn theta(&self) -> &[Var] {
        &self.theta
    }

    pub fn theta_names(&self) -> Vec<String> {
        self.theta.iter().map(|v| self.base.symbols.name(*v)).collect()
    }

    pub fn p(&self) -> usize {
        self.theta.len()
    }

    /// Positions of `theta` in the base model's parameter list.
    pub fn theta_index(&self) -> &[usize] {
        &self.theta_index
    }

    /// Nominal values of `theta` taken from the base model, if all are known.
    pub fn nominal_theta(&self) -> Option<Vec<f64>> {
        self.nominal.iter().copied().collect()
    }

    /// Parameter values with the promoted entries removed.
    pub fn known_values(&self) -> &[Option<f64>] {
        &self.known
    }

    /// `n + p` residuals: the base implicit residuals followed by `theta' = 0`.
    pub fn residuals(&self) -> Vec<Expr> {
        let mut r = self.base.implicit_residuals();
        r.extend(self.extra_residuals());
        r
    }

    pub fn extra_residuals(&self) -> Vec<Expr> {
        self.theta.iter().map(|v| Expr::var(v.derivative())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn reactor_json() -> &'static str {
        r#"{
            "name": "reactor",
            "states_differential": ["x1", "x2"],
            "states_algebraic": ["x3"],
            "parameters": {"k1": 1, "k2": 209.205, "k3": 2.0921, "k4": 8750.3, "k5": 7.2e10,
                           "c0": 1, "T0": 350, "Tc": 305},
            "f1": ["k1*(c0-x1) - x3", "k1*(T0-x2) + k2*x3 + k3*(Tc-x2)"],
            "f2": ["x3 - k5*exp(-k4/x2)*x1"],
            "outputs": ["x1"],
            "initial_condition": [0.5, 350, 0.4995]
        }"#
    }

    #[test]
    fn reactor_implicit_rows() {
        let m = DaeModel::from_json(reactor_json()).unwrap();
        let imp = m.to_implicit().unwrap();
        let t = imp.symbols();
        match imp.residuals() {
            Residuals::Implicit(f) => {
                assert_eq!(f.len(), 3);
                assert_eq!(f[0].to_string_with(t), "k1*(c0 - x1) - x3 - x1'");
            }
            _ => panic!("expected implicit"),
        }
        assert!(matches!(imp.to_implicit(), Err(Error::AlreadyImplicit)));
    }

    #[test]
    fn augment_counts_and_errors() {
        let m = DaeModel::from_json(reactor_json()).unwrap();
        let a = m.augment(&["Tc"]).unwrap();
        assert_eq!(a.residuals().len(), 4);
        assert_eq!(a.known_values()[m.parameter_index("Tc").unwrap()], None);
        assert_eq!(a.nominal_theta(), Some(vec![305.0]));
        assert!(matches!(m.augment::<&str>(&[]), Err(Error::EmptyTheta)));
        assert!(matches!(m.augment(&["zz"]), Err(Error::UnknownParameter(_))));
        // base rows kept verbatim
        let base = m.implicit_residuals();
        assert!(Arc::ptr_eq(&a.base().symbols_arc(), &m.symbols_arc()));
        for (x, y) in base.iter().zip(a.residuals()) {
            assert_eq!(*x, y);
        }
    }

    #[test]
    fn reactor_algebraic_solution_matches_closed_form() {
        let m = DaeModel::from_json(reactor_json()).unwrap();
        let x3 = m.solve_algebraic(&[0.5, 350.0], &[0.0]).unwrap()[0];
        let expect = 7.2e10 * (-8750.3_f64 / 350.0).exp() * 0.5;
        assert!((x3 - expect).abs() <= 1e-10 * (1.0 + expect.abs()), "{x3} vs {expect}");
    }

    #[test]
    fn trivial_constraint_and_singular_jacobian() {
        let file = ModelFile {
            states_differential: vec!["a".into()],
            states_algebraic: vec!["b".into()],
            parameters: [("c".to_string(), Some(2.5))].into_iter().collect(),
            f1: Some(vec!["0".into()]),
            f2: Some(vec!["b - c".into()]),
            ..Default::default()
        };
        let m = DaeModel::from_file(&file).unwrap();
        assert_eq!(m.solve_algebraic(&[1.0], &[-40.0]).unwrap(), vec![2.5]);
        let mut bad = file.clone();
        bad.f2 = Some(vec!["a - c".into()]);
        let m = DaeModel::from_file(&bad).unwrap();
        assert!(matches!(m.solve_algebraic(&[1.0], &[0.0]), Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn json_round_trip() {
        let m = DaeModel::from_json(reactor_json()).unwrap();
        let again = DaeModel::from_json(&m.to_json()).unwrap();
        assert_eq!(m.to_file(), again.to_file());
        assert_eq!(again.parameter_value("k5"), Some(7.2e10));
    }

    #[test]
    fn rejects_malformed_models() {
        let mut f: ModelFile = serde_json::from_str(reactor_json()).unwrap();
        f.f2 = None;
        assert!(DaeModel::from_file(&f).is_err());
        let mut f: ModelFile = serde_json::from_str(reactor_json()).unwrap();
        f.f1.as_mut().unwrap()[0] = "x1'".into();
        assert!(DaeModel::from_file(&f).is_err());
        let mut f: ModelFile = serde_json::from_str(reactor_json()).unwrap();
        f.outputs = vec!["q".into()];
        assert!(matches!(DaeModel::from_file(&f), Err(Error::Parse { .. })));
    }

    #[test]
    fn implicit_equals_semi_explicit_evaluation() {
        let m = DaeModel::from_json(reactor_json()).unwrap();
        let x = [0.3, 370.0, 0.2];
        let xd = [0.01, -2.0, 0.3];
        let r = m.eval_implicit(&x, &xd).unwrap();
        let f1 = m.eval_f1(&x).unwrap();
        let f2 = m.eval_f2(&x).unwrap();
        assert_eq!(r, vec![f1[0] - xd[0], f1[1] - xd[1], f2[0]]);
    }
}
