//! Numeric evaluation of compiled expression lists against model data.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::expr::{EvalError, Expr, SymbolKind, SymbolTable, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Position in the full state vector `x = (x1, x2)`.
    State(usize),
    /// Position in the model's parameter list.
    Parameter(usize),
    Time,
}

/// Maps base symbols to their numeric role.
#[derive(Clone, Debug, Default)]
pub struct Roles {
    map: HashMap<u32, Role>,
}

impl Roles {
    pub fn build(table: &SymbolTable, states: &[Var], parameters: &[Var]) -> Roles {
        let mut map = HashMap::new();
        for (i, v) in states.iter().enumerate() {
            map.insert(v.base, Role::State(i));
        }
        for (i, v) in parameters.iter().enumerate() {
            map.insert(v.base, Role::Parameter(i));
        }
        for v in table.of_kind(SymbolKind::Time) {
            map.insert(v.base, Role::Time);
        }
        Roles { map }
    }

    pub fn role(&self, v: Var) -> Option<Role> {
        self.map.get(&v.base).copied()
    }
}

/// Values of states and their derivatives, parameters and time.
#[derive(Clone, Copy, Debug)]
pub struct Valuation<'a> {
    /// `states[k]` holds the k-th time derivative of the full state vector.
    pub states: &'a [Vec<f64>],
    pub params: &'a [Option<f64>],
    pub time: f64,
}

#[derive(Clone, Copy, Debug)]
enum Source {
    State { index: usize, order: usize },
    Param(usize),
    Time,
}

/// A [`Tape`] together with the lookup plan for its inputs.
#[derive(Clone, Debug)]
pub struct Compiled {
    tape: Tape,
    sources: Vec<Source>,
}

impl Compiled {
    pub fn new(exprs: &[Expr], roles: &Roles) -> Result<Compiled> {
        let tape = Tape::compile(exprs);
        let sources = tape
            .vars()
            .iter()
            .map(|&v| match roles.role(v) {
                Some(Role::State(index)) => Ok(Source::State { index, order: v.order as usize }),
                Some(Role::Parameter(i)) if v.order == 0 => Ok(Source::Param(i)),
                Some(Role::Time) if v.order == 0 => Ok(Source::Time),
                _ => Err(Error::InvalidModel(format!("symbol #{} of order {} has no numeric role", v.base, v.order))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Compiled { tape, sources })
    }

    pub fn len(&self) -> usize {
        self.tape.output_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Highest state derivative order read by the tape.
    pub fn max_state_order(&self) -> usize {
        self.sources
            .iter()
            .filter_map(|s| match s {
                Source::State { order, .. } => Some(*order),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, v: &Valuation) -> Result<Vec<f64>> {
        let mut inputs = Vec::with_capacity(self.sources.len());
        for (slot, s) in self.sources.iter().enumerate() {
            let x = match *s {
                Source::State { index, order } => {
                    let level = v
                        .states
                        .get(order)
                        .ok_or(Error::MissingDerivatives { needed: order, have: v.states.len().saturating_sub(1) })?;
                    *level.get(index).ok_or_else(|| Error::Dimension(format!("state vector has {} entries", level.len())))?
                }
                Source::Param(i) => v
                    .params
                    .get(i)
                    .copied()
                    .flatten()
                    .ok_or(Error::Eval(EvalError::Unbound(self.tape.vars()[slot])))?,
                Source::Time => v.time,
            };
            inputs.push(x);
        }
        Ok(self.tape.eval_slots(&inputs)?)
    }
}
