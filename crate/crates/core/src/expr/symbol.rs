use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Role of a base symbol in a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolKind {
    State,
    AlgebraicState,
    Parameter,
    Time,
    /// Only ever reported for `order > 0`; base symbols carry one of the other kinds.
    Derivative,
}

/// A symbol occurrence: a base symbol together with its time-derivative order.
///
/// Derivative symbols are not stored anywhere; `Var { base, order: k + 1 }` is
/// the derivative of `Var { base, order: k }` and its name is generated on demand
/// by the [`SymbolTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub base: u32,
    pub order: u32,
}

impl Var {
    pub const fn new(base: u32, order: u32) -> Self {
        Self { base, order }
    }

    pub const fn derivative(self) -> Self {
        Self { base: self.base, order: self.order + 1 }
    }

    pub const fn underived(self) -> Self {
        Self { base: self.base, order: 0 }
    }
}

/// Public description of a symbol, as resolved through a [`SymbolTable`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Symbol {
    pub name: String,
    pub kind: SymbolKind,
    pub base: Option<String>,
    pub order: u32,
}

#[derive(Clone, Debug)]
struct BaseSymbol {
    name: String,
    kind: SymbolKind,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SymbolError {
    #[error("duplicate symbol name `{0}`")]
    Duplicate(String),
    #[error("invalid symbol name `{0}`")]
    InvalidName(String),
}

/// Ordered table of base symbols for one model.
#[derive(Clone, Debug, Default)]
pub struct SymbolTable {
    bases: Vec<BaseSymbol>,
    by_name: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: &str, kind: SymbolKind) -> Result<Var, SymbolError> {
        if kind == SymbolKind::Derivative {
            return Err(SymbolError::InvalidName(name.to_string()));
        }
        if !is_identifier(name) {
            return Err(SymbolError::InvalidName(name.to_string()));
        }
        if self.by_name.contains_key(name) {
            return Err(SymbolError::Duplicate(name.to_string()));
        }
        let id = self.bases.len() as u32;
        self.bases.push(BaseSymbol { name: name.to_string(), kind });
        self.by_name.insert(name.to_string(), id);
        Ok(Var::new(id, 0))
    }

    pub fn lookup(&self, name: &str) -> Option<Var> {
        self.by_name.get(name).map(|&b| Var::new(b, 0))
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Kind of the underlying base symbol, ignoring the derivative order.
    pub fn base_kind(&self, var: Var) -> SymbolKind {
        self.bases[var.base as usize].kind
    }

    pub fn base_name(&self, var: Var) -> &str {
        &self.bases[var.base as usize].name
    }

    pub fn name(&self, var: Var) -> String {
        let base = self.base_name(var);
        let mut s = String::with_capacity(base.len() + var.order as usize);
        s.push_str(base);
        for _ in 0..var.order {
            s.push('\'');
        }
        s
    }

    pub fn symbol(&self, var: Var) -> Symbol {
        let base_kind = self.base_kind(var);
        if var.order == 0 {
            Symbol { name: self.name(var), kind: base_kind, base: None, order: 0 }
        } else {
            Symbol {
                name: self.name(var),
                kind: SymbolKind::Derivative,
                base: Some(self.base_name(var).to_string()),
                order: var.order,
            }
        }
    }

    /// Base symbols of the given kind, in declaration order.
    pub fn of_kind(&self, kind: SymbolKind) -> Vec<Var> {
        self.bases
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == kind)
            .map(|(i, _)| Var::new(i as u32, 0))
            .collect()
    }

    pub fn display<'a>(&'a self, var: Var) -> impl fmt::Display + 'a {
        DisplayVar { table: self, var }
    }
}

struct DisplayVar<'a> {
    table: &'a SymbolTable,
    var: Var,
}

impl fmt::Display for DisplayVar<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.table.base_name(self.var))?;
        for _ in 0..self.var.order {
            f.write_str("'")?;
        }
        Ok(())
    }
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
