use std::collections::HashMap;

use super::eval::{pow, EvalError};
use super::{Expr, Func, Node, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    Var(Var),
    Add(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, u32),
    Neg(u32),
    Call(Func, u32),
    Atan2(u32, u32),
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    /// index into `Tape::vars`
    Load(u32),
    Add(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Pow(u32, u32),
    Neg(u32),
    Call(Func, u32),
    Atan2(u32, u32),
}

/// Straight-line program evaluating many expressions at once.
///
/// Compilation hash-conses structurally equal subtrees, so the shared
/// subexpressions of a Jacobian are evaluated once per point.
#[derive(Clone, Debug)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<u32>,
    vars: Vec<Var>,
}

struct Compiler {
    ops: Vec<Op>,
    interned: HashMap<Key, u32>,
    by_ptr: HashMap<*const Node, (Expr, u32)>,
    vars: Vec<Var>,
    var_slot: HashMap<Var, u32>,
}

impl Compiler {
    fn push(&mut self, key: Key, op: Op) -> u32 {
        if let Some(&i) = self.interned.get(&key) {
            return i;
        }
        let i = self.ops.len() as u32;
        self.ops.push(op);
        self.interned.insert(key, i);
        i
    }

    fn compile(&mut self, e: &Expr) -> u32 {
        if let Some((_, i)) = self.by_ptr.get(&e.key()) {
            return *i;
        }
        let i = match e.node() {
            Node::Const(c) => self.push(Key::Const(c.to_bits()), Op::Const(*c)),
            Node::Var(v) => {
                let slot = match self.var_slot.get(v) {
                    Some(&s) => s,
                    None => {
                        let s = self.vars.len() as u32;
                        self.vars.push(*v);
                        self.var_slot.insert(*v, s);
                        s
                    }
                };
                self.push(Key::Var(*v), Op::Load(slot))
            }
            Node::Add(a, b) => {
                let (a, b) = (self.compile(a), self.compile(b));
                self.push(Key::Add(a, b), Op::Add(a, b))
            }
            Node::Mul(a, b) => {
                let (a, b) = (self.compile(a), self.compile(b));
                self.push(Key::Mul(a, b), Op::Mul(a, b))
            }
            Node::Div(a, b) => {
                let (a, b) = (self.compile(a), self.compile(b));
                self.push(Key::Div(a, b), Op::Div(a, b))
            }
            Node::Pow(a, b) => {
                let (a, b) = (self.compile(a), self.compile(b));
                self.push(Key::Pow(a, b), Op::Pow(a, b))
            }
            Node::Neg(a) => {
                let a = self.compile(a);
                self.push(Key::Neg(a), Op::Neg(a))
            }
            Node::Call(f, a) => {
                let a = self.compile(a);
                self.push(Key::Call(*f, a), Op::Call(*f, a))
            }
            Node::Atan2(y, x) => {
                let (y, x) = (self.compile(y), self.compile(x));
                self.push(Key::Atan2(y, x), Op::Atan2(y, x))
            }
        };
        self.by_ptr.insert(e.key(), (e.clone(), i));
        i
    }
}

impl Tape {
    pub fn compile(exprs: &[Expr]) -> Tape {
        let mut c = Compiler {
            ops: Vec::new(),
            interned: HashMap::new(),
            by_ptr: HashMap::new(),
            vars: Vec::new(),
            var_slot: HashMap::new(),
        };
        let outputs = exprs.iter().map(|e| c.compile(e)).collect();
        Tape { ops: c.ops, outputs, vars: c.vars }
    }

    /// Symbols the tape reads, in slot order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates all outputs; `lookup` is queried once per distinct symbol.
    pub fn eval(&self, lookup: &dyn Fn(Var) -> Option<f64>) -> Result<Vec<f64>, EvalError> {
        let inputs = self
            .vars
            .iter()
            .map(|&v| lookup(v).ok_or(EvalError::Unbound(v)))
            .collect::<Result<Vec<_>, _>>()?;
        self.eval_slots(&inputs)
    }

    /// Evaluates with inputs given in [`Tape::vars`] order.
    pub fn eval_slots(&self, inputs: &[f64]) -> Result<Vec<f64>, EvalError> {
        assert_eq!(inputs.len(), self.vars.len(), "tape input arity");
        let mut regs = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let r = |i: &u32| -> f64 { regs[*i as usize] };
            let v = match op {
                Op::Const(c) => *c,
                Op::Load(s) => inputs[*s as usize],
                Op::Add(a, b) => r(a) + r(b),
                Op::Mul(a, b) => r(a) * r(b),
                Op::Div(a, b) => r(a) / r(b),
                Op::Pow(a, b) => pow(r(a), r(b)),
                Op::Neg(a) => -r(a),
                Op::Call(f, a) => f.apply(r(a)),
                Op::Atan2(y, x) => r(y).atan2(r(x)),
            };
            regs.push(v);
        }
        self.outputs
            .iter()
            .map(|&i| {
                let v = regs[i as usize];
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError::NonFinite { value: v, subtree: format!("tape register {i}") })
                }
            })
            .collect()
    }
}
