use std::fmt::{self, Write};

use super::{Expr, Node, SymbolTable, Var};

// binding strength of the printed context
const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const UNARY: u8 = 3;
const ATOM: u8 = 5;

impl Expr {
    /// Infix rendering that [`parse`](super::parse) reads back to the same tree.
    pub fn to_string_with(&self, table: &SymbolTable) -> String {
        let mut s = String::new();
        write_expr(&mut s, self, 0, &|out: &mut String, v: Var| out.push_str(&table.name(v))).unwrap();
        s
    }

    /// Rendering without a symbol table; symbols print as `#base` plus apostrophes.
    pub fn debug_display(&self) -> String {
        let mut s = String::new();
        write_expr(&mut s, self, 0, &|out: &mut String, v: Var| {
            let _ = write!(out, "#{}", v.base);
            for _ in 0..v.order {
                out.push('\'');
            }
        })
        .unwrap();
        s
    }
}

pub(crate) fn format_number(c: f64) -> String {
    let a = c.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{c}")
    } else {
        format!("{c:e}")
    }
}

type VarWriter<'a> = dyn Fn(&mut String, Var) + 'a;

fn write_expr(out: &mut String, e: &Expr, ctx: u8, var: &VarWriter) -> fmt::Result {
    let own = match e.node() {
        Node::Const(c) if *c < 0.0 => UNARY,
        Node::Const(_) | Node::Var(_) | Node::Call(..) | Node::Atan2(..) => ATOM,
        Node::Add(..) => SUM,
        Node::Mul(..) | Node::Div(..) => PRODUCT,
        Node::Neg(_) => UNARY,
        Node::Pow(..) => UNARY + 1,
    };
    let paren = own < ctx;
    if paren {
        out.push('(');
    }
    match e.node() {
        Node::Const(c) => out.push_str(&format_number(*c)),
        Node::Var(v) => var(out, *v),
        Node::Add(a, b) => {
            write_expr(out, a, SUM, var)?;
            match (b.node(), b.as_const()) {
                (Node::Neg(inner), _) => {
                    out.push_str(" - ");
                    write_expr(out, inner, PRODUCT, var)?;
                }
                (_, Some(c)) if c < 0.0 => {
                    out.push_str(" - ");
                    out.push_str(&format_number(-c));
                }
                _ => {
                    out.push_str(" + ");
                    write_expr(out, b, PRODUCT, var)?;
                }
            }
        }
        Node::Mul(a, b) | Node::Div(a, b) => {
            write_expr(out, a, PRODUCT, var)?;
            out.push(if matches!(e.node(), Node::Mul(..)) { '*' } else { '/' });
            write_expr(out, b, UNARY, var)?;
        }
        Node::Pow(a, b) => {
            write_expr(out, a, ATOM, var)?;
            out.push('^');
            write_expr(out, b, UNARY, var)?;
        }
        Node::Neg(a) => {
            out.push('-');
            write_expr(out, a, UNARY, var)?;
        }
        Node::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            write_expr(out, a, 0, var)?;
            out.push(')');
        }
        Node::Atan2(y, x) => {
            out.push_str("atan2(");
            write_expr(out, y, 0, var)?;
            out.push_str(", ");
            write_expr(out, x, 0, var)?;
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
    Ok(())
}
