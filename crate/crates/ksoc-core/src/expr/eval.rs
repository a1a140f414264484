//! Numeric evaluation: direct tree walks and compiled stack programs for
//! the integrator hot loops.

use super::Expr;
use std::collections::BTreeMap;
use thiserror::Error;

/// Symbol-name to value map. Every free symbol of an expression must be
/// bound before evaluation.
pub type Bindings = BTreeMap<String, f64>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
}

impl Expr {
    /// Evaluates at the given bindings. May return non-finite values for
    /// reciprocal atoms evaluated at their singularities.
    pub fn evaluate(&self, b: &Bindings) -> Result<f64, EvalError> {
        match self {
            Expr::Num(r) => Ok(r.to_f64()),
            Expr::Sym(s) => b
                .get(s)
                .copied()
                .ok_or_else(|| EvalError::UnboundSymbol(s.clone())),
            Expr::Sum(ts) => {
                let mut acc = 0.0;
                for t in ts {
                    acc += t.evaluate(b)?;
                }
                Ok(acc)
            }
            Expr::Prod(fs) => {
                let mut acc = 1.0;
                for t in fs {
                    acc *= t.evaluate(b)?;
                }
                Ok(acc)
            }
            Expr::Pow(base, exp) => Ok(base.evaluate(b)?.powi(*exp)),
            Expr::Sin(a) => Ok(a.evaluate(b)?.sin()),
            Expr::Cos(a) => Ok(a.evaluate(b)?.cos()),
        }
    }
}

/// Fixed assignment of symbol names to slots in a value array.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl SymbolTable {
    pub fn new() -> SymbolTable {
        SymbolTable::default()
    }

    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> SymbolTable {
        let mut t = SymbolTable::new();
        for n in names {
            t.intern(&n);
        }
        t
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(usize),
    AddN(u32),
    MulN(u32),
    Powi(i32),
    Sin,
    Cos,
}

/// Postfix program over a slot array; avoids per-step tree walks when the
/// same expression is evaluated at many points.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    ops: Vec<Op>,
}

impl CompiledExpr {
    pub fn compile(e: &Expr, table: &SymbolTable) -> Result<CompiledExpr, EvalError> {
        let mut ops = Vec::new();
        emit(e, table, &mut ops)?;
        Ok(CompiledExpr { ops })
    }

    /// Evaluates against the slot values; `stack` is scratch space reused
    /// across calls.
    pub fn eval(&self, values: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Load(i) => stack.push(values[i]),
                Op::AddN(n) => {
                    let at = stack.len() - n as usize;
                    let mut acc = 0.0;
                    for v in stack.drain(at..) {
                        acc += v;
                    }
                    stack.push(acc);
                }
                Op::MulN(n) => {
                    let at = stack.len() - n as usize;
                    let mut acc = 1.0;
                    for v in stack.drain(at..) {
                        acc *= v;
                    }
                    stack.push(acc);
                }
                Op::Powi(e) => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = v.powi(e);
                }
                Op::Sin => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = v.sin();
                }
                Op::Cos => {
                    let v = stack.last_mut().expect("stack underflow");
                    *v = v.cos();
                }
            }
        }
        stack.pop().expect("empty program")
    }
}

fn emit(e: &Expr, table: &SymbolTable, ops: &mut Vec<Op>) -> Result<(), EvalError> {
    match e {
        Expr::Num(r) => ops.push(Op::Const(r.to_f64())),
        Expr::Sym(s) => {
            let slot = table
                .slot(s)
                .ok_or_else(|| EvalError::UnboundSymbol(s.clone()))?;
            ops.push(Op::Load(slot));
        }
        Expr::Sum(ts) => {
            for t in ts {
                emit(t, table, ops)?;
            }
            ops.push(Op::AddN(ts.len() as u32));
        }
        Expr::Prod(fs) => {
            for t in fs {
                emit(t, table, ops)?;
            }
            ops.push(Op::MulN(fs.len() as u32));
        }
        Expr::Pow(b, exp) => {
            emit(b, table, ops)?;
            ops.push(Op::Powi(*exp));
        }
        Expr::Sin(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Sin);
        }
        Expr::Cos(a) => {
            emit(a, table, ops)?;
            ops.push(Op::Cos);
        }
    }
    Ok(())
}
