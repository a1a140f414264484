//! Infix rendering. Output parses back through [`super::parse`].

use super::{Expr, Rational};
use std::fmt;

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self, f)
    }
}

fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Sum(terms) => {
            for (i, t) in terms.iter().enumerate() {
                let (neg, mag) = split_sign(t);
                if i == 0 {
                    if neg {
                        write!(f, "-")?;
                    }
                } else if neg {
                    write!(f, " - ")?;
                } else {
                    write!(f, " + ")?;
                }
                write_factor_level(&mag, f)?;
            }
            Ok(())
        }
        other => {
            let (neg, mag) = split_sign(other);
            if neg {
                write!(f, "-")?;
            }
            write_factor_level(&mag, f)
        }
    }
}

/// Pulls a leading minus out of a term for sum rendering.
fn split_sign(e: &Expr) -> (bool, Expr) {
    match e {
        Expr::Num(r) if r.numerator() < 0 => (true, Expr::Num(r.neg())),
        Expr::Prod(fs) => {
            if let Some(Expr::Num(r)) = fs.first() {
                if r.numerator() < 0 {
                    let mut fs = fs.clone();
                    let pos = r.neg();
                    if pos.is_one() && fs.len() > 1 {
                        fs.remove(0);
                    } else {
                        fs[0] = Expr::Num(pos);
                    }
                    let rest = if fs.len() == 1 {
                        fs.pop().unwrap()
                    } else {
                        Expr::Prod(fs)
                    };
                    return (true, rest);
                }
            }
            (false, e.clone())
        }
        _ => (false, e.clone()),
    }
}

fn write_factor_level(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Prod(fs) => {
            for (i, factor) in fs.iter().enumerate() {
                if i > 0 {
                    write!(f, "*")?;
                }
                write_power_level(factor, f)?;
            }
            Ok(())
        }
        other => write_power_level(other, f),
    }
}

fn write_power_level(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Pow(base, exp) => {
            write_atom_level(base, f, true)?;
            write!(f, "^{exp}")
        }
        other => write_atom_level(other, f, false),
    }
}

fn write_atom_level(e: &Expr, f: &mut fmt::Formatter<'_>, as_pow_base: bool) -> fmt::Result {
    match e {
        Expr::Num(r) => write_rational(r, f, as_pow_base),
        Expr::Sym(s) => write!(f, "{s}"),
        Expr::Sin(a) => write!(f, "sin({a})"),
        Expr::Cos(a) => write!(f, "cos({a})"),
        Expr::Sum(_) | Expr::Prod(_) | Expr::Pow(_, _) => {
            write!(f, "(")?;
            write_expr(e, f)?;
            write!(f, ")")
        }
    }
}

fn write_rational(r: &Rational, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
    let needs = parens || !r.is_integer() || r.numerator() < 0;
    if needs && (!r.is_integer() || r.numerator() < 0) {
        write!(f, "({r})")
    } else {
        write!(f, "{r}")
    }
}
