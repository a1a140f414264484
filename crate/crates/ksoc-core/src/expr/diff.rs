//! Symbolic differentiation and simultaneous substitution.

use super::Expr;
use std::collections::BTreeMap;

/// Canonical partial derivative of `e` with respect to the symbol `x`.
/// Every other symbol is treated as an independent constant; differentiating
/// by a symbol that does not occur yields zero.
pub fn differentiate(e: &Expr, x: &str) -> Expr {
    diff_raw(e, x).canonicalize()
}

fn diff_raw(e: &Expr, x: &str) -> Expr {
    match e {
        Expr::Num(_) => Expr::zero(),
        Expr::Sym(s) => {
            if s == x {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Sum(ts) => Expr::Sum(ts.iter().map(|t| diff_raw(t, x)).collect()),
        Expr::Prod(fs) => {
            let mut terms = Vec::with_capacity(fs.len());
            for i in 0..fs.len() {
                if !fs[i].contains_symbol(x) {
                    continue;
                }
                let mut factors = fs.clone();
                factors[i] = diff_raw(&fs[i], x);
                terms.push(Expr::Prod(factors));
            }
            Expr::Sum(terms)
        }
        Expr::Pow(b, exp) => {
            if !b.contains_symbol(x) {
                return Expr::zero();
            }
            Expr::Prod(vec![
                Expr::num(*exp as i64),
                Expr::Pow(b.clone(), exp - 1),
                diff_raw(b, x),
            ])
        }
        Expr::Sin(a) => Expr::Prod(vec![Expr::Cos(a.clone()), diff_raw(a, x)]),
        Expr::Cos(a) => Expr::Prod(vec![
            Expr::num(-1),
            Expr::Sin(a.clone()),
            diff_raw(a, x),
        ]),
    }
}

/// Simultaneous substitution of symbols; occurrences introduced by the
/// replacement expressions are not re-substituted. Result is canonical.
pub fn substitute(e: &Expr, map: &BTreeMap<String, Expr>) -> Expr {
    subst_raw(e, map).canonicalize()
}

fn subst_raw(e: &Expr, map: &BTreeMap<String, Expr>) -> Expr {
    match e {
        Expr::Num(_) => e.clone(),
        Expr::Sym(s) => map.get(s).cloned().unwrap_or_else(|| e.clone()),
        Expr::Sum(ts) => Expr::Sum(ts.iter().map(|t| subst_raw(t, map)).collect()),
        Expr::Prod(fs) => Expr::Prod(fs.iter().map(|t| subst_raw(t, map)).collect()),
        Expr::Pow(b, exp) => Expr::Pow(Box::new(subst_raw(b, map)), *exp),
        Expr::Sin(a) => Expr::Sin(Box::new(subst_raw(a, map))),
        Expr::Cos(a) => Expr::Cos(Box::new(subst_raw(a, map))),
    }
}

/// Substitution of a single symbol.
pub(crate) fn subst_one(e: &Expr, name: &str, value: &Expr) -> Expr {
    let mut map = BTreeMap::new();
    map.insert(name.to_string(), value.clone());
    substitute(e, &map)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn d(src: &str, x: &str) -> Expr {
        differentiate(&parse(src).unwrap(), x)
    }

    #[test]
    fn power_rule() {
        // d/du1 of the control-quadratic cost
        assert_eq!(d("1/2*u1^2 + 1/2*u2^2", "u1"), parse("u1").unwrap());
    }

    #[test]
    fn molecule_constraint_control_derivative() {
        // d/du1 (-q3 - v6_2 + u1*q2*cos(t2) + u2*q2*sin(t2)) = q2 cos(t2)
        let got = d("-q3 - v6_2 + u1*q2*cos(t2) + u2*q2*sin(t2)", "u1");
        assert_eq!(got, parse("q2*cos(t2)").unwrap());
    }

    #[test]
    fn product_of_sin_cos() {
        // d/dth (sin th cos th) = cos^2 - sin^2, canonically 2cos^2 - 1
        let got = d("sin(th)*cos(th)", "th");
        let expected = parse("cos(th)^2 - sin(th)^2").unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn unknown_symbol_derivative_is_zero() {
        assert!(d("q1 + sin(q2)", "zz").is_const_zero());
    }

    #[test]
    fn reciprocal_power_rule() {
        let got = d("q1^-1", "q1");
        assert_eq!(got, parse("-q1^-2").unwrap());
    }

    #[test]
    fn substitution_is_simultaneous() {
        // swap q1 <-> q2 must not cascade
        let mut map = BTreeMap::new();
        map.insert("q1".to_string(), Expr::sym("q2"));
        map.insert("q2".to_string(), Expr::sym("q1"));
        let e = parse("q1 - q2").unwrap();
        let got = substitute(&e, &map);
        assert_eq!(got, parse("q2 - q1").unwrap());
    }

    #[test]
    fn substitute_multiplier() {
        let got = subst_one(&Expr::sym("lam7"), "lam7", &Expr::sym("p2_6"));
        assert_eq!(got, Expr::sym("p2_6"));
    }
}
