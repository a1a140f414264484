//! Minimal computer-algebra substrate.
//!
//! Expression trees over named real variables with rational constants,
//! sums, products, integer powers, sine and cosine. This fragment covers
//! every coordinate formula the rest of the crate derives: cost functions,
//! vector-field components, Hamiltonians, constraints and multipliers.
//!
//! Canonicalization expands to a polynomial normal form over "atoms"
//! (symbols, `sin`/`cos` nodes, and reciprocals of sums), folds constants,
//! orders terms graded-lexicographically and eliminates even powers of
//! `sin` via `sin^2 x -> 1 - cos^2 x`. Two expressions of the fragment that
//! are equal as functions usually canonicalize to the identical tree;
//! the residual cases (multiple-angle identities and reciprocal
//! cancellations) are caught by randomized probing in [`ZeroProbe`].
//!
//! Expressions are immutable values; all operations are pure functions and
//! everything is safe to share across threads.

mod diff;
mod display;
mod eval;
mod parse;
mod rational;
pub mod sampling;
mod solve;
mod zero;

pub use diff::{differentiate, substitute};
pub use eval::{Bindings, CompiledExpr, EvalError, SymbolTable};
pub use parse::{parse, ParseError};
pub use rational::Rational;
pub use solve::{solve_linear, LinearSolveResult, SolveError};
pub use zero::ZeroProbe;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

/// Symbolic expression node.
///
/// Raw trees may be built freely; [`Expr::canonicalize`] establishes the
/// invariants documented on each variant (flattened, constant-folded,
/// ordered, no sum/product with fewer than two children, no `Pow` with
/// exponent 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    /// Rational constant.
    Num(Rational),
    /// Named real variable.
    Sym(String),
    /// Sum of at least two canonical terms.
    Sum(Vec<Expr>),
    /// Product of at least two canonical factors; a constant coefficient,
    /// if present, is the first factor.
    Prod(Vec<Expr>),
    /// Integer power with exponent not in {0, 1} after canonicalization.
    Pow(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn num(n: i64) -> Expr {
        Expr::Num(Rational::int(n))
    }

    pub fn ratio(num: i64, den: i64) -> Expr {
        Expr::Num(Rational::new(num, den))
    }

    pub fn sym(name: impl Into<String>) -> Expr {
        Expr::Sym(name.into())
    }

    pub fn zero() -> Expr {
        Expr::Num(Rational::ZERO)
    }

    pub fn one() -> Expr {
        Expr::Num(Rational::ONE)
    }

    /// Canonical sum of the given terms.
    pub fn add(terms: Vec<Expr>) -> Expr {
        Expr::Sum(terms).canonicalize()
    }

    /// Canonical product of the given factors.
    pub fn mul(factors: Vec<Expr>) -> Expr {
        Expr::Prod(factors).canonicalize()
    }

    pub fn pow(base: Expr, exp: i32) -> Expr {
        Expr::Pow(Box::new(base), exp).canonicalize()
    }

    pub fn sin(arg: Expr) -> Expr {
        Expr::Sin(Box::new(arg)).canonicalize()
    }

    pub fn cos(arg: Expr) -> Expr {
        Expr::Cos(Box::new(arg)).canonicalize()
    }

    #[allow(clippy::should_implement_trait)] // the operator impl delegates here
    pub fn neg(self) -> Expr {
        Expr::mul(vec![Expr::num(-1), self])
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_zero())
    }

    pub fn is_const_one(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_one())
    }

    /// Free symbols, sorted by name.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Sum(ts) | Expr::Prod(ts) => {
                for t in ts {
                    t.collect_symbols(out);
                }
            }
            Expr::Pow(b, _) => b.collect_symbols(out),
            Expr::Sin(a) | Expr::Cos(a) => a.collect_symbols(out),
        }
    }

    pub fn contains_symbol(&self, name: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Sym(s) => s == name,
            Expr::Sum(ts) | Expr::Prod(ts) => ts.iter().any(|t| t.contains_symbol(name)),
            Expr::Pow(b, _) => b.contains_symbol(name),
            Expr::Sin(a) | Expr::Cos(a) => a.contains_symbol(name),
        }
    }

    /// Polynomial normal form; idempotent and value-preserving.
    pub fn canonicalize(&self) -> Expr {
        Poly::from_expr(self).to_expr()
    }

    /// Number of nodes; used as a complexity measure for pivot choice.
    pub fn node_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Sym(_) => 1,
            Expr::Sum(ts) | Expr::Prod(ts) => 1 + ts.iter().map(Expr::node_count).sum::<usize>(),
            Expr::Pow(b, _) => 1 + b.node_count(),
            Expr::Sin(a) | Expr::Cos(a) => 1 + a.node_count(),
        }
    }

    /// Canonical terms viewed as a sum (single term for non-sums).
    pub fn terms(&self) -> Vec<Expr> {
        match self {
            Expr::Sum(ts) => ts.clone(),
            other => vec![other.clone()],
        }
    }

    fn variant_rank(&self) -> u8 {
        match self {
            Expr::Num(_) => 0,
            Expr::Sym(_) => 1,
            Expr::Sin(_) => 2,
            Expr::Cos(_) => 3,
            Expr::Pow(_, _) => 4,
            Expr::Prod(_) => 5,
            Expr::Sum(_) => 6,
        }
    }
}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Structural total order: variant rank first, then contents. Gives the
/// deterministic atom ordering the canonical form relies on.
impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.variant_rank().cmp(&other.variant_rank()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        match (self, other) {
            (Expr::Num(a), Expr::Num(b)) => a.cmp(b),
            (Expr::Sym(a), Expr::Sym(b)) => a.cmp(b),
            (Expr::Sin(a), Expr::Sin(b)) | (Expr::Cos(a), Expr::Cos(b)) => a.cmp(b),
            (Expr::Pow(a, ea), Expr::Pow(b, eb)) => a.cmp(b).then(ea.cmp(eb)),
            (Expr::Prod(a), Expr::Prod(b)) | (Expr::Sum(a), Expr::Sum(b)) => a.cmp(b),
            _ => unreachable!("variant ranks already compared"),
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(vec![self, rhs])
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::add(vec![self, rhs.neg()])
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(vec![self, rhs])
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

// ---------------------------------------------------------------------------
// Polynomial normal form
// ---------------------------------------------------------------------------

/// Monomial: atom -> nonzero integer exponent. Atoms are symbols, sin/cos
/// nodes and reciprocal powers of canonical sums.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Monomial(BTreeMap<Expr, i32>);

impl Monomial {
    fn unit() -> Monomial {
        Monomial(BTreeMap::new())
    }

    fn atom(a: Expr, exp: i32) -> Monomial {
        let mut m = BTreeMap::new();
        if exp != 0 {
            m.insert(a, exp);
        }
        Monomial(m)
    }

    fn total_degree(&self) -> i64 {
        self.0.values().map(|&e| e as i64).sum()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.0.clone();
        for (a, e) in &other.0 {
            let entry = out.entry(a.clone()).or_insert(0);
            *entry += e;
            if *entry == 0 {
                out.remove(a);
            }
        }
        Monomial(out)
    }

    fn pow(&self, exp: i32) -> Monomial {
        Monomial(
            self.0
                .iter()
                .map(|(a, e)| (a.clone(), e * exp))
                .collect(),
        )
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Graded order: total degree first, then lexicographic on the sorted
/// (atom, exponent) sequence.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| {
                let a: Vec<_> = self.0.iter().collect();
                let b: Vec<_> = other.0.iter().collect();
                a.cmp(&b)
            })
    }
}

#[derive(Debug, Clone)]
struct Poly {
    terms: BTreeMap<Monomial, Rational>,
}

impl Poly {
    fn zero() -> Poly {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    fn constant(r: Rational) -> Poly {
        let mut p = Poly::zero();
        if !r.is_zero() {
            p.terms.insert(Monomial::unit(), r);
        }
        p
    }

    fn atom(a: Expr, exp: i32) -> Poly {
        let mut p = Poly::zero();
        p.terms.insert(Monomial::atom(a, exp), Rational::ONE);
        p
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert(Rational::ZERO);
        *entry = entry.add(&c);
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.mul(cb));
            }
        }
        out
    }

    fn pow_nonneg(&self, exp: u32) -> Poly {
        let mut acc = Poly::constant(Rational::ONE);
        let mut base = self.clone();
        let mut e = exp;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    /// The single (monomial, coefficient) pair, if this is a monomial.
    fn as_single(&self) -> Option<(&Monomial, &Rational)> {
        if self.terms.len() == 1 {
            self.terms.iter().next()
        } else {
            None
        }
    }

    fn from_expr(e: &Expr) -> Poly {
        let p = match e {
            Expr::Num(r) => Poly::constant(*r),
            Expr::Sym(_) => Poly::atom(e.clone(), 1),
            Expr::Sum(ts) => ts
                .iter()
                .fold(Poly::zero(), |acc, t| acc.add(&Poly::from_expr(t))),
            Expr::Prod(fs) => fs.iter().fold(Poly::constant(Rational::ONE), |acc, f| {
                acc.mul(&Poly::from_expr(f))
            }),
            Expr::Pow(base, exp) => Poly::from_expr(base).powi(*exp),
            Expr::Sin(a) => {
                let arg = a.canonicalize();
                if arg.is_const_zero() {
                    Poly::zero()
                } else {
                    Poly::atom(Expr::Sin(Box::new(arg)), 1)
                }
            }
            Expr::Cos(a) => {
                let arg = a.canonicalize();
                if arg.is_const_zero() {
                    Poly::constant(Rational::ONE)
                } else {
                    Poly::atom(Expr::Cos(Box::new(arg)), 1)
                }
            }
        };
        p.eliminate_sin_squares()
    }

    fn powi(&self, exp: i32) -> Poly {
        if exp == 0 {
            return Poly::constant(Rational::ONE);
        }
        if exp > 0 {
            if let Some((m, c)) = self.as_single() {
                let mut out = Poly::zero();
                out.add_term(m.pow(exp), c.pow(exp));
                return out;
            }
            return self.pow_nonneg(exp as u32);
        }
        // Negative exponent: invert a monomial directly; a true sum becomes
        // a reciprocal atom (no general division in this fragment).
        if let Some((m, c)) = self.as_single() {
            assert!(!c.is_zero(), "reciprocal of zero");
            let mut out = Poly::zero();
            out.add_term(m.pow(exp), c.pow(exp));
            return out;
        }
        if self.terms.is_empty() {
            panic!("reciprocal of zero");
        }
        Poly::atom(self.to_expr(), exp)
    }

    /// Rewrite `sin(x)^e` with e >= 2 as `sin(x)^(e mod 2) (1 - cos^2 x)^(e div 2)`.
    /// Terminates because the total positive sin-degree strictly decreases.
    fn eliminate_sin_squares(&self) -> Poly {
        let mut cur = self.clone();
        loop {
            let target = cur.terms.iter().find_map(|(m, _)| {
                m.0.iter().find_map(|(a, &e)| match a {
                    Expr::Sin(arg) if e >= 2 => Some((m.clone(), (**arg).clone(), e)),
                    _ => None,
                })
            });
            let Some((mono, arg, e)) = target else {
                return cur;
            };
            let coeff = cur.terms.remove(&mono).expect("term present");
            let sin_atom = Expr::Sin(Box::new(arg.clone()));
            let mut rest = mono.clone();
            rest.0.remove(&sin_atom);
            if e % 2 == 1 {
                rest = rest.mul(&Monomial::atom(sin_atom, 1));
            }
            // (1 - cos^2 x)^(e/2)
            let one_minus = Poly::constant(Rational::ONE).add(&{
                let mut p = Poly::zero();
                p.add_term(
                    Monomial::atom(Expr::Cos(Box::new(arg)), 2),
                    Rational::int(-1),
                );
                p
            });
            let expanded = one_minus.pow_nonneg((e / 2) as u32);
            let mut replacement = Poly::zero();
            replacement.add_term(rest, coeff);
            cur = cur.add(&replacement.mul(&expanded));
        }
    }

    fn to_expr(&self) -> Expr {
        if self.terms.is_empty() {
            return Expr::zero();
        }
        let mut terms: Vec<Expr> = Vec::with_capacity(self.terms.len());
        // Leading (largest) monomial first.
        for (m, c) in self.terms.iter().rev() {
            terms.push(monomial_to_expr(m, c));
        }
        if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::Sum(terms)
        }
    }
}

fn monomial_to_expr(m: &Monomial, c: &Rational) -> Expr {
    let mut factors: Vec<Expr> = Vec::new();
    if !c.is_one() || m.0.is_empty() {
        factors.push(Expr::Num(*c));
    }
    for (atom, &exp) in &m.0 {
        if exp == 1 {
            factors.push(atom.clone());
        } else {
            factors.push(Expr::Pow(Box::new(atom.clone()), exp));
        }
    }
    if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        Expr::Prod(factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_constants_and_orders_terms() {
        let e = Expr::add(vec![Expr::sym("q1"), Expr::sym("q1")]);
        assert_eq!(e, Expr::mul(vec![Expr::num(2), Expr::sym("q1")]));

        let e = Expr::mul(vec![Expr::num(3), Expr::ratio(1, 3)]);
        assert_eq!(e, Expr::one());
    }

    #[test]
    fn cancellation_across_products_of_sums() {
        // (p26 q2 + p25 q1) cos - cos p25 q1 - cos p26 q2 == 0
        let s = Expr::add(vec![
            Expr::mul(vec![Expr::sym("p2_6"), Expr::sym("q2")]),
            Expr::mul(vec![Expr::sym("p2_5"), Expr::sym("q1")]),
        ]);
        let cos = Expr::cos(Expr::sym("t2"));
        let e = Expr::add(vec![
            Expr::mul(vec![s, cos.clone()]),
            Expr::mul(vec![
                Expr::num(-1),
                cos.clone(),
                Expr::sym("p2_5"),
                Expr::sym("q1"),
            ]),
            Expr::mul(vec![Expr::num(-1), cos, Expr::sym("p2_6"), Expr::sym("q2")]),
        ]);
        assert!(e.is_const_zero());
    }

    #[test]
    fn pythagorean_identity_is_canonical_zero() {
        let th = Expr::sym("th");
        let e = Expr::add(vec![
            Expr::pow(Expr::sin(th.clone()), 2),
            Expr::pow(Expr::cos(th), 2),
            Expr::num(-1),
        ]);
        assert!(e.is_const_zero());
    }

    #[test]
    fn canonicalize_is_idempotent_on_samples() {
        let e = parse("(q1 + q2)^2 * sin(t1) - q1*q2*2*sin(t1)").unwrap();
        let c1 = e.canonicalize();
        let c2 = c1.canonicalize();
        assert_eq!(c1, c2);
    }

    #[test]
    fn powers_of_sums_expand() {
        let e = parse("(q1 + q2)^2").unwrap();
        let expanded = parse("q1^2 + 2*q1*q2 + q2^2").unwrap();
        assert_eq!(e.canonicalize(), expanded.canonicalize());
    }

    #[test]
    fn reciprocal_sums_stay_as_atoms() {
        let e = parse("(q1 + q2)^-1").unwrap().canonicalize();
        match &e {
            Expr::Pow(base, -1) => assert!(matches!(**base, Expr::Sum(_))),
            other => panic!("expected reciprocal atom, got {other:?}"),
        }
    }

    #[test]
    fn sin_zero_and_cos_zero_fold() {
        assert!(Expr::sin(Expr::zero()).is_const_zero());
        assert!(Expr::cos(Expr::zero()).is_const_one());
    }

    #[test]
    fn pow_exponent_invariant() {
        let e = Expr::pow(Expr::sym("q1"), 1);
        assert_eq!(e, Expr::sym("q1"));
        let e = Expr::pow(Expr::sym("q1"), 0);
        assert!(e.is_const_one());
    }
}
