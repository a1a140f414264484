//! Property checks for the expression substrate: canonicalization
//! round-trips values, symbolic derivatives agree with central finite
//! differences, differentiation is linear, and linear solving satisfies its
//! own equations.

use ksoc_core::expr::{
    differentiate, parse, sampling, solve_linear, Bindings, Expr, ZeroProbe,
};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn central_difference(e: &Expr, x: &str, b: &Bindings, h: f64) -> Option<f64> {
    let mut hi = b.clone();
    let mut lo = b.clone();
    let x0 = *b.get(x)?;
    hi.insert(x.to_string(), x0 + h);
    lo.insert(x.to_string(), x0 - h);
    let vhi = e.evaluate(&hi).ok()?;
    let vlo = e.evaluate(&lo).ok()?;
    if !vhi.is_finite() || !vlo.is_finite() {
        return None;
    }
    Some((vhi - vlo) / (2.0 * h))
}

#[test]
fn derivative_matches_finite_differences_on_random_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 100 {
        let (e, b) = sampling::well_conditioned_case(&mut rng, 3);
        let x = sampling::SYMBOL_POOL[rng.random_range(0..sampling::SYMBOL_POOL.len())];
        let sym = differentiate(&e, x);
        let Ok(ds) = sym.evaluate(&b) else { continue };
        let Some(fd) = central_difference(&e, x, &b, 1e-5) else {
            continue;
        };
        if !ds.is_finite() || ds.abs() > 1e4 || fd.abs() > 1e4 {
            continue; // resample near-singular cases
        }
        assert!(
            (ds - fd).abs() <= 1e-6 * (1.0 + ds.abs()),
            "derivative mismatch for {e} wrt {x}: sym {ds}, fd {fd}"
        );
        checked += 1;
    }
}

#[test]
fn evaluation_round_trip_through_canonicalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 100 {
        let (e, b) = sampling::well_conditioned_case(&mut rng, 4);
        let raw = e.evaluate(&b).unwrap();
        let canon = e.canonicalize().evaluate(&b).unwrap();
        assert!(
            (raw - canon).abs() <= 1e-12 * (1.0 + raw.abs().max(canon.abs())),
            "value changed by canonicalization for {e}: {raw} vs {canon}"
        );
        checked += 1;
    }
}

proptest! {
    #[test]
    fn canonicalize_is_idempotent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = sampling::random_expr(&mut rng, 4);
        let once = e.canonicalize();
        prop_assert_eq!(once.clone(), once.canonicalize());
    }

    #[test]
    fn differentiation_is_linear(seed in any::<u64>(), num in -6i64..=6, den in 1i64..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e1 = sampling::random_expr(&mut rng, 3);
        let e2 = sampling::random_expr(&mut rng, 3);
        let a = Expr::ratio(num, den);
        let combo = Expr::add(vec![Expr::mul(vec![a.clone(), e1.clone()]), e2.clone()]);
        let lhs = differentiate(&combo, "x1");
        let rhs = Expr::add(vec![
            Expr::mul(vec![a, differentiate(&e1, "x1")]),
            differentiate(&e2, "x1"),
        ]);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn substitution_of_nothing_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = sampling::random_expr(&mut rng, 4);
        let map = std::collections::BTreeMap::new();
        prop_assert_eq!(
            ksoc_core::expr::substitute(&e, &map),
            e.canonicalize()
        );
    }

    #[test]
    fn display_parse_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = sampling::random_expr(&mut rng, 4).canonicalize();
        let printed = e.to_string();
        let back = parse(&printed).unwrap();
        prop_assert_eq!(e, back, "printed form: {}", printed);
    }
}

#[test]
fn solve_linear_solutions_satisfy_equations() {
    // random affine systems in three unknowns over a polynomial field
    let probe = ZeroProbe::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..25 {
        let unknowns: Vec<String> = vec!["y1".into(), "y2".into(), "y3".into()];
        let mut eqs = Vec::new();
        for _ in 0..3 {
            let mut terms = Vec::new();
            for u in &unknowns {
                let c = rng.random_range(-3i64..=3);
                if c != 0 {
                    terms.push(Expr::mul(vec![Expr::num(c), Expr::sym(u.clone())]));
                }
            }
            let mut rhs_rng = ChaCha8Rng::seed_from_u64(rng.random());
            terms.push(sampling::random_expr(&mut rhs_rng, 2));
            eqs.push(Expr::add(terms));
        }
        let Ok(result) = solve_linear(&eqs, &unknowns, &probe) else {
            continue; // inconsistent random draw
        };
        for eq in &eqs {
            let back = result.apply(eq);
            let satisfied = probe.is_zero(&back)
                || result
                    .residuals
                    .iter()
                    .any(|r| probe.is_zero(&(back.clone() - r.clone())));
            assert!(satisfied, "substituted equation not satisfied: {back}");
        }
    }
}

#[test]
fn is_zero_accepts_identities_and_rejects_non_identities() {
    let probe = ZeroProbe::default();
    // constructed identities: scaled Pythagorean combinations and telescoping
    for i in 1..=10 {
        let f = Expr::num(i);
        let id = Expr::mul(vec![
            f.clone(),
            parse("sin(x1)^2 + cos(x1)^2 - 1").unwrap(),
        ]);
        assert!(probe.is_zero(&id), "identity {i} rejected");
        let non = Expr::add(vec![id, Expr::ratio(1, 1000)]);
        assert!(!probe.is_zero(&non), "non-identity {i} accepted");
    }
}
