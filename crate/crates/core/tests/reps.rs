use borelq::algebra::{c, commutator, fnorm, rel_residual, CMat, C64, ONE};
use borelq::reps::{
    check_algebra_relations, check_borel_relations, highest_weight_rep, osc_rep, reflected_coefficient, reflected_rep,
    rep_limit_check, spin_rep, BorelRep, OscSign,
};
use proptest::prelude::*;

fn qval() -> impl Strategy<Value = C64> {
    (0.5..0.95f64, 0.05..1.5f64).prop_map(|(r, t)| C64::from_polar(r, t))
}

/// `[x]_q` evaluated from the definition, independent of the library.
fn qn(x: C64, q: C64) -> C64 {
    let l = q.ln();
    ((l * x).exp() - (-l * x).exp()) / (q - q.inv())
}

fn h_commutators(r: &BorelRep) -> f64 {
    let lam = c(1.3, 0.4);
    let eb = r.e_beta(lam);
    let a = rel_residual(&commutator(&r.h, &r.e_alpha), &(&r.e_alpha * c(2.0, 0.0)));
    let b = rel_residual(&commutator(&r.h, &eb), &(&eb * c(-2.0, 0.0)));
    a.max(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cartan_grades_every_rep(q in qval(), jr in -3.0..3.0f64, ji in -1.0..1.0f64) {
        let mut reps = vec![
            osc_rep(OscSign::Plus, 12, q).unwrap(),
            osc_rep(OscSign::Minus, 12, q).unwrap(),
            reflected_rep(12, q).unwrap(),
            highest_weight_rep(c(jr, ji), 12, q).unwrap(),
        ];
        for j in [0.5, 1.0, 1.5, 2.0] {
            reps.push(spin_rep(j, q).unwrap().borel);
        }
        for r in &reps {
            prop_assert!(h_commutators(r) <= 1e-12);
        }
    }

    #[test]
    fn spin_relations_hold(q in qval()) {
        for j in [0.5, 1.0, 1.5, 2.0, 2.5] {
            let r = check_algebra_relations(&spin_rep(j, q).unwrap(), q);
            prop_assert!(r.max_residual <= 1e-12, "j={} {:?}", j, r.relations);
        }
    }

    #[test]
    fn oscillator_relations_hold_in_interior(q in qval()) {
        for s in [OscSign::Plus, OscSign::Minus] {
            let r = check_borel_relations(&osc_rep(s, 32, q).unwrap(), q);
            prop_assert!(r.max_residual <= 1e-12);
            prop_assert!(!r.flagged_levels.is_empty());
        }
    }

    #[test]
    fn spin_is_truncated_highest_weight(q in qval(), two_j in 0u32..6) {
        let j = two_j as f64 / 2.0;
        let s = spin_rep(j, q).unwrap().borel;
        let n = two_j as usize + 1;
        let h = highest_weight_rep(c(j, 0.0), n.max(2), q).unwrap();
        let cut = |m: &CMat| m.view((0, 0), (n, n)).into_owned();
        prop_assert!(fnorm(&(cut(&h.e_alpha) - &s.e_alpha)) <= 1e-12);
        prop_assert!(fnorm(&(cut(&h.e_beta_unit) - &s.e_beta_unit)) <= 1e-12 * fnorm(&s.e_beta_unit).max(1.0));
        prop_assert!(fnorm(&(cut(&h.h) - &s.h)) <= 1e-12);
    }

    #[test]
    fn oscillators_exchange_under_inverse_q(q in qval()) {
        // In this basis no reordering is needed: e_alpha and H agree and the
        // e_beta coefficients map onto each other.
        let p = osc_rep(OscSign::Plus, 16, q.inv()).unwrap();
        let m = osc_rep(OscSign::Minus, 16, q).unwrap();
        prop_assert!(rel_residual(&p.e_beta_unit, &m.e_beta_unit) <= 1e-12);
        prop_assert!(p.e_alpha == m.e_alpha && p.h == m.h);
    }

    #[test]
    fn oscillator_commutation_relation(q in qval()) {
        let lam = c(0.9, -0.3);
        for (s, sg) in [(OscSign::Plus, 1.0), (OscSign::Minus, -1.0)] {
            let n = 12;
            let r = osc_rep(s, n, q).unwrap();
            let (ad, a) = (&r.e_alpha, r.e_beta(lam));
            // Plus: q a+ a - q^-1 a a+ ; Minus: q^-1 a+ a - q a a+.
            let (x, y) = if sg > 0.0 { (q, q.inv()) } else { (q.inv(), q) };
            let lhs = ad * &a * x - &a * ad * y;
            let want = CMat::identity(n, n) * (lam * sg / (q - q.inv()));
            let cut = |m: &CMat| m.view((0, 0), (n - 1, n - 1)).into_owned();
            // Individual terms grow like |q|^(-2n); the identity comes from their cancellation.
            let tol = 1e-14 * q.norm().powi(-2 * n as i32);
            prop_assert!(rel_residual(&cut(&lhs), &cut(&want)) <= tol);
        }
    }
}

#[test]
fn spin_half_generators() {
    let q = c(0.7, 0.2);
    let r = spin_rep(0.5, q).unwrap();
    assert_eq!(r.borel.e_alpha, CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), ONE, c(0.0, 0.0)]));
    assert_eq!(r.borel.h, CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(-1.0, 0.0), ONE])));
}

#[test]
fn spin_one_at_q_two() {
    let r = spin_rep(1.0, c(2.0, 0.0)).unwrap();
    assert!((r.borel.e_beta_unit[(1, 2)] - c(2.5, 0.0)).norm() < 1e-14);
}

#[test]
fn spin_zero_is_trivial() {
    let q = c(0.6, 0.3);
    let r = spin_rep(0.0, q).unwrap();
    assert_eq!(r.borel.dim(), 1);
    assert!(fnorm(&r.borel.e_alpha) == 0.0 && fnorm(&r.borel.e_beta_unit) == 0.0 && fnorm(&r.borel.h) == 0.0);
    assert_eq!(check_algebra_relations(&r, q).max_residual, 0.0);
    assert!(spin_rep(0.25, q).is_err() && spin_rep(-0.5, q).is_err());
}

#[test]
fn highest_weight_special_values() {
    let q = c(0.7, 0.3);
    let h0 = highest_weight_rep(c(0.0, 0.0), 4, q).unwrap();
    assert!(h0.e_beta_unit[(0, 1)].norm() < 1e-15);
    let h = highest_weight_rep(c(-1.0, 0.0), 16, q).unwrap();
    for k in 1..16 {
        let kk = c(k as f64, 0.0);
        let want = -qn(kk, q) * qn(kk + ONE, q);
        assert!((h.e_beta_unit[(k - 1, k)] - want).norm() <= 1e-12 * want.norm());
    }
}

#[test]
fn oscillator_special_values() {
    for s in [OscSign::Plus, OscSign::Minus] {
        let r = osc_rep(s, 8, c(0.6, 0.1)).unwrap();
        assert!(r.e_beta_unit.column(0).iter().all(|z| z.norm() == 0.0));
        let hd: Vec<f64> = (0..8).map(|k| r.h[(k, k)].re).collect();
        assert_eq!(hd, (0..8).map(|k| 2.0 * k as f64).collect::<Vec<_>>());
    }
    let p = osc_rep(OscSign::Plus, 4, c(2.0, 0.0)).unwrap();
    assert!((p.e_beta_unit[(0, 1)] - c(-4.0 / 3.0, 0.0)).norm() < 1e-14);
}

#[test]
fn reflected_is_transposed_minus_oscillator() {
    let q = c(0.7, 0.25);
    assert_eq!(reflected_coefficient(0, q), c(0.0, 0.0));
    let r = reflected_rep(10, q).unwrap();
    let m = osc_rep(OscSign::Minus, 10, q).unwrap();
    assert!(rel_residual(&r.e_beta_unit, &m.e_beta_unit.transpose()) < 1e-15);
    assert_eq!(r.e_alpha, m.e_alpha.transpose());
    assert_eq!(r.h, -&m.h);
    assert!(check_borel_relations(&r, q).max_residual < 1e-12);
}

#[test]
fn oscillator_interior_is_truncation_independent() {
    let q = c(0.75, 0.2);
    let a = check_borel_relations(&osc_rep(OscSign::Plus, 32, q).unwrap(), q);
    let b = check_borel_relations(&osc_rep(OscSign::Plus, 64, q).unwrap(), q);
    assert!(a.max_residual <= 1e-12 && b.max_residual <= 1e-12);
    let s32 = osc_rep(OscSign::Plus, 32, q).unwrap();
    let s64 = osc_rep(OscSign::Plus, 64, q).unwrap();
    assert_eq!(s32.e_beta_unit, s64.e_beta_unit.view((0, 0), (32, 32)).into_owned());
}

#[test]
fn limit_table_structure() {
    let q = C64::from_polar(0.8, 0.0);
    let t = rep_limit_check(&[2.0, 4.0, 6.0, 8.0], ONE, q, 8);
    let e = t.converging_errors();
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    let t = rep_limit_check(&[7.0, 8.0], ONE, q, 8);
    let e = t.converging_errors();
    assert!((e[1] / e[0] / q.norm().powi(4) - 1.0).abs() <= 0.2);
    let t0 = rep_limit_check(&[2.0, 3.0], ONE, q, 1);
    assert!(t0.rows.iter().all(|r| r.err_minus == 0.0 && r.err_plus == 0.0));
}
