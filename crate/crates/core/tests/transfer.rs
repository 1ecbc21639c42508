use borelq::algebra::{c, comm_residual, eig, rel_residual, CMat, ModelParams, C64, ONE, ZERO};
use borelq::lax::derive_lax;
use borelq::reps::{highest_weight_rep, osc_rep, OscSign};
use borelq::transfer::{
    assemble_blocks, direct_trace, joint_spectrum, magnetization, magnetization_op, monodromy_diag_blocks,
    normalize_q, resum, sector_blocks, truncation_delta, Chain, SectorDecomposition,
};
use proptest::prelude::*;

fn chain(sites: usize) -> Chain {
    Chain::new(ModelParams { sites, ..ModelParams::default() })
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn up_to_scalar(a: &CMat, b: &CMat) -> f64 {
    let k = (0..a.len()).max_by(|&x, &y| a[x].norm().total_cmp(&a[y].norm())).unwrap();
    let s = a[k] / b[k];
    rel_residual(a, &(b * s))
}

#[test]
fn sector_dimensions_are_binomial() {
    for l in 1..=7 {
        let d = SectorDecomposition::new(l);
        let want: Vec<usize> = (0..=l).map(|k| binomial(l, k)).collect();
        assert_eq!(d.dims(), want);
        assert_eq!(d.values(), (0..=l as i32).map(|k| 2 * k - l as i32).collect::<Vec<_>>());
    }
}

#[test]
fn magnetization_counts_up_spins() {
    // Site 1 is the most significant bit; a set bit is a down spin.
    assert_eq!(magnetization(3, 0b000), 3);
    assert_eq!(magnetization(3, 0b100), 1);
    assert_eq!(magnetization(3, 0b111), -3);
}

#[test]
fn every_family_commutes_with_magnetization() {
    let ch = chain(4);
    let s = magnetization_op(4);
    let lam = c(1.4, 0.15);
    let ops = vec![
        ch.z(lam).unwrap(),
        ch.z_j(1.5, lam).unwrap(),
        ch.q_plus(lam).unwrap(),
        ch.q_minus(lam).unwrap(),
        ch.z_plus(c(0.7, 0.2), lam).unwrap(),
        ch.reflected(lam).unwrap(),
    ];
    for op in &ops {
        assert!(comm_residual(op, &s) <= 1e-12);
    }
}

#[test]
fn sector_blocks_round_trip() {
    let ch = chain(4);
    let z = ch.z(c(1.1, 0.3)).unwrap();
    let blocks = sector_blocks(&z, 4).unwrap();
    assert_eq!(assemble_blocks(&blocks, 4), z);
    let mut leaky = z.clone();
    leaky[(0, 1)] = ONE;
    assert!(sector_blocks(&leaky, 4).is_err());
}

#[test]
fn z_zero_is_scalar_and_z_minus_half_vanishes() {
    let ch = chain(3);
    let lam = c(0.9, -0.2);
    let z0 = ch.z_j(0.0, lam).unwrap();
    assert!(rel_residual(&z0, &(CMat::identity(8, 8) * z0[(0, 0)])) <= 1e-14);
    assert!(ch.z_j(-0.5, lam).unwrap().iter().all(|v| *v == ZERO));
    let zm = ch.z_j(-1.5, lam).unwrap();
    assert!(rel_residual(&zm, &-ch.z_j(0.5, lam).unwrap()) == 0.0);
}

#[test]
fn trace_equals_eigenvalue_sum() {
    let ch = chain(4);
    for m in [ch.z(c(1.2, 0.1)).unwrap(), ch.q_plus(c(0.8, 0.4)).unwrap()] {
        let (vals, _) = eig(&m);
        let sum: C64 = vals.iter().sum();
        assert!((sum - m.trace()).norm() <= 1e-11 * m.trace().norm().max(1.0));
    }
}

#[test]
fn finite_trace_matches_restricted_highest_weight() {
    // Levels 0..2j of the highest-weight module with weight j close under the
    // action, so their twisted trace is the spin-j transfer matrix.
    let p = ModelParams { sites: 3, ..ModelParams::default() };
    let ch = Chain::new(p.clone());
    let lam = c(1.25, 0.2);
    let y = p.twist();
    for two_j in 1..=4u32 {
        let j = two_j as f64 / 2.0;
        let rep = highest_weight_rep(c(j, 0.0), two_j as usize + 3, p.q).unwrap();
        let lax = derive_lax(&rep, lam, p.q).unwrap();
        let blocks = monodromy_diag_blocks(&lax, 3);
        let weights: Vec<C64> = (0..=two_j).map(|k| y.powi(k as i32)).collect();
        let oracle = direct_trace(&blocks[..=two_j as usize], &weights);
        let z = ch.z_j(j, lam).unwrap();
        assert!(up_to_scalar(&z, &oracle) <= 1e-11, "j={j}");
    }
}

#[test]
fn resummation_matches_convergent_direct_sum() {
    // For |y| small the level sum converges on its own; compare against it.
    let q = C64::from_polar(0.8, 0.3);
    let sites = 3;
    let lam = c(1.1, 0.25);
    let y = c(0.05, 0.02);
    let big = 60;
    let lax = derive_lax(&osc_rep(OscSign::Plus, big, q).unwrap(), lam, q).unwrap();
    let blocks = monodromy_diag_blocks(&lax, sites);
    let clean = big - sites - 1;
    let weights: Vec<C64> = (0..clean).map(|k| y.powi(k as i32)).collect();
    let direct = direct_trace(&blocks[..clean], &weights);
    let r = resum(&blocks, sites + 4, sites, q, y);
    assert!(r.fit_residual <= 1e-10, "{}", r.fit_residual);
    // Limited by the conditioning of the exponential fit.
    assert!(rel_residual(&r.op, &direct) <= 1e-9, "{}", rel_residual(&r.op, &direct));
}

#[test]
fn truncation_is_converged() {
    let p = ModelParams::default();
    let lam = c(1.3, 0.1);
    for s in [OscSign::Plus, OscSign::Minus] {
        let d = truncation_delta(&osc_rep(s, p.trunc_n, p.q).unwrap(), lam, &p).unwrap();
        assert!(d <= 1e-8, "{d}");
    }
    let a = Chain::new(p.clone()).q_plus(lam).unwrap();
    let b = Chain::new(ModelParams { trunc_n: 2 * p.trunc_n, ..p }).q_plus(lam).unwrap();
    assert!(rel_residual(&a, &b) <= 1e-8);
}

#[test]
fn infinite_trace_needs_small_q() {
    let ch = Chain::new(ModelParams { q: C64::from_polar(1.0, 0.3), ..ModelParams::default() });
    assert!(ch.q_plus(c(1.0, 0.1)).is_err());
    assert!(ch.z(c(1.0, 0.1)).is_ok());
}

#[test]
fn joint_spectrum_diagonalizes_commuting_family() {
    let ch = chain(4);
    let reference = ch.z(c(1.3, 0.2)).unwrap();
    let family: Vec<CMat> = [c(0.9, 0.1), c(1.6, -0.2)]
        .iter()
        .flat_map(|&l| [ch.z(l).unwrap(), ch.q_plus(l).unwrap(), ch.q_minus(l).unwrap()])
        .collect();
    let t = joint_spectrum(&family, &reference, 4).unwrap();
    assert!(t.leakage <= 1e-8, "{}", t.leakage);
    assert_eq!(t.rows.len(), 16);
    let sum: C64 = t.rows.iter().map(|r| r.values[0]).sum();
    assert!((sum - family[0].trace()).norm() <= 1e-10 * sum.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn normalization_round_trip(r in 0.5..2.0f64, t in -1.0..1.0f64) {
        let ch = chain(3);
        let lam = C64::from_polar(r, t);
        let qp = ch.q_plus(lam).unwrap();
        let back = normalize_q(&normalize_q(&qp, lam, OscSign::Plus, 3), lam, OscSign::Minus, 3);
        prop_assert!(rel_residual(&back, &qp) <= 1e-14);
        prop_assert!(rel_residual(&ch.q_prime(OscSign::Plus, lam).unwrap(), &normalize_q(&qp, lam, OscSign::Plus, 3)) == 0.0);
    }

    #[test]
    fn transfer_matrices_commute(a in 0.6..2.0f64, b in 0.6..2.0f64, ta in -0.5..0.5f64, tb in -0.5..0.5f64) {
        let ch = chain(3);
        let (la, lb) = (C64::from_polar(a, ta), C64::from_polar(b, tb));
        prop_assert!(comm_residual(&ch.z(la).unwrap(), &ch.z(lb).unwrap()) <= 1e-12);
        prop_assert!(comm_residual(&ch.z(la).unwrap(), &ch.q_plus(lb).unwrap()) <= 1e-8);
    }
}
