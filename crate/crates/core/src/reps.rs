//! Borel representations: evaluation spin-j, truncated highest-weight,
//! q-oscillators and the reflected boundary representation.

use serde::Serialize;

use crate::algebra::{c, diag, fnorm, qnum_r, qpow, CMat, C64, ONE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum OscSign {
    Plus,
    Minus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RepKind {
    SpinJ { two_j: u32 },
    HighestWeightInf { j: C64, n: usize },
    OscPlus { n: usize },
    OscMinus { n: usize },
    /// Levels `k' = 1..=n` seen from the bottom of `V_j^+` as `j -> inf`.
    Reflected { n: usize },
}

impl RepKind {
    pub fn is_infinite(&self) -> bool {
        !matches!(self, RepKind::SpinJ { .. })
    }
}

#[derive(Clone, Debug)]
pub struct BorelRep {
    pub kind: RepKind,
    pub e_alpha: CMat,
    pub e_beta_unit: CMat,
    /// `h_alpha`; `h_beta = -h_alpha`.
    pub h: CMat,
    pub boundary_level: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct FullRep {
    pub borel: BorelRep,
    pub f_alpha: CMat,
    pub f_beta_unit: CMat,
}

impl BorelRep {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn e_beta(&self, lambda: C64) -> CMat {
        &self.e_beta_unit * lambda
    }

    /// Weight of level `k` under `h_alpha`.
    pub fn weight(&self, k: usize) -> f64 {
        self.h[(k, k)].re
    }

    /// Level index whose relations are exact when all words of length
    /// `len` stay inside the truncated space.
    pub fn interior(&self, len: usize) -> usize {
        match self.boundary_level {
            None => self.dim(),
            Some(b) => (b + 1).saturating_sub(len.saturating_sub(1)),
        }
    }
}

fn ladder(n: usize, up: bool) -> CMat {
    let mut m = CMat::zeros(n, n);
    for k in 0..n.saturating_sub(1) {
        if up {
            m[(k + 1, k)] = ONE;
        } else {
            m[(k, k + 1)] = ONE;
        }
    }
    m
}

fn hw_generators(j: C64, n: usize, q: C64) -> (CMat, CMat, CMat) {
    let d = q - q.inv();
    let mut e = CMat::zeros(n, n);
    for k in 1..n {
        let a = qnum_r(k as f64, q);
        let b = (qpow(q, c(2.0, 0.0) * j + ONE - c(k as f64, 0.0))
            - qpow(q, -(c(2.0, 0.0) * j + ONE - c(k as f64, 0.0))))
            / d;
        e[(k - 1, k)] = a * b;
    }
    let h: Vec<C64> = (0..n).map(|k| c(2.0 * k as f64, 0.0) - c(2.0, 0.0) * j).collect();
    (ladder(n, true), e, diag(&h))
}

/// Spin-j evaluation representation with its negative generators.
pub fn spin_rep(j: f64, q: C64) -> Result<FullRep> {
    let two_j = 2.0 * j;
    if two_j < 0.0 || two_j.fract() != 0.0 {
        return Err(Error::InvalidParams(format!("spin {j} is not a nonnegative half-integer")));
    }
    let n = two_j as usize + 1;
    let mut e = CMat::zeros(n, n);
    for k in 1..n {
        e[(k - 1, k)] = qnum_r(k as f64, q) * qnum_r(two_j + 1.0 - k as f64, q);
    }
    let f = ladder(n, true);
    let h: Vec<C64> = (0..n).map(|k| c(2.0 * k as f64 - two_j, 0.0)).collect();
    let borel = BorelRep {
        kind: RepKind::SpinJ { two_j: two_j as u32 },
        e_alpha: f.clone(),
        e_beta_unit: e.clone(),
        h: diag(&h),
        boundary_level: None,
    };
    Ok(FullRep { borel, f_alpha: e, f_beta_unit: f })
}

/// `n`-level truncation of the highest-weight module `V_j^+`, complex `j`.
pub fn highest_weight_rep(j: C64, n: usize, q: C64) -> Result<BorelRep> {
    if n < 2 {
        return Err(Error::InvalidParams("truncation needs at least 2 levels".into()));
    }
    let (ea, eb, h) = hw_generators(j, n, q);
    Ok(BorelRep {
        kind: RepKind::HighestWeightInf { j, n },
        e_alpha: ea,
        e_beta_unit: eb,
        h,
        boundary_level: Some(n - 1),
    })
}

/// `n`-level truncation of the q-oscillator representations.
pub fn osc_rep(sign: OscSign, n: usize, q: C64) -> Result<BorelRep> {
    if n < 2 {
        return Err(Error::InvalidParams("truncation needs at least 2 levels".into()));
    }
    let s = match sign {
        OscSign::Plus => 1,
        OscSign::Minus => -1,
    };
    let d2 = (q - q.inv()).powi(2);
    let mut a = CMat::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = (ONE - q.powi(2 * k as i32 * s)) / d2;
    }
    let h: Vec<C64> = (0..n).map(|k| c(2.0 * k as f64, 0.0)).collect();
    Ok(BorelRep {
        kind: match sign {
            OscSign::Plus => RepKind::OscPlus { n },
            OscSign::Minus => RepKind::OscMinus { n },
        },
        e_alpha: ladder(n, true),
        e_beta_unit: a,
        h: diag(&h),
        boundary_level: Some(n - 1),
    })
}

/// Coefficient of `e_beta |k'> -> |k'+1>` in the reflected representation.
pub fn reflected_coefficient(kp: usize, q: C64) -> C64 {
    (ONE - q.powi(-2 * kp as i32)) / (q - q.inv()).powi(2)
}

/// Reflected representation on levels `k' = 1..=n`: `e_alpha` lowers `k'`,
/// `e_beta` raises it, `h_alpha = 2 - 2k'`.
pub fn reflected_rep(n: usize, q: C64) -> Result<BorelRep> {
    if n < 2 {
        return Err(Error::InvalidParams("truncation needs at least 2 levels".into()));
    }
    let mut eb = CMat::zeros(n, n);
    for m in 0..n - 1 {
        eb[(m + 1, m)] = reflected_coefficient(m + 1, q);
    }
    let h: Vec<C64> = (0..n).map(|m| c(-2.0 * m as f64, 0.0)).collect();
    Ok(BorelRep {
        kind: RepKind::Reflected { n },
        e_alpha: ladder(n, false),
        e_beta_unit: eb,
        h: diag(&h),
        boundary_level: Some(n - 1),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RelationResidual {
    pub relation: String,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlgebraReport {
    pub max_residual: f64,
    pub relations: Vec<RelationResidual>,
    /// Levels excluded from the checks because of truncation.
    pub flagged_levels: Vec<usize>,
}

/// Relative size of `sum terms` on the leading `m x m` block.
fn word_residual(terms: &[CMat], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let cut = |a: &CMat| a.view((0, 0), (m, m)).into_owned();
    let total = terms.iter().fold(CMat::zeros(m, m), |acc, t| acc + cut(t));
    let scale = terms.iter().map(|t| fnorm(&cut(t))).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        fnorm(&total) / scale
    }
}

fn serre(x: &CMat, y: &CMat, q3: C64) -> Vec<CMat> {
    let x2 = x * x;
    let x3 = &x2 * x;
    vec![
        &x3 * y,
        -(&x2 * y * x) * q3,
        (x * y * &x2) * q3,
        -(y * &x3),
    ]
}

fn check(
    ea: &CMat,
    eb: &CMat,
    h: &CMat,
    f: Option<(&CMat, &CMat)>,
    q: C64,
    interior: impl Fn(usize) -> usize,
) -> Vec<RelationResidual> {
    let q3 = qnum_r(3.0, q);
    let hb = -h;
    let mut out = Vec::new();
    let mut push = |name: &str, r: f64| out.push(RelationResidual { relation: name.into(), residual: r });
    push("[h_a,e_a]=2e_a", word_residual(&[h * ea - ea * h, -ea * c(2.0, 0.0)], interior(2)));
    push("[h_a,e_b]=-2e_b", word_residual(&[h * eb - eb * h, eb * c(2.0, 0.0)], interior(2)));
    push("serre(e_a,e_b)", word_residual(&serre(ea, eb, q3), interior(4)));
    push("serre(e_b,e_a)", word_residual(&serre(eb, ea, q3), interior(4)));
    if let Some((fa, fb)) = f {
        let d = q - q.inv();
        let bracket = |m: &CMat| {
            let n = m.nrows();
            let mut out = CMat::zeros(n, n);
            for i in 0..n {
                let w = m[(i, i)];
                out[(i, i)] = (qpow(q, w) - qpow(q, -w)) / d;
            }
            out
        };
        push("[e_a,f_a]=[h_a]", word_residual(&[ea * fa - fa * ea, -bracket(h)], interior(2)));
        push("[e_b,f_b]=[h_b]", word_residual(&[eb * fb - fb * eb, -bracket(&hb)], interior(2)));
        push("[e_a,f_b]=0", word_residual(&[ea * fb - fb * ea], interior(2)));
        push("[e_b,f_a]=0", word_residual(&[eb * fa - fa * eb], interior(2)));
        push("[h_a,f_a]=-2f_a", word_residual(&[h * fa - fa * h, fa * c(2.0, 0.0)], interior(2)));
        push("[h_a,f_b]=2f_b", word_residual(&[h * fb - fb * h, -fb * c(2.0, 0.0)], interior(2)));
        push("serre(f_a,f_b)", word_residual(&serre(fa, fb, q3), interior(4)));
        push("serre(f_b,f_a)", word_residual(&serre(fb, fa, q3), interior(4)));
    }
    out
}

fn report(rep: &BorelRep, rels: Vec<RelationResidual>) -> AlgebraReport {
    let max_residual = rels.iter().map(|r| r.residual).fold(0.0, f64::max);
    let flagged_levels = (rep.interior(4)..rep.dim()).collect();
    AlgebraReport { max_residual, relations: rels, flagged_levels }
}

pub fn check_borel_relations(rep: &BorelRep, q: C64) -> AlgebraReport {
    let rels = check(&rep.e_alpha, &rep.e_beta_unit, &rep.h, None, q, |l| rep.interior(l));
    report(rep, rels)
}

pub fn check_algebra_relations(rep: &FullRep, q: C64) -> AlgebraReport {
    let b = &rep.borel;
    let rels = check(
        &b.e_alpha,
        &b.e_beta_unit,
        &b.h,
        Some((&rep.f_alpha, &rep.f_beta_unit)),
        q,
        |l| b.interior(l),
    );
    report(b, rels)
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitRow {
    pub j: f64,
    /// `lambda q^{-2j-1}[k][2j+1-k]` against `lambda(1-q^{-2k})/(q-q^-1)^2`.
    pub err_minus: f64,
    /// `lambda q^{2j+1}[k][2j+1-k]` against `lambda(1-q^{2k})/(q-q^-1)^2`.
    pub err_plus: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitTable {
    pub rows: Vec<LimitRow>,
    /// Index of the sequence that converges for this `|q|`: "plus" for `|q| < 1`.
    pub converging: &'static str,
}

impl LimitTable {
    pub fn converging_errors(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| if self.converging == "plus" { r.err_plus } else { r.err_minus })
            .collect()
    }
}

/// Distance between the highest-weight coefficients near the top of the
/// module, rescaled, and the oscillator coefficients.
pub fn rep_limit_check(j_list: &[f64], lambda: C64, q: C64, n: usize) -> LimitTable {
    let d2 = (q - q.inv()).powi(2);
    let rows = j_list
        .iter()
        .map(|&j| {
            let mut em: f64 = 0.0;
            let mut ep: f64 = 0.0;
            for k in 0..n {
                let prod = qnum_r(k as f64, q) * qnum_r(2.0 * j + 1.0 - k as f64, q);
                let s = qpow(q, c(2.0 * j + 1.0, 0.0));
                let vm = lambda * prod / s - lambda * (ONE - q.powi(-2 * k as i32)) / d2;
                let vp = lambda * prod * s - lambda * (ONE - q.powi(2 * k as i32)) / d2;
                em = em.max(vm.norm());
                ep = ep.max(vp.norm());
            }
            LimitRow { j, err_minus: em, err_plus: ep }
        })
        .collect();
    LimitTable { rows, converging: if q.norm() < 1.0 { "plus" } else { "minus" } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ZERO;

    fn q0() -> C64 {
        C64::from_polar(0.8, 0.3)
    }

    #[test]
    fn spin_half_matrices() {
        let r = spin_rep(0.5, q0()).unwrap().borel;
        assert_eq!(r.e_alpha, CMat::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]));
        assert_eq!(r.h, diag(&[-ONE, ONE]));
    }

    #[test]
    fn spin_one_at_q2() {
        let r = spin_rep(1.0, c(2.0, 0.0)).unwrap().borel;
        assert!((r.e_beta_unit[(1, 2)] - c(2.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn spin_zero_is_trivial() {
        let r = spin_rep(0.0, q0()).unwrap();
        assert_eq!(r.borel.dim(), 1);
        assert_eq!(r.borel.e_beta_unit[(0, 0)], ZERO);
        let rep = check_algebra_relations(&r, q0());
        assert_eq!(rep.max_residual, 0.0);
        assert!(spin_rep(-0.5, q0()).is_err() && spin_rep(0.3, q0()).is_err());
    }

    #[test]
    fn highest_weight_examples() {
        let q = q0();
        let h = highest_weight_rep(c(0.5, 0.0), 2, q).unwrap();
        let s = spin_rep(0.5, q).unwrap().borel;
        assert!((&h.e_beta_unit - &s.e_beta_unit).norm() < 1e-15);
        assert_eq!(h.e_alpha, s.e_alpha);
        let h0 = highest_weight_rep(ZERO, 4, q).unwrap();
        assert!(h0.e_beta_unit[(0, 1)].norm() < 1e-15);
        let hm = highest_weight_rep(c(-1.0, 0.0), 16, q).unwrap();
        for k in 1..16 {
            let d = q - q.inv();
            let qk = (q.powi(k) - q.powi(-k)) / d;
            let qk1 = (q.powi(k + 1) - q.powi(-k - 1)) / d;
            let want = -qk * qk1;
            assert!((hm.e_beta_unit[(k as usize - 1, k as usize)] - want).norm() < 1e-10 * want.norm());
        }
    }

    #[test]
    fn oscillator_examples() {
        let q = c(2.0, 0.0);
        let p = osc_rep(OscSign::Plus, 4, q).unwrap();
        assert!((p.e_beta_unit[(0, 1)] - c(-4.0 / 3.0, 0.0)).norm() < 1e-14);
        let q = q0();
        for s in [OscSign::Plus, OscSign::Minus] {
            let r = osc_rep(s, 10, q).unwrap();
            assert_eq!(r.e_beta_unit.column(0).norm(), 0.0);
        }
        let n = 12;
        let p = osc_rep(OscSign::Plus, n, q).unwrap();
        let (ad, a) = (&p.e_alpha, &p.e_beta_unit);
        let lhs = ad * a * q - a * ad * q.inv();
        let want = CMat::identity(n - 1, n - 1) / (q - q.inv());
        let got = lhs.view((0, 0), (n - 1, n - 1)).into_owned();
        assert!(fnorm(&(got - &want)) < 1e-12 * fnorm(&want));
    }

    #[test]
    fn reflected_structure() {
        let q = q0();
        assert_eq!(reflected_coefficient(0, q), ZERO);
        let r = reflected_rep(8, q).unwrap();
        let m = osc_rep(OscSign::Minus, 9, q).unwrap();
        // e_beta raises with the oscillator-minus coefficient of the next level.
        for k in 0..7 {
            assert!((r.e_beta_unit[(k + 1, k)] - m.e_beta_unit[(k, k + 1)]).norm() < 1e-13);
            assert_eq!(r.e_alpha[(k, k + 1)], ONE);
        }
        assert!(check_borel_relations(&r, q).max_residual < 1e-12);
    }
}
