//! Functional relations between transfer matrices and Q-operators, checked
//! as matrix identities up to fitted scalar dressings.
//!
//! Every operator here carries the normalization of its own pinned Lax
//! operator, so each identity holds up to scalars. Two kinds of fit are
//! used. A structured fit writes the target as `sum_i a_i P_i(S) X_i` with a
//! prescribed sector pattern `P_i` and global scalars `a_i`; its residual
//! tests the pattern. A free fit gives each sector its own scalars and is
//! used to report sector ratios on blocks large enough to determine them.

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{c, fnorm, lstsq, poly_roots, rel_residual, CMat, ModelParams, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::reps::{reflected_rep, OscSign};
use crate::transfer::{
    joint_spectrum, lambda_pow, sector_blocks, transfer_matrix, truncation_delta, Chain,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(name: &str, value: f64, tol: f64) -> Self {
        Check { name: name.into(), value, tol, pass: value <= tol }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamsEcho {
    pub q: C64,
    pub phi: f64,
    pub sites: usize,
    pub trunc_n: usize,
    pub tol_rel: f64,
}

impl From<&ModelParams> for ParamsEcho {
    fn from(p: &ModelParams) -> Self {
        ParamsEcho { q: p.q, phi: p.phi, sites: p.sites, trunc_n: p.trunc_n, tol_rel: p.tol_rel }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Dressing {
    pub name: String,
    pub value: C64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointResult {
    pub lambda: C64,
    /// Residual with every dressing set to one.
    pub before: f64,
    pub after: f64,
    pub sectors: Vec<(i32, f64)>,
    pub dressings: Vec<Dressing>,
    /// Free per-sector fits on sectors of dimension at least two.
    pub sector_dressings: Vec<(i32, Vec<C64>)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub relation: String,
    pub params: ParamsEcho,
    pub points: Vec<PointResult>,
    pub checks: Vec<Check>,
    pub truncation_delta: Option<f64>,
    pub verdict: Verdict,
}

impl VerificationReport {
    fn new(relation: &str, params: &ModelParams, points: Vec<PointResult>, checks: Vec<Check>) -> Self {
        let verdict = if checks.iter().all(|c| c.pass) { Verdict::Pass } else { Verdict::Fail };
        VerificationReport {
            relation: relation.into(),
            params: params.into(),
            points,
            checks,
            truncation_delta: None,
            verdict,
        }
    }

    pub fn max_after(&self) -> f64 {
        self.points.iter().map(|p| p.after).fold(0.0, f64::max)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Least-squares fit `target ~ sum_i c_i terms_i` over all entries.
pub fn fit(target: &CMat, terms: &[&CMat]) -> Result<(Vec<C64>, f64)> {
    let n = target.len();
    let a = CMat::from_fn(n, terms.len(), |e, i| terms[i][(e % target.nrows(), e / target.nrows())]);
    let b = CMat::from_fn(n, 1, |e, _| target[(e % target.nrows(), e / target.nrows())]);
    let mut an = a.clone();
    for j in 0..an.ncols() {
        let s = an.column(j).norm();
        if s == 0.0 {
            return Err(Error::DegenerateFit("zero term".into()));
        }
        an.column_mut(j).scale_mut(1.0 / s);
    }
    let sv = an.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < 1e-12 * smax {
        return Err(Error::DegenerateFit(format!("terms linearly dependent (sigma ratio {:e})", smin / smax)));
    }
    let x = lstsq(&a, &b);
    let fitted = &a * &x;
    Ok(((0..terms.len()).map(|i| x[(i, 0)]).collect(), rel_residual(&fitted, &b)))
}

/// Free fit per sector; sectors smaller than `min_dim` are skipped.
pub fn sector_fit(target: &CMat, terms: &[&CMat], sites: usize, min_dim: usize) -> Result<Vec<(i32, Vec<C64>, f64)>> {
    let tb = sector_blocks(target, sites)?;
    let bb: Vec<Vec<(i32, CMat)>> = terms.iter().map(|t| sector_blocks(t, sites)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, (s, blk)) in tb.iter().enumerate() {
        if blk.nrows() < min_dim {
            continue;
        }
        let tt: Vec<&CMat> = bb.iter().map(|b| &b[i].1).collect();
        let (cf, r) = fit(blk, &tt)?;
        out.push((*s, cf, r));
    }
    Ok(out)
}

/// Per-sector relative residual of `target - fitted`.
fn sector_residuals(target: &CMat, fitted: &CMat, sites: usize) -> Result<Vec<(i32, f64)>> {
    let a = sector_blocks(target, sites)?;
    let b = sector_blocks(fitted, sites)?;
    Ok(a.iter().zip(&b).map(|((s, x), (_, y))| (*s, rel_residual(x, y))).collect())
}

/// Largest relative deviation of `values` from their mean.
pub fn spread(values: &[C64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<C64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).norm()).fold(0.0, f64::max) / mean.norm().max(f64::MIN_POSITIVE)
}

/// `q^{e S}`.
fn qs(q: C64, s: i32, e: f64) -> C64 {
    real_pow(q, e * s as f64)
}

/// The twisted sector scalar `q^{S/2}(1 - y q^S)`.
pub fn c_twisted(q: C64, y: C64, s: i32) -> C64 {
    qs(q, s, 0.5) * (ONE - y * q.powi(s))
}

fn combine(terms: &[&CMat], coeffs: &[C64]) -> CMat {
    let mut out = CMat::zeros(terms[0].nrows(), terms[0].ncols());
    for (t, c) in terms.iter().zip(coeffs) {
        out += *t * *c;
    }
    out
}

fn point(
    lambda: C64,
    target: &CMat,
    terms: &[&CMat],
    names: &[&str],
    sites: usize,
    free_terms: Option<&[&CMat]>,
) -> Result<PointResult> {
    let (cf, after) = fit(target, terms)?;
    let fitted = combine(terms, &cf);
    let ones = vec![ONE; terms.len()];
    let before = rel_residual(target, &combine(terms, &ones));
    let sectors = sector_residuals(target, &fitted, sites)?;
    let sector_dressings = match free_terms {
        Some(ft) => sector_fit(target, ft, sites, 2)?.into_iter().map(|(s, c, _)| (s, c)).collect(),
        None => vec![],
    };
    Ok(PointResult {
        lambda,
        before,
        after,
        sectors,
        dressings: names.iter().zip(&cf).map(|(n, v)| Dressing { name: (*n).into(), value: *v }).collect(),
        sector_dressings,
    })
}

fn collect<T: Send>(grid: &[C64], f: impl Fn(C64) -> Result<T> + Sync) -> Result<Vec<T>> {
    grid.par_iter().map(|&l| f(l).map_err(|e| e.context(format!("lambda = {l}")))).collect()
}

/// Max pairwise relative commutator residual `||AB - BA|| / max(||AB||, ||BA||)`.
pub fn check_commutativity(ops: &[(String, CMat)], params: &ModelParams, tol: f64) -> VerificationReport {
    let mut worst: f64 = 0.0;
    for i in 0..ops.len() {
        for j in (i + 1)..ops.len() {
            let (a, b) = (&ops[i].1, &ops[j].1);
            let ab = a * b;
            let ba = b * a;
            if fnorm(&ab).max(fnorm(&ba)) > 0.0 {
                worst = worst.max(rel_residual(&ab, &ba));
            }
        }
    }
    VerificationReport::new("commutativity", params, vec![], vec![Check::le("max_commutator", worst, tol)])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TqForm {
    Primed,
    Unprimed,
}

/// Baxter equation `Z(l) Q(l) = b Q(l q^2) + g Q(l q^-2)` for one Q family.
pub fn check_tq(chain: &Chain, sign: OscSign, form: TqForm, grid: &[C64], tol: f64, ratio_tol: f64) -> Result<VerificationReport> {
    let p = &chain.params;
    let q = p.q;
    let l = p.sites;
    let q2 = q * q;
    // Sector patterns of the unprimed dressings.
    let (pb, pg): (f64, f64) = match sign {
        OscSign::Plus => (0.5, -0.5),
        OscSign::Minus => (-0.5, 0.5),
    };
    let points = collect(grid, |lam| {
        let get = |x: C64| match form {
            TqForm::Primed => chain.q_prime(sign, x),
            TqForm::Unprimed => chain.q_op(sign, x),
        };
        let z = chain.z(lam)?;
        let (q0, qu, qd) = (get(lam)?, get(lam * q2)?, get(lam / q2)?);
        let target = &z * &q0;
        let (tu, td) = match form {
            TqForm::Primed => (qu.clone(), qd.clone()),
            TqForm::Unprimed => (
                chain.scalar_op(|s| qs(q, s, pb)) * &qu,
                chain.scalar_op(|s| qs(q, s, pg)) * &qd,
            ),
        };
        point(lam, &target, &[&tu, &td], &["beta", "gamma"], l, Some(&[&qu, &qd]))
    })?;
    let post = points.iter().map(|p| p.after).fold(0.0, f64::max);
    let mut checks = vec![Check::le("post_fit_residual", post, tol)];
    let mut worst: f64 = 0.0;
    for pt in &points {
        let sd = &pt.sector_dressings;
        match form {
            TqForm::Primed => {
                for k in 0..2 {
                    let v: Vec<C64> = sd.iter().map(|(_, c)| c[k]).collect();
                    worst = worst.max(spread(&v));
                }
            }
            TqForm::Unprimed => {
                for w in sd.windows(2) {
                    let (s0, c0) = (&w[0].0, &w[0].1);
                    let (s1, c1) = (&w[1].0, &w[1].1);
                    let want_b = qs(q, s1 - s0, pb);
                    let want_g = qs(q, s1 - s0, pg);
                    worst = worst.max(((c1[0] / c0[0]) / want_b - ONE).norm());
                    worst = worst.max(((c1[1] / c0[1]) / want_g - ONE).norm());
                }
            }
        }
    }
    let name = match form {
        TqForm::Primed => "dressing_sector_spread",
        TqForm::Unprimed => "sector_ratio_deviation",
    };
    checks.push(Check::le(name, worst, ratio_tol));
    let tag = match (sign, form) {
        (OscSign::Plus, TqForm::Primed) => "tq_primed_plus",
        (OscSign::Minus, TqForm::Primed) => "tq_primed_minus",
        (OscSign::Plus, TqForm::Unprimed) => "tq_unprimed_plus",
        (OscSign::Minus, TqForm::Unprimed) => "tq_unprimed_minus",
    };
    Ok(VerificationReport::new(tag, p, points, checks))
}

/// `Q'^-(lambda q^{2j+1}) Q'^+(lambda q^{-2j-1})`.
pub fn qq_product(chain: &Chain, lambda: C64, j: f64) -> Result<CMat> {
    let s = chain.params.q.powf(2.0 * j + 1.0);
    Ok(chain.q_prime(OscSign::Minus, lambda * s)? * chain.q_prime(OscSign::Plus, lambda / s)?)
}

fn real_pow(q: C64, x: f64) -> C64 {
    if x.fract() == 0.0 {
        q.powi(x as i32)
    } else {
        (q.ln() * x).exp()
    }
}

/// `q^{2j+1}`.
fn powf_shift(q: C64, j: f64) -> C64 {
    real_pow(q, 2.0 * j + 1.0)
}

/// Per-sector factorization `Z_j^+(l) = c_S Q'^-(l q^{2j+1}) Q'^+(l q^{-2j-1})`
/// and the sector ratios of `c_S` against `q^{S/2}(1 - y q^S)`.
pub fn check_factorization(chain: &Chain, j: f64, grid: &[C64], tol: f64, ratio_tol: f64) -> Result<VerificationReport> {
    let p = &chain.params;
    let (q, y, l) = (p.q, p.twist(), p.sites);
    let points = collect(grid, |lam| {
        let zp = chain.z_plus(c(j, 0.0), lam)?;
        let s = powf_shift(q, j);
        let prod = chain.q_prime(OscSign::Minus, lam * s)? * chain.q_prime(OscSign::Plus, lam / s)?;
        let tb = sector_blocks(&zp, l)?;
        let pb = sector_blocks(&prod, l)?;
        let mut fitted = Vec::new();
        let mut cs = Vec::new();
        for ((s_, t), (_, pr)) in tb.iter().zip(&pb) {
            let (cf, _) = fit(t, &[pr])?;
            fitted.push((*s_, pr * cf[0]));
            cs.push((*s_, vec![cf[0]]));
        }
        let fm = crate::transfer::assemble_blocks(&fitted, l);
        Ok(PointResult {
            lambda: lam,
            before: rel_residual(&zp, &prod),
            after: rel_residual(&zp, &fm),
            sectors: sector_residuals(&zp, &fm, l)?,
            dressings: vec![],
            sector_dressings: cs,
        })
    })?;
    let post = points.iter().map(|p| p.after).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for pt in &points {
        let v: Vec<C64> = pt.sector_dressings.iter().map(|(s, c)| c[0] / c_twisted(q, y, *s)).collect();
        worst = worst.max(spread(&v));
    }
    Ok(VerificationReport::new(
        &format!("factorization_j{j}"),
        p,
        points,
        vec![Check::le("post_fit_residual", post, tol), Check::le("c_pattern_deviation", worst, ratio_tol)],
    ))
}

/// Ratio `c_S / c_{S_ref}` of factorization dressings at `lambda`.
pub fn factorization_ratios(chain: &Chain, j: f64, lambda: C64) -> Result<Vec<(i32, C64)>> {
    let l = chain.params.sites;
    let zp = chain.z_plus(c(j, 0.0), lambda)?;
    let s = powf_shift(chain.params.q, j);
    let prod = chain.q_prime(OscSign::Minus, lambda * s)? * chain.q_prime(OscSign::Plus, lambda / s)?;
    let tb = sector_blocks(&zp, l)?;
    let pb = sector_blocks(&prod, l)?;
    tb.iter().zip(&pb).map(|((s_, t), (_, pr))| Ok((*s_, fit(t, &[pr])?.0[0]))).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiContinuity {
    pub phis: Vec<f64>,
    pub reference_sector: i32,
    /// Per sector: measured ratios along `phis`, extrapolated value at 0,
    /// and the untwisted target.
    pub rows: Vec<(i32, Vec<C64>, C64, C64)>,
    /// Max deviation from the twisted pattern over all `phis`.
    pub twisted_deviation: f64,
    pub extrapolation_deviation: f64,
    /// Distance to the untwisted pattern at each `phi`.
    pub untwisted_distance: Vec<f64>,
}

/// Polynomial extrapolation to `x = 0` through the given points.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[C64]) -> C64 {
    let mut acc = ZERO;
    for i in 0..xs.len() {
        let mut w = 1.0;
        for k in 0..xs.len() {
            if k != i {
                w *= (0.0 - xs[k]) / (xs[i] - xs[k]);
            }
        }
        acc += ys[i] * w;
    }
    acc
}

/// Sector ratios of a per-sector scalar measured at several twists,
/// compared with `pattern(y, S)` at each twist and extrapolated to zero twist.
pub fn phi_continuity(
    chain: &Chain,
    phis: &[f64],
    measure: impl Fn(&Chain) -> Result<Vec<(i32, C64)>> + Sync,
    pattern: impl Fn(C64, i32) -> C64 + Sync,
) -> Result<PhiContinuity> {
    let per_phi: Vec<Vec<(i32, C64)>> = phis
        .par_iter()
        .map(|&phi| {
            let mut p = chain.params.clone();
            p.phi = phi;
            measure(&Chain::new(p))
        })
        .collect::<Result<_>>()?;
    let sref = per_phi[0].iter().map(|(s, _)| *s).filter(|s| *s != 0).min_by_key(|s| (s.abs(), *s)).unwrap_or(0);
    let ratio = |v: &Vec<(i32, C64)>, s: i32| {
        let a = v.iter().find(|x| x.0 == s).unwrap().1;
        let b = v.iter().find(|x| x.0 == sref).unwrap().1;
        a / b
    };
    let sectors: Vec<i32> = per_phi[0].iter().map(|(s, _)| *s).filter(|s| *s != 0).collect();
    let mut rows = Vec::new();
    let mut ext_dev: f64 = 0.0;
    let mut untw = vec![0.0f64; phis.len()];
    let mut tw_dev: f64 = 0.0;
    for &s in &sectors {
        let vals: Vec<C64> = per_phi.iter().map(|v| ratio(v, s)).collect();
        let ext = extrapolate_to_zero(phis, &vals);
        let target = pattern(ONE, s) / pattern(ONE, sref);
        ext_dev = ext_dev.max((ext / target - ONE).norm());
        for (i, v) in vals.iter().enumerate() {
            untw[i] = untw[i].max((v / target - ONE).norm());
        }
        for (i, &phi) in phis.iter().enumerate() {
            let y = C64::from_polar(1.0, phi);
            tw_dev = tw_dev.max((vals[i] / (pattern(y, s) / pattern(y, sref)) - ONE).norm());
        }
        rows.push((s, vals, ext, target));
    }
    // The twisted pattern is also checked on S = 0.
    for (v, &phi) in per_phi.iter().zip(phis) {
        let y = C64::from_polar(1.0, phi);
        let all: Vec<C64> = v.iter().map(|(s, x)| x / pattern(y, *s)).collect();
        tw_dev = tw_dev.max(spread(&all));
    }
    Ok(PhiContinuity {
        phis: phis.to_vec(),
        reference_sector: sref,
        rows,
        twisted_deviation: tw_dev,
        extrapolation_deviation: ext_dev,
        untwisted_distance: untw,
    })
}

/// Products entering the quantum Wronskian at spin `j`, each multiplied by
/// `q^{S/2}(1 - y q^S)`.
pub fn wronskian_terms(chain: &Chain, j: f64, lambda: C64) -> Result<(CMat, CMat)> {
    let p = &chain.params;
    let s = powf_shift(p.q, j);
    let cop = chain.scalar_op(|sv| c_twisted(p.q, p.twist(), sv));
    let x = chain.q_prime(OscSign::Minus, lambda * s)? * chain.q_prime(OscSign::Plus, lambda / s)?;
    let yv = chain.q_prime(OscSign::Minus, lambda / s)? * chain.q_prime(OscSign::Plus, lambda * s)?;
    Ok((&cop * x, &cop * yv))
}

/// `Z_j(l) = a C X + b C Y` with global `a, b`; reports `b / a` per sector
/// from free fits.
pub fn check_wronskian(chain: &Chain, j: f64, grid: &[C64], tol: f64, ratio_tol: f64) -> Result<VerificationReport> {
    let p = &chain.params;
    let l = p.sites;
    let points = collect(grid, |lam| {
        let z = chain.z_j(j, lam)?;
        let (x, yv) = wronskian_terms(chain, j, lam)?;
        point(lam, &z, &[&x, &yv], &["a", "b"], l, Some(&[&x, &yv]))
    })?;
    let post = points.iter().map(|p| p.after).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for pt in &points {
        let r: Vec<C64> = pt.sector_dressings.iter().map(|(_, c)| c[1] / c[0]).collect();
        worst = worst.max(spread(&r));
    }
    Ok(VerificationReport::new(
        &format!("wronskian_j{j}"),
        p,
        points,
        vec![Check::le("post_fit_residual", post, tol), Check::le("ratio_sector_spread", worst, ratio_tol)],
    ))
}

/// Norm of the bracket `X - Y` at spin `j`, relative to `||X||`, and the
/// antisymmetry defect `||bracket(j) + bracket(-j-1)||`.
pub fn wronskian_bracket(chain: &Chain, j: f64, lambda: C64) -> Result<(f64, f64)> {
    let (x, yv) = wronskian_terms(chain, j, lambda)?;
    let (x2, y2) = wronskian_terms(chain, -j - 1.0, lambda)?;
    let b1 = &x - &yv;
    let b2 = &x2 - &y2;
    let scale = fnorm(&x).max(fnorm(&yv)).max(f64::MIN_POSITIVE);
    Ok((fnorm(&b1) / scale, fnorm(&(&b1 + &b2)) / scale))
}

/// `Z_j = alpha Z_j^+ + beta Z_{-j-1}^+` with global scalars.
pub fn check_plus_decomposition(chain: &Chain, j: f64, grid: &[C64], tol: f64) -> Result<VerificationReport> {
    let p = &chain.params;
    let l = p.sites;
    let points = collect(grid, |lam| {
        let z = chain.z_j(j, lam)?;
        let a = chain.z_plus(c(j, 0.0), lam)?;
        let b = chain.z_plus(c(-j - 1.0, 0.0), lam)?;
        let mut pt = point(lam, &z, &[&a, &b], &["alpha", "beta"], l, Some(&[&a, &b]))?;
        pt.before = rel_residual(&z, &(&a - &b));
        Ok(pt)
    })?;
    let post = points.iter().map(|p| p.after).fold(0.0, f64::max);
    let mut delta: f64 = 0.0;
    let q = p.q;
    for &lam in grid.iter().take(2) {
        for jj in [j, -j - 1.0] {
            let rep = crate::reps::highest_weight_rep(c(jj, 0.0), p.trunc_n, q)?;
            delta = delta.max(truncation_delta(&rep, lam, p)?);
        }
    }
    let mut checks = vec![Check::le("post_fit_residual", post, tol)];
    let mut verdict_checks = Vec::new();
    let incon = delta > post.max(tol);
    verdict_checks.push(Check::le("truncation_delta", delta, tol));
    checks.extend(verdict_checks);
    let mut r = VerificationReport::new(&format!("plus_j{j}"), p, points, checks);
    r.truncation_delta = Some(delta);
    if incon && r.verdict == Verdict::Pass {
        r.verdict = Verdict::Inconclusive;
    }
    Ok(r)
}

#[derive(Clone, Debug, Serialize)]
pub struct WebPoint {
    pub lambda: C64,
    pub wronskian_abs: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Triangle bound tying the plus decomposition, the two factorizations and
/// the Wronskian together: with `E_p`, `E_1`, `E_2` the residual operators of
/// the first three, the best Wronskian fit has residual at most
/// `||E_p|| + |alpha| ||E_1|| + |beta| ||E_2||`.
pub fn consistency_web(chain: &Chain, j: f64, grid: &[C64]) -> Result<Vec<WebPoint>> {
    let l = chain.params.sites;
    collect(grid, |lam| {
        let z = chain.z_j(j, lam)?;
        let zp = chain.z_plus(c(j, 0.0), lam)?;
        let zm = chain.z_plus(c(-j - 1.0, 0.0), lam)?;
        let (cf, _) = fit(&z, &[&zp, &zm])?;
        let ep = &z - (&zp * cf[0] + &zm * cf[1]);
        let s = powf_shift(chain.params.q, j);
        let x = chain.q_prime(OscSign::Minus, lam * s)? * chain.q_prime(OscSign::Plus, lam / s)?;
        let yv = chain.q_prime(OscSign::Minus, lam / s)? * chain.q_prime(OscSign::Plus, lam * s)?;
        let per_sector = |t: &CMat, prod: &CMat| -> Result<CMat> {
            let tb = sector_blocks(t, l)?;
            let pb = sector_blocks(prod, l)?;
            let mut out = Vec::new();
            for ((s_, tt), (_, pp)) in tb.iter().zip(&pb) {
                let (k, _) = fit(tt, &[pp])?;
                out.push((*s_, pp * k[0]));
            }
            Ok(crate::transfer::assemble_blocks(&out, l))
        };
        let f1 = per_sector(&zp, &x)?;
        let f2 = per_sector(&zm, &yv)?;
        let e1 = &zp - &f1;
        let e2 = &zm - &f2;
        let bound = fnorm(&ep) + cf[0].norm() * fnorm(&e1) + cf[1].norm() * fnorm(&e2);
        // Best per-sector two-term Wronskian fit.
        let zb = sector_blocks(&z, l)?;
        let xb = sector_blocks(&x, l)?;
        let yb = sector_blocks(&yv, l)?;
        let mut wabs2 = 0.0;
        for i in 0..zb.len() {
            let (t, a, b) = (&zb[i].1, &xb[i].1, &yb[i].1);
            let res = match fit(t, &[a, b]) {
                Ok((k, _)) => t - (a * k[0] + b * k[1]),
                Err(_) => {
                    let (k, _) = fit(t, &[a])?;
                    t - a * k[0]
                }
            };
            wabs2 += fnorm(&res).powi(2);
        }
        let wabs = wabs2.sqrt();
        let slack = 1e-13 * fnorm(&z);
        Ok(WebPoint { lambda: lam, wronskian_abs: wabs, bound, holds: wabs <= bound + slack })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Plus,
    Minus,
}

/// Fusion `Z(l) Z_j(l q^{-+(2j+1)}) = b Z_{j-1/2}(l q^{-+(2j+2)}) + g Z_{j+1/2}(l q^{-+2j})`.
pub fn check_fusion(chain: &Chain, j: f64, dir: Direction, grid: &[C64], tol: f64) -> Result<VerificationReport> {
    let p = &chain.params;
    let q = p.q;
    let l = p.sites;
    let e = match dir {
        Direction::Plus => -1.0,
        Direction::Minus => 1.0,
    };
    let sh = |x: f64| real_pow(q, e * x);
    let points = collect(grid, |lam| {
        let lhs = chain.z(lam)? * chain.z_j(j, lam * sh(2.0 * j + 1.0))?;
        let hi = chain.z_j(j + 0.5, lam * sh(2.0 * j))?;
        if j == 0.0 {
            // Z_{-1/2} = 0: a single term remains.
            return point(lam, &lhs, &[&hi], &["gamma"], l, None);
        }
        let lo = chain.z_j(j - 0.5, lam * sh(2.0 * j + 2.0))?;
        point(lam, &lhs, &[&lo, &hi], &["beta", "gamma"], l, None)
    })?;
    let post = points.iter().map(|p| p.after).fold(0.0, f64::max);
    let tag = match dir {
        Direction::Plus => format!("fusion_plus_j{j}"),
        Direction::Minus => format!("fusion_minus_j{j}"),
    };
    Ok(VerificationReport::new(&tag, p, points, vec![Check::le("post_fit_residual", post, tol)]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LimitMode {
    /// `Z_j^+(l q^{2j+1}) -> Q^+(l)` and `Z_s^+(l q^{-2s-1}) -> Q^-(l)`, `s = -j-1`.
    ZplusLimit,
    /// `Z_j(l q^{2j+1})`: `S < 0 -> Q^-`, `S > 0 -> Q^+`, `S = 0 -> {Q^-, Q^+}`.
    ZLimit,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitSeries {
    pub label: String,
    pub sector: i32,
    pub errors: Vec<f64>,
    pub monotone_tail: bool,
    pub final_error: f64,
    /// For two-term fits, the ratio of the `Q^+` to the `Q^-` coefficient at
    /// the last `j`.
    pub final_ratio: Option<C64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitReport {
    pub mode: LimitMode,
    pub lambda: C64,
    pub j_list: Vec<f64>,
    pub series: Vec<LimitSeries>,
    pub tol: f64,
    pub verdict: Verdict,
}

/// Errors below this are at the rounding floor and count as converged.
pub const LIMIT_FLOOR: f64 = 1e-12;

/// Rounding floor of resummed infinite traces; residuals below it are flat.
pub const RESUM_FLOOR: f64 = 1e-10;

fn monotone_tail(e: &[f64]) -> bool {
    let n = e.len();
    if n < 3 || e[n - 3..].iter().all(|&x| x < LIMIT_FLOOR) {
        return true;
    }
    e[n - 3] > e[n - 2] && e[n - 2] > e[n - 1]
}

/// Convergence of rescaled transfer matrices to Q-operators as `j -> inf`.
///
/// For `|q| < 1` the convergent direction evaluates at `lambda q^{2j+1}`.
pub fn limit_study(chain: &Chain, lambda: C64, j_list: &[f64], mode: LimitMode, tol: f64) -> Result<LimitReport> {
    let p = &chain.params;
    let q = p.q;
    let l = p.sites;
    let qp = sector_blocks(&chain.q_plus(lambda)?, l)?;
    let qm = sector_blocks(&chain.q_minus(lambda)?, l)?;
    type Row = Vec<(String, i32, f64, Option<C64>)>;
    let rows: Vec<Row> = j_list
        .par_iter()
        .map(|&j| -> Result<Row> {
            let shift = powf_shift(q, j);
            let mut out = Vec::new();
            match mode {
                LimitMode::ZLimit => {
                    let b = sector_blocks(&chain.z_j(j, lambda * shift)?, l)?;
                    for (i, (s, blk)) in b.iter().enumerate() {
                        if *s == 0 {
                            let (cf, r) = fit(blk, &[&qm[i].1, &qp[i].1])?;
                            out.push(("Z".to_string(), *s, r, Some(cf[1] / cf[0])));
                        } else if *s < 0 {
                            out.push(("Z".to_string(), *s, fit(blk, &[&qm[i].1])?.1, None));
                        } else {
                            out.push(("Z".to_string(), *s, fit(blk, &[&qp[i].1])?.1, None));
                        }
                    }
                }
                LimitMode::ZplusLimit => {
                    let b = sector_blocks(&chain.z_plus(c(j, 0.0), lambda * shift)?, l)?;
                    for (i, (s, blk)) in b.iter().enumerate() {
                        out.push(("Zplus->Q+".to_string(), *s, fit(blk, &[&qp[i].1])?.1, None));
                    }
                    let sn = -j - 1.0;
                    let b = sector_blocks(&chain.z_plus(c(sn, 0.0), lambda / powf_shift(q, sn))?, l)?;
                    for (i, (s, blk)) in b.iter().enumerate() {
                        out.push(("Zplus->Q-".to_string(), *s, fit(blk, &[&qm[i].1])?.1, None));
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut series = Vec::new();
    for (k, (label, s, _, _)) in rows[0].iter().enumerate() {
        let errors: Vec<f64> = rows.iter().map(|r| r[k].2).collect();
        let final_error = *errors.last().unwrap();
        series.push(LimitSeries {
            label: label.clone(),
            sector: *s,
            monotone_tail: monotone_tail(&errors),
            final_error,
            final_ratio: rows.last().unwrap()[k].3,
            errors,
        });
    }
    let ok = series.iter().all(|s| s.monotone_tail && s.final_error <= tol);
    let tail_ok = series.iter().all(|s| s.monotone_tail);
    let verdict = if ok {
        Verdict::Pass
    } else if !tail_ok {
        Verdict::Inconclusive
    } else {
        Verdict::Fail
    };
    Ok(LimitReport { mode, lambda, j_list: j_list.to_vec(), series, tol, verdict })
}

/// Transfer operator of the reflected representation against `Q^+(lambda)`,
/// one fitted scalar per sector. Returns the worst sector residual.
pub fn boundary_region_check(chain: &Chain, lambda: C64) -> Result<(f64, Vec<(i32, C64)>)> {
    let p = &chain.params;
    let rep = reflected_rep(p.trunc_n.max(2), p.q)?;
    let t = transfer_matrix(&rep, lambda, p)?.matrix;
    let qp = chain.q_plus(lambda)?;
    let tb = sector_blocks(&t, p.sites)?;
    let qb = sector_blocks(&qp, p.sites)?;
    let mut worst: f64 = 0.0;
    let mut d = Vec::new();
    for ((s, a), (_, b)) in tb.iter().zip(&qb) {
        let (cf, r) = fit(a, &[b])?;
        worst = worst.max(r);
        d.push((*s, cf[0]));
    }
    Ok((worst, d))
}

#[derive(Clone, Debug, Serialize)]
pub struct Q0Report {
    pub lambda: C64,
    /// Per sector: scalar value and deviation of the block from a multiple of
    /// the identity.
    pub sectors: Vec<(i32, C64, f64)>,
    /// Spread of `value_S (1 - y q^S)` across sectors.
    pub pattern_deviation: f64,
}

/// Sector values of `Q^{+-}` near `lambda = 0`.
pub fn q_at_zero(chain: &Chain, sign: OscSign, lambda: C64) -> Result<Q0Report> {
    let p = &chain.params;
    let (q, y) = (p.q, p.twist());
    let blocks = sector_blocks(&chain.q_op(sign, lambda)?, p.sites)?;
    let mut sectors = Vec::new();
    let mut scaled = Vec::new();
    for (s, b) in &blocks {
        let m = b.nrows();
        let v = b.trace() / m as f64;
        let dev = rel_residual(b, &(CMat::identity(m, m) * v));
        sectors.push((*s, v, dev));
        scaled.push(v * (ONE - y * q.powi(*s)));
    }
    Ok(Q0Report { lambda, sectors, pattern_deviation: spread(&scaled) })
}

/// Per-sector values of `Q^{+-}(lambda)`.
pub fn q0_values(chain: &Chain, sign: OscSign, lambda: C64) -> Result<Vec<(i32, C64)>> {
    Ok(q_at_zero(chain, sign, lambda)?.sectors.into_iter().map(|(s, v, _)| (s, v)).collect())
}

/// Sector values at `lambda = 0` from samples at `lambda` and `2 lambda`,
/// cancelling the linear term. The linear coefficient grows like `1/phi`,
/// so this is what [`phi_continuity`] needs at small twist.
pub fn q0_values_extrapolated(chain: &Chain, sign: OscSign, lambda: C64) -> Result<Vec<(i32, C64)>> {
    let a = q0_values(chain, sign, lambda)?;
    let b = q0_values(chain, sign, lambda * 2.0)?;
    Ok(a.iter().zip(&b).map(|((s, x), (_, y))| (*s, x * 2.0 - y)).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct BetheRoot {
    pub root: C64,
    pub tq_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BetheState {
    pub sector: i32,
    pub index: usize,
    pub degree: usize,
    pub coefficients: Vec<C64>,
    pub interpolation_residual: f64,
    pub roots: Vec<BetheRoot>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BetheReport {
    pub sites: usize,
    pub samples: Vec<C64>,
    pub reference_lambda: C64,
    pub states: Vec<BetheState>,
    pub max_tq_residual: f64,
    pub counts_match: bool,
    pub leakage: f64,
}

/// Default sampling points for eigenvalue interpolation: a circle of radius
/// `r` avoiding the negative real axis.
pub fn bethe_samples(n: usize, r: f64) -> Vec<C64> {
    (0..n).map(|i| C64::from_polar(r, -2.6 + 5.2 * i as f64 / (n - 1) as f64)).collect()
}

/// Smallest-degree polynomial through `(xs, ys)` with relative residual
/// below `tol`, up to degree `max_deg`.
pub fn interpolate(xs: &[C64], ys: &[C64], max_deg: usize, tol: f64) -> Result<(Vec<C64>, f64)> {
    let ny: f64 = ys.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    let mut best = None;
    for deg in 0..=max_deg.min(xs.len() - 1) {
        let v = CMat::from_fn(xs.len(), deg + 1, |i, k| xs[i].powi(k as i32));
        let b = CMat::from_fn(xs.len(), 1, |i, _| ys[i]);
        let cf = lstsq(&v, &b);
        let res = fnorm(&(&v * &cf - &b)) / ny.max(f64::MIN_POSITIVE);
        let coeffs: Vec<C64> = (0..=deg).map(|k| cf[(k, 0)]).collect();
        if res <= tol {
            return Ok((coeffs, res));
        }
        best = Some((coeffs, res));
    }
    let (_, r) = best.unwrap();
    Err(Error::IllConditioned(format!("no polynomial of degree <= {max_deg} fits (residual {r:e})")))
}

/// Bethe roots as zeros of `Q^+` eigenvalues, which are polynomials in
/// `lambda` of degree `(L - S)/2`, checked against the TQ relation at each
/// root.
pub fn extract_bethe_roots(chain: &Chain, samples: &[C64], reference_lambda: C64, tol_interp: f64) -> Result<BetheReport> {
    let p = &chain.params;
    let l = p.sites;
    let q = p.q;
    let q2 = q * q;
    let zref = chain.z(reference_lambda)?;
    let qs_ops: Vec<CMat> = samples.par_iter().map(|&x| chain.q_plus(x)).collect::<Result<_>>()?;
    let table = joint_spectrum(&qs_ops, &zref, l)?;
    let mut states = Vec::new();
    for row in &table.rows {
        let (coeffs, ires) = interpolate(samples, &row.values, l, tol_interp)?;
        states.push((row.sector, row.index, coeffs, ires));
    }
    // Evaluate TQ at each root with dressings fitted there.
    let mut out = Vec::new();
    let mut worst: f64 = 0.0;
    let mut counts = true;
    for (s, idx, coeffs, ires) in states {
        let deg = coeffs.len() - 1;
        if (l as i32 - s) % 2 != 0 || deg as i32 != (l as i32 - s) / 2 {
            counts = false;
        }
        let roots = poly_roots(&coeffs);
        let mut rs = Vec::new();
        for r0 in roots {
            let z = chain.z(r0)?;
            let (qu, qd) = (chain.q_plus(r0 * q2)?, chain.q_plus(r0 / q2)?);
            let q0 = chain.q_plus(r0)?;
            let target = &z * &q0;
            let tu = chain.scalar_op(|sv| qs(q, sv, 0.5)) * &qu;
            let td = chain.scalar_op(|sv| qs(q, sv, -0.5)) * &qd;
            let (cf, _) = fit(&target, &[&tu, &td])?;
            // Shifted eigenvalues taken directly from the operators.
            let shifted = joint_spectrum(&[qu, qd], &zref, l)?;
            let row = shifted.rows.iter().find(|r| r.sector == s && r.index == idx).unwrap();
            let up = row.values[0] * qs(q, s, 0.5) * cf[0];
            let dn = row.values[1] * qs(q, s, -0.5) * cf[1];
            let res = (up + dn).norm() / (up.norm() + dn.norm()).max(f64::MIN_POSITIVE);
            worst = worst.max(res);
            rs.push(BetheRoot { root: r0, tq_residual: res });
        }
        out.push(BetheState { sector: s, index: idx, degree: deg, coefficients: coeffs, interpolation_residual: ires, roots: rs });
    }
    Ok(BetheReport {
        sites: l,
        samples: samples.to_vec(),
        reference_lambda,
        states: out,
        max_tq_residual: worst,
        counts_match: counts,
        leakage: table.leakage,
    })
}

/// Principal-branch power used for sector dressings in reports.
pub fn sector_power(lambda: C64, s: i32, e: f64) -> C64 {
    lambda_pow(lambda, e * s as f64)
}

/// Pairwise commutators among `Z(l)`, `Z_1(l)` (finite auxiliary spaces) and
/// `Q^{+-}(l)` (infinite) over `lambdas`. The infinite set is recomputed with
/// two more resummation samples; the residual must not grow.
pub fn check_commutativity_families(chain: &Chain, lambdas: &[C64], tol_finite: f64, tol_infinite: f64) -> Result<VerificationReport> {
    let p = &chain.params;
    let finite: Vec<Vec<(String, CMat)>> = collect(lambdas, |l| {
        Ok(vec![(format!("Z({l})"), chain.z(l)?), (format!("Z_1({l})"), chain.z_j(1.0, l)?)])
    })?;
    let finite: Vec<(String, CMat)> = finite.into_iter().flatten().collect();
    let infinite_at = |ch: &Chain| -> Result<Vec<(String, CMat)>> {
        let v: Vec<Vec<(String, CMat)>> = collect(lambdas, |l| {
            Ok(vec![
                (format!("Q+({l})"), ch.q_plus(l)?),
                (format!("Q-({l})"), ch.q_minus(l)?),
            ])
        })?;
        Ok(v.into_iter().flatten().collect())
    };
    let mut refined = p.clone();
    refined.conventions.extra_samples += 2;
    refined.trunc_n += 2;
    let inf = infinite_at(chain)?;
    let inf2 = infinite_at(&Chain::new(refined))?;
    let all: Vec<(String, CMat)> = finite.iter().cloned().chain(inf.iter().cloned()).collect();
    let all2: Vec<(String, CMat)> = finite.iter().cloned().chain(inf2).collect();
    let r_fin = check_commutativity(&finite, p, tol_finite).checks[0].value;
    let r_inf = check_commutativity(&all, p, tol_infinite).checks[0].value;
    let r_inf2 = check_commutativity(&all2, p, tol_infinite).checks[0].value;
    let improving = r_inf2 <= (r_inf * 1.5).max(RESUM_FLOOR);
    let checks = vec![
        Check::le("finite_max_commutator", r_fin, tol_finite),
        Check::le("infinite_max_commutator", r_inf, tol_infinite),
        Check::le("infinite_max_commutator_refined", r_inf2, tol_infinite),
        Check { name: "refinement_not_worse".into(), value: r_inf2 / r_inf.max(f64::MIN_POSITIVE), tol: 1.5, pass: improving },
    ];
    Ok(VerificationReport::new("commutativity", p, vec![], checks))
}

/// Factorization sector ratios against the twisted pattern across `phis`
/// and their polynomial extrapolation to zero twist.
pub fn check_factorization_continuity(chain: &Chain, j: f64, lambda: C64, phis: &[f64], tol: f64) -> Result<(VerificationReport, PhiContinuity)> {
    let q = chain.params.q;
    let pc = phi_continuity(chain, phis, |ch| factorization_ratios(ch, j, lambda), |y, s| c_twisted(q, y, s))?;
    let checks = vec![
        Check::le("twisted_pattern_deviation", pc.twisted_deviation, tol),
        Check::le("untwisted_extrapolation_deviation", pc.extrapolation_deviation, tol),
    ];
    Ok((VerificationReport::new(&format!("factorization_continuity_j{j}"), &chain.params, vec![], checks), pc))
}

/// `Q^{+-}` near zero: block proportional to the identity, sector values
/// proportional to `1/(1 - y q^S)`, and continuity to zero twist on `S != 0`.
pub fn check_q_at_zero(chain: &Chain, lambda: C64, phis: &[f64], tol: f64) -> Result<VerificationReport> {
    let q = chain.params.q;
    let mut checks = Vec::new();
    for (sign, tag) in [(OscSign::Plus, "plus"), (OscSign::Minus, "minus")] {
        let r = q_at_zero(chain, sign, lambda)?;
        let blk = r.sectors.iter().map(|x| x.2).fold(0.0, f64::max);
        checks.push(Check::le(&format!("{tag}_identity_deviation"), blk, tol));
        checks.push(Check::le(&format!("{tag}_pattern_deviation"), r.pattern_deviation, tol));
        let pc = phi_continuity(chain, phis, |ch| q0_values_extrapolated(ch, sign, lambda), |y, s| ONE / (ONE - y * q.powi(s)))?;
        checks.push(Check::le(&format!("{tag}_untwisted_extrapolation_deviation"), pc.extrapolation_deviation, tol));
    }
    Ok(VerificationReport::new("q_at_zero", &chain.params, vec![], checks))
}

/// Wronskian bracket at `j = -1/2` (exact, `tol`) and the sign flip under
/// `j -> -j-1` (the shifted arguments are rounded differently, `tol_flip`).
pub fn check_wronskian_bracket(chain: &Chain, js: &[f64], grid: &[C64], tol: f64, tol_flip: f64) -> Result<VerificationReport> {
    let mut zero: f64 = 0.0;
    let mut anti: f64 = 0.0;
    for &l in grid {
        zero = zero.max(wronskian_bracket(chain, -0.5, l)?.0);
        for &j in js {
            anti = anti.max(wronskian_bracket(chain, j, l)?.1);
        }
    }
    Ok(VerificationReport::new(
        "wronskian_bracket",
        &chain.params,
        vec![],
        vec![Check::le("bracket_at_minus_half", zero, tol), Check::le("antisymmetry_defect", anti, tol_flip)],
    ))
}

/// [`consistency_web`] as a report.
pub fn check_consistency_web(chain: &Chain, j: f64, grid: &[C64]) -> Result<VerificationReport> {
    let w = consistency_web(chain, j, grid)?;
    let worst = w.iter().map(|x| x.wronskian_abs / x.bound.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    let holds = w.iter().all(|x| x.holds);
    Ok(VerificationReport::new(
        &format!("consistency_web_j{j}"),
        &chain.params,
        vec![],
        vec![Check { name: "residual_over_bound".into(), value: worst, tol: 1.0, pass: holds }],
    ))
}

/// [`boundary_region_check`] over a grid.
pub fn check_boundary(chain: &Chain, grid: &[C64], tol: f64) -> Result<VerificationReport> {
    let r: Vec<f64> = collect(grid, |l| Ok(boundary_region_check(chain, l)?.0))?;
    let worst = r.iter().cloned().fold(0.0, f64::max);
    Ok(VerificationReport::new("boundary_region", &chain.params, vec![], vec![Check::le("post_fit_residual", worst, tol)]))
}
