//! Monodromy and transfer operators on `(C^2)^{(x) L}`, magnetization
//! sectors and joint spectra.
//!
//! Infinite auxiliary traces are summed in closed form. The level-`k`
//! diagonal block of the monodromy of a truncated highest-weight or
//! oscillator representation is an exponential polynomial
//! `D_k = sum_p C_p q^{pk}`, `p in {-L, -L+2, ..., L}`. The coefficients are
//! fitted from the lowest levels, which the truncation does not affect, and
//! the twisted trace becomes `sum_p C_p / (1 - y q^p)`. For `|y q^p| < 1`
//! this equals the convergent level sum; otherwise it is its analytic
//! continuation in the twist.

use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{
    eig, fnorm, inverse, lstsq, rel_residual, twisted_partial_trace, CMat, ModelParams, C64, ONE, ZERO,
};
use crate::error::{Error, Result};
use crate::lax::{derive_lax, derive_lax_full, LaxOperator};
use crate::reps::{highest_weight_rep, osc_rep, reflected_rep, spin_rep, BorelRep, OscSign, RepKind};

/// Which operator a [`QuantumOperator`] realizes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Family {
    Z { two_j: u32 },
    ZPlus { j: C64 },
    QPlus,
    QMinus,
    QPrimePlus,
    QPrimeMinus,
    Reflected,
    Derived(String),
}

#[derive(Clone, Debug)]
pub struct QuantumOperator {
    pub sites: usize,
    pub matrix: CMat,
    pub family: Family,
    pub lambda: C64,
    /// Auxiliary levels actually used for infinite representations.
    pub levels: Option<usize>,
    pub fit_residual: Option<f64>,
}

/// Magnetization `S = sum_n h_alpha` of a chain basis state; site 1 is the
/// most significant bit and bit 0 is up (`h_alpha = +1`).
pub fn magnetization(sites: usize, state: usize) -> i32 {
    let down = state.count_ones() as i32;
    sites as i32 - 2 * down
}

#[derive(Clone, Debug, Serialize)]
pub struct Sector {
    pub s: i32,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorDecomposition {
    pub sites: usize,
    pub sectors: Vec<Sector>,
}

impl SectorDecomposition {
    pub fn new(sites: usize) -> Self {
        let sectors = (0..=sites)
            .map(|down| {
                let s = sites as i32 - 2 * down as i32;
                let indices = (0..1usize << sites).filter(|&b| magnetization(sites, b) == s).collect();
                Sector { s, indices }
            })
            .rev()
            .collect();
        SectorDecomposition { sites, sectors }
    }

    pub fn values(&self) -> Vec<i32> {
        self.sectors.iter().map(|s| s.s).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.sectors.iter().map(|s| s.indices.len()).collect()
    }

    /// Diagonal operator with entry `f(S)` on each sector.
    pub fn scalar_op(&self, f: impl Fn(i32) -> C64) -> CMat {
        let n = 1usize << self.sites;
        let mut d = CMat::zeros(n, n);
        for b in 0..n {
            d[(b, b)] = f(magnetization(self.sites, b));
        }
        d
    }
}

pub fn magnetization_op(sites: usize) -> CMat {
    SectorDecomposition::new(sites).scalar_op(|s| C64::new(s as f64, 0.0))
}

/// Restriction of `op` to each magnetization sector, ordered by `S`.
pub fn sector_blocks(op: &CMat, sites: usize) -> Result<Vec<(i32, CMat)>> {
    let dec = SectorDecomposition::new(sites);
    let n = 1usize << sites;
    if op.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch(format!("{}x{} operator for L = {}", op.nrows(), op.ncols(), sites)));
    }
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if magnetization(sites, i) != magnetization(sites, j) {
                off += op[(i, j)].norm_sqr();
            }
        }
    }
    let leak = off.sqrt() / fnorm(op).max(f64::MIN_POSITIVE);
    if leak > 1e-10 {
        return Err(Error::NotBlockDiagonal(leak));
    }
    Ok(dec
        .sectors
        .iter()
        .map(|sec| {
            let m = sec.indices.len();
            (sec.s, CMat::from_fn(m, m, |a, b| op[(sec.indices[a], sec.indices[b])]))
        })
        .collect())
}

pub fn assemble_blocks(blocks: &[(i32, CMat)], sites: usize) -> CMat {
    let dec = SectorDecomposition::new(sites);
    let n = 1usize << sites;
    let mut out = CMat::zeros(n, n);
    for (s, blk) in blocks {
        let sec = dec.sectors.iter().find(|x| x.s == *s).expect("sector");
        for (a, &ia) in sec.indices.iter().enumerate() {
            for (b, &ib) in sec.indices.iter().enumerate() {
                out[(ia, ib)] = blk[(a, b)];
            }
        }
    }
    out
}

/// Full monodromy `L_L ... L_1` on `V_aux (x) (C^2)^{(x) L}`, auxiliary
/// index most significant, site 1 most significant within the chain.
pub fn monodromy(lax: &LaxOperator, sites: usize) -> CMat {
    let n = lax.aux_dim;
    let mut entries = Vec::new();
    for a in 0..n {
        for s in 0..2 {
            for k in 0..n {
                for t in 0..2 {
                    let v = lax.matrix[(2 * a + s, 2 * k + t)];
                    if v != ZERO {
                        entries.push((a, s, k, t, v));
                    }
                }
            }
        }
    }
    let mut m = CMat::identity(n, n);
    let mut d = 1usize;
    for _ in 0..sites {
        let nd = 2 * d;
        let mut next = CMat::zeros(n * nd, n * nd);
        for &(a, s, k, t, v) in &entries {
            for x in 0..d {
                let row = k * d + x;
                let out_row = a * nd + x * 2 + s;
                for l in 0..n {
                    for y in 0..d {
                        let w = m[(row, l * d + y)];
                        if w != ZERO {
                            next[(out_row, l * nd + y * 2 + t)] += v * w;
                        }
                    }
                }
            }
        }
        m = next;
        d = nd;
    }
    m
}

/// The diagonal auxiliary blocks `<k|M|k>` of the monodromy.
pub fn monodromy_diag_blocks(lax: &LaxOperator, sites: usize) -> Vec<CMat> {
    let m = monodromy(lax, sites);
    let d = 1usize << sites;
    (0..lax.aux_dim).map(|k| m.view((k * d, k * d), (d, d)).into_owned()).collect()
}

/// Number of fitted levels and working truncation for a chain of `sites`.
pub fn working_levels(sites: usize, extra: usize, trunc_n: usize) -> Result<(usize, usize)> {
    let samples = sites + 1 + extra;
    let n = samples + sites / 2 + 1;
    if n > trunc_n {
        let k = trunc_n.saturating_sub(sites / 2 + 1);
        if k < sites + 1 {
            return Err(Error::InvalidParams(format!(
                "trunc_N = {trunc_n} leaves {k} clean levels, need {}",
                sites + 1
            )));
        }
        return Ok((k, trunc_n));
    }
    Ok((samples, n))
}

#[derive(Clone, Debug)]
pub struct Resummed {
    pub op: CMat,
    /// Relative least-squares residual of the exponential-polynomial fit.
    pub fit_residual: f64,
    pub coefficients: Vec<(i32, CMat)>,
}

/// Fits `D_k = sum_p C_p q^{pk}` on `k < samples` and sums `sum_k y^k D_k`.
pub fn resum(blocks: &[CMat], samples: usize, sites: usize, q: C64, y: C64) -> Resummed {
    let d = blocks[0].nrows();
    let ps: Vec<i32> = (0..=sites).map(|i| 2 * i as i32 - sites as i32).collect();
    let v = CMat::from_fn(samples, ps.len(), |k, j| q.powi(ps[j] * k as i32));
    let data = CMat::from_fn(samples, d * d, |k, e| blocks[k][(e / d, e % d)]);
    let coef = lstsq(&v, &data);
    let fit_residual = fnorm(&(&v * &coef - &data)) / fnorm(&data).max(f64::MIN_POSITIVE);
    let mut op = CMat::zeros(d, d);
    let mut coefficients = Vec::new();
    for (j, &p) in ps.iter().enumerate() {
        let cp = CMat::from_fn(d, d, |a, b| coef[(j, a * d + b)]);
        op += &cp / (ONE - y * q.powi(p));
        coefficients.push((p, cp));
    }
    Resummed { op, fit_residual, coefficients }
}

/// `sum_k w_k D_k` over every retained level.
pub fn direct_trace(blocks: &[CMat], weights: &[C64]) -> CMat {
    let d = blocks[0].nrows();
    blocks.iter().zip(weights).fold(CMat::zeros(d, d), |acc, (b, w)| acc + b * *w)
}

pub fn rebuild(kind: &RepKind, n: usize, q: C64) -> Result<BorelRep> {
    match kind {
        RepKind::SpinJ { two_j } => Ok(spin_rep(*two_j as f64 / 2.0, q)?.borel),
        RepKind::HighestWeightInf { j, .. } => highest_weight_rep(*j, n, q),
        RepKind::OscPlus { .. } => osc_rep(OscSign::Plus, n, q),
        RepKind::OscMinus { .. } => osc_rep(OscSign::Minus, n, q),
        RepKind::Reflected { .. } => reflected_rep(n, q),
    }
}

fn family_of(kind: &RepKind) -> Family {
    match kind {
        RepKind::SpinJ { two_j } => Family::Z { two_j: *two_j },
        RepKind::HighestWeightInf { j, .. } => Family::ZPlus { j: *j },
        RepKind::OscPlus { .. } => Family::QPlus,
        RepKind::OscMinus { .. } => Family::QMinus,
        RepKind::Reflected { .. } => Family::Reflected,
    }
}

/// Twist per auxiliary level: levels of the reflected representation count
/// down from the top of the module, so they carry `y^{-1}`.
fn level_twist(kind: &RepKind, y: C64) -> C64 {
    match kind {
        RepKind::Reflected { .. } => y.inv(),
        _ => y,
    }
}

/// Twisted transfer operator of `rep` at spectral point `lambda`.
///
/// Finite representations are traced level by level with weights
/// `e^{i k phi}`. Infinite ones are rebuilt at the working truncation from
/// [`working_levels`] (bounded by `rep`'s own size and `trunc_N`) and
/// resummed.
pub fn transfer_matrix(rep: &BorelRep, lambda: C64, params: &ModelParams) -> Result<QuantumOperator> {
    let q = params.q;
    let y = params.twist();
    let sites = params.sites;
    let family = family_of(&rep.kind);
    if !rep.kind.is_infinite() {
        let lax = match &rep.kind {
            RepKind::SpinJ { two_j } => derive_lax_full(&spin_rep(*two_j as f64 / 2.0, q)?, lambda, q)?,
            _ => unreachable!(),
        };
        let m = monodromy(&lax, sites);
        let weights: Vec<C64> = (0..lax.aux_dim).map(|k| y.powi(k as i32)).collect();
        let matrix = twisted_partial_trace(&m, &weights)?;
        return Ok(QuantumOperator { sites, matrix, family, lambda, levels: None, fit_residual: None });
    }
    if q.norm() >= 1.0 {
        return Err(Error::InvalidParams("infinite auxiliary trace needs |q| < 1".into()));
    }
    let (samples, n) = working_levels(sites, params.conventions.extra_samples, params.trunc_n.min(rep.dim()))?;
    let work = rebuild(&rep.kind, n, q)?;
    let lax = derive_lax(&work, lambda, q)?;
    let blocks = monodromy_diag_blocks(&lax, sites);
    let r = resum(&blocks, samples, sites, q, level_twist(&rep.kind, y));
    Ok(QuantumOperator {
        sites,
        matrix: r.op,
        family,
        lambda,
        levels: Some(n),
        fit_residual: Some(r.fit_residual),
    })
}

/// Convenience constructors for the operator families of one model.
#[derive(Clone, Debug)]
pub struct Chain {
    pub params: ModelParams,
}

impl Chain {
    pub fn new(params: ModelParams) -> Self {
        Chain { params }
    }

    fn q(&self) -> C64 {
        self.params.q
    }

    fn big(&self) -> usize {
        self.params.trunc_n.max(2)
    }

    pub fn z_j(&self, j: f64, lambda: C64) -> Result<CMat> {
        if j < 0.0 {
            // Z_j = -Z_{-j-1}; Z_{-1/2} = 0.
            if (j + 0.5).abs() < 1e-12 {
                let n = 1usize << self.params.sites;
                return Ok(CMat::zeros(n, n));
            }
            return Ok(-self.z_j(-j - 1.0, lambda)?);
        }
        Ok(transfer_matrix(&spin_rep(j, self.q())?.borel, lambda, &self.params)?.matrix)
    }

    pub fn z(&self, lambda: C64) -> Result<CMat> {
        self.z_j(0.5, lambda)
    }

    pub fn z_plus(&self, j: C64, lambda: C64) -> Result<CMat> {
        Ok(transfer_matrix(&highest_weight_rep(j, self.big(), self.q())?, lambda, &self.params)?.matrix)
    }

    pub fn q_op(&self, sign: OscSign, lambda: C64) -> Result<CMat> {
        Ok(transfer_matrix(&osc_rep(sign, self.big(), self.q())?, lambda, &self.params)?.matrix)
    }

    pub fn q_plus(&self, lambda: C64) -> Result<CMat> {
        self.q_op(OscSign::Plus, lambda)
    }

    pub fn q_minus(&self, lambda: C64) -> Result<CMat> {
        self.q_op(OscSign::Minus, lambda)
    }

    /// `Q'^{+-}` as in [`normalize_q`].
    pub fn q_prime(&self, sign: OscSign, lambda: C64) -> Result<CMat> {
        Ok(normalize_q(&self.q_op(sign, lambda)?, lambda, sign, self.params.sites))
    }

    pub fn reflected(&self, lambda: C64) -> Result<CMat> {
        Ok(transfer_matrix(&reflected_rep(self.big(), self.q())?, lambda, &self.params)?.matrix)
    }

    pub fn sectors(&self) -> SectorDecomposition {
        SectorDecomposition::new(self.params.sites)
    }

    pub fn scalar_op(&self, f: impl Fn(i32) -> C64) -> CMat {
        self.sectors().scalar_op(f)
    }
}

/// `lambda^x` on the principal branch.
pub fn lambda_pow(lambda: C64, x: f64) -> C64 {
    (lambda.ln() * x).exp()
}

/// Multiplies sector `S` by `lambda^{-S/4}` for `Minus`, `lambda^{S/4}` for
/// `Plus`, turning `Q^{+-}` into `Q'^{+-}`.
pub fn normalize_q(qop: &CMat, lambda: C64, sign: OscSign, sites: usize) -> CMat {
    let e = match sign {
        OscSign::Minus => -0.25,
        OscSign::Plus => 0.25,
    };
    SectorDecomposition::new(sites).scalar_op(|s| lambda_pow(lambda, e * s as f64)) * qop
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub sector: i32,
    pub index: usize,
    /// One eigenvalue per family member, in family order.
    pub values: Vec<C64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumTable {
    pub rows: Vec<SpectrumRow>,
    pub reference: Vec<(i32, Vec<C64>)>,
    /// Largest relative off-diagonal weight of a family member in the
    /// reference eigenbasis.
    pub leakage: f64,
}

/// Eigenbasis of each reference sector block applied to every family member.
pub fn joint_spectrum(family: &[CMat], reference: &CMat, sites: usize) -> Result<SpectrumTable> {
    let rblocks = sector_blocks(reference, sites)?;
    let fblocks: Vec<Vec<(i32, CMat)>> = family.iter().map(|f| sector_blocks(f, sites)).collect::<Result<_>>()?;
    let scale = fnorm(reference);
    let mut rows = Vec::new();
    let mut refvals = Vec::new();
    let mut leakage: f64 = 0.0;
    for (si, (s, rb)) in rblocks.iter().enumerate() {
        let (vals, vecs) = eig(rb);
        let m = vals.len();
        for a in 0..m {
            for b in (a + 1)..m {
                let gap = (vals[a] - vals[b]).norm();
                if gap < 1e-8 * scale {
                    return Err(Error::DegenerateReference(gap));
                }
            }
        }
        let vinv = inverse(&vecs).ok_or(Error::DegenerateReference(0.0))?;
        let diags: Vec<CMat> = fblocks.iter().map(|fb| &vinv * &fb[si].1 * &vecs).collect();
        for dm in &diags {
            let mut off = 0.0;
            let mut tot = 0.0;
            for a in 0..m {
                for b in 0..m {
                    tot += dm[(a, b)].norm_sqr();
                    if a != b {
                        off += dm[(a, b)].norm_sqr();
                    }
                }
            }
            if tot > 0.0 {
                leakage = leakage.max((off / tot).sqrt());
            }
        }
        for i in 0..m {
            rows.push(SpectrumRow { sector: *s, index: i, values: diags.iter().map(|dm| dm[(i, i)]).collect() });
        }
        refvals.push((*s, vals));
    }
    Ok(SpectrumTable { rows, reference: refvals, leakage })
}

/// Builds one operator per spectral point in parallel.
pub fn on_grid<F>(grid: &[C64], f: F) -> Result<Vec<CMat>>
where
    F: Fn(C64) -> Result<CMat> + Sync,
{
    grid.par_iter().map(|&l| f(l)).collect()
}

/// Relative change of an infinite-kind operator when two more levels are
/// fitted.
pub fn truncation_delta(rep: &BorelRep, lambda: C64, params: &ModelParams) -> Result<f64> {
    let a = transfer_matrix(rep, lambda, params)?;
    let mut p2 = params.clone();
    p2.conventions.extra_samples += 2;
    p2.trunc_n = p2.trunc_n.max(working_levels(p2.sites, p2.conventions.extra_samples, usize::MAX)?.1);
    let big = rebuild(&rep.kind, p2.trunc_n, p2.q)?;
    let b = transfer_matrix(&big, lambda, &p2)?;
    Ok(rel_residual(&a.matrix, &b.matrix))
}
