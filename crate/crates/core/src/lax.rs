//! Six-vertex R-matrix and Lax operators solved from the intertwining
//! constraints `L Delta(g) = Delta'(g) L` on `V_aux (x) C^2`.

use serde::Serialize;

use crate::algebra::{fnorm, kron, nullspace, qpow, rel_residual, CMat, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::reps::{BorelRep, FullRep, RepKind};

pub const GAP_RATIO: f64 = 1e6;

/// Quantum-site generators in the basis (up, down), up having `h_alpha = +1`.
pub struct Site {
    pub e_alpha: CMat,
    pub e_beta: CMat,
    pub f_alpha: CMat,
    pub f_beta: CMat,
    pub h: CMat,
}

pub fn site(mu: C64) -> Site {
    let raise = CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
    let lower = CMat::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]);
    Site {
        e_alpha: raise.clone(),
        e_beta: &lower * mu,
        f_alpha: lower,
        f_beta: raise / mu,
        h: CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    }
}

#[derive(Clone, Debug)]
pub struct SixVertexR {
    pub z: C64,
    pub matrix: CMat,
}

/// Symmetric six-vertex R: diagonal `(a, b, b, a)`, middle antidiagonal `c`.
pub fn sixvertex_r(z: C64, q: C64) -> SixVertexR {
    let a = q * z - (q * z).inv();
    let b = z - z.inv();
    let cc = q - q.inv();
    let mut m = CMat::zeros(4, 4);
    m[(0, 0)] = a;
    m[(3, 3)] = a;
    m[(1, 1)] = b;
    m[(2, 2)] = b;
    m[(1, 2)] = cc;
    m[(2, 1)] = cc;
    SixVertexR { z, matrix: m }
}

impl SixVertexR {
    /// Conjugation to the homogeneous grading used by the evaluation map,
    /// where the two `c` entries become `c z` and `c / z`.
    pub fn homogeneous(&self) -> CMat {
        let mut m = self.matrix.clone();
        m[(1, 2)] *= self.z;
        m[(2, 1)] /= self.z;
        m
    }
}

pub fn swap4() -> CMat {
    let mut p = CMat::zeros(4, 4);
    p[(0, 0)] = ONE;
    p[(1, 2)] = ONE;
    p[(2, 1)] = ONE;
    p[(3, 3)] = ONE;
    p
}

#[derive(Clone, Debug, Serialize)]
pub struct Pin {
    pub index: usize,
    pub value: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug)]
pub struct LaxOperator {
    pub lambda: C64,
    pub kind: RepKind,
    pub aux_dim: usize,
    /// Matrix on `V_aux (x) C^2`, auxiliary index most significant.
    pub matrix: CMat,
    pub pin: Pin,
    pub residual: f64,
    pub singular_values: Vec<f64>,
    pub gap: f64,
    pub boundary_level: Option<usize>,
}

impl LaxOperator {
    /// The `2 x 2` site block between auxiliary levels `a` and `b`.
    pub fn block(&self, a: usize, b: usize) -> CMat {
        self.matrix.view((2 * a, 2 * b), (2, 2)).into_owned()
    }

    /// Residual of `[L, H_aux (x) 1 + 1 (x) h]`.
    pub fn weight_residual(&self, rep_h: &CMat) -> f64 {
        let w = kron(rep_h, &CMat::identity(2, 2)) + kron(&CMat::identity(self.aux_dim, self.aux_dim), &site(ONE).h);
        let cm = &self.matrix * &w - &w * &self.matrix;
        fnorm(&cm) / fnorm(&self.matrix).max(f64::MIN_POSITIVE)
    }
}

struct Generator {
    d: CMat,
    dp: CMat,
    raises: bool,
    lowers: bool,
}

fn qpow_diag(q: C64, h: &CMat) -> CMat {
    CMat::from_diagonal(&h.diagonal().map(|z| qpow(q, z)))
}

fn direction(x: &CMat) -> (bool, bool) {
    let n = x.nrows();
    let mut up = false;
    let mut down = false;
    for k in 0..n.saturating_sub(1) {
        up |= x[(k + 1, k)] != ZERO;
        down |= x[(k, k + 1)] != ZERO;
    }
    (up, down)
}

/// `Delta(e) = e (x) q^h + 1 (x) e`, `Delta(f) = f (x) 1 + q^-h (x) f`, and
/// the flipped `Delta'`.
fn generators(rep: &BorelRep, full: Option<&FullRep>, lambda: C64, q: C64) -> Vec<Generator> {
    let n = rep.dim();
    let s = site(ONE);
    let ia = CMat::identity(n, n);
    let i2 = CMat::identity(2, 2);
    let ha = &rep.h;
    let hb = -ha;
    let qa = qpow_diag(q, ha);
    let qb = qpow_diag(q, &hb);
    let qs = qpow_diag(q, &s.h);
    let qsb = qpow_diag(q, &(-&s.h));
    let mut out = Vec::new();
    let mut push_e = |xa: CMat, xs: &CMat, qaux: &CMat, qsite: &CMat| {
        let (raises, lowers) = direction(&xa);
        out.push(Generator {
            d: kron(&xa, qsite) + kron(&ia, xs),
            dp: kron(qaux, xs) + kron(&xa, &i2),
            raises,
            lowers,
        });
    };
    push_e(rep.e_alpha.clone(), &s.e_alpha, &qa, &qs);
    push_e(rep.e_beta(lambda), &s.e_beta, &qb, &qsb);
    if let Some(f) = full {
        let mut push_f = |xa: CMat, xs: &CMat, qaux_inv: &CMat, qsite_inv: &CMat| {
            let (raises, lowers) = direction(&xa);
            out.push(Generator {
                d: kron(&xa, &i2) + kron(qaux_inv, xs),
                dp: kron(&ia, xs) + kron(&xa, qsite_inv),
                raises,
                lowers,
            });
        };
        push_f(f.f_alpha.clone(), &s.f_alpha, &qb, &qsb);
        push_f(&f.f_beta_unit / lambda, &s.f_beta, &qa, &qs);
    }
    out
}

fn weights(rep: &BorelRep) -> Vec<f64> {
    let n = rep.dim();
    let mut w = Vec::with_capacity(2 * n);
    for k in 0..n {
        w.push(rep.weight(k) + 1.0);
        w.push(rep.weight(k) - 1.0);
    }
    w
}

fn keep_row(g: &Generator, boundary: Option<usize>, a: usize, b: usize) -> bool {
    match boundary {
        None => true,
        Some(bl) => !((g.raises && b / 2 == bl) || (g.lowers && a / 2 == bl)),
    }
}

/// Solves the intertwining constraints for the Lax operator at `lambda`.
pub fn derive_lax(rep: &BorelRep, lambda: C64, q: C64) -> Result<LaxOperator> {
    derive_inner(rep, None, lambda, q)
}

/// As [`derive_lax`], also imposing the negative generators.
pub fn derive_lax_full(rep: &FullRep, lambda: C64, q: C64) -> Result<LaxOperator> {
    derive_inner(&rep.borel, Some(rep), lambda, q)
}

fn derive_inner(rep: &BorelRep, full: Option<&FullRep>, lambda: C64, q: C64) -> Result<LaxOperator> {
    let n = rep.dim();
    let m = 2 * n;
    let w = weights(rep);
    let mut pos = vec![usize::MAX; m * m];
    let mut idx = Vec::new();
    for a in 0..m {
        for b in 0..m {
            if (w[a] - w[b]).abs() < 1e-9 {
                pos[a * m + b] = idx.len();
                idx.push((a, b));
            }
        }
    }
    let gens = generators(rep, full, lambda, q);
    let mut rows: Vec<Vec<(usize, C64)>> = Vec::new();
    for g in &gens {
        for a in 0..m {
            for b in 0..m {
                if !keep_row(g, rep.boundary_level, a, b) {
                    continue;
                }
                let mut r: Vec<(usize, C64)> = Vec::new();
                for d in 0..m {
                    let v = g.d[(d, b)];
                    if v != ZERO && pos[a * m + d] != usize::MAX {
                        r.push((pos[a * m + d], v));
                    }
                }
                for cidx in 0..m {
                    let v = g.dp[(a, cidx)];
                    if v != ZERO && pos[cidx * m + b] != usize::MAX {
                        r.push((pos[cidx * m + b], -v));
                    }
                }
                if !r.is_empty() {
                    rows.push(r);
                }
            }
        }
    }
    let mut used = vec![false; idx.len()];
    for r in &rows {
        for &(t, _) in r {
            used[t] = true;
        }
    }
    let cols: Vec<usize> = (0..idx.len()).filter(|&t| used[t]).collect();
    let mut colpos = vec![usize::MAX; idx.len()];
    for (i, &t) in cols.iter().enumerate() {
        colpos[t] = i;
    }
    let mut mat = CMat::zeros(rows.len(), cols.len());
    for (i, r) in rows.iter().enumerate() {
        for &(t, v) in r {
            mat[(i, colpos[t])] += v;
        }
    }
    let scale: Vec<f64> = (0..cols.len())
        .map(|j| {
            let s = mat.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        mat.column_mut(j).scale_mut(1.0 / s);
    }
    let ns = nullspace(&mat, GAP_RATIO)?;
    match ns.basis.len() {
        0 => return Err(Error::InconsistentConstraints),
        1 => {}
        _ => {
            return Err(Error::AmbiguousNullspace { singular_values: ns.singular_values, gap_ratio: GAP_RATIO })
        }
    }
    let v = &ns.basis[0];
    let mut lax = CMat::zeros(m, m);
    for (i, &t) in cols.iter().enumerate() {
        let (a, b) = idx[t];
        lax[(a, b)] = v[i] / scale[i];
    }
    let top = lax.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut pin = Pin { index: 0, value: 1.0, fallback: false };
    let mut found = false;
    for k in 0..m {
        if lax[(k, k)].norm() > 1e-10 * top {
            pin.index = k;
            pin.fallback = k != 0;
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::DegenerateParameter("Lax operator has no usable diagonal entry".into()));
    }
    let p = lax[(pin.index, pin.index)];
    lax /= p;
    let mut residual: f64 = 0.0;
    for g in &gens {
        let lhs = &lax * &g.d;
        let rhs = &g.dp * &lax;
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..m {
            for b in 0..m {
                if keep_row(g, rep.boundary_level, a, b) {
                    num += (lhs[(a, b)] - rhs[(a, b)]).norm_sqr();
                    den += lhs[(a, b)].norm_sqr().max(rhs[(a, b)].norm_sqr());
                }
            }
        }
        if den > 0.0 {
            residual = residual.max((num / den).sqrt());
        }
    }
    Ok(LaxOperator {
        lambda,
        kind: rep.kind.clone(),
        aux_dim: n,
        matrix: lax,
        pin,
        residual,
        singular_values: ns.singular_values,
        gap: ns.gap,
        boundary_level: rep.boundary_level,
    })
}

/// Scale and homogeneous-gauge comparison of a spin-1/2 Lax operator with
/// `R(z)`, `z = lambda^{-1/2}`. Returns the relative residual.
pub fn compare_with_sixvertex(lax: &LaxOperator, q: C64) -> f64 {
    let z = lax.lambda.sqrt().inv();
    let r = sixvertex_r(z, q).homogeneous();
    // Auxiliary levels reversed so that both factors start at h_alpha = +1.
    let perm = [2, 3, 0, 1];
    let l = CMat::from_fn(4, 4, |i, j| lax.matrix[(perm[i], perm[j])]);
    let s = l[(0, 0)] / r[(0, 0)];
    rel_residual(&l, &(r * s))
}

/// The quantum-space R-matrix entering the RLL relation for auxiliary
/// spectral points `lambda` (factor 2) and `mu` (factor 3).
pub fn rll_r(lambda: C64, mu: C64, q: C64) -> CMat {
    let p = swap4();
    &p * sixvertex_r((mu / lambda).sqrt(), q).homogeneous() * &p
}

/// Relative residual of `R23 L2(lambda) L3(mu) - L3(mu) L2(lambda) R23`,
/// restricted to auxiliary levels below `interior` when given.
pub fn check_rll(l2: &LaxOperator, l3: &LaxOperator, r: &CMat, interior: Option<usize>) -> Result<f64> {
    if l2.aux_dim != l3.aux_dim || r.nrows() != 4 {
        return Err(Error::DimensionMismatch("RLL operands".into()));
    }
    let n = l2.aux_dim;
    let i2 = CMat::identity(2, 2);
    let a2 = kron(&l2.matrix, &i2);
    // L3 acts on aux and the third factor.
    let mut a3 = CMat::zeros(4 * n, 4 * n);
    for a in 0..n {
        for b in 0..n {
            for s3 in 0..2 {
                for t3 in 0..2 {
                    let v = l3.matrix[(2 * a + s3, 2 * b + t3)];
                    if v == ZERO {
                        continue;
                    }
                    for s2 in 0..2 {
                        a3[(4 * a + 2 * s2 + s3, 4 * b + 2 * s2 + t3)] = v;
                    }
                }
            }
        }
    }
    let r23 = kron(&CMat::identity(n, n), r);
    let lhs = &r23 * &a2 * &a3;
    let rhs = &a3 * &a2 * &r23;
    let m = interior.map_or(4 * n, |k| 4 * k.min(n));
    let cut = |x: &CMat| x.view((0, 0), (m, m)).into_owned();
    Ok(rel_residual(&cut(&lhs), &cut(&rhs)))
}
