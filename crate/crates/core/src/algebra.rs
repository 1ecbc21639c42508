//! Dense complex matrices, q-numbers, Kronecker products, twisted partial
//! traces and SVD nullspaces.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Model parameters shared by every construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub q: C64,
    pub phi: f64,
    pub sites: usize,
    pub lambda_grid: Vec<C64>,
    pub trunc_n: usize,
    pub tol_rel: f64,
    pub conventions: Conventions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Principal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conventions {
    pub branch: Branch,
    /// Extra resummation samples beyond the minimal `sites + 1`.
    pub extra_samples: usize,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions { branch: Branch::Principal, extra_samples: 3 }
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            q: C64::from_polar(0.8, 0.3),
            phi: 0.25,
            sites: 4,
            lambda_grid: default_grid(8),
            trunc_n: 32,
            tol_rel: 1e-8,
            conventions: Conventions::default(),
        }
    }
}

/// Points `r e^{i theta}` on a short arc near the positive real axis.
pub fn default_grid(n: usize) -> Vec<C64> {
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            C64::from_polar(1.3 + 0.9 * t, 0.2 - 0.3 * t)
        })
        .collect()
}

impl ModelParams {
    pub fn twist(&self) -> C64 {
        C64::from_polar(1.0, self.phi)
    }

    /// Checks the parameter invariants. `infinite` marks runs that need
    /// infinite-dimensional auxiliary traces.
    pub fn validate(&self, infinite: bool) -> Result<()> {
        if self.sites == 0 {
            return Err(Error::InvalidParams("L must be positive".into()));
        }
        if self.trunc_n < 2 {
            return Err(Error::InvalidParams("trunc_N must be at least 2".into()));
        }
        let m = self.q.norm();
        if m.is_nan() || m <= 0.0 || !m.is_finite() {
            return Err(Error::InvalidParams("q must be finite and nonzero".into()));
        }
        if infinite && m >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "|q| = {m} but infinite auxiliary traces need |q| < 1 for convergence"
            )));
        }
        let nmax = 4 * self.sites + 2 * self.trunc_n;
        for n in 1..=nmax as i32 {
            if (self.q.powi(2 * n) - ONE).norm() <= 10.0 * f64::EPSILON {
                return Err(Error::InvalidParams(format!("q^{} = 1: root of unity", 2 * n)));
            }
        }
        for l in &self.lambda_grid {
            if l.norm() == 0.0 || (l.im == 0.0 && l.re < 0.0) {
                return Err(Error::InvalidParams(format!("lambda {l} on the branch cut")));
            }
        }
        Ok(())
    }
}

/// `q^x` on the principal branch.
pub fn qpow(q: C64, x: C64) -> C64 {
    (x * q.ln()).exp()
}

/// `q^n` for integer `n`, exact in the sense of repeated multiplication.
pub fn qpowi(q: C64, n: i32) -> C64 {
    q.powi(n)
}

/// The q-number `(q^x - q^-x)/(q - q^-1)`.
pub fn qnum(x: C64, q: C64) -> Result<C64> {
    let d = q - q.inv();
    if d.norm() <= 1e3 * f64::EPSILON * q.norm().max(1.0) {
        return Err(Error::DegenerateParameter("q = +-1 makes [x]_q singular".into()));
    }
    Ok((qpow(q, x) - qpow(q, -x)) / d)
}

/// q-number at a real argument, integers evaluated with `powi`.
pub fn qnum_r(x: f64, q: C64) -> C64 {
    let d = q - q.inv();
    if x.fract() == 0.0 && x.abs() < 1e6 {
        let n = x as i32;
        (q.powi(n) - q.powi(-n)) / d
    } else {
        (qpow(q, c(x, 0.0)) - qpow(q, c(-x, 0.0))) / d
    }
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn diag(v: &[C64]) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_row_slice(v))
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn fnorm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||a - b||_F / max(||a||_F, ||b||_F, eps)`.
pub fn rel_residual(a: &CMat, b: &CMat) -> f64 {
    let d = fnorm(&(a - b));
    d / fnorm(a).max(fnorm(b)).max(f64::MIN_POSITIVE)
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// Relative commutator residual `||[a,b]|| / (||a|| ||b||)`.
pub fn comm_residual(a: &CMat, b: &CMat) -> f64 {
    let s = fnorm(a) * fnorm(b);
    if s == 0.0 {
        0.0
    } else {
        fnorm(&commutator(a, b)) / s
    }
}

/// `sum_k w[k] <k|M|k>` over the auxiliary factor of `V_aux (x) V_chain`,
/// auxiliary index most significant.
pub fn twisted_partial_trace(m: &CMat, weights: &[C64]) -> Result<CMat> {
    let na = weights.len();
    if na == 0 || m.nrows() != m.ncols() || !m.nrows().is_multiple_of(na) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} operator with {} auxiliary weights",
            m.nrows(),
            m.ncols(),
            na
        )));
    }
    let d = m.nrows() / na;
    let mut out = CMat::zeros(d, d);
    for (k, w) in weights.iter().enumerate() {
        out += m.view((k * d, k * d), (d, d)) * *w;
    }
    Ok(out)
}

/// Result of a nullspace solve.
#[derive(Clone, Debug)]
pub struct Nullspace {
    pub basis: Vec<nalgebra::DVector<C64>>,
    /// Singular values in decreasing order, padded with zeros when the
    /// matrix has fewer rows than columns.
    pub singular_values: Vec<f64>,
    /// Ratio between the smallest retained and largest rejected singular value.
    pub gap: f64,
}

/// Right-singular vectors with singular value below `sigma_max / gap_ratio`.
pub fn nullspace(m: &CMat, gap_ratio: f64) -> Result<Nullspace> {
    let ncols = m.ncols();
    if fnorm(m) == 0.0 {
        return Err(Error::DimensionMismatch("nullspace of the zero matrix".into()));
    }
    // Pad to a square system so every right-singular vector is available.
    let work = if m.nrows() < ncols {
        let mut p = CMat::zeros(ncols, ncols);
        p.view_mut((0, 0), (m.nrows(), ncols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = work.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let smax = sv[0];
    let cut = smax / gap_ratio;
    let rank = sv.iter().filter(|&&s| s >= cut).count();
    let gap = if rank == 0 || rank == sv.len() || sv[rank] == 0.0 {
        f64::INFINITY
    } else {
        sv[rank - 1] / sv[rank]
    };
    if gap < gap_ratio {
        return Err(Error::AmbiguousNullspace { singular_values: sv, gap_ratio });
    }
    let basis = order[rank..]
        .iter()
        .map(|&i| v_t.row(i).transpose().map(|z| z.conj()))
        .collect();
    Ok(Nullspace { basis, singular_values: sv, gap })
}

/// Least-squares solve of `A x = b` for several right-hand sides, with
/// column scaling for conditioning. Householder QR for full column rank,
/// minimum-norm SVD solve otherwise.
pub fn lstsq(a: &CMat, b: &CMat) -> CMat {
    let scale: Vec<f64> = (0..a.ncols())
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut as_ = a.clone();
    for (j, s) in scale.iter().enumerate() {
        as_.column_mut(j).scale_mut(1.0 / s);
    }
    let mut x = if as_.nrows() >= as_.ncols() { qr_solve(&as_, b) } else { None }
        .unwrap_or_else(|| as_.svd(true, true).solve(b, 1e-14).expect("svd solve"));
    for (j, s) in scale.iter().enumerate() {
        x.row_mut(j).scale_mut(1.0 / s);
    }
    x
}

fn qr_solve(a: &CMat, b: &CMat) -> Option<CMat> {
    let qr = a.clone().qr();
    let r = qr.r();
    let d: Vec<f64> = (0..r.nrows()).map(|i| r[(i, i)].norm()).collect();
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    if d.iter().any(|&v| v <= 1e-13 * dmax) {
        return None;
    }
    r.solve_upper_triangular(&(qr.q().adjoint() * b))
}

/// Eigen-decomposition of a small dense matrix via Schur form.
/// Returns eigenvalues and right eigenvectors (columns).
pub fn eig(a: &CMat) -> (Vec<C64>, CMat) {
    let n = a.nrows();
    let schur = a.clone().schur();
    let (qm, t) = schur.unpack();
    let vals: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    // Eigenvectors of the upper-triangular factor by back substitution.
    let mut y = CMat::zeros(n, n);
    let scale = fnorm(&t).max(f64::MIN_POSITIVE);
    for k in 0..n {
        y[(k, k)] = ONE;
        for i in (0..k).rev() {
            let mut s = ZERO;
            for j in (i + 1)..=k {
                s += t[(i, j)] * y[(j, k)];
            }
            let mut d = t[(i, i)] - t[(k, k)];
            if d.norm() < 1e-14 * scale {
                d = C64::new(1e-14 * scale, 0.0);
            }
            y[(i, k)] = -s / d;
        }
        let nrm = y.column(k).norm();
        y.column_mut(k).scale_mut(1.0 / nrm);
    }
    (vals, qm * y)
}

pub fn inverse(a: &CMat) -> Option<CMat> {
    a.clone().try_inverse()
}

/// Roots of `sum_k c[k] x^k` as eigenvalues of the companion matrix.
pub fn poly_roots(coeffs: &[C64]) -> Vec<C64> {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last().is_some_and(|z| z.norm() == 0.0) {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return vec![];
    }
    let lead = c[deg];
    let mut comp = CMat::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = ONE;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -c[i] / lead;
    }
    eig(&comp).0
}

pub fn poly_eval(coeffs: &[C64], x: C64) -> C64 {
    coeffs.iter().rev().fold(ZERO, |acc, &a| acc * x + a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qnum_examples() {
        let q = c(0.7, 0.2);
        assert_eq!(qnum(c(0.0, 0.0), q).unwrap(), ZERO);
        assert!((qnum(ONE, q).unwrap() - ONE).norm() < 1e-15);
        assert!((qnum(c(3.0, 0.0), c(2.0, 0.0)).unwrap() - c(5.25, 0.0)).norm() < 1e-14);
        assert!(qnum(ONE, ONE).is_err());
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        let z = diag(&[ONE, -ONE]);
        assert_eq!(kron(&z, &identity(2)), diag(&[ONE, ONE, -ONE, -ONE]));
    }

    #[test]
    fn trace_examples() {
        let m = identity(12);
        let t = twisted_partial_trace(&m, &[ONE; 3]).unwrap();
        assert_eq!(t, identity(4) * c(3.0, 0.0));
        let mut m = CMat::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                m[(i, j)] = c(i as f64, j as f64);
            }
        }
        let t = twisted_partial_trace(&m, &[ONE, ZERO, ZERO]).unwrap();
        assert_eq!(t, m.view((0, 0), (2, 2)).into_owned());
        assert!(twisted_partial_trace(&m, &[ONE; 4]).is_err());
    }

    #[test]
    fn nullspace_examples() {
        assert!(nullspace(&identity(3), 1e6).unwrap().basis.is_empty());
        let n = nullspace(&diag(&[ONE, ZERO]), 1e6).unwrap();
        assert_eq!(n.basis.len(), 1);
        assert!((n.basis[0][1].norm() - 1.0).abs() < 1e-15);
        assert!(n.basis[0][0].norm() < 1e-15);
    }

    #[test]
    fn eig_and_roots() {
        let r = poly_roots(&[c(2.0, 0.0), c(-3.0, 0.0), ONE]);
        let mut re: Vec<f64> = r.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] - 1.0).abs() < 1e-12 && (re[1] - 2.0).abs() < 1e-12);
        let a = CMat::from_row_slice(3, 3, &[c(1.0, 1.0), c(2.0, 0.0), ZERO, ZERO, c(3.0, 0.0), ONE, ONE, ZERO, c(-1.0, 0.5)]);
        let (vals, vecs) = eig(&a);
        for (k, &val) in vals.iter().enumerate() {
            let v = vecs.column(k).into_owned();
            assert!((&a * &v - v * val).norm() < 1e-12);
        }
    }
}
