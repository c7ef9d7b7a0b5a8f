//! Exact-at-a-point Hermitian linear algebra and the scalar operators built
//! on it: the Lagrangian angle, the determinant form `zeta`, the eta metric,
//! the J-operator trace, the large-slope limit connecting the two equations,
//! and the small counterexample probes.
//!
//! Matrices here are tiny (n <= 5 in practice). Entry `a[i][j]` stores the
//! component with a holomorphic `i` index and an anti-holomorphic `j` index,
//! so contractions against an inverse metric are ordinary matrix traces.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

pub type C64 = Complex64;

/// Relative symmetry defect above which a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Off-diagonal Frobenius norm target for the Jacobi eigensolver.
pub const JACOBI_TOL: f64 = 1e-13;

/// An n x n complex matrix equal to its conjugate transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, C64::new(v, 0.0));
        }
        m
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, C64::new(c, 0.0));
        }
        m
    }

    /// Builds from row-major entries, rejecting symmetry defects beyond
    /// `HERMITIAN_TOL` relative to the matrix scale.
    pub fn from_entries(dim: usize, entries: Vec<C64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: entries.len() });
        }
        let m = Self { dim, entries };
        let defect = m.symmetry_defect();
        let scale = m.max_abs_entry().max(1e-300);
        if defect > HERMITIAN_TOL * scale {
            return Err(Error::NotHermitian { defect: defect / scale, tol: HERMITIAN_TOL });
        }
        Ok(m.hermitized())
    }

    /// Builds without the symmetry check, then symmetrizes. For internal
    /// constructions where Hermitian symmetry holds to roundoff.
    pub fn from_entries_unchecked(dim: usize, entries: Vec<C64>) -> Self {
        Self { dim, entries }.hermitized()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.entries[i * self.dim + j] = v;
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// max_{i,j} |a_ij - conj(a_ji)|
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Averages a with its conjugate transpose; diagonal becomes exactly real.
    pub fn hermitized(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            out.set(i, i, C64::new(self.get(i, i).re, 0.0));
            for j in (i + 1)..self.dim {
                let v = 0.5 * (self.get(i, j) + self.get(j, i).conj());
                out.set(i, j, v);
                out.set(j, i, v.conj());
            }
        }
        out
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Self { dim: self.dim, entries }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Self { dim: self.dim, entries }
    }

    pub fn scale(&self, c: f64) -> Self {
        let entries = self.entries.iter().map(|a| a * c).collect();
        Self { dim: self.dim, entries }
    }

    /// Plain complex matrix product (the result is generally not Hermitian).
    pub fn matmul(&self, other: &Self) -> ComplexMatrix {
        ComplexMatrix::from_hermitian(self).matmul(&ComplexMatrix::from_hermitian(other))
    }

    /// Smallest eigenvalue; convenient positivity probe.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eig_hermitian(self)?.values[0])
    }

    pub fn is_positive_definite(&self) -> Result<bool> {
        Ok(self.min_eigenvalue()? > 0.0)
    }

    /// Cholesky factor L with self = L L^H. Fails on non-positive pivots.
    pub fn cholesky(&self) -> Result<ComplexMatrix> {
        let n = self.dim;
        let mut l = ComplexMatrix::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j).re;
            for k in 0..j {
                d -= l.get(j, k).norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { min_eig: d });
            }
            let dg = d.sqrt();
            l.set(j, j, C64::new(dg, 0.0));
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k).conj();
                }
                l.set(i, j, s / dg);
            }
        }
        Ok(l)
    }

    /// Inverse through Gauss-Jordan with partial pivoting; result symmetrized.
    pub fn inverse(&self) -> Result<HermitianMatrix> {
        let inv = ComplexMatrix::from_hermitian(self).inverse()?;
        Ok(Self::from_entries_unchecked(self.dim, inv.entries))
    }
}

/// Dense complex matrix used for intermediate non-Hermitian products.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub dim: usize,
    pub entries: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    pub fn from_hermitian(h: &HermitianMatrix) -> Self {
        Self { dim: h.dim, entries: h.entries.clone() }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.entries[i * self.dim + j] = v;
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    /// Determinant by LU with partial pivoting.
    pub fn det(&self) -> C64 {
        let n = self.dim;
        let mut a = self.entries.clone();
        let mut det = C64::new(1.0, 0.0);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].norm();
            for r in (col + 1)..n {
                let v = a[r * n + col].norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return C64::new(0.0, 0.0);
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                det = -det;
            }
            let p = a[col * n + col];
            det *= p;
            for r in (col + 1)..n {
                let f = a[r * n + col] / p;
                for j in col..n {
                    let v = a[r * n + j] - f * a[col * n + j];
                    a[r * n + j] = v;
                }
            }
        }
        det
    }

    pub fn inverse(&self) -> Result<Self> {
        let n = self.dim;
        let mut a = self.entries.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].norm();
            for r in (col + 1)..n {
                let v = a[r * n + col].norm();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-300 {
                return Err(Error::Singular);
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                    inv.entries.swap(col * n + j, piv * n + j);
                }
            }
            let p = a[col * n + col];
            for j in 0..n {
                a[col * n + j] /= p;
                inv.entries[col * n + j] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    let va = a[r * n + j] - f * a[col * n + j];
                    a[r * n + j] = va;
                    let vi = inv.entries[r * n + j] - f * inv.entries[col * n + j];
                    inv.entries[r * n + j] = vi;
                }
            }
        }
        Ok(inv)
    }
}

/// Sorted eigenvalues of a Hermitian matrix together with the derived
/// weights used throughout: theta_i = 1 + lambda_i^2 and 1/theta_i.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenData {
    pub values: Vec<f64>,
    pub thetas: Vec<f64>,
    pub inv_thetas: Vec<f64>,
}

impl EigenData {
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let thetas: Vec<f64> = values.iter().map(|l| 1.0 + l * l).collect();
        let inv_thetas: Vec<f64> = thetas.iter().map(|t| 1.0 / t).collect();
        Self { values, thetas, inv_thetas }
    }
}

/// Orthogonal bisectional curvature data R[i][p] standing for the components
/// R_{i ibar p pbar} in a fixed orthonormal frame. The matrix is symmetric and
/// diagonal entries are never read.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvatureInput {
    pub dim: usize,
    pub r: Vec<f64>,
}

impl CurvatureInput {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, r: vec![0.0; dim * dim] }
    }

    /// Builds from a full matrix, symmetrizing and zeroing the diagonal.
    pub fn new(dim: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: raw.len() });
        }
        let mut r = vec![0.0; dim * dim];
        for i in 0..dim {
            for p in 0..dim {
                if i != p {
                    r[i * dim + p] = 0.5 * (raw[i * dim + p] + raw[p * dim + i]);
                }
            }
        }
        Ok(Self { dim, r })
    }

    pub fn set_pair(&mut self, i: usize, p: usize, v: f64) {
        assert_ne!(i, p, "diagonal curvature entries are unused");
        self.r[i * self.dim + p] = v;
        self.r[p * self.dim + i] = v;
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize) -> f64 {
        if i == p {
            0.0
        } else {
            self.r[i * self.dim + p]
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|p| self.get(i, p) >= 0.0))
    }
}

// ---------------------------------------------------------------------------
// Eigen solvers
// ---------------------------------------------------------------------------

fn char_poly_value_and_derivative(h: &HermitianMatrix, x: f64) -> (f64, f64) {
    // p(x) = det(H - x I), evaluated with its derivative by forward
    // differentiation through the closed-form expansions (n <= 3).
    let n = h.dim();
    match n {
        1 => (h.get(0, 0).re - x, -1.0),
        2 => {
            let a = h.get(0, 0).re;
            let c = h.get(1, 1).re;
            let b2 = h.get(0, 1).norm_sqr();
            // (a-x)(c-x) - |b|^2
            ((a - x) * (c - x) - b2, 2.0 * x - a - c)
        }
        3 => {
            let a = h.get(0, 0).re;
            let b = h.get(1, 1).re;
            let c = h.get(2, 2).re;
            let p = h.get(0, 1);
            let q = h.get(0, 2);
            let r = h.get(1, 2);
            let pa = a - x;
            let pb = b - x;
            let pc = c - x;
            let val = pa * pb * pc - pa * r.norm_sqr() - pb * q.norm_sqr() - pc * p.norm_sqr()
                + 2.0 * (p * r * q.conj()).re;
            let dval = -(pb * pc + pa * pc + pa * pb) + r.norm_sqr() + q.norm_sqr() + p.norm_sqr();
            (val, dval)
        }
        _ => unreachable!("closed form limited to n <= 3"),
    }
}

fn polish_root(h: &HermitianMatrix, x: f64) -> f64 {
    // One Newton step on the characteristic polynomial.
    let (v, d) = char_poly_value_and_derivative(h, x);
    if d.abs() > 1e-300 {
        let step = v / d;
        if step.is_finite() && step.abs() < 1.0 + x.abs() {
            return x - step;
        }
    }
    x
}

fn eig2(h: &HermitianMatrix) -> Vec<f64> {
    let a = h.get(0, 0).re;
    let c = h.get(1, 1).re;
    let m = 0.5 * (a + c);
    let d = 0.5 * (a - c);
    let rad = (d * d + h.get(0, 1).norm_sqr()).sqrt();
    vec![m - rad, m + rad]
}

fn eig3(h: &HermitianMatrix) -> Vec<f64> {
    // Trigonometric solution of the real characteristic cubic, then a polish
    // step per root. Eigenvalues of a Hermitian matrix are real.
    let a = h.get(0, 0).re;
    let b = h.get(1, 1).re;
    let c = h.get(2, 2).re;
    let p01 = h.get(0, 1).norm_sqr();
    let p02 = h.get(0, 2).norm_sqr();
    let p12 = h.get(1, 2).norm_sqr();
    let q = (a + b + c) / 3.0;
    let p2 = (a - q).powi(2) + (b - q).powi(2) + (c - q).powi(2) + 2.0 * (p01 + p02 + p12);
    let p = (p2 / 6.0).sqrt();
    if p < 1e-300 {
        return vec![q, q, q];
    }
    // B = (H - q I)/p, det(B)/2 in [-1, 1] up to roundoff.
    let bm = |i: usize, j: usize| -> C64 {
        let mut v = h.get(i, j);
        if i == j {
            v -= C64::new(q, 0.0);
        }
        v / p
    };
    let det_b = {
        let m = ComplexMatrix {
            dim: 3,
            entries: (0..9).map(|k| bm(k / 3, k % 3)).collect(),
        };
        m.det().re
    };
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut vals = vec![
        polish_root(h, e1),
        polish_root(h, e2),
        polish_root(h, e3),
    ];
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vals
}

/// Full eigendecomposition by cyclic Jacobi rotations for complex Hermitian
/// matrices. Returns `(values, u)` with columns of `u` the eigenvectors,
/// sorted ascending; stable original-index bookkeeping breaks ties.
pub fn eigh(h: &HermitianMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    check_hermitian(h)?;
    let n = h.dim();
    let mut a = ComplexMatrix::from_hermitian(h);
    let mut u = ComplexMatrix::identity(n);
    let scale = h.max_abs_entry().max(1e-300);
    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j).norm_sqr();
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.norm() <= 1e-300 * scale {
                    continue;
                }
                let app = a.get(p, p).re;
                let aqq = a.get(q, q).re;
                let phase = apq / apq.norm();
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let cth = 1.0 / (1.0 + t * t).sqrt();
                let sth = t * cth;
                // Unitary rotation in the (p, q) plane with phase alignment.
                let s = phase * sth;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, akp * cth - akq * s.conj());
                    a.set(k, q, akp * s + akq * cth);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, apk * cth - aqk * s);
                    a.set(q, k, apk * s.conj() + aqk * cth);
                }
                for k in 0..n {
                    let ukp = u.get(k, p);
                    let ukq = u.get(k, q);
                    u.set(k, p, ukp * cth - ukq * s.conj());
                    u.set(k, q, ukp * s + ukq * cth);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i).re).collect();
    order.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap().then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = ComplexMatrix::zeros(n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, new_col, u.get(k, old_col));
        }
    }
    Ok((values, vectors))
}

fn check_hermitian(h: &HermitianMatrix) -> Result<()> {
    let scale = h.max_abs_entry().max(1e-300);
    let defect = h.symmetry_defect();
    if defect > HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian { defect: defect / scale, tol: HERMITIAN_TOL });
    }
    Ok(())
}

/// Eigenvalues of a Hermitian matrix, ascending. Closed-form characteristic
/// roots with a Newton polish for n <= 3, cyclic Jacobi above.
pub fn eig_hermitian(h: &HermitianMatrix) -> Result<EigenData> {
    check_hermitian(h)?;
    let values = match h.dim() {
        0 => vec![],
        1 => vec![h.get(0, 0).re],
        2 => eig2(h),
        3 => eig3(h),
        _ => eigh(h)?.0,
    };
    Ok(EigenData::from_values(values))
}

/// Eigenvalues of `g^{-1} f` for positive definite `g` (a Hermitian pencil),
/// through the Cholesky reduction `L^{-1} f L^{-H}`.
pub fn eig_pencil(g: &HermitianMatrix, f: &HermitianMatrix) -> Result<EigenData> {
    let n = g.dim();
    if f.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.dim() });
    }
    let l = g.cholesky()?;
    let linv = l.inverse()?;
    // B = L^{-1} F (L^{-1})^H
    let mut lf = linv.matmul(&ComplexMatrix::from_hermitian(f));
    let mut linv_h = ComplexMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            linv_h.set(i, j, linv.get(j, i).conj());
        }
    }
    lf = lf.matmul(&linv_h);
    let b = HermitianMatrix::from_entries_unchecked(n, lf.entries);
    eig_hermitian(&b)
}

// ---------------------------------------------------------------------------
// Stack-allocated kernels for per-grid-point work (n <= 3)
// ---------------------------------------------------------------------------

/// Eigenvalues of an n x n Hermitian matrix given as a row-major slice,
/// written ascending into `out[..n]`. Closed forms, no allocation.
pub fn small_eigenvalues(n: usize, a: &[C64], out: &mut [f64; 3]) {
    match n {
        1 => out[0] = a[0].re,
        2 => {
            let p = a[0].re;
            let q = a[3].re;
            let m = 0.5 * (p + q);
            let d = 0.5 * (p - q);
            let rad = (d * d + a[1].norm_sqr()).sqrt();
            out[0] = m - rad;
            out[1] = m + rad;
        }
        3 => {
            let h = HermitianMatrix::from_entries_unchecked(3, a.to_vec());
            let vals = eig3(&h);
            out[..3].copy_from_slice(&vals);
        }
        _ => panic!("small kernels limited to n <= 3"),
    }
}

/// Inverse of an n x n complex matrix on the stack via adjugate formulas.
pub fn small_inverse(n: usize, a: &[C64], out: &mut [C64; 9]) -> Result<()> {
    match n {
        1 => {
            if a[0].norm() < 1e-300 {
                return Err(Error::Singular);
            }
            out[0] = 1.0 / a[0];
        }
        2 => {
            let det = a[0] * a[3] - a[1] * a[2];
            if det.norm() < 1e-300 {
                return Err(Error::Singular);
            }
            out[0] = a[3] / det;
            out[1] = -a[1] / det;
            out[2] = -a[2] / det;
            out[3] = a[0] / det;
        }
        3 => {
            let c00 = a[4] * a[8] - a[5] * a[7];
            let c01 = a[5] * a[6] - a[3] * a[8];
            let c02 = a[3] * a[7] - a[4] * a[6];
            let det = a[0] * c00 + a[1] * c01 + a[2] * c02;
            if det.norm() < 1e-300 {
                return Err(Error::Singular);
            }
            out[0] = c00 / det;
            out[1] = (a[2] * a[7] - a[1] * a[8]) / det;
            out[2] = (a[1] * a[5] - a[2] * a[4]) / det;
            out[3] = c01 / det;
            out[4] = (a[0] * a[8] - a[2] * a[6]) / det;
            out[5] = (a[2] * a[3] - a[0] * a[5]) / det;
            out[6] = c02 / det;
            out[7] = (a[1] * a[6] - a[0] * a[7]) / det;
            out[8] = (a[0] * a[4] - a[1] * a[3]) / det;
        }
        _ => panic!("small kernels limited to n <= 3"),
    }
    Ok(())
}

/// Tr(A B) for row-major n x n slices.
#[inline]
pub fn small_trace_product(n: usize, a: &[C64], b: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[i * n + j] * b[j * n + i];
        }
    }
    acc
}

/// C = A B for row-major n x n slices.
#[inline]
pub fn small_matmul(n: usize, a: &[C64], b: &[C64], out: &mut [C64; 9]) {
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

// ---------------------------------------------------------------------------
// Scalar operators
// ---------------------------------------------------------------------------

/// Sum of arctangents of the eigenvalues; ranges over (-n pi/2, n pi/2).
pub fn lagrangian_angle(lams: &[f64]) -> f64 {
    lams.iter().map(|l| l.atan()).sum()
}

/// det(I + i g^{-1} F) for positive definite g.
pub fn zeta_det(g: &HermitianMatrix, f: &HermitianMatrix) -> Result<C64> {
    let n = g.dim();
    if f.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.dim() });
    }
    let ginv = match g.cholesky() {
        Ok(_) => g.inverse()?,
        Err(e) => return Err(e),
    };
    let k = ComplexMatrix::from_hermitian(&ginv).matmul(&ComplexMatrix::from_hermitian(f));
    let mut m = ComplexMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j) + C64::new(0.0, 1.0) * k.get(i, j);
            m.set(i, j, v);
        }
    }
    Ok(m.det())
}

/// The eta metric g + F g^{-1} F; Hermitian positive definite for any
/// Hermitian F and positive definite g.
pub fn eta_form(g: &HermitianMatrix, f: &HermitianMatrix) -> Result<HermitianMatrix> {
    let n = g.dim();
    if f.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.dim() });
    }
    g.cholesky()?;
    let ginv = g.inverse()?;
    let fgf = ComplexMatrix::from_hermitian(f)
        .matmul(&ComplexMatrix::from_hermitian(&ginv))
        .matmul(&ComplexMatrix::from_hermitian(f));
    let mut entries = fgf.entries;
    for i in 0..n {
        for j in 0..n {
            entries[i * n + j] += g.get(i, j);
        }
    }
    Ok(HermitianMatrix::from_entries_unchecked(n, entries))
}

/// The J-operator value sum(1/lambda_i); the domain is positive matrices.
pub fn j_trace(lams: &[f64]) -> Result<f64> {
    for &l in lams {
        if l <= 0.0 {
            return Err(Error::EigenvalueDomain { value: l, requirement: "lambda_i > 0" });
        }
    }
    Ok(lams.iter().map(|l| 1.0 / l).sum())
}

/// sum_i k (pi/2 - arctan(k lambda_i)); converges to `j_trace` as k grows,
/// with error O(1/k^2). Evaluated through arctan(1/(k lambda)) to avoid the
/// pi/2 cancellation.
pub fn dhym_to_j_limit(lams: &[f64], k: f64) -> Result<f64> {
    if k <= 0.0 {
        return Err(Error::InvalidParameter(format!("k must be positive, got {k}")));
    }
    for &l in lams {
        if l <= 0.0 {
            return Err(Error::EigenvalueDomain { value: l, requirement: "lambda_i > 0" });
        }
    }
    Ok(lams.iter().map(|l| k * (1.0 / (k * l)).atan()).sum())
}

/// Second derivative of arctan along one eigenvalue: -2 lambda / (1+lambda^2)^2.
/// Positive for negative lambda, witnessing failure of concavity there.
pub fn arctan_concavity(lam: f64) -> f64 {
    -2.0 * lam / (1.0 + lam * lam).powi(2)
}

/// (1 - lambda_n^2) / (lambda_n (1 + lambda_n^2)^2), the quantity that goes
/// negative for lambda_n > 1 and rules out the structural condition tested.
pub fn glz_condition2_value(lam_n: f64) -> Result<f64> {
    if lam_n <= 0.0 {
        return Err(Error::EigenvalueDomain { value: lam_n, requirement: "lambda_n > 0" });
    }
    let t = 1.0 + lam_n * lam_n;
    Ok((1.0 - lam_n * lam_n) / (lam_n * t * t))
}

/// The n = 1 real-symmetric embedding probe. For A = a + i c the associated
/// real matrix is B = [[a, c], [c, a]] and the derivative pairing has norm
/// max|B| / (1 + a^2), which grows without bound in c at fixed a.
pub fn real_embedding_probe(a: f64, c: f64) -> ([[f64; 2]; 2], f64) {
    let b = [[a, c], [c, a]];
    let norm = a.abs().max(c.abs());
    (b, norm / (1.0 + a * a))
}

/// Angle of the dHYM branch through a constant representative: the angle lies
/// in (-n pi/2, n pi/2) rather than a principal branch of the argument.
pub fn principal_angle_from_eigs(eigs: &EigenData) -> f64 {
    lagrangian_angle(&eigs.values)
}

/// Wraps an angle difference into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y <= -std::f64::consts::PI {
        y += two_pi;
    } else if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// Hypercritical phase threshold (n-1) pi/2.
pub fn hypercritical_threshold(n: usize) -> f64 {
    (n as f64 - 1.0) * FRAC_PI_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(rng: &mut StdRng, n: usize, scale: f64) -> HermitianMatrix {
        let mut m = HermitianMatrix::zeros(n);
        for i in 0..n {
            m.set(i, i, C64::new(rng.gen_range(-scale..scale), 0.0));
            for j in (i + 1)..n {
                let v = C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
                m.set(i, j, v);
                m.set(j, i, v.conj());
            }
        }
        m
    }

    fn random_posdef(rng: &mut StdRng, n: usize) -> HermitianMatrix {
        let a = random_hermitian(rng, n, 1.0);
        // A^2 + I is positive definite
        let sq = a.matmul(&a);
        let mut m = HermitianMatrix::from_entries_unchecked(n, sq.entries);
        for i in 0..n {
            m.set(i, i, m.get(i, i) + C64::new(1.0, 0.0));
        }
        m
    }

    #[test]
    fn eig_diagonal_case() {
        let m = HermitianMatrix::diag(&[3.0, 1.0]);
        let e = eig_hermitian(&m).unwrap();
        assert_eq!(e.values, vec![1.0, 3.0]);
    }

    #[test]
    fn eig_two_by_two_with_complex_offdiagonal() {
        // [[2, i], [-i, 2]] has characteristic polynomial (2-x)^2 - 1
        let mut m = HermitianMatrix::zeros(2);
        m.set(0, 0, C64::new(2.0, 0.0));
        m.set(1, 1, C64::new(2.0, 0.0));
        m.set(0, 1, C64::new(0.0, 1.0));
        m.set(1, 0, C64::new(0.0, -1.0));
        let e = eig_hermitian(&m).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eig_identity_four() {
        let e = eig_hermitian(&HermitianMatrix::identity(4)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut entries = vec![C64::new(0.0, 0.0); 4];
        entries[1] = C64::new(1.0, 0.0);
        entries[2] = C64::new(2.0, 0.0); // conj mismatch
        let m = HermitianMatrix { dim: 2, entries };
        assert!(matches!(eig_hermitian(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eigen_reconstruction_residual() {
        let mut rng = StdRng::seed_from_u64(11);
        for n in 1..=5 {
            for _ in 0..50 {
                let h = random_hermitian(&mut rng, n, 2.0);
                let (vals, u) = eigh(&h).unwrap();
                let scale = h.max_abs_entry().max(1e-300);
                for (col, &lam) in vals.iter().enumerate() {
                    let mut worst = 0.0_f64;
                    for i in 0..n {
                        let mut hv = C64::new(0.0, 0.0);
                        for j in 0..n {
                            hv += h.get(i, j) * u.get(j, col);
                        }
                        worst = worst.max((hv - lam * u.get(i, col)).norm());
                    }
                    assert!(worst <= 1e-12 * scale, "residual {worst} at n={n}");
                }
                // closed-form values must agree with the Jacobi values
                let e = eig_hermitian(&h).unwrap();
                for (a, b) in e.values.iter().zip(&vals) {
                    assert!((a - b).abs() <= 1e-11 * scale.max(1.0));
                }
            }
        }
    }

    #[test]
    fn eigendata_weights() {
        let e = EigenData::from_values(vec![2.0, -1.0]);
        assert_eq!(e.values, vec![-1.0, 2.0]);
        assert_eq!(e.thetas, vec![2.0, 5.0]);
        for (t, it) in e.thetas.iter().zip(&e.inv_thetas) {
            assert!((t * it - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn angle_examples() {
        assert_eq!(lagrangian_angle(&[0.0, 0.0, 0.0]), 0.0);
        assert!((lagrangian_angle(&[1.0]) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let expected = 7.0 * std::f64::consts::PI / 12.0;
        assert!((lagrangian_angle(&[3.0_f64.sqrt(), 1.0]) - expected).abs() < 1e-14);
    }

    #[test]
    fn angle_strictly_increasing_in_each_eigenvalue() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let lams: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let base = lagrangian_angle(&lams);
            for i in 0..n {
                let mut bumped = lams.clone();
                bumped[i] += 1e-4;
                assert!(lagrangian_angle(&bumped) > base);
            }
        }
    }

    #[test]
    fn zeta_examples() {
        let g = HermitianMatrix::identity(2);
        assert_eq!(zeta_det(&g, &HermitianMatrix::zeros(2)).unwrap(), C64::new(1.0, 0.0));
        let f = HermitianMatrix::diag(&[1.0, 2.0]);
        let z = zeta_det(&g, &f).unwrap();
        assert!((z - C64::new(-1.0, 3.0)).norm() < 1e-14);
        assert!((z.norm() - 10.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zeta_rejects_singular_metric() {
        let g = HermitianMatrix::diag(&[1.0, 0.0]);
        assert!(zeta_det(&g, &HermitianMatrix::zeros(2)).is_err());
    }

    #[test]
    fn zeta_modulus_and_argument_identities() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let h = random_hermitian(&mut rng, n, 2.0);
            let z = zeta_det(&HermitianMatrix::identity(n), &h).unwrap();
            let e = eig_hermitian(&h).unwrap();
            // |zeta|^2 = det(I + H^2)
            let mut det_expected = 1.0;
            for l in &e.values {
                det_expected *= 1.0 + l * l;
            }
            let rel = (z.norm_sqr() - det_expected).abs() / det_expected.max(1.0);
            assert!(rel < 1e-10);
            // arg zeta = angle mod 2 pi
            let diff = wrap_angle(z.arg() - lagrangian_angle(&e.values));
            assert!(diff.abs() < 1e-10, "angle defect {diff}");
        }
    }

    #[test]
    fn eta_examples() {
        let g = HermitianMatrix::identity(2);
        let f = HermitianMatrix::diag(&[2.0, -3.0]);
        let eta = eta_form(&g, &f).unwrap();
        assert!((eta.get(0, 0).re - 5.0).abs() < 1e-14);
        assert!((eta.get(1, 1).re - 10.0).abs() < 1e-14);
        assert_eq!(eta_form(&g, &HermitianMatrix::zeros(2)).unwrap(), HermitianMatrix::identity(2));
        let g1 = HermitianMatrix::diag(&[2.0]);
        let f1 = HermitianMatrix::diag(&[2.0]);
        assert!((eta_form(&g1, &f1).unwrap().get(0, 0).re - 4.0).abs() < 1e-15);
    }

    #[test]
    fn eta_positive_definite_randomized() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.gen_range(1..=4);
            let g = random_posdef(&mut rng, n);
            let f = random_hermitian(&mut rng, n, 3.0);
            let eta = eta_form(&g, &f).unwrap();
            assert!(eta.is_positive_definite().unwrap());
        }
    }

    #[test]
    fn j_trace_examples() {
        assert_eq!(j_trace(&[1.0, 1.0]).unwrap(), 2.0);
        assert!((j_trace(&[1.0, 2.0, 3.0]).unwrap() - 11.0 / 6.0).abs() < 1e-15);
        assert_eq!(j_trace(&[2.0, 4.0]).unwrap(), 0.75);
        assert!(j_trace(&[1.0, -0.5]).is_err());
        assert!(j_trace(&[0.0]).is_err());
    }

    #[test]
    fn limit_examples() {
        // oracle: direct evaluation of the defining sum
        let direct = |lams: &[f64], k: f64| -> f64 {
            lams.iter().map(|l| k * (FRAC_PI_2 - (k * l).atan())).sum()
        };
        let v = dhym_to_j_limit(&[1.0, 2.0], 10.0).unwrap();
        assert!((v - direct(&[1.0, 2.0], 10.0)).abs() < 1e-12);
        assert!((v - 1.496270482131048).abs() < 1e-12);
        assert!((v - 1.496271).abs() < 1e-6);
        // k -> infinity approaches the J-trace
        let big = dhym_to_j_limit(&[1.0], 1e8).unwrap();
        assert!((big - 1.0).abs() < 1e-10);
        assert!(dhym_to_j_limit(&[-1.0], 10.0).is_err());
        assert!(dhym_to_j_limit(&[1.0], 0.0).is_err());
    }

    #[test]
    fn limit_rate_is_quadratic() {
        let lams = [1.0, 2.0, 3.0];
        let target = j_trace(&lams).unwrap();
        let errs: Vec<f64> = [10.0, 20.0, 40.0, 80.0]
            .iter()
            .map(|&k| (dhym_to_j_limit(&lams, k).unwrap() - target).abs())
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
        }
    }

    #[test]
    fn probe_examples() {
        assert_eq!(arctan_concavity(0.0), 0.0);
        assert!((arctan_concavity(-1.0) - 0.5).abs() < 1e-15);
        assert!((arctan_concavity(1.0) + 0.5).abs() < 1e-15);
        assert!((glz_condition2_value(1.0).unwrap()).abs() < 1e-15);
        assert!((glz_condition2_value(2.0).unwrap() + 0.06).abs() < 1e-15);
        assert!((glz_condition2_value(0.5).unwrap() - 0.96).abs() < 1e-15);
        assert!(glz_condition2_value(0.0).is_err());
        assert!(glz_condition2_value(-1.0).is_err());
    }

    #[test]
    fn embedding_probe_growth() {
        let (_, v0) = real_embedding_probe(0.0, 0.0);
        assert_eq!(v0, 0.0);
        let (_, v1) = real_embedding_probe(1.0, 0.0);
        assert!((v1 - 0.5).abs() < 1e-15);
        let (_, a) = real_embedding_probe(1.0, 1e3);
        let (_, b) = real_embedding_probe(1.0, 1e6);
        assert!((b / a - 1e3).abs() < 1e-9 * 1e3);
    }

    #[test]
    fn pencil_matches_plain_eig_for_identity_metric() {
        let mut rng = StdRng::seed_from_u64(47);
        for _ in 0..50 {
            let n = rng.gen_range(1..=4);
            let f = random_hermitian(&mut rng, n, 2.0);
            let a = eig_pencil(&HermitianMatrix::identity(n), &f).unwrap();
            let b = eig_hermitian(&f).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-11);
            }
        }
    }
}
