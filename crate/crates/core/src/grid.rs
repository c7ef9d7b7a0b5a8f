//! Periodic scalar and Hermitian-matrix fields on the flat torus with unit
//! lattice, sampled on a uniform grid with N points per real axis.
//!
//! Complex derivatives are built from tensor products of one-dimensional
//! central first-difference stencils. Because every discrete operator is a
//! product of commuting one-dimensional stencils, discrete mixed partials
//! commute exactly: Hessian fields are Hermitian to roundoff and the discrete
//! second Bianchi symmetry holds to roundoff, not just to stencil order.
//!
//! Grid layout: real coordinates are ordered (x_1, y_1, ..., x_n, y_n) with
//! z_j = x_j + i y_j; storage is row-major with the last axis fastest.

use crate::error::{Error, Result};
use crate::hermitian::{
    eig_hermitian, eig_pencil, lagrangian_angle, wrap_angle, zeta_det, C64, ComplexMatrix,
    HermitianMatrix,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Default cap on the total number of grid points.
pub const DEFAULT_POINT_BUDGET: usize = 1 << 20;

/// Discretization descriptor: complex dimension, samples per real axis, and
/// the order of the first-difference stencils everything is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub samples: usize,
    pub stencil_order: usize,
}

impl GridSpec {
    pub fn new(n: usize, samples: usize, stencil_order: usize) -> Result<Self> {
        Self::with_budget(n, samples, stencil_order, DEFAULT_POINT_BUDGET)
    }

    pub fn with_budget(
        n: usize,
        samples: usize,
        stencil_order: usize,
        budget: usize,
    ) -> Result<Self> {
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidGrid(format!("complex dimension {n} not in 1..=3")));
        }
        if samples < 8 || samples % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "samples per axis must be even and >= 8, got {samples}"
            )));
        }
        if stencil_order != 2 && stencil_order != 4 {
            return Err(Error::InvalidGrid(format!("stencil order {stencil_order} not in {{2,4}}")));
        }
        let spec = Self { n, samples, stencil_order };
        if spec.points() > budget {
            return Err(Error::GridBudget { points: spec.points(), budget });
        }
        Ok(spec)
    }

    #[inline]
    pub fn axes(&self) -> usize {
        2 * self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.samples as f64
    }

    pub fn points(&self) -> usize {
        self.samples.pow(self.axes() as u32)
    }

    /// Strides for row-major layout, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let a = self.axes();
        let mut s = vec![1usize; a];
        for k in (0..a.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.samples;
        }
        s
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<usize> {
        let a = self.axes();
        let mut c = vec![0usize; a];
        for k in (0..a).rev() {
            c[k] = idx % self.samples;
            idx /= self.samples;
        }
        c
    }

    /// Allocation-free coordinate decomposition for hot loops; axes beyond
    /// `self.axes()` are left untouched.
    #[inline]
    pub fn coords_into(&self, mut idx: usize, out: &mut [usize; 6]) {
        let a = self.axes();
        for k in (0..a).rev() {
            out[k] = idx % self.samples;
            idx /= self.samples;
        }
    }

    /// Strides as a fixed array; entries beyond `self.axes()` are zero.
    #[inline]
    pub fn strides_array(&self) -> [usize; 6] {
        let a = self.axes();
        let mut s = [0usize; 6];
        s[a - 1] = 1;
        for k in (0..a - 1).rev() {
            s[k] = s[k + 1] * self.samples;
        }
        s
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0usize;
        for &c in coords {
            idx = idx * self.samples + c;
        }
        idx
    }

    /// Real coordinates of a grid point, each in [0, 1).
    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.coords_of(idx).iter().map(|&c| c as f64 * self.h()).collect()
    }

    #[inline]
    fn wrap(&self, coord: usize, offset: isize) -> usize {
        let m = self.samples as isize;
        (coord as isize + offset).rem_euclid(m) as usize
    }
}

/// First-derivative stencil taps (offset, weight); weights are pre-division
/// by the grid spacing.
pub fn derivative_taps(order: usize) -> &'static [(isize, f64)] {
    match order {
        2 => &[(-1, -0.5), (1, 0.5)],
        4 => &[
            (-2, 1.0 / 12.0),
            (-1, -2.0 / 3.0),
            (1, 2.0 / 3.0),
            (2, -1.0 / 12.0),
        ],
        _ => panic!("unsupported stencil order"),
    }
}

/// A real scalar field sampled over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGridField {
    pub spec: GridSpec,
    pub data: Vec<f64>,
}

impl ScalarGridField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, data: vec![0.0; spec.points()] }
    }

    pub fn constant(spec: GridSpec, v: f64) -> Self {
        Self { spec, data: vec![v; spec.points()] }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let data = (0..spec.points())
            .into_par_iter()
            .map(|idx| f(&spec.position(idx)))
            .collect();
        Self { spec, data }
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }
}

/// A complex scalar field; used for derivative intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGridField {
    pub spec: GridSpec,
    pub data: Vec<C64>,
}

impl ComplexGridField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, data: vec![C64::new(0.0, 0.0); spec.points()] }
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }
}

/// A Hermitian matrix per grid point, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianGridField {
    pub spec: GridSpec,
    pub data: Vec<C64>,
}

impl HermitianGridField {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.n;
        Self { spec, data: vec![C64::new(0.0, 0.0); spec.points() * n * n] }
    }

    pub fn constant(spec: GridSpec, m: &HermitianMatrix) -> Self {
        assert_eq!(m.dim(), spec.n);
        let n = spec.n;
        let mut data = Vec::with_capacity(spec.points() * n * n);
        for _ in 0..spec.points() {
            data.extend_from_slice(m.entries());
        }
        Self { spec, data }
    }

    #[inline]
    pub fn entry(&self, idx: usize, i: usize, j: usize) -> C64 {
        let n = self.spec.n;
        self.data[idx * n * n + i * n + j]
    }

    #[inline]
    pub fn set_entry(&mut self, idx: usize, i: usize, j: usize, v: C64) {
        let n = self.spec.n;
        self.data[idx * n * n + i * n + j] = v;
    }

    pub fn matrix_at(&self, idx: usize) -> HermitianMatrix {
        let n = self.spec.n;
        HermitianMatrix::from_entries_unchecked(
            n,
            self.data[idx * n * n..(idx + 1) * n * n].to_vec(),
        )
    }

    pub fn point_slice(&self, idx: usize) -> &[C64] {
        let n = self.spec.n;
        &self.data[idx * n * n..(idx + 1) * n * n]
    }

    /// max over the grid of the largest |entry|.
    pub fn sup_entry_norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    /// Worst Hermitian symmetry defect across the grid, relative to scale.
    pub fn worst_symmetry_defect(&self) -> f64 {
        let n = self.spec.n;
        let scale = self.sup_entry_norm().max(1e-300);
        let mut worst = 0.0_f64;
        for idx in 0..self.spec.points() {
            for i in 0..n {
                for j in 0..n {
                    let d = (self.entry(idx, i, j) - self.entry(idx, j, i).conj()).norm();
                    worst = worst.max(d);
                }
            }
        }
        worst / scale
    }
}

// ---------------------------------------------------------------------------
// Derivative kernels
// ---------------------------------------------------------------------------

/// Applies the product stencil D_a D_b (axes a, b) to a scalar sampled by
/// `fetch` at integer offsets around a point. The same kernel serves the
/// periodic grid and analytic test functions.
pub fn product_second_difference(
    fetch: &dyn Fn(isize, isize) -> f64,
    order: usize,
    h: f64,
) -> f64 {
    let taps = derivative_taps(order);
    let mut acc = 0.0;
    for &(oa, wa) in taps {
        for &(ob, wb) in taps {
            acc += wa * wb * fetch(oa, ob);
        }
    }
    acc / (h * h)
}

/// One complex Hessian entry d^2 phi / dz_i dzbar_j at `idx`.
#[inline]
fn hessian_entry(
    data: &[f64],
    spec: &GridSpec,
    strides: &[usize; 6],
    coords: &[usize; 6],
    idx: usize,
    i: usize,
    j: usize,
) -> C64 {
    let order = spec.stencil_order;
    let h = spec.h();
    let (xi, yi) = (2 * i, 2 * i + 1);
    let (xj, yj) = (2 * j, 2 * j + 1);
    let fetch = |axis_a: usize, axis_b: usize, oa: isize, ob: isize| -> f64 {
        let mut id = idx;
        id = id - coords[axis_a] * strides[axis_a] + spec.wrap(coords[axis_a], oa) * strides[axis_a];
        if axis_b == axis_a {
            // re-wrap along the same axis
            let ca = spec.wrap(coords[axis_a], oa);
            id = id - ca * strides[axis_a] + spec.wrap(ca, ob) * strides[axis_a];
        } else {
            id = id - coords[axis_b] * strides[axis_b]
                + spec.wrap(coords[axis_b], ob) * strides[axis_b];
        }
        data[id]
    };
    let taps = derivative_taps(order);
    let dd = |axis_a: usize, axis_b: usize| -> f64 {
        let mut acc = 0.0;
        for &(oa, wa) in taps {
            for &(ob, wb) in taps {
                acc += wa * wb * fetch(axis_a, axis_b, oa, ob);
            }
        }
        acc / (h * h)
    };
    let xx = dd(xi, xj);
    let yy = dd(yi, yj);
    if i == j {
        // the imaginary part vanishes identically on the diagonal
        C64::new(0.25 * (xx + yy), 0.0)
    } else {
        let xy = dd(xi, yj);
        let yx = dd(yi, xj);
        C64::new(0.25 * (xx + yy), 0.25 * (xy - yx))
    }
}

/// Discrete complex Hessian field (d^2 phi / dz_i dzbar_j) of a periodic
/// scalar potential; Hermitian at every point by construction.
pub fn complex_hessian(phi: &ScalarGridField) -> HermitianGridField {
    let spec = phi.spec;
    let n = spec.n;
    let points = spec.points();
    let strides = spec.strides_array();
    let mut out = HermitianGridField::zeros(spec);
    out.data
        .par_chunks_mut(n * n)
        .enumerate()
        .for_each(|(idx, local)| {
            let mut coords = [0usize; 6];
            spec.coords_into(idx, &mut coords);
            for i in 0..n {
                for j in i..n {
                    let v = hessian_entry(&phi.data, &spec, &strides, &coords, idx, i, j);
                    local[i * n + j] = v;
                    local[j * n + i] = v.conj();
                }
            }
        });
    out
}

fn complex_axis_derivative(field: &ComplexGridField, k: usize, conjugate: bool) -> ComplexGridField {
    let spec = field.spec;
    let taps = derivative_taps(spec.stencil_order);
    let h = spec.h();
    let strides = spec.strides_array();
    let (xk, yk) = (2 * k, 2 * k + 1);
    let sign = if conjugate { 1.0 } else { -1.0 };
    let data: Vec<C64> = (0..spec.points())
        .into_par_iter()
        .map(|idx| {
            let mut coords = [0usize; 6];
            spec.coords_into(idx, &mut coords);
            let mut dx = C64::new(0.0, 0.0);
            let mut dy = C64::new(0.0, 0.0);
            for &(o, w) in taps {
                let ix = idx - coords[xk] * strides[xk] + spec.wrap(coords[xk], o) * strides[xk];
                dx += w * field.data[ix];
                let iy = idx - coords[yk] * strides[yk] + spec.wrap(coords[yk], o) * strides[yk];
                dy += w * field.data[iy];
            }
            0.5 * (dx + sign * C64::new(0.0, 1.0) * dy) / h
        })
        .collect();
    ComplexGridField { spec, data }
}

/// Complex derivative d/dz_k of a complex field: (D_x - i D_y)/2.
pub fn dz_field(field: &ComplexGridField, k: usize) -> ComplexGridField {
    complex_axis_derivative(field, k, false)
}

/// Complex derivative d/dzbar_k of a complex field: (D_x + i D_y)/2.
pub fn dzbar_field(field: &ComplexGridField, k: usize) -> ComplexGridField {
    complex_axis_derivative(field, k, true)
}

/// Extracts one matrix entry of a Hermitian field as a complex field.
pub fn entry_field(f: &HermitianGridField, i: usize, j: usize) -> ComplexGridField {
    let n = f.spec.n;
    let data = (0..f.spec.points()).map(|idx| f.data[idx * n * n + i * n + j]).collect();
    ComplexGridField { spec: f.spec, data }
}

// ---------------------------------------------------------------------------
// Field constructors and reductions
// ---------------------------------------------------------------------------

/// x -> F0 + complex_hessian(phi)(x).
pub fn curvature_field(f0: &HermitianMatrix, phi: &ScalarGridField) -> HermitianGridField {
    let mut h = complex_hessian(phi);
    let n = h.spec.n;
    assert_eq!(f0.dim(), n);
    for idx in 0..h.spec.points() {
        for i in 0..n {
            for j in 0..n {
                let v = h.entry(idx, i, j) + f0.get(i, j);
                h.set_entry(idx, i, j, v);
            }
        }
    }
    h
}

/// Grid mean, computed sequentially for reproducibility.
pub fn average(field: &ScalarGridField) -> f64 {
    let mut sum = 0.0;
    for v in &field.data {
        sum += v;
    }
    sum / field.data.len() as f64
}

/// Subtracts the grid mean; idempotent.
pub fn mean_zero(field: &ScalarGridField) -> ScalarGridField {
    let m = average(field);
    let data = field.data.iter().map(|v| v - m).collect();
    ScalarGridField { spec: field.spec, data }
}

/// Subtracts the mean of the field over each axis-parity class.
///
/// Constants and per-axis Nyquist (checkerboard) modes are annihilated by
/// every central first-difference stencil, so they are invisible to all
/// derived fields; removing them is the discrete gauge fixing that extends
/// plain mean subtraction. Contains `mean_zero` as the all-classes average.
pub fn project_gauge(field: &ScalarGridField) -> ScalarGridField {
    let spec = field.spec;
    let axes = spec.axes();
    let classes = 1usize << axes;
    let mut sums = vec![0.0f64; classes];
    let mut counts = vec![0usize; classes];
    for idx in 0..spec.points() {
        let coords = spec.coords_of(idx);
        let mut class = 0usize;
        for (k, &c) in coords.iter().enumerate() {
            class |= (c & 1) << k;
        }
        sums[class] += field.data[idx];
        counts[class] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let mut data = Vec::with_capacity(spec.points());
    for idx in 0..spec.points() {
        let coords = spec.coords_of(idx);
        let mut class = 0usize;
        for (k, &c) in coords.iter().enumerate() {
            class |= (c & 1) << k;
        }
        data.push(field.data[idx] - means[class]);
    }
    ScalarGridField { spec, data }
}

/// Random real trigonometric polynomial with modes up to `max_mode` per axis,
/// normalized to the requested sup-norm amplitude. Deterministic in the RNG.
pub fn random_trig_polynomial(
    spec: GridSpec,
    max_mode: usize,
    amplitude: f64,
    rng: &mut impl Rng,
) -> ScalarGridField {
    let axes = spec.axes();
    let m = max_mode as isize;
    // canonical half-space of nonzero integer frequency vectors
    let mut modes: Vec<(Vec<isize>, f64, f64)> = Vec::new();
    let mut k = vec![-m; axes];
    'outer: loop {
        if k.iter().any(|&v| v != 0) {
            let first_nonzero = k.iter().find(|&&v| v != 0).copied().unwrap();
            if first_nonzero > 0 {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                modes.push((k.clone(), a, b));
            }
        }
        for ax in (0..axes).rev() {
            k[ax] += 1;
            if k[ax] <= m {
                continue 'outer;
            }
            k[ax] = -m;
        }
        break;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut field = ScalarGridField::from_fn(spec, |pos| {
        let mut v = 0.0;
        for (k, a, b) in &modes {
            let phase: f64 = two_pi * k.iter().zip(pos).map(|(&ki, &x)| ki as f64 * x).sum::<f64>();
            v += a * phase.cos() + b * phase.sin();
        }
        v
    });
    let sup = field.sup_norm();
    if sup > 0.0 {
        field.scale(amplitude / sup);
    }
    field
}

// ---------------------------------------------------------------------------
// Central charge
// ---------------------------------------------------------------------------

/// Record of the branch choice made for the lifted angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiftNote {
    /// Eigenvalues of g0^{-1} F0, the constant representative of the class.
    pub representative_eigenvalues: Vec<f64>,
    /// Principal argument of the numerically integrated Z.
    pub arg_z: f64,
    /// |arg Z - hat_theta| wrapped into (-pi, pi].
    pub mismatch: f64,
    /// Whether the mismatch is within tolerance; false signals under-resolution.
    pub consistent: bool,
    pub tolerance: f64,
}

/// The integrated charge Z together with the lifted angle hat_theta.
///
/// Z is reported up to the positive volume constant: the grid average of
/// zeta times det(g0). The lift runs through the constant representative, so
/// hat_theta lives in (-n pi/2, n pi/2) rather than on a principal branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralCharge {
    pub z_re: f64,
    pub z_im: f64,
    pub hat_theta: f64,
    pub lift_note: LiftNote,
}

impl CentralCharge {
    pub fn z(&self) -> C64 {
        C64::new(self.z_re, self.z_im)
    }
}

pub const CHARGE_CONSISTENCY_TOL: f64 = 1e-6;

/// Integrates zeta over the grid and lifts the angle through the constant
/// representative F0. A mismatch between arg Z and the lift beyond tolerance
/// is flagged, not rejected.
pub fn central_charge(
    g0: &HermitianMatrix,
    f0: &HermitianMatrix,
    phi: &ScalarGridField,
) -> Result<CentralCharge> {
    central_charge_with_tol(g0, f0, phi, CHARGE_CONSISTENCY_TOL)
}

pub fn central_charge_with_tol(
    g0: &HermitianMatrix,
    f0: &HermitianMatrix,
    phi: &ScalarGridField,
    tol: f64,
) -> Result<CentralCharge> {
    let n = phi.spec.n;
    if g0.dim() != n || f0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: g0.dim().max(f0.dim()) });
    }
    g0.cholesky()?;
    let ginv = g0.inverse()?;
    let det_g0 = ComplexMatrix::from_hermitian(g0).det().re;
    let f = curvature_field(f0, phi);
    let points = phi.spec.points();
    let zetas: Vec<C64> = (0..points)
        .into_par_iter()
        .map(|idx| {
            let fm = f.matrix_at(idx);
            let k = ComplexMatrix::from_hermitian(&ginv).matmul(&ComplexMatrix::from_hermitian(&fm));
            let mut m = ComplexMatrix::identity(n);
            for i in 0..n {
                for j in 0..n {
                    let v = m.get(i, j) + C64::new(0.0, 1.0) * k.get(i, j);
                    m.set(i, j, v);
                }
            }
            m.det()
        })
        .collect();
    let mut sum = C64::new(0.0, 0.0);
    for z in &zetas {
        sum += z;
    }
    let z = sum / points as f64 * det_g0;
    let rep = eig_pencil(g0, f0)?;
    let hat_theta = lagrangian_angle(&rep.values);
    let mismatch = wrap_angle(z.arg() - hat_theta).abs();
    Ok(CentralCharge {
        z_re: z.re,
        z_im: z.im,
        hat_theta,
        lift_note: LiftNote {
            representative_eigenvalues: rep.values,
            arg_z: z.arg(),
            mismatch,
            consistent: mismatch <= tol,
            tolerance: tol,
        },
    })
}

// ---------------------------------------------------------------------------
// Structural residuals
// ---------------------------------------------------------------------------

/// sup over the grid and over j of |eta^{p qbar} d_j F_{qbar p}|, the trace
/// pairing Tr(eta^{-1} dF/dz_j). Vanishes at discrete dHYM solutions.
///
/// Both fields live in the orthonormal frame of the constant background, so
/// the pairing is an ordinary matrix trace; `g0` fixes dimensions.
pub fn first_derivative_residual(
    g0: &HermitianMatrix,
    f_field: &HermitianGridField,
    eta_field: &HermitianGridField,
) -> Result<f64> {
    let n = f_field.spec.n;
    if g0.dim() != n || eta_field.spec.n != n {
        return Err(Error::DimensionMismatch { expected: n, got: g0.dim() });
    }
    let points = f_field.spec.points();
    let mut worst = 0.0_f64;
    for j in 0..n {
        // dF/dz_j entrywise
        let mut dfs: Vec<ComplexGridField> = Vec::with_capacity(n * n);
        for p in 0..n {
            for q in 0..n {
                dfs.push(dz_field(&entry_field(f_field, p, q), j));
            }
        }
        let sups: Vec<f64> = (0..points)
            .into_par_iter()
            .map(|idx| {
                let eta = eta_field.matrix_at(idx);
                let inv = match eta.inverse() {
                    Ok(m) => m,
                    Err(_) => return f64::INFINITY,
                };
                // Tr(eta^{-1} dF)
                let mut tr = C64::new(0.0, 0.0);
                for p in 0..n {
                    for q in 0..n {
                        tr += inv.get(p, q) * dfs[q * n + p].data[idx];
                    }
                }
                tr.norm()
            })
            .collect();
        let sup = sups.iter().fold(0.0_f64, |m, v| m.max(*v));
        worst = worst.max(sup);
    }
    Ok(worst)
}

/// max over the grid and index triples of |d_k F_{i jbar} - d_i F_{k jbar}|
/// for F = the complex Hessian of phi, normalized by the derivative scale.
/// Exactly small because the discrete difference operators commute.
pub fn bianchi_residual(phi: &ScalarGridField) -> f64 {
    let f = complex_hessian(phi);
    let n = phi.spec.n;
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let fij = entry_field(&f, i, j);
            for k in 0..n {
                if k == i {
                    continue;
                }
                let dk_fij = dz_field(&fij, k);
                let fkj = entry_field(&f, k, j);
                let di_fkj = dz_field(&fkj, i);
                for idx in 0..phi.spec.points() {
                    let d = (dk_fij.data[idx] - di_fkj.data[idx]).norm();
                    worst = worst.max(d);
                    scale = scale.max(dk_fij.data[idx].norm());
                }
            }
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Pointwise angle field theta(x) = sum arctan lambda_i(F(x)) for g0 = I.
pub fn angle_field(f_field: &HermitianGridField) -> Result<ScalarGridField> {
    let points = f_field.spec.points();
    let data: Vec<f64> = (0..points)
        .into_par_iter()
        .map(|idx| {
            let m = f_field.matrix_at(idx);
            eig_hermitian(&m).map(|e| lagrangian_angle(&e.values))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScalarGridField { spec: f_field.spec, data })
}

/// Pointwise eta field eta(x) = I + F(x)^2 in the flat orthonormal frame.
pub fn eta_field_flat(f_field: &HermitianGridField) -> HermitianGridField {
    let spec = f_field.spec;
    let n = spec.n;
    let mut out = HermitianGridField::zeros(spec);
    let points = spec.points();
    let results: Vec<Vec<C64>> = (0..points)
        .into_par_iter()
        .map(|idx| {
            let m = f_field.matrix_at(idx);
            let sq = m.matmul(&m);
            let mut e = sq.entries;
            for i in 0..n {
                e[i * n + i] += 1.0;
            }
            e
        })
        .collect();
    for (idx, e) in results.into_iter().enumerate() {
        out.data[idx * n * n..(idx + 1) * n * n].copy_from_slice(&e);
    }
    out
}

// ---------------------------------------------------------------------------
// Snapshot format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub field_name: String,
    pub kind: String,
    pub n: usize,
    pub samples_per_axis: usize,
    pub stencil_order: usize,
    pub layout: String,
    pub components: Option<String>,
    pub point_count: usize,
    pub values_per_point: usize,
}

const SNAPSHOT_FORMAT: &str = "dhym-field-v1";
const LAYOUT_NOTE: &str = "row-major over axes (x1,y1,...,xn,yn), last axis fastest";
const HERMITIAN_COMPONENTS: &str = "upper-triangle row-wise, re/im interleaved";

fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidParameter(format!(
            "raw field file length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes `<base>.f64` (raw little-endian doubles) plus `<base>.json` header.
pub fn write_scalar_snapshot(base: &Path, name: &str, field: &ScalarGridField) -> Result<()> {
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.into(),
        field_name: name.into(),
        kind: "scalar".into(),
        n: field.spec.n,
        samples_per_axis: field.spec.samples,
        stencil_order: field.spec.stencil_order,
        layout: LAYOUT_NOTE.into(),
        components: None,
        point_count: field.spec.points(),
        values_per_point: 1,
    };
    write_f64_le(&base.with_extension("f64"), &field.data)?;
    let json = serde_json::to_string_pretty(&header)?;
    std::fs::write(base.with_extension("json"), json)?;
    Ok(())
}

pub fn read_scalar_snapshot(base: &Path) -> Result<(SnapshotHeader, ScalarGridField)> {
    let json = std::fs::read_to_string(base.with_extension("json"))?;
    let header: SnapshotHeader = serde_json::from_str(&json)?;
    if header.kind != "scalar" || header.format != SNAPSHOT_FORMAT {
        return Err(Error::InvalidParameter(format!(
            "unexpected snapshot kind {} / format {}",
            header.kind, header.format
        )));
    }
    let data = read_f64_le(&base.with_extension("f64"))?;
    let spec = GridSpec::new(header.n, header.samples_per_axis, header.stencil_order)?;
    if data.len() != spec.points() {
        return Err(Error::DimensionMismatch { expected: spec.points(), got: data.len() });
    }
    Ok((header, ScalarGridField { spec, data }))
}

/// Hermitian fields store the upper triangle row-wise with re/im interleaved.
pub fn write_hermitian_snapshot(base: &Path, name: &str, field: &HermitianGridField) -> Result<()> {
    let n = field.spec.n;
    let vpp = n * (n + 1);
    let mut values = Vec::with_capacity(field.spec.points() * vpp);
    for idx in 0..field.spec.points() {
        for i in 0..n {
            for j in i..n {
                let v = field.entry(idx, i, j);
                values.push(v.re);
                values.push(v.im);
            }
        }
    }
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.into(),
        field_name: name.into(),
        kind: "hermitian".into(),
        n,
        samples_per_axis: field.spec.samples,
        stencil_order: field.spec.stencil_order,
        layout: LAYOUT_NOTE.into(),
        components: Some(HERMITIAN_COMPONENTS.into()),
        point_count: field.spec.points(),
        values_per_point: vpp,
    };
    write_f64_le(&base.with_extension("f64"), &values)?;
    let json = serde_json::to_string_pretty(&header)?;
    std::fs::write(base.with_extension("json"), json)?;
    Ok(())
}

pub fn read_hermitian_snapshot(base: &Path) -> Result<(SnapshotHeader, HermitianGridField)> {
    let json = std::fs::read_to_string(base.with_extension("json"))?;
    let header: SnapshotHeader = serde_json::from_str(&json)?;
    if header.kind != "hermitian" || header.format != SNAPSHOT_FORMAT {
        return Err(Error::InvalidParameter(format!(
            "unexpected snapshot kind {} / format {}",
            header.kind, header.format
        )));
    }
    let spec = GridSpec::new(header.n, header.samples_per_axis, header.stencil_order)?;
    let raw = read_f64_le(&base.with_extension("f64"))?;
    let n = header.n;
    let vpp = n * (n + 1);
    if raw.len() != spec.points() * vpp {
        return Err(Error::DimensionMismatch { expected: spec.points() * vpp, got: raw.len() });
    }
    let mut field = HermitianGridField::zeros(spec);
    let mut cursor = 0;
    for idx in 0..spec.points() {
        for i in 0..n {
            for j in i..n {
                let v = C64::new(raw[cursor], raw[cursor + 1]);
                cursor += 2;
                field.set_entry(idx, i, j, v);
                field.set_entry(idx, j, i, v.conj());
            }
        }
    }
    Ok((header, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(1, 16, 2).is_ok());
        assert!(GridSpec::new(0, 16, 2).is_err());
        assert!(GridSpec::new(4, 16, 2).is_err());
        assert!(GridSpec::new(1, 7, 2).is_err());
        assert!(GridSpec::new(1, 16, 3).is_err());
        // budget: 3 complex dims at N=16 is 16^6 = 16.7M > 2^20
        assert!(matches!(GridSpec::new(3, 16, 2), Err(Error::GridBudget { .. })));
        assert!(GridSpec::new(3, 8, 2).is_ok());
        let s = GridSpec::new(2, 16, 2).unwrap();
        assert_eq!(s.points(), 65536);
        assert!((s.h() * s.samples as f64 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indexing_roundtrip() {
        let s = GridSpec::new(2, 8, 2).unwrap();
        for idx in [0usize, 17, 4095, 511] {
            assert_eq!(s.index_of(&s.coords_of(idx)), idx);
        }
    }

    #[test]
    fn hessian_of_zero_is_zero() {
        let spec = GridSpec::new(2, 8, 2).unwrap();
        let phi = ScalarGridField::zeros(spec);
        let h = complex_hessian(&phi);
        assert_eq!(h.sup_entry_norm(), 0.0);
    }

    #[test]
    fn hessian_matches_analytic_laplacian_and_refines_at_stencil_order() {
        // phi = cos(2 pi x): dd phi = Lap phi / 4 = -pi^2 cos(2 pi x)
        for &(order, expected_ratio) in &[(2usize, 4.0), (4usize, 16.0)] {
            let mut errs = Vec::new();
            for samples in [16usize, 32] {
                let spec = GridSpec::new(1, samples, order).unwrap();
                let phi = ScalarGridField::from_fn(spec, |p| (2.0 * PI * p[0]).cos());
                let h = complex_hessian(&phi);
                let mut worst = 0.0_f64;
                for idx in 0..spec.points() {
                    let x = spec.position(idx)[0];
                    let exact = -PI * PI * (2.0 * PI * x).cos();
                    worst = worst.max((h.entry(idx, 0, 0).re - exact).abs());
                }
                errs.push(worst);
            }
            let ratio = errs[0] / errs[1];
            assert!(
                (ratio / expected_ratio - 1.0).abs() < 0.2,
                "order {order}: ratio {ratio}, expected about {expected_ratio}"
            );
        }
    }

    #[test]
    fn kernel_annihilates_linear_functions() {
        // d dbar of x_1 vanishes on a single stencil; exact for central taps.
        for order in [2usize, 4] {
            let f = |oa: isize, ob: isize| (oa + ob) as f64 * 0.1;
            let v = product_second_difference(&f, order, 0.1);
            assert!(v.abs() < 1e-12, "order {order}: {v}");
        }
    }

    #[test]
    fn hessian_is_hermitian_everywhere() {
        let spec = GridSpec::new(2, 16, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let phi = random_trig_polynomial(spec, 2, 1.0, &mut rng);
        let h = complex_hessian(&phi);
        assert!(h.worst_symmetry_defect() <= 1e-12);
    }

    #[test]
    fn curvature_field_mean_is_f0() {
        let spec = GridSpec::new(2, 8, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let phi = random_trig_polynomial(spec, 2, 0.5, &mut rng);
        let f0 = HermitianMatrix::diag(&[3.0, 5.0]);
        let f = curvature_field(&f0, &phi);
        let n = 2;
        for i in 0..n {
            for j in 0..n {
                let mut sum = C64::new(0.0, 0.0);
                for idx in 0..spec.points() {
                    sum += f.entry(idx, i, j);
                }
                let mean = sum / spec.points() as f64;
                let d = (mean - f0.get(i, j)).norm();
                assert!(d < 1e-12, "entry ({i},{j}) mean defect {d}");
            }
        }
    }

    #[test]
    fn eigenvalue_fields_stay_near_f0_for_small_phi() {
        let spec = GridSpec::new(2, 8, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let phi = random_trig_polynomial(spec, 1, 0.01, &mut rng);
        let f0 = HermitianMatrix::diag(&[3.0, 5.0]);
        let f = curvature_field(&f0, &phi);
        let h = complex_hessian(&phi);
        for idx in 0..spec.points() {
            let e = eig_hermitian(&f.matrix_at(idx)).unwrap();
            let perturb = eig_hermitian(&h.matrix_at(idx)).unwrap();
            let bound = perturb.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!((e.values[0] - 3.0).abs() <= bound + 1e-12);
            assert!((e.values[1] - 5.0).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn averaging_and_gauges() {
        let spec = GridSpec::new(1, 8, 2).unwrap();
        let c = ScalarGridField::constant(spec, 2.5);
        assert_eq!(mean_zero(&c).sup_norm(), 0.0);
        let mut rng = StdRng::seed_from_u64(6);
        let phi = random_trig_polynomial(spec, 2, 1.0, &mut rng);
        let z1 = mean_zero(&phi);
        let z2 = mean_zero(&z1);
        for (a, b) in z1.data.iter().zip(&z2.data) {
            assert!((a - b).abs() < 1e-14);
        }
        let sin = ScalarGridField::from_fn(spec, |p| (2.0 * PI * p[0]).sin());
        assert!(average(&sin).abs() < 1e-14);
        // gauge projection removes checkerboards exactly and is idempotent
        let cb = ScalarGridField::from_fn(spec, |p| {
            let i = (p[0] * 8.0).round() as i64;
            let j = (p[1] * 8.0).round() as i64;
            if (i + j) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        assert_eq!(project_gauge(&cb).sup_norm(), 0.0);
        let g1 = project_gauge(&phi);
        assert!(average(&g1).abs() < 1e-14);
    }

    #[test]
    fn gauge_modes_are_invisible_to_hessians() {
        let spec = GridSpec::new(1, 8, 2).unwrap();
        let cb = ScalarGridField::from_fn(spec, |p| {
            let i = (p[0] * 8.0).round() as i64;
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        let h = complex_hessian(&cb);
        assert_eq!(h.sup_entry_norm(), 0.0);
    }

    #[test]
    fn bianchi_residual_is_roundoff() {
        let spec = GridSpec::new(2, 16, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let phi = random_trig_polynomial(spec, 2, 1.0, &mut rng);
        assert!(bianchi_residual(&phi) <= 1e-12);
        let zero = ScalarGridField::zeros(spec);
        assert_eq!(bianchi_residual(&zero), 0.0);
    }

    #[test]
    fn central_charge_constant_case() {
        let spec = GridSpec::new(2, 8, 2).unwrap();
        let phi = ScalarGridField::zeros(spec);
        let g0 = HermitianMatrix::identity(2);
        let f0 = HermitianMatrix::diag(&[1.0, 2.0]);
        let c = central_charge(&g0, &f0, &phi).unwrap();
        assert!((c.z() - C64::new(-1.0, 3.0)).norm() < 1e-13);
        let expected = 1.0_f64.atan() + 2.0_f64.atan();
        assert!((c.hat_theta - expected).abs() < 1e-13);
        assert!(c.lift_note.consistent);
        // F0 = 0: Z real positive, hat_theta = 0
        let c0 = central_charge(&g0, &HermitianMatrix::zeros(2), &phi).unwrap();
        assert!(c0.z().im.abs() < 1e-14 && c0.z().re > 0.0);
        assert_eq!(c0.hat_theta, 0.0);
    }

    #[test]
    fn central_charge_class_invariance() {
        let spec = GridSpec::new(2, 8, 2).unwrap();
        let g0 = HermitianMatrix::identity(2);
        let f0 = HermitianMatrix::diag(&[1.0, 2.0]);
        let z0 = central_charge(&g0, &f0, &ScalarGridField::zeros(spec)).unwrap().z();
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..3 {
            let phi = random_trig_polynomial(spec, 1, 0.05, &mut rng);
            let z = central_charge(&g0, &f0, &phi).unwrap().z();
            assert!((z - z0).norm() / z0.norm() < 1e-3);
        }
    }

    #[test]
    fn gauge_invariance_of_derived_fields() {
        let spec = GridSpec::new(1, 8, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let phi = random_trig_polynomial(spec, 2, 0.5, &mut rng);
        let mut shifted = phi.clone();
        for v in shifted.data.iter_mut() {
            *v += 17.25;
        }
        let h1 = complex_hessian(&phi);
        let h2 = complex_hessian(&shifted);
        for (a, b) in h1.data.iter().zip(&h2.data) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn first_derivative_residual_zero_for_constant_field() {
        let spec = GridSpec::new(2, 8, 2).unwrap();
        let f0 = HermitianMatrix::diag(&[3.0, 5.0]);
        let f = HermitianGridField::constant(spec, &f0);
        let eta = eta_field_flat(&f);
        let r =
            first_derivative_residual(&HermitianMatrix::identity(2), &f, &eta).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn first_derivative_residual_matches_angle_gradient() {
        // chain-rule oracle: sup |d_j theta| from the angle field directly
        let mut sups = Vec::new();
        let mut diffs = Vec::new();
        for samples in [16usize, 32] {
            let spec = GridSpec::new(1, samples, 2).unwrap();
            let mut rng = StdRng::seed_from_u64(10);
            let phi = random_trig_polynomial(spec, 1, 0.2, &mut rng);
            let f0 = HermitianMatrix::diag(&[1.0]);
            let f = curvature_field(&f0, &phi);
            let eta = eta_field_flat(&f);
            let r = first_derivative_residual(&HermitianMatrix::identity(1), &f, &eta).unwrap();
            let theta = angle_field(&f).unwrap();
            let theta_c = ComplexGridField {
                spec,
                data: theta.data.iter().map(|&v| C64::new(v, 0.0)).collect(),
            };
            let dtheta = dz_field(&theta_c, 0);
            let sup = dtheta.sup_norm();
            sups.push(sup);
            diffs.push((r - sup).abs());
        }
        // both discretize the same quantity; difference shrinks under refinement
        assert!(diffs[1] < diffs[0]);
        assert!(diffs[0] / sups[0].max(1e-300) < 0.2);
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(1, 8, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let phi = random_trig_polynomial(spec, 2, 1.0, &mut rng);
        let base = dir.path().join("phi");
        write_scalar_snapshot(&base, "phi", &phi).unwrap();
        let (hdr, back) = read_scalar_snapshot(&base).unwrap();
        assert_eq!(hdr.field_name, "phi");
        assert_eq!(phi.data, back.data);

        let f = curvature_field(&HermitianMatrix::diag(&[2.0]), &phi);
        let fb = dir.path().join("f");
        write_hermitian_snapshot(&fb, "F", &f).unwrap();
        let (h2, back2) = read_hermitian_snapshot(&fb).unwrap();
        assert_eq!(h2.values_per_point, 2);
        assert_eq!(f.data, back2.data);
    }
}
