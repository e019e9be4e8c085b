//! Dense complex linear algebra used by every stage of the pipeline.
//!
//! Basis conventions are fixed crate-wide:
//!
//! * a product basis vector `|a> (x) |b>` has composite index `a * d_B + b`;
//! * `vec(X) = (X (x) I)|I>>` with `|I>> = sum_k |k>|k>`, i.e. the row-major
//!   flattening `vec(X)[i * d + k] = X[i, k]`;
//! * under this convention `(A (x) B) vec(X) = vec(A X B^T)`, so the map
//!   `X -> T X T^dag` has superoperator `T (x) conj(T)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Local dimensions of a bipartite Hilbert space `H_A (x) H_B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimPair {
    #[serde(rename = "dA")]
    pub da: usize,
    #[serde(rename = "dB")]
    pub db: usize,
}

impl DimPair {
    pub fn new(da: usize, db: usize) -> Self {
        DimPair { da, db }
    }

    pub fn total(&self) -> usize {
        self.da * self.db
    }

    pub fn check_square(&self, m: &CMatrix) -> Result<()> {
        let n = self.total();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::Dimension(format!(
                "expected {n}x{n} for dims ({}, {}), got {}x{}",
                self.da,
                self.db,
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(())
    }
}

/// Which tensor factor to trace out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Spectral functions supported by [`matrix_fn`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFn {
    Sqrt,
    Log,
    InvSqrt,
    Pinv,
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermEig {
    pub fn reconstruct(&self) -> CMatrix {
        self.apply(|x| x)
    }

    /// `V f(diag) V^dag` for a real spectral function.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            scaled.column_mut(j).scale_mut(s);
        }
        &scaled * self.vectors.adjoint()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Columns whose eigenvalue satisfies `keep`, in ascending eigenvalue order.
    pub fn columns_where(&self, keep: impl Fn(f64) -> bool) -> CMatrix {
        let idx: Vec<usize> = (0..self.values.len()).filter(|&j| keep(self.values[j])).collect();
        select_columns(&self.vectors, &idx)
    }
}

pub fn select_columns(m: &CMatrix, idx: &[usize]) -> CMatrix {
    CMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn kron(x: &CMatrix, y: &CMatrix) -> CMatrix {
    x.kronecker(y)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn commutator(x: &CMatrix, y: &CMatrix) -> CMatrix {
    x * y - y * x
}

/// Trace over one factor of a `(dA dB) x (dA dB)` operator.
pub fn partial_trace(m: &CMatrix, dims: DimPair, traced: Side) -> Result<CMatrix> {
    dims.check_square(m)?;
    let (da, db) = (dims.da, dims.db);
    Ok(match traced {
        Side::B => CMatrix::from_fn(da, da, |a, ap| (0..db).map(|b| m[(a * db + b, ap * db + b)]).sum()),
        Side::A => CMatrix::from_fn(db, db, |b, bp| (0..da).map(|a| m[(a * db + b, a * db + bp)]).sum()),
    })
}

/// Partial trace of a pure state given as a `dA x dB` coefficient matrix.
pub fn pure_marginal(coeffs: &CMatrix, keep: Side) -> CMatrix {
    match keep {
        Side::A => coeffs * coeffs.adjoint(),
        Side::B => (coeffs.adjoint() * coeffs).transpose(),
    }
}

pub fn herm_eig(m: &CMatrix, tol: f64) -> Result<HermEig> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("herm_eig needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let dev = hermitian_deviation(m);
    if dev > tol {
        return Err(Error::NotHermitian(dev));
    }
    Ok(herm_eig_unchecked(m))
}

/// Hermitian eigendecomposition of `(M + M^dag)/2` without the symmetry gate.
pub fn herm_eig_unchecked(m: &CMatrix) -> HermEig {
    let n = m.nrows();
    if n == 0 {
        return HermEig { values: vec![], vectors: CMatrix::zeros(0, 0) };
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    HermEig {
        values: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        vectors: select_columns(&eig.eigenvectors, &order),
    }
}

pub fn matrix_fn(m: &CMatrix, f: MatrixFn, rank_tol: f64) -> Result<CMatrix> {
    let scale = 1e-9 * (1.0 + max_abs(m));
    let eig = herm_eig(m, scale.max(1e-9))?;
    let thr = rank_tol * eig.max_abs();
    match f {
        MatrixFn::Sqrt => Ok(eig.apply(|x| if x > thr { x.sqrt() } else { 0.0 })),
        MatrixFn::InvSqrt => Ok(eig.apply(|x| if x > thr { 1.0 / x.sqrt() } else { 0.0 })),
        MatrixFn::Pinv => Ok(eig.apply(|x| if x.abs() > thr { 1.0 / x } else { 0.0 })),
        MatrixFn::Log => {
            if eig.max_abs() == 0.0 {
                return Err(Error::Invalid("log of the zero matrix".into()));
            }
            Ok(eig.apply(|x| if x > thr { x.ln() } else { 0.0 }))
        }
    }
}

/// Index permutation `M[(a,b),(a',b')] -> R[(a,a'),(b,b')]`.
///
/// Takes the superoperator matrix of a map on `d x d` matrices to its Choi
/// matrix (and back; the map is an involution when `dA == dB`).
pub fn reshuffle(m: &CMatrix, dims: DimPair) -> Result<CMatrix> {
    dims.check_square(m)?;
    let (da, db) = (dims.da, dims.db);
    let mut out = CMatrix::zeros(da * da, db * db);
    for a in 0..da {
        for b in 0..db {
            for ap in 0..da {
                for bp in 0..db {
                    out[(a * da + ap, b * db + bp)] = m[(a * db + b, ap * db + bp)];
                }
            }
        }
    }
    Ok(out)
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn svd_rank(m: &CMatrix, rank_tol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rank_tol * smax).count()
}

/// Numeric rank of a Hermitian PSD matrix read from its spectrum.
pub fn psd_rank(m: &CMatrix, rank_tol: f64) -> usize {
    let eig = herm_eig_unchecked(m);
    spectrum_rank(&eig.values, rank_tol)
}

pub fn spectrum_rank(values: &[f64], rank_tol: f64) -> usize {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > rank_tol * max).count()
}

/// Von Neumann entropy of a probability spectrum, in nats.
pub fn spectrum_entropy(values: &[f64]) -> f64 {
    values.iter().filter(|&&p| p > 1e-15).map(|&p| -p * p.ln()).sum()
}

pub fn entropy(rho: &CMatrix) -> Result<f64> {
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::Trace(tr.re));
    }
    let eig = herm_eig(rho, 1e-9)?;
    Ok(spectrum_entropy(&eig.values))
}

/// Row-major vectorization, `vec(X) = (X (x) I)|I>>`.
pub fn vectorize(x: &CMatrix) -> CVector {
    let (r, c) = x.shape();
    CVector::from_fn(r * c, |k, _| x[(k / c, k % c)])
}

pub fn devectorize(v: &CVector, rows: usize, cols: usize) -> CMatrix {
    assert_eq!(v.len(), rows * cols, "devectorize: length mismatch");
    CMatrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

pub fn devectorize_col(m: &CMatrix, col: usize, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| m[(i * cols + j, col)])
}

/// Superoperator of `X -> A X B` under the row-major vectorization.
pub fn superop_sandwich(a: &CMatrix, b: &CMatrix) -> CMatrix {
    kron(a, &b.transpose())
}

/// Orthonormal basis of `{v : M v = 0}` from the SVD of `M`. Singular values
/// below `tol * max(1, s_max)` count as zero, so an all-noise system is treated
/// as the zero map.
pub fn null_space(m: &CMatrix, tol: f64) -> CMatrix {
    let n = m.ncols();
    if n == 0 {
        return CMatrix::zeros(0, 0);
    }
    // Pad wide matrices so the thin SVD still returns a full right basis.
    let padded = if m.nrows() < n {
        let mut p = CMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let idx: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] <= tol * smax.max(1.0)).collect();
    let mut basis = CMatrix::zeros(n, idx.len());
    for (j, &k) in idx.iter().enumerate() {
        for i in 0..n {
            basis[(i, j)] = vt[(k, i)].conj();
        }
    }
    basis
}

/// Orthonormal basis of the range of a (near-)projection or PSD matrix.
pub fn range_basis(p: &CMatrix, thr: f64) -> CMatrix {
    let eig = herm_eig_unchecked(p);
    let max = eig.max_abs();
    let mut cols = eig.columns_where(|x| x > thr * max.max(1e-300));
    // Descending eigenvalue order reads more naturally for callers.
    let k = cols.ncols();
    if k > 1 {
        let rev: Vec<usize> = (0..k).rev().collect();
        cols = select_columns(&cols, &rev);
    }
    cols
}

pub fn projector_from_columns(cols: &CMatrix) -> CMatrix {
    cols * cols.adjoint()
}

/// `exp(i H)` for Hermitian `H`.
pub fn expm_i_herm(h: &CMatrix) -> CMatrix {
    let eig = herm_eig_unchecked(h);
    let n = eig.values.len();
    let mut scaled = eig.vectors.clone();
    for j in 0..n {
        let ph = C64::from_polar(1.0, eig.values[j]);
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= ph);
    }
    &scaled * eig.vectors.adjoint()
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm_herm(m: &CMatrix) -> f64 {
    herm_eig_unchecked(m).values.iter().map(|v| v.abs()).sum()
}

/// Split ascending values into clusters at gaps larger than `tol`.
pub fn cluster_sorted(values: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        if k == values.len() || values[k] - values[k - 1] > tol {
            if k > start {
                out.push(start..k);
            }
            start = k;
        }
    }
    out
}

/// Multiply the vector by a phase so its largest-magnitude entry is real positive.
pub fn fix_phase(v: &mut CVector) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].norm() > v[best].norm() + 1e-12 {
            best = i;
        }
    }
    let z = v[best];
    if z.norm() > 0.0 {
        let ph = z.conj() / z.norm();
        v.iter_mut().for_each(|z| *z *= ph);
    }
}

pub fn is_unitary(u: &CMatrix, tol: f64) -> bool {
    max_abs(&(u.adjoint() * u - identity(u.ncols()))) <= tol
}

pub fn random_complex_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    })
}

pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    hermitian_part(&random_complex_gaussian(rng, n, n))
}

/// Haar-random unitary via QR of a Ginibre matrix with the phase correction.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let g = random_complex_gaussian(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let ph = d / d.norm();
            q.column_mut(j).iter_mut().for_each(|z| *z *= ph);
        }
    }
    q
}

/// Random density matrix of the given rank (`G G^dag / tr`).
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> CMatrix {
    let g = random_complex_gaussian(rng, n, rank.max(1));
    let rho = &g * g.adjoint();
    let tr = trace(&rho).re;
    rho.unscale(tr)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CVector {
    let g = random_complex_gaussian(rng, n, 1);
    let norm = g.norm();
    CVector::from_fn(n, |i, _| g[(i, 0)] / norm)
}
