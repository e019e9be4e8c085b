//! Normalized Choi state of the conditional expectation, its canonical
//! purification, and the entropy minimization over unitaries on the purifying
//! systems whose optimum exposes the block dimensions.
//!
//! The purification `|C> = (sqrt(C) (x) I)|I>>_{B Bbar}|I>>_{B1 Bbar1}` is
//! stored as the `d^2 x d^2` matrix `Psi` with rows `(b, b1)` and columns
//! `(bbar, bbar1)`. A unitary on `Bbar Bbar1` acts as `Psi -> Psi W`.

use faer::{Mat, MatRef};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, herm_eig, herm_eig_unchecked, identity, matrix_fn, max_abs, partial_trace, random_hermitian, reshuffle,
    spectrum_entropy, spectrum_rank, svd_rank, trace, CMatrix, DimPair, MatrixFn, Side, C64,
};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone)]
pub struct ChoiState {
    pub d: usize,
    pub c: CMatrix,
    pub sqrt_c: CMatrix,
    pub rank_c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bounds {
    pub lower: usize,
    pub upper: usize,
}

/// `C = reshuffle(P_V) / d`, checked to be a state with maximally mixed marginals.
pub fn build_choi(pv: &CMatrix, d: usize, rank_tol: f64) -> Result<ChoiState> {
    let c = reshuffle(pv, DimPair::new(d, d))?.unscale(d as f64);
    let eig = herm_eig(&c, 1e-8)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    if min < -1e-9 {
        return Err(Error::NotPsd(min));
    }
    let tr = trace(&c).re;
    if (tr - 1.0).abs() > 1e-9 {
        return Err(Error::Trace(tr));
    }
    let mixed = identity(d).unscale(d as f64);
    for side in [Side::A, Side::B] {
        let m = partial_trace(&c, DimPair::new(d, d), side)?;
        let dev = max_abs(&(m - &mixed));
        if dev > 1e-8 {
            return Err(Error::Numerical(format!("Choi marginal deviates from I/d by {dev:.3e}")));
        }
    }
    let rank_c = svd_rank(&c, rank_tol);
    let sqrt_c = matrix_fn(&c, MatrixFn::Sqrt, rank_tol)?;
    Ok(ChoiState { d, c, sqrt_c, rank_c })
}

pub fn bounds(choi: &ChoiState) -> Bounds {
    Bounds { lower: ceil_sqrt(choi.rank_c), upper: choi.rank_c }
}

fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r
}

/// The canonical purification as the `d^2 x d^2` matrix `Psi = sqrt(C)`.
pub fn purify(choi: &ChoiState) -> CMatrix {
    choi.sqrt_c.clone()
}

/// Flatten `Psi` into the state vector on `B B1 Bbar Bbar1` (index
/// `((b*d + b1)*d + bbar)*d + bbar1`).
pub fn purification_vector(psi: &CMatrix) -> crate::linalg::CVector {
    crate::linalg::vectorize(psi)
}

/// `tr_{Bbar Bbar1} |C><C| = Psi Psi^dag`.
pub fn purification_marginal(psi: &CMatrix) -> CMatrix {
    psi * psi.adjoint()
}

/// Reduced state on `B Bbar` and its spectral data.
struct EntropyEval {
    phi: Mat<C64>,
    values: Vec<f64>,
    vectors: Mat<C64>,
    entropy: f64,
}

// The descent runs on faer matrices: complex products and Hermitian
// eigensolves there are several times faster than nalgebra's at d^2 = 64.

fn to_faer(m: &CMatrix) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: MatRef<'_, C64>) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `Psi[(b,b1),(c,c1)] -> Phi[(b,c),(b1,c1)]`; an involution.
fn realign(psi: MatRef<'_, C64>, d: usize) -> Mat<C64> {
    Mat::from_fn(d * d, d * d, |r, c| {
        let (b, bar) = (r / d, r % d);
        let (b1, bar1) = (c / d, c % d);
        psi[(b * d + b1, bar * d + bar1)]
    })
}

fn rho_bbbar(psi: MatRef<'_, C64>, d: usize) -> (Mat<C64>, Mat<C64>) {
    let phi = realign(psi, d);
    let rho = &phi * phi.adjoint();
    (phi, rho)
}

fn entropy_only(psi: MatRef<'_, C64>, d: usize) -> f64 {
    let (_, rho) = rho_bbbar(psi, d);
    match rho.self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(v) => spectrum_entropy(&v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>()),
        Err(_) => f64::INFINITY,
    }
}

fn evaluate(psi: MatRef<'_, C64>, d: usize) -> EntropyEval {
    let (phi, rho) = rho_bbbar(psi, d);
    let (values, vectors) = herm_eig_faer(&rho);
    let values: Vec<f64> = values.iter().map(|&v| v.max(0.0)).collect();
    let entropy = spectrum_entropy(&values);
    EntropyEval { phi, values, vectors, entropy }
}

fn herm_eig_faer(h: &Mat<C64>) -> (Vec<f64>, Mat<C64>) {
    match h.self_adjoint_eigen(faer::Side::Lower) {
        Ok(e) => {
            let values = (0..h.nrows()).map(|i| e.S().column_vector()[i].re).collect();
            (values, e.U().to_owned())
        }
        Err(_) => {
            let e = herm_eig_unchecked(&from_faer(h.as_ref()));
            (e.values, to_faer(&e.vectors))
        }
    }
}

const LOG_FLOOR: f64 = 1e-15;

/// Hermitian Riemannian gradient `D` for the update `Psi -> Psi exp(i H)`,
/// `dS = tr(D H)` to first order.
fn riemannian_gradient(ev: &EntropyEval, psi: MatRef<'_, C64>, d: usize) -> Mat<C64> {
    // Euclidean gradient G_Phi = -(log rho) Phi, with dS = 2 Re tr(G^dag dPhi);
    // eigenvalues below the floor contribute zero.
    let mut vh_phi = ev.vectors.adjoint() * &ev.phi;
    for (i, &v) in ev.values.iter().enumerate() {
        let l = if v > LOG_FLOOR { -v.ln() } else { 0.0 };
        for j in 0..vh_phi.ncols() {
            vh_phi[(i, j)] *= l;
        }
    }
    let g_phi = &ev.vectors * &vh_phi;
    let g_psi = realign(g_phi.as_ref(), d);
    let a = g_psi.adjoint() * psi;
    let n = a.nrows();
    Mat::from_fn(n, n, |i, j| C64::new(0.0, 1.0) * (a[(i, j)] - a[(j, i)].conj()))
}

/// Entropy `S(B Bbar)` of `Psi` and the Hermitian Riemannian gradient `D` for
/// the update `Psi -> Psi exp(i H)`: `dS = tr(D H)` to first order.
pub fn entropy_and_gradient(psi: &CMatrix, d: usize) -> (f64, CMatrix) {
    let pf = to_faer(psi);
    let ev = evaluate(pf.as_ref(), d);
    let grad = riemannian_gradient(&ev, pf.as_ref(), d);
    (ev.entropy, from_faer(grad.as_ref()))
}

pub fn entropy_bbbar(psi: &CMatrix, d: usize) -> f64 {
    entropy_only(to_faer(psi).as_ref(), d)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimizerOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub step_init: f64,
    pub conv_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions { restarts: 16, max_iters: 2000, step_init: 0.1, conv_tol: 1e-10, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartOutcome {
    pub index: usize,
    pub entropy: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Unitary on `Bbar Bbar1` in the tensor convention (`|C~> = (I (x) U)|C>`).
    pub u_opt: CMatrix,
    pub psi_opt: CMatrix,
    pub entropy_min: f64,
    pub d_min: usize,
    pub d_r_total: usize,
    pub rank_check: usize,
    pub restarts_log: Vec<RestartOutcome>,
    pub best_restart: usize,
    pub converged: bool,
}

struct Descent {
    w: CMatrix,
    entropy: f64,
    iterations: usize,
    converged: bool,
}

const ARMIJO_C: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
const STEP_MIN: f64 = 1e-6;
const STEP_MAX: f64 = 1e3;

fn inner_re(x: &Mat<C64>, y: &Mat<C64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            acc += (x[(i, j)].conj() * y[(i, j)]).re;
        }
    }
    acc
}

/// `base * diag(exp(-i t lambda)) * V^dag`.
fn rotate(base: &Mat<C64>, values: &[f64], vectors: &Mat<C64>, t: f64) -> Mat<C64> {
    let mut m = base.clone();
    for (j, &lam) in values.iter().enumerate() {
        let ph = C64::from_polar(1.0, -t * lam);
        for i in 0..m.nrows() {
            m[(i, j)] *= ph;
        }
    }
    &m * vectors.adjoint()
}

/// First-order descent on `U(d^2)` with an Armijo backtracking line search.
/// Search directions are Polak-Ribiere+ conjugate gradients, falling back to
/// steepest descent whenever the combined direction is not a descent
/// direction. A step `exp(i t P)` commutes with `P`, so the previous direction
/// needs no transport into the new frame.
fn descend(psi: &CMatrix, d: usize, w0: CMatrix, opts: &OptimizerOptions) -> Descent {
    let psi_f = to_faer(psi);
    let mut w = to_faer(&w0);
    let mut cur = &psi_f * &w;
    let mut ev = evaluate(cur.as_ref(), d);
    let mut step = opts.step_init;
    // previous gradient, direction and directional derivative
    let mut prev: Option<(Mat<C64>, Mat<C64>, f64)> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut small_changes = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let grad = riemannian_gradient(&ev, cur.as_ref(), d);
        let gnorm2 = inner_re(&grad, &grad);
        if gnorm2.sqrt() < 1e-12 {
            converged = true;
            break;
        }
        let steepest = -&grad;
        let (dir, slope) = match &prev {
            Some((g_prev, p_prev, slope_prev)) => {
                let beta = (inner_re(&grad, &(&grad - g_prev)) / inner_re(g_prev, g_prev)).max(0.0);
                let cand = &steepest + p_prev * faer::Scale(C64::new(beta, 0.0));
                let slope = inner_re(&grad, &cand);
                if slope < 0.0 {
                    step = (2.0 * step * slope_prev / slope).clamp(STEP_MIN, STEP_MAX);
                    (cand, slope)
                } else {
                    step = (2.0 * step).clamp(STEP_MIN, STEP_MAX);
                    (steepest, -gnorm2)
                }
            }
            None => {
                step = (2.0 * step).clamp(STEP_MIN, STEP_MAX);
                (steepest, -gnorm2)
            }
        };
        let (pvals, pvecs) = herm_eig_faer(&dir);
        // exp(i t P) = V diag(exp(i t lambda)) V^dag
        let neg: Vec<f64> = pvals.iter().map(|v| -v).collect();
        let cur_v = &cur * &pvecs;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = rotate(&cur_v, &neg, &pvecs, t);
            // the accepted trial's eigenvectors feed the next gradient
            let trial_ev = evaluate(trial.as_ref(), d);
            if trial_ev.entropy <= ev.entropy + ARMIJO_C * t * slope {
                accepted = Some((trial, trial_ev));
                break;
            }
            t *= BACKTRACK;
        }
        let Some((trial, next)) = accepted else {
            if prev.is_some() {
                // retry once from steepest descent before giving up
                prev = None;
                continue;
            }
            converged = true;
            break;
        };
        let w_v = &w * &pvecs;
        w = rotate(&w_v, &neg, &pvecs, t);
        cur = trial;
        let delta = ev.entropy - next.entropy;
        ev = next;
        step = t;
        prev = Some((grad, dir, slope));
        if delta < opts.conv_tol {
            small_changes += 1;
            if small_changes >= 2 {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    Descent { w: from_faer(w.as_ref()), entropy: ev.entropy, iterations, converged }
}

/// Initial unitary for a restart: the identity for restart 0, otherwise
/// `exp(i H)` with a seeded Gaussian Hermitian `H`.
fn initial_unitary(n: usize, seed: u64, index: usize) -> CMatrix {
    if index == 0 {
        return identity(n);
    }
    let mut rng = stream_rng(seed, streams::RESTART_BASE + index as u64);
    crate::linalg::expm_i_herm(&random_hermitian(&mut rng, n))
}

fn run_restart(psi: &CMatrix, d: usize, opts: &OptimizerOptions, index: usize) -> Descent {
    descend(psi, d, initial_unitary(d * d, opts.seed, index), opts)
}

/// Ranks of the optimized purification: `d_min` from the `Bbar` marginal,
/// `d_R_total` from the `B1 Bbar1` marginal (equivalently `B Bbar`), and the
/// `Bbar Bbar1` marginal rank as a cross-check against `rank(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SchmidtRanks {
    pub d_min: usize,
    pub d_r_total: usize,
    pub cross_check: usize,
}

pub fn schmidt_ranks(psi: &CMatrix, d: usize, rank_tol: f64) -> SchmidtRanks {
    // (Psi^dag Psi)^T is the Bbar Bbar1 marginal; transposition keeps ranks.
    let bar = psi.adjoint() * psi;
    let bar_only = partial_trace(&bar, DimPair::new(d, d), Side::B).expect("square purification");
    let ev = evaluate(to_faer(psi).as_ref(), d);
    SchmidtRanks {
        d_min: crate::linalg::psd_rank(&bar_only, rank_tol),
        d_r_total: spectrum_rank(&ev.values, rank_tol),
        cross_check: crate::linalg::psd_rank(&bar, rank_tol),
    }
}

/// Minimize `S(B Bbar)` over unitaries on `Bbar Bbar1` from `opts.restarts`
/// starting points. Restarts are independent and merged by lowest entropy with
/// ties going to the lower index.
pub fn minimize_entropy(psi: &CMatrix, d: usize, opts: &OptimizerOptions, rank_tol: f64) -> Result<OptimizationResult> {
    if psi.nrows() != d * d || psi.ncols() != d * d {
        return Err(Error::Dimension(format!("purification must be {0}x{0}", d * d)));
    }
    let norm = frobenius(psi);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Invalid(format!("purification has norm {norm}")));
    }
    let restarts = opts.restarts.max(1);
    let runs = run_all(psi, d, opts, restarts);
    let mut best = 0;
    for (k, r) in runs.iter().enumerate() {
        if r.entropy < runs[best].entropy {
            best = k;
        }
    }
    let restarts_log: Vec<RestartOutcome> = runs
        .iter()
        .enumerate()
        .map(|(index, r)| RestartOutcome {
            index,
            entropy: r.entropy,
            iterations: r.iterations,
            converged: r.converged,
        })
        .collect();
    let w = runs[best].w.clone();
    let psi_opt = psi * &w;
    let ranks = schmidt_ranks(&psi_opt, d, rank_tol);
    Ok(OptimizationResult {
        u_opt: w.transpose(),
        entropy_min: runs[best].entropy,
        d_min: ranks.d_min,
        d_r_total: ranks.d_r_total,
        rank_check: ranks.cross_check,
        converged: runs.iter().any(|r| r.converged),
        restarts_log,
        best_restart: best,
        psi_opt,
    })
}

#[cfg(feature = "parallel")]
fn run_all(psi: &CMatrix, d: usize, opts: &OptimizerOptions, restarts: usize) -> Vec<Descent> {
    use rayon::prelude::*;
    (0..restarts).into_par_iter().map(|k| run_restart(psi, d, opts, k)).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(psi: &CMatrix, d: usize, opts: &OptimizerOptions, restarts: usize) -> Vec<Descent> {
    (0..restarts).map(|k| run_restart(psi, d, opts, k)).collect()
}

/// Entropy value predicted by the block structure:
/// `H({p_i}) + sum_i p_i ln dR_i` with `p_i = dL_i dR_i / d_B`.
pub fn predicted_entropy(d_l: &[usize], d_r: &[usize]) -> f64 {
    let d_b: usize = d_l.iter().zip(d_r).map(|(l, r)| l * r).sum();
    d_l.iter()
        .zip(d_r)
        .map(|(&l, &r)| {
            let p = (l * r) as f64 / d_b as f64;
            -p * p.ln() + p * (r as f64).ln()
        })
        .sum()
}
