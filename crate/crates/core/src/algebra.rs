//! Block structure of the redundancy algebra `range(P_V)` and the explicit
//! compression/recovery channels it induces.
//!
//! This route never looks at the entropy optimization; it is the independent
//! oracle that the optimizer's ranks are checked against.

use rand::Rng;
use serde::Serialize;

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{
    devectorize_col, frobenius, herm_eig_unchecked, hermitian_part, identity, kron, matrix_fn, max_abs, null_space,
    partial_trace, range_basis, select_columns, svd_rank, trace, trace_norm_herm, vectorize, CMatrix, DimPair,
    MatrixFn, Side, C64,
};
use crate::state::BipartiteState;
use crate::sufficiency::SufficiencyCore;

const MAX_RETRIES: usize = 8;

/// Orthonormal (Hilbert-Schmidt) basis of the span of `ops`; `tol` is relative
/// to the largest Gram eigenvalue.
pub fn span_basis(ops: &[CMatrix], tol: f64) -> Vec<CMatrix> {
    let Some(first) = ops.first() else { return vec![] };
    let (r, c) = first.shape();
    let mut m = CMatrix::zeros(r * c, ops.len());
    for (k, op) in ops.iter().enumerate() {
        m.set_column(k, &vectorize(op));
    }
    let gram = &m * m.adjoint();
    let cols = range_basis(&gram, tol);
    (0..cols.ncols()).map(|k| devectorize_col(&cols, k, r, c)).collect()
}

/// Orthonormal basis of `{X : [X, G] = 0 for all G in gens}` on `d x d` matrices.
pub fn commutant_basis(gens: &[CMatrix], d: usize, tol: f64) -> Vec<CMatrix> {
    let gens = span_basis(gens, 1e-12);
    if gens.is_empty() {
        let id = identity(d * d);
        return (0..d * d).map(|k| devectorize_col(&id, k, d, d)).collect();
    }
    let n = d * d;
    let mut sys = CMatrix::zeros(n * gens.len(), n);
    for (g, gen) in gens.iter().enumerate() {
        // vec(X G - G X) = (I (x) G^T - G (x) I) vec(X)
        let s = kron(&identity(d), &gen.transpose()) - kron(gen, &identity(d));
        sys.view_mut((g * n, 0), (n, n)).copy_from(&s);
    }
    let ns = null_space(&sys, tol);
    (0..ns.ncols()).map(|k| devectorize_col(&ns, k, d, d)).collect()
}

/// Devectorized orthonormal basis of `range(P_V)`, checked for closure under
/// adjoint and multiplication.
pub fn algebra_basis(pv: &CMatrix, d: usize, tol: f64) -> Result<Vec<CMatrix>> {
    if pv.nrows() != d * d {
        return Err(Error::Dimension(format!("P_V must be {0}x{0}", d * d)));
    }
    let cols = range_basis(pv, 0.5);
    let basis: Vec<CMatrix> = (0..cols.ncols()).map(|k| devectorize_col(&cols, k, d, d)).collect();
    let residual = |x: &CMatrix| -> f64 {
        let v = vectorize(x);
        let proj = &cols * (cols.adjoint() * &v);
        (v - proj).norm()
    };
    for (k, x) in basis.iter().enumerate() {
        let r = residual(&x.adjoint());
        if r > tol {
            return Err(Error::Numerical(format!(
                "P_V range not closed under adjoint (element {k}, residual {r:.3e})"
            )));
        }
    }
    for (k, x) in basis.iter().enumerate() {
        for (l, y) in basis.iter().enumerate() {
            let prod = x * y;
            let r = residual(&prod);
            if r > tol * (1.0 + frobenius(&prod)) {
                return Err(Error::Numerical(format!(
                    "P_V range not closed under products (elements {k},{l}, residual {r:.3e})"
                )));
            }
        }
    }
    Ok(basis)
}

/// One summand `H_L (x) H_R` of the decomposition of `H_B`.
#[derive(Debug, Clone, Serialize)]
pub struct KIBlock {
    #[serde(skip)]
    pub pi: CMatrix,
    pub d_l: usize,
    pub d_r: usize,
    /// Isometry `H_L (x) H_R -> H_B`, column index `l * d_r + r`.
    #[serde(skip)]
    pub u_iso: CMatrix,
    /// `tr(Pi rho_B)`.
    pub p: f64,
    #[serde(skip)]
    pub omega_r: CMatrix,
}

#[derive(Debug, Clone, Serialize)]
pub struct KIDecomposition {
    pub blocks: Vec<KIBlock>,
    pub d_min: usize,
    pub d_r_total: usize,
}

impl KIDecomposition {
    pub fn d_l_list(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.d_l).collect()
    }

    pub fn d_r_list(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.d_r).collect()
    }

    /// `sum dL^2`, which must equal `rank(C_BB1)`.
    pub fn sum_dl_squared(&self) -> usize {
        self.blocks.iter().map(|b| b.d_l * b.d_l).sum()
    }

    pub fn d_b(&self) -> usize {
        self.blocks.iter().map(|b| b.d_l * b.d_r).sum()
    }

    /// Fill in `p_i` and `omega_{R,i}` from the marginal `rho_B`.
    pub fn attach_marginal(&mut self, rho_b: &CMatrix) {
        for b in &mut self.blocks {
            let local = b.u_iso.adjoint() * rho_b * &b.u_iso;
            b.p = trace(&local).re;
            let omega = partial_trace(&local, DimPair::new(b.d_l, b.d_r), Side::A).expect("block dims");
            b.omega_r = if b.p > 0.0 { omega.unscale(b.p) } else { omega };
        }
    }

    /// `||rho_B - sum_i p_i U_i (sigma_{L,i} (x) omega_{R,i}) U_i^dag||_F`.
    pub fn marginal_residual(&self, rho_b: &CMatrix) -> f64 {
        let d = rho_b.nrows();
        let mut rebuilt = CMatrix::zeros(d, d);
        for b in &self.blocks {
            let local = b.u_iso.adjoint() * rho_b * &b.u_iso;
            let sigma = partial_trace(&local, DimPair::new(b.d_l, b.d_r), Side::B).expect("block dims");
            let sigma = if b.p > 0.0 { sigma.unscale(b.p) } else { sigma };
            rebuilt += (&b.u_iso * kron(&sigma, &b.omega_r) * b.u_iso.adjoint()).scale(b.p);
        }
        frobenius(&(rebuilt - rho_b))
    }

    /// Largest deviation of `U_i^dag X U_i` from the form `I_L (x) x`.
    pub fn product_form_residual(&self, basis: &[CMatrix]) -> f64 {
        let mut worst = 0.0f64;
        for b in &self.blocks {
            for x in basis {
                let local = b.u_iso.adjoint() * x * &b.u_iso;
                let dr = b.d_r;
                let first = local.view((0, 0), (dr, dr)).into_owned();
                for l in 0..b.d_l {
                    for lp in 0..b.d_l {
                        let blk = local.view((l * dr, lp * dr), (dr, dr)).into_owned();
                        let expect = if l == lp { first.clone() } else { CMatrix::zeros(dr, dr) };
                        worst = worst.max(max_abs(&(blk - expect)));
                    }
                }
            }
        }
        worst
    }
}

fn random_combination<R: Rng + ?Sized>(rng: &mut R, ops: &[CMatrix], complex: bool) -> CMatrix {
    let (r, c) = ops[0].shape();
    ops.iter().fold(CMatrix::zeros(r, c), |acc, x| {
        let re: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let im: f64 = if complex { rng.random::<f64>() * 2.0 - 1.0 } else { 0.0 };
        acc + x * C64::new(re, im)
    })
}

/// Split sorted values into exactly `k` clusters at the `k - 1` widest gaps.
/// Returns `None` unless every cut gap dominates the spread inside clusters.
fn split_widest_gaps(values: &[f64], k: usize) -> Option<Vec<std::ops::Range<usize>>> {
    let n = values.len();
    if k == 0 || k > n {
        return None;
    }
    let mut gaps: Vec<(f64, usize)> = (1..n).map(|i| (values[i] - values[i - 1], i)).collect();
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cuts: Vec<usize> = gaps.iter().take(k - 1).map(|g| g.1).collect();
    let min_cut = gaps.iter().take(k - 1).map(|g| g.0).fold(f64::INFINITY, f64::min);
    let max_inner = gaps.iter().skip(k - 1).map(|g| g.0).fold(0.0, f64::max);
    let spread = values[n - 1] - values[0];
    if k > 1 && (min_cut.is_nan() || min_cut <= 1e3 * max_inner.max(1e-14 * spread.max(1.0))) {
        return None;
    }
    if k == 1 && max_inner > 1e-6 * values.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
        return None;
    }
    cuts.sort();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for c in cuts {
        out.push(start..c);
        start = c;
    }
    out.push(start..n);
    Some(out)
}

/// Minimal central projections of the algebra spanned by `basis`.
fn central_projections<R: Rng + ?Sized>(basis: &[CMatrix], d: usize, rng: &mut R) -> Option<Vec<CMatrix>> {
    // The algebra is generated by a few generic elements; the center is the part
    // of the span commuting with them.
    let gens: Vec<CMatrix> = (0..3).map(|_| random_combination(rng, basis, true)).collect();
    let n = basis.len();
    let dd = d * d;
    let mut sys = CMatrix::zeros(dd * gens.len(), n);
    for (g, gen) in gens.iter().enumerate() {
        for (k, x) in basis.iter().enumerate() {
            let c = crate::linalg::commutator(x, gen);
            let v = vectorize(&c);
            sys.view_mut((g * dd, k), (dd, 1)).copy_from(&v);
        }
    }
    let coeffs = null_space(&sys, 1e-8);
    let k = coeffs.ncols();
    if k == 0 {
        return None;
    }
    let center: Vec<CMatrix> = (0..k)
        .map(|c| basis.iter().enumerate().fold(CMatrix::zeros(d, d), |acc, (j, x)| acc + x * coeffs[(j, c)]))
        .collect();
    let z = hermitian_part(&random_combination(rng, &center, true));
    let eig = herm_eig_unchecked(&z);
    let groups = split_widest_gaps(&eig.values, k)?;
    Some(
        groups
            .into_iter()
            .map(|g| {
                let idx: Vec<usize> = g.collect();
                let cols = select_columns(&eig.vectors, &idx);
                &cols * cols.adjoint()
            })
            .collect(),
    )
}

/// Matrix-unit synthesis inside one central block.
fn block_isometry<R: Rng + ?Sized>(basis: &[CMatrix], pi: &CMatrix, rng: &mut R) -> Option<KIBlock> {
    let d = pi.nrows();
    let w = range_basis(pi, 0.5);
    let rank = w.ncols();
    let local: Vec<CMatrix> = basis.iter().map(|x| w.adjoint() * x * &w).collect();
    let mut m = CMatrix::zeros(rank * rank, local.len());
    for (k, x) in local.iter().enumerate() {
        m.set_column(k, &vectorize(x));
    }
    let dim = svd_rank(&m, 1e-8);
    let d_r = (dim as f64).sqrt().round() as usize;
    if d_r == 0 || d_r * d_r != dim || !rank.is_multiple_of(d_r) {
        return None;
    }
    let d_l = rank / d_r;
    let y = hermitian_part(&random_combination(rng, &local, true));
    let eig = herm_eig_unchecked(&y);
    let groups = split_widest_gaps(&eig.values, d_r)?;
    if groups.iter().any(|g| g.len() != d_l) {
        return None;
    }
    let proj: Vec<CMatrix> = groups.into_iter().map(|g| select_columns(&eig.vectors, &g.collect::<Vec<_>>())).collect();
    let z = random_combination(rng, &local, true);
    let mut u_iso = CMatrix::zeros(d, rank);
    for (j, gj) in proj.iter().enumerate() {
        let unitary = if j == 0 {
            identity(d_l)
        } else {
            let mj = gj.adjoint() * &z * &proj[0];
            let svd = mj.svd(true, true);
            let smin = svd.singular_values.iter().fold(f64::INFINITY, |a, &s| a.min(s));
            if smin < 1e-6 {
                return None;
            }
            svd.u.unwrap() * svd.v_t.unwrap()
        };
        let cols = &w * gj * unitary;
        for l in 0..d_l {
            u_iso.set_column(l * d_r + j, &cols.column(l));
        }
    }
    Some(KIBlock { pi: pi.clone(), d_l, d_r, u_iso, p: 0.0, omega_r: CMatrix::zeros(d_r, d_r) })
}

/// Wedderburn decomposition of a unital *-algebra given by an orthonormal basis.
pub fn block_structure<R: Rng + ?Sized>(basis: &[CMatrix], d: usize, rng: &mut R) -> Result<KIDecomposition> {
    if basis.is_empty() {
        return Err(Error::Invalid("empty algebra basis".into()));
    }
    'retry: for _ in 0..MAX_RETRIES {
        let Some(projs) = central_projections(basis, d, rng) else { continue };
        let mut blocks = Vec::with_capacity(projs.len());
        for pi in &projs {
            match block_isometry(basis, pi, rng) {
                Some(b) => blocks.push(b),
                None => continue 'retry,
            }
        }
        // deterministic order given the draws: larger multiplicity spaces first
        blocks.sort_by(|a, b| {
            (b.d_l, b.d_r).cmp(&(a.d_l, a.d_r)).then_with(|| first_support(&a.pi).cmp(&first_support(&b.pi)))
        });
        let dec = KIDecomposition {
            d_min: blocks.iter().map(|b| b.d_l).sum(),
            d_r_total: blocks.iter().map(|b| b.d_r).sum(),
            blocks,
        };
        if dec.d_b() != d {
            continue;
        }
        if dec.product_form_residual(basis) > 1e-8 {
            continue;
        }
        return Ok(dec);
    }
    Err(Error::Numerical(format!(
        "block decomposition failed after {MAX_RETRIES} random central elements (non-integer block sizes)"
    )))
}

fn first_support(pi: &CMatrix) -> usize {
    (0..pi.nrows()).find(|&i| pi[(i, i)].re > 1e-6).unwrap_or(usize::MAX)
}

/// Compression and recovery channels as Kraus lists, with the round-trip error.
#[derive(Debug, Clone)]
pub struct CompressionPair {
    /// `d_Btilde x d_B` operators.
    pub e_kraus: Vec<CMatrix>,
    /// `d_B x d_Btilde` operators.
    pub r_kraus: Vec<CMatrix>,
    pub d_btilde: usize,
    /// `||(R o E (x) id)(rho_AB) - rho_AB||_1`.
    pub roundtrip_error: f64,
}

/// Apply a channel on the `B` factor: `sum_k (I (x) K) rho (I (x) K)^dag`.
pub fn apply_on_b(rho: &CMatrix, da: usize, kraus: &[CMatrix]) -> CMatrix {
    let out = kraus.first().map(|k| k.nrows()).unwrap_or(0);
    let id = identity(da);
    kraus.iter().fold(CMatrix::zeros(da * out, da * out), |acc, k| {
        let big = kron(&id, k);
        acc + &big * rho * big.adjoint()
    })
}

pub fn apply_channel(x: &CMatrix, kraus: &[CMatrix]) -> CMatrix {
    let out = kraus.first().map(|k| k.nrows()).unwrap_or(0);
    kraus.iter().fold(CMatrix::zeros(out, out), |acc, k| acc + k * x * k.adjoint())
}

pub fn tp_residual(kraus: &[CMatrix]) -> f64 {
    let n = kraus.first().map(|k| k.ncols()).unwrap_or(0);
    let sum = kraus.iter().fold(CMatrix::zeros(n, n), |acc, k| acc + k.adjoint() * k);
    max_abs(&(sum - identity(n)))
}

/// `E(X) = (+)_i tr_R(U_i^dag X U_i)` into `(+)_i H_{L,i}` and
/// `R(Y) = sum_i U_i (Y_i (x) omega_{R,i}) U_i^dag`.
pub fn synthesize_compression(state: &BipartiteState, ki: &KIDecomposition) -> Result<CompressionPair> {
    let d_b = state.dims.db;
    let d_t = ki.d_min;
    let mut e_kraus = Vec::new();
    let mut r_kraus = Vec::new();
    let mut offset = 0;
    for (i, b) in ki.blocks.iter().enumerate() {
        if b.p.is_nan() || b.p <= 0.0 {
            return Err(Error::Numerical(format!("block {i} carries zero weight")));
        }
        let omega_eig = herm_eig_unchecked(&b.omega_r);
        for r in 0..b.d_r {
            // (I_L (x) <r|) U^dag, placed at rows offset..offset+dL
            let mut e = CMatrix::zeros(d_t, d_b);
            for l in 0..b.d_l {
                let col = b.u_iso.column(l * b.d_r + r);
                for x in 0..d_b {
                    e[(offset + l, x)] = col[x].conj();
                }
            }
            e_kraus.push(e);
        }
        for s in 0..b.d_r {
            let lambda = omega_eig.values[s];
            if lambda <= 1e-15 {
                continue;
            }
            let ws = omega_eig.vectors.column(s);
            // sqrt(lambda) U (I_L (x) |w_s>) <L_i|
            let mut rk = CMatrix::zeros(d_b, d_t);
            for l in 0..b.d_l {
                let mut v = crate::linalg::CVector::zeros(d_b);
                for r in 0..b.d_r {
                    v += b.u_iso.column(l * b.d_r + r) * ws[r];
                }
                rk.set_column(offset + l, &(v * C64::new(lambda.sqrt(), 0.0)));
            }
            r_kraus.push(rk);
        }
        offset += b.d_l;
    }
    let roundtrip = apply_on_b(&apply_on_b(&state.rho, state.dims.da, &e_kraus), state.dims.da, &r_kraus);
    let roundtrip_error = trace_norm_herm(&hermitian_part(&(roundtrip - &state.rho)));
    Ok(CompressionPair { e_kraus, r_kraus, d_btilde: d_t, roundtrip_error })
}

/// Lift a compression pair from the restricted `H_B` to the original input
/// space, completing the compression on the orthogonal complement of the
/// support so it stays trace preserving.
pub fn lift_to_original(pair: &CompressionPair, iso_b: &CMatrix) -> CompressionPair {
    let d_orig = iso_b.nrows();
    let mut e_kraus: Vec<CMatrix> = pair.e_kraus.iter().map(|e| e * iso_b.adjoint()).collect();
    if iso_b.ncols() < d_orig {
        let complement = identity(d_orig) - iso_b * iso_b.adjoint();
        let comp_basis = range_basis(&complement, 0.5);
        for c in 0..comp_basis.ncols() {
            let mut e = CMatrix::zeros(pair.d_btilde, d_orig);
            let col = comp_basis.column(c);
            for x in 0..d_orig {
                e[(0, x)] = col[x].conj();
            }
            e_kraus.push(e);
        }
    }
    let r_kraus = pair.r_kraus.iter().map(|r| iso_b * r).collect();
    CompressionPair { e_kraus, r_kraus, d_btilde: pair.d_btilde, roundtrip_error: pair.roundtrip_error }
}

/// Petz recovery of `E` with respect to `rho_B`, applied after `E`, on the
/// full bipartite state; returns the trace-norm error.
pub fn petz_roundtrip_error(state: &BipartiteState, pair: &CompressionPair, rank_tol: f64) -> Result<f64> {
    let rho_b = state.rho_b();
    let e_rho = apply_channel(&rho_b, &pair.e_kraus);
    let inv_sqrt = matrix_fn(&e_rho, MatrixFn::InvSqrt, rank_tol)?;
    let sqrt_rho = matrix_fn(&rho_b, MatrixFn::Sqrt, rank_tol)?;
    // R(Y) = rho^1/2 E^dag(E(rho)^-1/2 Y E(rho)^-1/2) rho^1/2 has Kraus rho^1/2 K^dag E(rho)^-1/2
    let petz: Vec<CMatrix> = pair.e_kraus.iter().map(|k| &sqrt_rho * k.adjoint() * &inv_sqrt).collect();
    let compressed = apply_on_b(&state.rho, state.dims.da, &pair.e_kraus);
    let back = apply_on_b(&compressed, state.dims.da, &petz);
    Ok(trace_norm_herm(&hermitian_part(&(back - &state.rho))))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub d_min: usize,
    pub d_r_total: usize,
    pub d_l_list: Vec<usize>,
    pub d_r_list: Vec<usize>,
}

/// Full decomposition of a state's redundancy algebra with block weights attached.
pub fn decompose<R: Rng + ?Sized>(
    state: &BipartiteState,
    core: &SufficiencyCore,
    tol: &Tolerances,
    rng: &mut R,
) -> Result<(Vec<CMatrix>, KIDecomposition)> {
    let _ = tol;
    let d = state.dims.db;
    let basis = algebra_basis(&core.pv, d, 1e-7)?;
    let mut ki = block_structure(&basis, d, rng)?;
    ki.attach_marginal(&state.rho_b());
    Ok((basis, ki))
}

pub fn oracle_dmin<R: Rng + ?Sized>(state: &BipartiteState, tol: &Tolerances, rng: &mut R) -> Result<OracleResult> {
    let core = SufficiencyCore::build(state, tol)?;
    let (_, ki) = decompose(state, &core, tol, rng)?;
    Ok(OracleResult { d_min: ki.d_min, d_r_total: ki.d_r_total, d_l_list: ki.d_l_list(), d_r_list: ki.d_r_list() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_density;
    use crate::state::{make_classical, make_planted, make_pure, validate_and_restrict, PlantBlock};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full_basis(d: usize) -> Vec<CMatrix> {
        let id = identity(d * d);
        (0..d * d).map(|k| devectorize_col(&id, k, d, d)).collect()
    }

    #[test]
    fn trivial_algebra_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let basis = vec![identity(3).unscale(3f64.sqrt())];
        let ki = block_structure(&basis, 3, &mut rng).unwrap();
        assert_eq!(ki.blocks.len(), 1);
        assert_eq!((ki.blocks[0].d_l, ki.blocks[0].d_r), (3, 1));
        assert_eq!(ki.d_min, 3);
    }

    #[test]
    fn full_algebra_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let ki = block_structure(&full_basis(3), 3, &mut rng).unwrap();
        assert_eq!((ki.blocks[0].d_l, ki.blocks[0].d_r), (1, 3));
        assert_eq!(ki.d_min, 1);
    }

    #[test]
    fn algebra_basis_cases() {
        let vi = vectorize(&identity(2));
        let pv = (&vi * vi.adjoint()).unscale(2.0);
        let b = algebra_basis(&pv, 2, 1e-9).unwrap();
        assert_eq!(b.len(), 1);
        // not an algebra: span{I, X}-like projector onto a single off-diagonal unit
        let mut e01 = CMatrix::zeros(2, 2);
        e01[(0, 1)] = C64::new(1.0, 0.0);
        let v = vectorize(&e01);
        assert!(algebra_basis(&(&v * v.adjoint()), 2, 1e-9).is_err());
    }

    #[test]
    fn classical_classes_give_unit_multiplicity_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        // classes {0,2} and {1}; conditionals for column 0 and 2 agree
        let p = vec![vec![0.1, 0.2, 0.1], vec![0.2, 0.1, 0.2], vec![0.0, 0.1, 0.0]];
        let s = make_classical(&p, 1e-9).unwrap();
        let core = SufficiencyCore::build(&s, &Tolerances::default()).unwrap();
        let (basis, ki) = decompose(&s, &core, &Tolerances::default(), &mut rng).unwrap();
        assert_eq!(basis.len(), 5);
        assert_eq!(ki.d_l_list(), vec![1, 1]);
        let mut dr = ki.d_r_list();
        dr.sort();
        assert_eq!(dr, vec![1, 2]);
        assert_eq!(ki.d_min, 2);
        let pair = synthesize_compression(&s, &ki).unwrap();
        assert_eq!(pair.d_btilde, 2);
        assert!(pair.roundtrip_error < 1e-8);
    }

    #[test]
    fn bell_is_incompressible() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let s = make_pure(&identity(2).scale(0.5f64.sqrt()), 1e-9).unwrap();
        let r = oracle_dmin(&s, &Tolerances::default(), &mut rng).unwrap();
        assert_eq!(r.d_min, 2);
        assert_eq!(r.d_r_total, 1);
        let core = SufficiencyCore::build(&s, &Tolerances::default()).unwrap();
        let (_, ki) = decompose(&s, &core, &Tolerances::default(), &mut rng).unwrap();
        let pair = synthesize_compression(&s, &ki).unwrap();
        assert_eq!(pair.d_btilde, 2);
        assert!(pair.roundtrip_error < 1e-10);
        assert!(tp_residual(&pair.e_kraus) < 1e-10);
        assert!(tp_residual(&pair.r_kraus) < 1e-10);
    }

    #[test]
    fn schmidt_rank_three_pure_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let c = CMatrix::from_diagonal(&crate::linalg::CVector::from_vec(vec![
            C64::new(0.5f64.sqrt(), 0.0),
            C64::new(0.3f64.sqrt(), 0.0),
            C64::new(0.2f64.sqrt(), 0.0),
        ]));
        let s = make_pure(&c, 1e-9).unwrap();
        assert_eq!(oracle_dmin(&s, &Tolerances::default(), &mut rng).unwrap().d_min, 3);
    }

    #[test]
    fn product_state_compresses_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let ra = random_density(&mut rng, 2, 2);
        let rb = random_density(&mut rng, 3, 3);
        let s = validate_and_restrict(&kron(&ra, &rb), DimPair::new(2, 3), 1e-9).unwrap();
        let r = oracle_dmin(&s, &Tolerances::default(), &mut rng).unwrap();
        assert_eq!((r.d_min, r.d_r_total), (1, 3));
    }

    fn planted(rng: &mut ChaCha8Rng, spec: &[(usize, usize, f64)], da: usize) -> crate::state::PlantedState {
        let blocks: Vec<PlantBlock> = spec
            .iter()
            .map(|&(dl, dr, w)| PlantBlock {
                d_l: dl,
                sigma_al: random_density(rng, da * dl, da * dl),
                omega_r: random_density(rng, dr, dr),
                weight: w,
            })
            .collect();
        make_planted(&blocks, 1e-9).unwrap()
    }

    #[test]
    fn planted_three_block_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let p = planted(&mut rng, &[(1, 1, 0.2), (2, 1, 0.5), (1, 2, 0.3)], 2);
        let tol = Tolerances::default();
        let core = SufficiencyCore::build(&p.state, &tol).unwrap();
        let (basis, ki) = decompose(&p.state, &core, &tol, &mut rng).unwrap();
        assert_eq!(ki.d_min, 4);
        assert_eq!(ki.d_r_total, 4);
        assert_eq!(ki.sum_dl_squared(), 6);
        assert!(ki.product_form_residual(&basis) < 1e-8);
        assert!(ki.marginal_residual(&p.state.rho_b()) < 1e-8);
        let pair = synthesize_compression(&p.state, &ki).unwrap();
        assert!(pair.roundtrip_error < 1e-8);
        assert!(tp_residual(&pair.e_kraus) < 1e-9 && tp_residual(&pair.r_kraus) < 1e-9);
        assert!(petz_roundtrip_error(&p.state, &pair, 1e-9).unwrap() < 1e-8);
        // central projections are orthogonal and resolve the identity
        let sum = ki.blocks.iter().fold(CMatrix::zeros(5, 5), |acc, b| acc + &b.pi);
        assert!(max_abs(&(sum - identity(5))) < 1e-8);
    }

    #[test]
    fn planted_single_block_reattaches_omega() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let p = planted(&mut rng, &[(2, 2, 1.0)], 2);
        let tol = Tolerances::default();
        let core = SufficiencyCore::build(&p.state, &tol).unwrap();
        let (_, ki) = decompose(&p.state, &core, &tol, &mut rng).unwrap();
        assert_eq!((ki.blocks[0].d_l, ki.blocks[0].d_r), (2, 2));
        let pair = synthesize_compression(&p.state, &ki).unwrap();
        assert_eq!(pair.d_btilde, 2);
        assert!(pair.roundtrip_error < 1e-8);
    }

    #[test]
    fn commutant_of_identity_and_of_full_algebra() {
        assert_eq!(commutant_basis(&[identity(3)], 3, 1e-9).len(), 9);
        assert_eq!(commutant_basis(&full_basis(3), 3, 1e-9).len(), 1);
    }

    #[test]
    fn lifted_pair_is_trace_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        // B support of rank 2 inside dB = 3, product with A
        let ra = random_density(&mut rng, 2, 2);
        let mut rb = CMatrix::zeros(3, 3);
        rb.view_mut((0, 0), (2, 2)).copy_from(&random_density(&mut rng, 2, 2));
        let raw = kron(&ra, &rb);
        let s = validate_and_restrict(&raw, DimPair::new(2, 3), 1e-9).unwrap();
        assert_eq!(s.dims.db, 2);
        let tol = Tolerances::default();
        let core = SufficiencyCore::build(&s, &tol).unwrap();
        let (_, ki) = decompose(&s, &core, &tol, &mut rng).unwrap();
        let pair = lift_to_original(&synthesize_compression(&s, &ki).unwrap(), &s.iso_b);
        assert!(tp_residual(&pair.e_kraus) < 1e-10);
        let back = apply_on_b(&apply_on_b(&raw, 2, &pair.e_kraus), 2, &pair.r_kraus);
        assert!(trace_norm_herm(&hermitian_part(&(back - raw))) < 1e-8);
    }
}
