//! Derived operators of a bipartite state: the normalized operator `J_AB`,
//! its orthogonal Kraus set, the superoperators of the fixed-point channel
//! `T` and of the modular generator, and the projection `P_V` onto the
//! vectorized redundancy algebra.

use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::linalg::{
    cluster_sorted, commutator, devectorize_col, frobenius, herm_eig_unchecked, hermitian_deviation, identity, kron,
    matrix_fn, max_abs, partial_trace, select_columns, CMatrix, DimPair, MatrixFn, Side, C64,
};
use crate::state::BipartiteState;

/// One Kraus operator `K_i` (a `dA x dB` matrix, mapping `H_B -> H_A`) of the
/// unital map `Omega^dag(X) = sum_i K_i^dag X K_i`, with `tr(K_i^dag K_i) = omega_i`.
#[derive(Debug, Clone)]
pub struct KrausTerm {
    pub k: CMatrix,
    pub omega: f64,
}

/// An eigenspace of the modular generator `RL`.
#[derive(Debug, Clone)]
pub struct ModularBlock {
    pub eta: f64,
    /// Orthonormal columns spanning the eigenspace (vectorized operators).
    pub basis: CMatrix,
}

#[derive(Debug, Clone)]
pub struct SufficiencyCore {
    pub dims: DimPair,
    pub j: CMatrix,
    pub kraus: Vec<KrausTerm>,
    /// Diagonal of `O_E = Omega_{B->E}(I_B)`.
    pub o_e: Vec<f64>,
    pub e_t: CMatrix,
    pub rl: CMatrix,
    pub p1: CMatrix,
    pub p1_basis: CMatrix,
    pub q_list: Vec<ModularBlock>,
    pub pv: CMatrix,
    pub pv_basis: CMatrix,
    pub diagnostics: CoreDiagnostics,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct CoreDiagnostics {
    /// `||E_T(Kraus of Omega~) - E_T(F_a^dag O_E^{-1/2} F_b)||_F`.
    pub kraus_route_residual: f64,
    /// `||P_V(Anderson) - P_V(SVD intersection)||_F`.
    pub pv_route_residual: f64,
    /// `max |tr(K_i^dag K_j) - omega_i delta_ij|`.
    pub orthogonality_residual: f64,
    /// Off-diagonal magnitude of `O_E` in the eigenbasis of `J`.
    pub o_e_offdiag: f64,
}

pub fn build_j(state: &BipartiteState, rank_tol: f64) -> Result<CMatrix> {
    let rho_b = state.rho_b();
    let eig = herm_eig_unchecked(&rho_b);
    let min = eig.values.first().copied().unwrap_or(0.0);
    if min <= rank_tol * eig.max_abs() {
        return Err(Error::Numerical(format!("rho_B is numerically singular (min eigenvalue {min:.3e})")));
    }
    let inv_sqrt = eig.apply(|x| 1.0 / x.sqrt());
    let s = kron(&identity(state.dims.da), &inv_sqrt);
    Ok(crate::linalg::hermitian_part(&(&s * &state.rho * &s)))
}

/// Eigen-decompose `J` into orthogonal Kraus operators, largest weight first.
pub fn extract_kraus(j: &CMatrix, dims: DimPair, rank_tol: f64) -> Vec<KrausTerm> {
    let eig = herm_eig_unchecked(j);
    let thr = rank_tol * eig.max_abs();
    let n = eig.values.len();
    (0..n)
        .rev()
        .filter(|&i| eig.values[i] > thr)
        .map(|i| {
            let omega = eig.values[i];
            // K = sqrt(omega) conj(devec(v)) so that K^dag X K = omega V^T X conj(V)
            let v = devectorize_col(&eig.vectors, i, dims.da, dims.db);
            KrausTerm { k: v.map(|z| z.conj()).scale(omega.sqrt()), omega }
        })
        .collect()
}

/// `Omega^dag(X) = sum_i K_i^dag X K_i`.
pub fn apply_omega_dagger(kraus: &[KrausTerm], x: &CMatrix) -> CMatrix {
    let db = kraus.first().map(|t| t.k.ncols()).unwrap_or(0);
    kraus.iter().fold(CMatrix::zeros(db, db), |acc, t| acc + t.k.adjoint() * x * &t.k)
}

/// `Omega~^dag(X) = sum_i omega_i^{-1/2} K_i^dag X K_i` (CP, not unital).
pub fn apply_omega_tilde(kraus: &[KrausTerm], x: &CMatrix) -> CMatrix {
    let db = kraus.first().map(|t| t.k.ncols()).unwrap_or(0);
    kraus.iter().fold(CMatrix::zeros(db, db), |acc, t| acc + (t.k.adjoint() * x * &t.k).unscale(t.omega.sqrt()))
}

/// Operator `sum_{a,a'} |a><a'| (x) f(|a><a'|)`, the representation in which
/// `f(X) = tr_A(J (X^T (x) I))`.
pub fn choi_of_map(da: usize, db: usize, f: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(da * db, da * db);
    for a in 0..da {
        for ap in 0..da {
            let mut e = CMatrix::zeros(da, da);
            e[(a, ap)] = C64::new(1.0, 0.0);
            let img = f(&e);
            out.view_mut((a * db, ap * db), (db, db)).copy_from(&img);
        }
    }
    out
}

fn unit(da: usize, a: usize, b: usize) -> CMatrix {
    let mut e = CMatrix::zeros(da, da);
    e[(a, b)] = C64::new(1.0, 0.0);
    e
}

/// Kraus operators `T_(a,b) = Omega~^dag(|a><b|)` of the fixed-point channel.
pub fn t_kraus(kraus: &[KrausTerm], da: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(da * da);
    for a in 0..da {
        for b in 0..da {
            out.push(apply_omega_tilde(kraus, &unit(da, a, b)));
        }
    }
    out
}

fn superop_from_kraus(ops: &[CMatrix]) -> CMatrix {
    let n = ops.first().map(|t| t.nrows()).unwrap_or(0);
    ops.iter().fold(CMatrix::zeros(n * n, n * n), |acc, t| acc + kron(t, &t.map(|z| z.conj())))
}

/// `E_T = sum_{a,b} Omega~^dag(|a><b|) (x) conj(Omega~^dag(|a><b|))`.
pub fn build_et(kraus: &[KrausTerm], dims: DimPair) -> CMatrix {
    superop_from_kraus(&t_kraus(kraus, dims.da))
}

/// Second route to `E_T`: through the complementary channel `Omega_{B->E}`
/// with Kraus operators `F_a = sum_i |phi_i><a| K_i` and `T_(a,b) = F_a^dag O_E^{-1/2} F_b`.
///
/// Returns `(E_T, O_E)`.
pub fn build_et_via_environment(kraus: &[KrausTerm], dims: DimPair, rank_tol: f64) -> Result<(CMatrix, CMatrix)> {
    let de = kraus.len();
    let (da, db) = (dims.da, dims.db);
    let f: Vec<CMatrix> = (0..da).map(|a| CMatrix::from_fn(de, db, |i, b| kraus[i].k[(a, b)])).collect();
    let o_e = f.iter().fold(CMatrix::zeros(de, de), |acc, fa| acc + fa * fa.adjoint());
    let o_inv_sqrt = matrix_fn(&o_e, MatrixFn::InvSqrt, rank_tol)?;
    let mut ops = Vec::with_capacity(da * da);
    for fa in &f {
        for fb in &f {
            ops.push(fa.adjoint() * &o_inv_sqrt * fb);
        }
    }
    Ok((superop_from_kraus(&ops), o_e))
}

/// `RL = I (x) log(rho)^T - log(rho) (x) I`, the superoperator of `X -> [X, log rho]`.
pub fn build_rl(rho_b: &CMatrix, rank_tol: f64) -> Result<CMatrix> {
    let eig = herm_eig_unchecked(rho_b);
    if eig.values.first().copied().unwrap_or(0.0) <= rank_tol * eig.max_abs() {
        return Err(Error::Numerical("modular generator needs a full-rank rho_B".into()));
    }
    let log = matrix_fn(rho_b, MatrixFn::Log, rank_tol)?;
    let d = rho_b.nrows();
    Ok(kron(&identity(d), &log.transpose()) - kron(&log, &identity(d)))
}

/// Eigenspaces of `RL`, built from the spectrum of `rho_B`: the vector
/// `w_j (x) conj(w_k)` has eigenvalue `ln mu_k - ln mu_j`.
pub fn modular_blocks(rho_b: &CMatrix, group_tol: f64) -> Vec<ModularBlock> {
    let eig = herm_eig_unchecked(rho_b);
    let d = eig.values.len();
    let logs: Vec<f64> = eig.values.iter().map(|&m| m.ln()).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(d * d);
    for j in 0..d {
        for k in 0..d {
            pairs.push((logs[k] - logs[j], j, k));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let etas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let scale = etas.iter().fold(1.0f64, |m, e| m.max(e.abs()));
    cluster_sorted(&etas, group_tol * scale)
        .into_iter()
        .map(|range| {
            let members = &pairs[range.clone()];
            let eta = members.iter().map(|p| p.0).sum::<f64>() / members.len() as f64;
            let mut basis = CMatrix::zeros(d * d, members.len());
            for (c, &(_, j, k)) in members.iter().enumerate() {
                let wj = eig.vectors.column(j);
                let wk = eig.vectors.column(k);
                for x in 0..d {
                    for y in 0..d {
                        basis[(x * d + y, c)] = wj[x] * wk[y].conj();
                    }
                }
            }
            ModularBlock { eta, basis }
        })
        .collect()
}

/// Orthonormal basis of the eigenvalue-1 space of `E_T`.
pub fn fixed_space(e_t: &CMatrix, fix_tol: f64) -> CMatrix {
    let eig = herm_eig_unchecked(e_t);
    eig.columns_where(|x| x >= 1.0 - fix_tol)
}

/// Basis of `range(A) ∩ range(B)` for orthonormal column sets.
pub fn intersect_ranges(a: &CMatrix, b: &CMatrix, intersect_tol: f64) -> CMatrix {
    if a.ncols() == 0 || b.ncols() == 0 {
        return CMatrix::zeros(a.nrows(), 0);
    }
    let overlap = a.adjoint() * b;
    let svd = overlap.svd(true, false);
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] >= 1.0 - intersect_tol).collect();
    a * select_columns(&u, &keep)
}

/// `P_V` by the parallel-sum formula `2 sum_eta Q_eta (Q_eta + P_1)^+ P_1`.
pub fn pv_anderson(q_list: &[ModularBlock], p1: &CMatrix, rank_tol: f64) -> Result<CMatrix> {
    let n = p1.nrows();
    let mut pv = CMatrix::zeros(n, n);
    for q in q_list {
        let qp = &q.basis * q.basis.adjoint();
        let sum = &qp + p1;
        let inv = matrix_fn(&sum, MatrixFn::Pinv, rank_tol)?;
        pv += (&qp * inv * p1).scale(2.0);
    }
    Ok(pv)
}

/// `P_V` from explicit intersections `range(Q_eta) ∩ range(P_1)`; returns `(P_V, basis)`.
pub fn pv_intersection(q_list: &[ModularBlock], p1_basis: &CMatrix, intersect_tol: f64) -> (CMatrix, CMatrix) {
    let n = p1_basis.nrows();
    let mut cols: Vec<CMatrix> = Vec::new();
    for q in q_list {
        let v = intersect_ranges(&q.basis, p1_basis, intersect_tol);
        if v.ncols() > 0 {
            cols.push(v);
        }
    }
    let k: usize = cols.iter().map(|c| c.ncols()).sum();
    let mut basis = CMatrix::zeros(n, k);
    let mut at = 0;
    for c in cols {
        basis.view_mut((0, at), (n, c.ncols())).copy_from(&c);
        at += c.ncols();
    }
    (&basis * basis.adjoint(), basis)
}

/// Both routes to `P_V`; errors if they disagree beyond `agree_tol`.
pub fn project_pv(
    q_list: &[ModularBlock],
    p1: &CMatrix,
    p1_basis: &CMatrix,
    tol: &Tolerances,
) -> Result<(CMatrix, CMatrix, f64)> {
    let anderson = pv_anderson(q_list, p1, tol.rank_tol)?;
    let (pv, basis) = pv_intersection(q_list, p1_basis, tol.intersect_tol);
    let gap = frobenius(&(&anderson - &pv));
    if gap > tol.agree_tol {
        return Err(Error::Numerical(format!(
            "P_V routes disagree by {gap:.3e} (Anderson vs SVD intersection); try a different --group-tol"
        )));
    }
    Ok((pv, basis, gap))
}

/// True iff the fixed-point algebra of `T` is non-abelian. A `false` answer
/// certifies that no nontrivial exact compression exists.
pub fn screen_nonabelian(e_t: &CMatrix, fix_tol: f64, comm_tol: f64) -> bool {
    let basis = fixed_space(e_t, fix_tol);
    let d = (e_t.nrows() as f64).sqrt().round() as usize;
    let ops: Vec<CMatrix> = (0..basis.ncols()).map(|c| devectorize_col(&basis, c, d, d)).collect();
    for i in 0..ops.len() {
        for j in (i + 1)..ops.len() {
            if max_abs(&commutator(&ops[i], &ops[j])) > comm_tol {
                return true;
            }
        }
    }
    false
}

impl SufficiencyCore {
    pub fn build(state: &BipartiteState, tol: &Tolerances) -> Result<Self> {
        let dims = state.dims;
        let j = build_j(state, tol.rank_tol)?;
        let kraus = extract_kraus(&j, dims, tol.rank_tol);
        let e_t = build_et(&kraus, dims);
        let (e_t_env, o_e_full) = build_et_via_environment(&kraus, dims, tol.rank_tol)?;
        let o_e: Vec<f64> = (0..o_e_full.nrows()).map(|i| o_e_full[(i, i)].re).collect();
        let o_e_offdiag = {
            let mut off = o_e_full.clone();
            off.fill_diagonal(C64::new(0.0, 0.0));
            max_abs(&off)
        };
        let mut orth = 0.0f64;
        for (a, ka) in kraus.iter().enumerate() {
            for (b, kb) in kraus.iter().enumerate() {
                let ip = crate::linalg::trace(&(ka.k.adjoint() * &kb.k));
                let expect = if a == b { ka.omega } else { 0.0 };
                orth = orth.max((ip - C64::new(expect, 0.0)).norm());
            }
        }
        let rho_b = state.rho_b();
        let rl = build_rl(&rho_b, tol.rank_tol)?;
        let q_list = modular_blocks(&rho_b, tol.group_tol);
        let p1_basis = fixed_space(&e_t, tol.fix_tol);
        let p1 = &p1_basis * p1_basis.adjoint();
        let (pv, pv_basis, pv_gap) = project_pv(&q_list, &p1, &p1_basis, tol)?;
        let diagnostics = CoreDiagnostics {
            kraus_route_residual: frobenius(&(&e_t - &e_t_env)),
            pv_route_residual: pv_gap,
            orthogonality_residual: orth,
            o_e_offdiag,
        };
        Ok(SufficiencyCore { dims, j, kraus, o_e, e_t, rl, p1, p1_basis, q_list, pv, pv_basis, diagnostics })
    }

    pub fn rank_p1(&self) -> usize {
        self.p1_basis.ncols()
    }

    pub fn rank_pv(&self) -> usize {
        self.pv_basis.ncols()
    }

    pub fn screen_nonabelian(&self, tol: &Tolerances) -> bool {
        screen_nonabelian(&self.e_t, tol.fix_tol, 1e-7)
    }

    /// Generators `Omega^dag(|a><b|)` spanning `Im Omega^dag`.
    pub fn image_generators(&self) -> Vec<CMatrix> {
        let da = self.dims.da;
        let mut out = Vec::new();
        for a in 0..da {
            for b in 0..da {
                out.push(apply_omega_dagger(&self.kraus, &unit(da, a, b)));
            }
        }
        out
    }

    /// `tr_A(J (I (x) I)) - I_B`, the unitality residual of `Omega^dag`.
    pub fn unitality_residual(&self) -> f64 {
        let marg = partial_trace(&self.j, self.dims, Side::A).expect("J has state dims");
        max_abs(&(marg - identity(self.dims.db)))
    }

    pub fn et_hermiticity(&self) -> f64 {
        hermitian_deviation(&self.e_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_density, vectorize, CVector};
    use crate::state::{make_classical, make_pure, validate_and_restrict};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bell() -> BipartiteState {
        make_pure(&identity(2).scale(0.5f64.sqrt()), 1e-9).unwrap()
    }

    fn unnormalized_max_ent(d: usize) -> CMatrix {
        let mut v = CVector::zeros(d * d);
        for k in 0..d {
            v[k * d + k] = C64::new(1.0, 0.0);
        }
        &v * v.adjoint()
    }

    #[test]
    fn j_of_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let ra = random_density(&mut rng, 2, 2);
        let rb = random_density(&mut rng, 3, 3);
        let s = validate_and_restrict(&kron(&ra, &rb), DimPair::new(2, 3), 1e-9).unwrap();
        let j = build_j(&s, 1e-9).unwrap();
        assert!(max_abs(&(j - kron(&ra, &identity(3)))) < 1e-12);
    }

    #[test]
    fn j_of_bell_and_classical() {
        let j = build_j(&bell(), 1e-9).unwrap();
        assert!(max_abs(&(j - unnormalized_max_ent(2))) < 1e-12);

        let p = vec![vec![0.1, 0.2, 0.15], vec![0.3, 0.05, 0.2]];
        let s = make_classical(&p, 1e-9).unwrap();
        let j = build_j(&s, 1e-9).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                let pb = p[0][b] + p[1][b];
                assert!((j[(a * 3 + b, a * 3 + b)].re - p[a][b] / pb).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kraus_of_bell_and_classical() {
        let s = bell();
        let j = build_j(&s, 1e-9).unwrap();
        let k = extract_kraus(&j, s.dims, 1e-9);
        assert_eq!(k.len(), 1);
        assert!((k[0].omega - 2.0).abs() < 1e-12);
        // K proportional to the identity
        let ratio = k[0].k[(0, 0)];
        assert!(max_abs(&(k[0].k.clone() - identity(2) * ratio)) < 1e-12);
        assert!((ratio.norm() - 1.0).abs() < 1e-12);

        let p = vec![vec![0.1, 0.2], vec![0.3, 0.4]];
        let s = make_classical(&p, 1e-9).unwrap();
        let j = build_j(&s, 1e-9).unwrap();
        let k = extract_kraus(&j, s.dims, 1e-9);
        assert_eq!(k.len(), 4);
        for term in &k {
            // each K is sqrt(p(a|b)) |a><b| up to phase
            let nz: Vec<(usize, usize)> = (0..2)
                .flat_map(|a| (0..2).map(move |b| (a, b)))
                .filter(|&(a, b)| term.k[(a, b)].norm() > 1e-9)
                .collect();
            assert_eq!(nz.len(), 1);
            let (a, b) = nz[0];
            let cond = p[a][b] / (p[0][b] + p[1][b]);
            assert!((term.omega - cond).abs() < 1e-12);
            assert!((term.k[(a, b)].norm() - cond.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn kraus_orthogonality_and_omega_reproduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rho = random_density(&mut rng, 6, 4);
        let s = validate_and_restrict(&rho, DimPair::new(2, 3), 1e-9).unwrap();
        let j = build_j(&s, 1e-9).unwrap();
        let k = extract_kraus(&j, s.dims, 1e-9);
        assert_eq!(k.len(), 4);
        for (a, ka) in k.iter().enumerate() {
            for (b, kb) in k.iter().enumerate() {
                let ip = crate::linalg::trace(&(ka.k.adjoint() * &kb.k));
                let e = if a == b { ka.omega } else { 0.0 };
                assert!((ip - C64::new(e, 0.0)).norm() < 1e-9);
            }
        }
        // Omega^dag(X) == tr_A(J (X^T (x) I))
        let x = crate::linalg::random_complex_gaussian(&mut rng, 2, 2);
        let direct = partial_trace(&(&j * kron(&x.transpose(), &identity(3))), s.dims, Side::A).unwrap();
        assert!(max_abs(&(apply_omega_dagger(&k, &x) - direct)) < 1e-12);
    }

    #[test]
    fn omega_tilde_choi_is_sqrt_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for (da, db) in [(2, 2), (2, 3), (3, 2)] {
            let rho = random_density(&mut rng, da * db, 3);
            let s = validate_and_restrict(&rho, DimPair::new(da, db), 1e-9).unwrap();
            let j = build_j(&s, 1e-9).unwrap();
            let k = extract_kraus(&j, s.dims, 1e-9);
            let choi = choi_of_map(s.dims.da, s.dims.db, |x| apply_omega_tilde(&k, x));
            let sqrt_j = matrix_fn(&j, MatrixFn::Sqrt, 1e-9).unwrap();
            assert!(max_abs(&(choi - sqrt_j)) < 1e-9);
        }
        let s = bell();
        let j = build_j(&s, 1e-9).unwrap();
        let k = extract_kraus(&j, s.dims, 1e-9);
        let choi = choi_of_map(2, 2, |x| apply_omega_tilde(&k, x));
        assert!(max_abs(&(choi - matrix_fn(&j, MatrixFn::Sqrt, 1e-9).unwrap())) < 1e-12);
        assert!(max_abs(&apply_omega_tilde(&k, &CMatrix::zeros(2, 2))) == 0.0);
    }

    #[test]
    fn omega_tilde_classical() {
        let p = vec![vec![0.1, 0.2, 0.15], vec![0.3, 0.05, 0.2]];
        let s = make_classical(&p, 1e-9).unwrap();
        let j = build_j(&s, 1e-9).unwrap();
        let k = extract_kraus(&j, s.dims, 1e-9);
        for a in 0..2 {
            let img = apply_omega_tilde(&k, &unit(2, a, a));
            for b in 0..3 {
                let cond = p[a][b] / (p[0][b] + p[1][b]);
                assert!((img[(b, b)].re - cond.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn et_product_state_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ra = random_density(&mut rng, 2, 2);
        let rb = random_density(&mut rng, 3, 3);
        let s = validate_and_restrict(&kron(&ra, &rb), DimPair::new(2, 3), 1e-9).unwrap();
        let core = SufficiencyCore::build(&s, &Tolerances::default()).unwrap();
        // Omega~^dag(X) = tr(sqrt(rho_A^T) X) I, so T = id and every operator is fixed
        assert!(max_abs(&(&core.e_t - identity(9))) < 1e-10);
        assert_eq!(core.rank_p1(), 9);
        assert_eq!(core.rank_pv(), 9);
        assert!(core.screen_nonabelian(&Tolerances::default()));
    }

    #[test]
    fn bell_fixed_points_and_pv() {
        let core = SufficiencyCore::build(&bell(), &Tolerances::default()).unwrap();
        assert_eq!(core.rank_p1(), 1);
        let vi = vectorize(&identity(2));
        let expected = (&vi * vi.adjoint()).unscale(2.0);
        assert!(max_abs(&(&core.pv - expected)) < 1e-10);
        assert!(!core.screen_nonabelian(&Tolerances::default()));
    }

    #[test]
    fn classical_duplicate_columns_fixed_dimension() {
        // columns 0 and 2 share p(.|b); classes {0,2},{1} -> dims 2^2 + 1^2 = 5
        let p = [vec![0.1, 0.3, 0.15], vec![0.1, 0.1, 0.15], vec![0.2, 0.05, 0.3]];
        let tot: f64 = p.iter().flatten().sum();
        let p: Vec<Vec<f64>> = p.iter().map(|r| r.iter().map(|x| x / tot).collect()).collect();
        let s = make_classical(&p, 1e-9).unwrap();
        let core = SufficiencyCore::build(&s, &Tolerances::default()).unwrap();
        // brute-force oracle: solve T(X) = X as a linear system on all 3x3 matrices
        let t = t_kraus(&core.kraus, s.dims.da);
        let mut sys = CMatrix::zeros(9, 9);
        for idx in 0..9 {
            let mut x = CMatrix::zeros(3, 3);
            x[(idx / 3, idx % 3)] = C64::new(1.0, 0.0);
            let tx = t.iter().fold(CMatrix::zeros(3, 3), |acc, k| acc + k * &x * k.adjoint()) - &x;
            sys.set_column(idx, &vectorize(&tx));
        }
        let fixed_dim = crate::linalg::null_space(&sys, 1e-10).ncols();
        assert_eq!(fixed_dim, 5);
        assert_eq!(core.rank_p1(), 5);
        assert_eq!(core.rank_pv(), 5);
        assert!(core.screen_nonabelian(&Tolerances::default()));
    }

    #[test]
    fn rl_cases() {
        let rl = build_rl(&identity(3).scale(1.0 / 3.0), 1e-9).unwrap();
        assert!(max_abs(&rl) < 1e-14);
        let p: f64 = 0.3;
        let mut rho = CMatrix::zeros(2, 2);
        rho[(0, 0)] = C64::new(p, 0.0);
        rho[(1, 1)] = C64::new(1.0 - p, 0.0);
        let rl = build_rl(&rho, 1e-9).unwrap();
        let mut ev = herm_eig_unchecked(&rl).values;
        ev.sort_by(|a, b| a.total_cmp(b));
        let l = (p / (1.0 - p)).ln().abs();
        let expected = [-l, 0.0, 0.0, l];
        for (a, b) in ev.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let rho = random_density(&mut rng, 3, 3);
        let rl = build_rl(&rho, 1e-9).unwrap();
        assert!((&rl * vectorize(&rho)).norm() < 1e-12);
        assert!((&rl * vectorize(&identity(3))).norm() < 1e-12);
        // a polynomial in rho commutes with rho
        let x = &rho * &rho + rho.scale(2.0);
        assert!((&rl * vectorize(&x)).norm() < 1e-12);
        assert!(build_rl(&CMatrix::zeros(2, 2), 1e-9).is_err());
    }

    #[test]
    fn modular_blocks_diagonalize_rl() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let rho = random_density(&mut rng, 3, 3);
        let rl = build_rl(&rho, 1e-9).unwrap();
        let blocks = modular_blocks(&rho, 1e-8);
        let total: usize = blocks.iter().map(|b| b.basis.ncols()).sum();
        assert_eq!(total, 9);
        for b in &blocks {
            let resid = &rl * &b.basis - b.basis.scale(b.eta);
            assert!(max_abs(&resid) < 1e-12);
        }
    }

    #[test]
    fn pv_equals_p1_for_maximally_mixed_marginal() {
        // Bell-diagonal mixture has rho_B = I/2, so RL = 0
        let s = bell();
        let mixed = s.rho.scale(0.7) + identity(4).scale(0.3 / 4.0);
        let st = validate_and_restrict(&mixed, DimPair::new(2, 2), 1e-9).unwrap();
        let core = SufficiencyCore::build(&st, &Tolerances::default()).unwrap();
        assert!(max_abs(&core.rl) < 1e-14);
        assert_eq!(core.q_list.len(), 1);
        assert!(max_abs(&(&core.pv - &core.p1)) < 1e-10);
    }

    #[test]
    fn random_state_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..5 {
            let rho = random_density(&mut rng, 6, 6);
            let s = validate_and_restrict(&rho, DimPair::new(2, 3), 1e-9).unwrap();
            let core = SufficiencyCore::build(&s, &Tolerances::default()).unwrap();
            assert!(core.unitality_residual() < 1e-9);
            assert!(core.et_hermiticity() < 1e-9);
            assert!(core.diagnostics.kraus_route_residual < 1e-9);
            assert!(core.diagnostics.orthogonality_residual < 1e-9);
            assert!(core.diagnostics.o_e_offdiag < 1e-9);
            let vi = vectorize(&identity(3));
            assert!((&core.e_t * &vi - &vi).norm() < 1e-9);
            assert!((&core.pv * &vi - &vi).norm() < 1e-9);
            let ev = herm_eig_unchecked(&core.e_t).values;
            assert!(ev[0] >= -1.0 - 1e-9 && ev[ev.len() - 1] <= 1.0 + 1e-9);
            // generic: the fixed algebra is C I
            assert_eq!(core.rank_pv(), 1);
            assert!(!core.screen_nonabelian(&Tolerances::default()));
        }
    }
}
