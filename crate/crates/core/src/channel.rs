//! Channels as Kraus lists, reduced to the state problem through the
//! normalized Choi state, plus group twirls and the unital shortcut.

use rand::Rng;
use serde::Serialize;

use crate::algebra::{block_structure, commutant_basis, KIDecomposition};
use crate::error::{Error, Result};
use crate::linalg::{
    frobenius, herm_eig_unchecked, identity, is_unitary, kron, matrix_fn, max_abs, partial_trace, CMatrix, DimPair,
    MatrixFn, Side, C64,
};
use crate::state::{validate_and_restrict, BipartiteState};
use crate::sufficiency::choi_of_map;

pub const TP_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub da_in: usize,
    pub db_out: usize,
    /// `db_out x da_in` operators.
    pub kraus: Vec<CMatrix>,
}

impl ChannelSpec {
    pub fn new(da_in: usize, db_out: usize, kraus: Vec<CMatrix>) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::Invalid("channel needs at least one Kraus operator".into()));
        }
        for (k, op) in kraus.iter().enumerate() {
            if op.nrows() != db_out || op.ncols() != da_in {
                return Err(Error::Dimension(format!(
                    "Kraus operator {k} is {}x{}, expected {db_out}x{da_in}",
                    op.nrows(),
                    op.ncols()
                )));
            }
        }
        let ch = ChannelSpec { da_in, db_out, kraus };
        let dev = ch.tp_residual();
        if dev > TP_TOL {
            return Err(Error::Invalid(format!("Kraus list is not trace preserving (deviation {dev:.3e})")));
        }
        Ok(ch)
    }

    /// `max |sum K^dag K - I|`.
    pub fn tp_residual(&self) -> f64 {
        let sum = self.kraus.iter().fold(CMatrix::zeros(self.da_in, self.da_in), |acc, k| acc + k.adjoint() * k);
        max_abs(&(sum - identity(self.da_in)))
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        crate::algebra::apply_channel(x, &self.kraus)
    }

    /// `max |E(I) - I|`, infinite when input and output dimensions differ.
    pub fn unitality_residual(&self) -> f64 {
        if self.da_in != self.db_out {
            return f64::INFINITY;
        }
        max_abs(&(self.apply(&identity(self.da_in)) - identity(self.db_out)))
    }

    pub fn is_unital(&self, tol: f64) -> bool {
        self.unitality_residual() <= tol
    }

    /// `sum_{a,a'} |a><a'| (x) E(|a><a'|) / d_in`, before any restriction.
    pub fn choi_matrix(&self) -> CMatrix {
        choi_of_map(self.da_in, self.db_out, |x| self.apply(x)).unscale(self.da_in as f64)
    }

    /// `F o E`: Kraus products `F_j E_i`.
    pub fn then(&self, next: &ChannelSpec) -> Result<ChannelSpec> {
        if next.da_in != self.db_out {
            return Err(Error::Dimension("composed channels do not match".into()));
        }
        let kraus = next.kraus.iter().flat_map(|f| self.kraus.iter().map(move |e| f * e)).collect();
        ChannelSpec::new(self.da_in, next.db_out, kraus)
    }
}

/// Kraus operators from a (not necessarily normalized) Choi operator
/// `sum |a><a'| (x) E(|a><a'|)` by eigendecomposition.
pub fn kraus_from_choi(choi: &CMatrix, da_in: usize, db_out: usize, rank_tol: f64) -> Result<ChannelSpec> {
    if choi.nrows() != da_in * db_out || choi.ncols() != da_in * db_out {
        return Err(Error::Dimension(format!("Choi matrix must be {0}x{0}", da_in * db_out)));
    }
    let eig = herm_eig_unchecked(&crate::linalg::hermitian_part(choi));
    let thr = rank_tol * eig.max_abs();
    let mut kraus = Vec::new();
    for (i, &lam) in eig.values.iter().enumerate().rev() {
        if lam < -1e-9 * eig.max_abs().max(1.0) {
            return Err(Error::NotPsd(lam));
        }
        if lam <= thr {
            continue;
        }
        // |v> = sum_a |a> (x) K|a> / ... so K[b, a] = v[a * db + b]
        let v = eig.vectors.column(i);
        let k = CMatrix::from_fn(db_out, da_in, |b, a| v[a * db_out + b] * lam.sqrt());
        kraus.push(k);
    }
    ChannelSpec::new(da_in, db_out, kraus)
}

/// `rho_AB = (id (x) E)(|Psi><Psi|)` for the normalized maximally entangled input,
/// restricted to the supports of its marginals.
pub fn choi_state(ch: &ChannelSpec, rank_tol: f64) -> Result<BipartiteState> {
    validate_and_restrict(&ch.choi_matrix(), DimPair::new(ch.da_in, ch.db_out), rank_tol)
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitalShortcut {
    #[serde(skip)]
    pub commutant: Vec<CMatrix>,
    pub commutant_dim: usize,
    #[serde(skip)]
    pub blocks: KIDecomposition,
    pub d_min_fast: usize,
}

/// For unital channels the redundancy algebra is the commutant of the image of
/// the channel; no modular step is needed.
pub fn unital_shortcut<R: Rng + ?Sized>(ch: &ChannelSpec, tol: f64, rng: &mut R) -> Result<UnitalShortcut> {
    if !ch.is_unital(tol) {
        return Err(Error::Invalid("channel is not unital; use the general Choi-state pipeline instead".into()));
    }
    let d_in = ch.da_in;
    let mut images = Vec::with_capacity(d_in * d_in);
    for a in 0..d_in {
        for b in 0..d_in {
            let mut e = CMatrix::zeros(d_in, d_in);
            e[(a, b)] = C64::new(1.0, 0.0);
            images.push(ch.apply(&e));
        }
    }
    let commutant = commutant_basis(&images, ch.db_out, 1e-9);
    let blocks = block_structure(&commutant, ch.db_out, rng)?;
    Ok(UnitalShortcut { commutant_dim: commutant.len(), d_min_fast: blocks.d_min, commutant, blocks })
}

fn find_match(list: &[CMatrix], x: &CMatrix, tol: f64) -> Option<usize> {
    list.iter().position(|u| max_abs(&(u - x)) <= tol)
}

/// Group twirl `X -> (1/|G|) sum_g U_g X U_g^dag` from an explicit list of
/// representation matrices, checked for closure under products and inverses.
pub fn make_twirl(unitaries: &[CMatrix], tol: f64) -> Result<ChannelSpec> {
    let Some(first) = unitaries.first() else {
        return Err(Error::Invalid("empty group".into()));
    };
    let d = first.nrows();
    for (g, u) in unitaries.iter().enumerate() {
        if u.nrows() != d || u.ncols() != d {
            return Err(Error::Dimension(format!("group element {g} is not {d}x{d}")));
        }
        if !is_unitary(u, tol) {
            return Err(Error::Invalid(format!("group element {g} is not unitary")));
        }
        if find_match(unitaries, &u.adjoint(), tol).is_none() {
            return Err(Error::Invalid(format!("inverse of group element {g} is missing")));
        }
    }
    for (g, u) in unitaries.iter().enumerate() {
        for (h, v) in unitaries.iter().enumerate() {
            if find_match(unitaries, &(u * v), tol).is_none() {
                return Err(Error::Invalid(format!("product of elements {g} and {h} is not in the list")));
            }
        }
    }
    let norm = (unitaries.len() as f64).sqrt();
    ChannelSpec::new(d, d, unitaries.iter().map(|u| u.unscale(norm)).collect())
}

fn permutation_matrix(perm: &[usize]) -> CMatrix {
    let n = perm.len();
    let mut m = CMatrix::zeros(n, n);
    for (i, &p) in perm.iter().enumerate() {
        m[(p, i)] = C64::new(1.0, 0.0);
    }
    m
}

/// Left-regular representation of `S_3` on `C^6`: `L_g |h> = |g h>`.
pub fn s3_regular_representation() -> Vec<CMatrix> {
    let elems: Vec<[usize; 3]> = vec![[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];
    let index = |p: [usize; 3]| elems.iter().position(|&q| q == p).expect("closed");
    let compose = |g: [usize; 3], h: [usize; 3]| [g[h[0]], g[h[1]], g[h[2]]];
    elems
        .iter()
        .map(|&g| {
            let perm: Vec<usize> = elems.iter().map(|&h| index(compose(g, h))).collect();
            permutation_matrix(&perm)
        })
        .collect()
}

/// `{I_2, X}`.
pub fn z2_representation() -> Vec<CMatrix> {
    vec![identity(2), permutation_matrix(&[1, 0])]
}

/// `||J - Choi((R^{tau,E})^dag)||_F` where `R^{tau,E}` is the Petz recovery of
/// `E` with respect to `tau = I/d_in`, built from the Kraus operators of `E`.
pub fn petz_adjoint_residual(ch: &ChannelSpec, rank_tol: f64) -> Result<f64> {
    let rho = ch.choi_matrix();
    let dims = DimPair::new(ch.da_in, ch.db_out);
    let rho_b = partial_trace(&rho, dims, Side::A)?;
    let inv_sqrt_b = matrix_fn(&rho_b, MatrixFn::InvSqrt, rank_tol)?;
    let s = kron(&identity(ch.da_in), &inv_sqrt_b);
    let j = &s * &rho * &s;
    // Petz: R(Y) = tau^1/2 E^dag(E(tau)^-1/2 Y E(tau)^-1/2) tau^1/2 with Kraus
    // tau^1/2 K^dag E(tau)^-1/2; its adjoint has Kraus E(tau)^-1/2 K tau^1/2.
    let tau_sqrt = identity(ch.da_in).unscale((ch.da_in as f64).sqrt());
    let adj: Vec<CMatrix> = ch.kraus.iter().map(|k| &inv_sqrt_b * k * &tau_sqrt).collect();
    let choi_adj = choi_of_map(ch.da_in, ch.db_out, |x| crate::algebra::apply_channel(x, &adj));
    Ok(frobenius(&(j - choi_adj)))
}

/// Random mixture of `n` Haar unitaries with random weights, a unital channel.
pub fn random_unitary_mixture<R: Rng + ?Sized>(rng: &mut R, d: usize, n: usize) -> ChannelSpec {
    let weights: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    let kraus = weights.iter().map(|w| crate::linalg::random_unitary(rng, d).scale((w / total).sqrt())).collect();
    ChannelSpec::new(d, d, kraus).expect("unitary mixture is trace preserving")
}

/// Random channel from a Haar isometry `C^d_in -> C^d_out (x) C^n`.
pub fn random_channel<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_out: usize, n: usize) -> ChannelSpec {
    let u = crate::linalg::random_unitary(rng, d_out * n.max(1));
    let iso = u.columns(0, d_in).into_owned();
    let kraus = (0..n.max(1)).map(|k| CMatrix::from_fn(d_out, d_in, |b, a| iso[(b * n.max(1) + k, a)])).collect();
    ChannelSpec::new(d_in, d_out, kraus).expect("isometry gives a trace-preserving channel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::oracle_dmin;
    use crate::config::Tolerances;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pauli() -> [CMatrix; 3] {
        let x = permutation_matrix(&[1, 0]);
        let mut y = CMatrix::zeros(2, 2);
        y[(0, 1)] = C64::new(0.0, -1.0);
        y[(1, 0)] = C64::new(0.0, 1.0);
        let mut z = identity(2);
        z[(1, 1)] = C64::new(-1.0, 0.0);
        [x, y, z]
    }

    fn depolarizing() -> ChannelSpec {
        let mut k = vec![identity(2).scale(0.5)];
        k.extend(pauli().iter().map(|p| p.scale(0.5)));
        ChannelSpec::new(2, 2, k).unwrap()
    }

    fn dephasing() -> ChannelSpec {
        let mut p0 = CMatrix::zeros(2, 2);
        p0[(0, 0)] = C64::new(1.0, 0.0);
        let p1 = identity(2) - &p0;
        ChannelSpec::new(2, 2, vec![p0, p1]).unwrap()
    }

    #[test]
    fn rejects_non_trace_preserving() {
        assert!(ChannelSpec::new(2, 2, vec![identity(2).scale(0.9)]).is_err());
        assert!(ChannelSpec::new(2, 3, vec![identity(2)]).is_err());
    }

    #[test]
    fn identity_channel_gives_bell_state() {
        let ch = ChannelSpec::new(2, 2, vec![identity(2)]).unwrap();
        let s = choi_state(&ch, 1e-9).unwrap();
        let mut bell = CMatrix::zeros(4, 4);
        for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
            bell[(i, j)] = C64::new(0.5, 0.0);
        }
        assert!(max_abs(&(&s.rho - bell)) < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        assert_eq!(oracle_dmin(&s, &Tolerances::default(), &mut rng).unwrap().d_min, 2);
    }

    #[test]
    fn depolarizing_and_dephasing_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let s = choi_state(&depolarizing(), 1e-9).unwrap();
        assert!(max_abs(&(&s.rho - identity(4).unscale(4.0))) < 1e-12);
        assert_eq!(oracle_dmin(&s, &Tolerances::default(), &mut rng).unwrap().d_min, 1);
        let s = choi_state(&dephasing(), 1e-9).unwrap();
        assert_eq!(oracle_dmin(&s, &Tolerances::default(), &mut rng).unwrap().d_min, 2);
    }

    #[test]
    fn unital_shortcut_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let u = crate::linalg::random_unitary(&mut rng, 3);
        let conj = ChannelSpec::new(3, 3, vec![u]).unwrap();
        assert_eq!(unital_shortcut(&conj, 1e-9, &mut rng).unwrap().d_min_fast, 3);
        assert_eq!(unital_shortcut(&depolarizing(), 1e-9, &mut rng).unwrap().d_min_fast, 1);
        let amp = ChannelSpec::new(
            2,
            2,
            vec![
                CMatrix::from_row_slice(
                    2,
                    2,
                    &[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.6, 0.0)],
                ),
                CMatrix::from_row_slice(
                    2,
                    2,
                    &[C64::new(0.0, 0.0), C64::new(0.8, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
                ),
            ],
        )
        .unwrap();
        assert!(unital_shortcut(&amp, 1e-9, &mut rng).is_err());
    }

    #[test]
    fn twirls_of_s3_and_z2() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let s3 = make_twirl(&s3_regular_representation(), 1e-12).unwrap();
        assert_eq!(s3.kraus.len(), 6);
        assert_eq!(unital_shortcut(&s3, 1e-9, &mut rng).unwrap().d_min_fast, 4);
        let z2 = make_twirl(&z2_representation(), 1e-12).unwrap();
        assert_eq!(unital_shortcut(&z2, 1e-9, &mut rng).unwrap().d_min_fast, 2);
        // Z2 twirl dephases in the X eigenbasis
        let plus = CMatrix::from_element(2, 2, C64::new(0.5, 0.0));
        assert!(max_abs(&(z2.apply(&plus) - &plus)) < 1e-12);
        let zero = dephasing().kraus[0].clone();
        assert!(max_abs(&(z2.apply(&zero) - identity(2).scale(0.5))) < 1e-12);
        let trivial = make_twirl(&[identity(3)], 1e-12).unwrap();
        assert!(
            max_abs(&(trivial.choi_matrix() - ChannelSpec::new(3, 3, vec![identity(3)]).unwrap().choi_matrix()))
                < 1e-12
        );
    }

    #[test]
    fn twirl_rejects_non_group() {
        let x = permutation_matrix(&[1, 0, 2]);
        let y = permutation_matrix(&[0, 2, 1]);
        assert!(make_twirl(&[identity(3), x, y], 1e-9).is_err());
    }

    #[test]
    fn twirl_is_idempotent() {
        let t = make_twirl(&s3_regular_representation(), 1e-12).unwrap();
        let tt = t.then(&t).unwrap();
        assert!(max_abs(&(tt.choi_matrix() - t.choi_matrix())) < 1e-9);
    }

    #[test]
    fn petz_adjoint_matches_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        for (d_in, d_out, n) in [(2, 2, 2), (2, 3, 3), (3, 2, 4)] {
            let ch = random_channel(&mut rng, d_in, d_out, n);
            assert!(petz_adjoint_residual(&ch, 1e-9).unwrap() < 1e-8);
        }
    }

    #[test]
    fn unital_pipeline_agrees_with_shortcut() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let tol = Tolerances::default();
        for k in 0..6 {
            let d = 2 + k % 3;
            let ch = random_unitary_mixture(&mut rng, d, 1 + k % 2);
            let fast = unital_shortcut(&ch, 1e-9, &mut rng).unwrap().d_min_fast;
            let s = choi_state(&ch, tol.rank_tol).unwrap();
            assert_eq!(oracle_dmin(&s, &tol, &mut rng).unwrap().d_min, fast);
        }
    }

    #[test]
    fn kraus_roundtrip_through_choi() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let ch = random_channel(&mut rng, 2, 3, 2);
        let unnorm = ch.choi_matrix().scale(2.0);
        let back = kraus_from_choi(&unnorm, 2, 3, 1e-12).unwrap();
        assert_eq!(back.kraus.len(), 2);
        assert!(max_abs(&(back.choi_matrix() - ch.choi_matrix())) < 1e-12);
    }
}
