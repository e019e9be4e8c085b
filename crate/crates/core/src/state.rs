//! Bipartite density matrices: validation, support restriction and the
//! standard constructor families (classical, pure, planted block structure).

use crate::error::{Error, Result};
use crate::linalg::{
    fix_phase, frobenius, herm_eig, identity, kron, partial_trace, trace, CMatrix, CVector, DimPair, Side, C64,
};

/// Tolerance on Hermiticity, PSD-ness and unit trace of an input state.
pub const STATE_TOL: f64 = 1e-10;

/// A validated density matrix on `H_A (x) H_B` whose marginals have full rank.
///
/// `iso_a` / `iso_b` are the isometries from the restricted factors back into
/// the original ones (identity when no restriction happened on that side).
#[derive(Debug, Clone)]
pub struct BipartiteState {
    pub dims: DimPair,
    pub rho: CMatrix,
    pub restricted: bool,
    pub original_dims: DimPair,
    pub iso_a: CMatrix,
    pub iso_b: CMatrix,
}

impl BipartiteState {
    pub fn rho_a(&self) -> CMatrix {
        partial_trace(&self.rho, self.dims, Side::B).expect("dims checked at construction")
    }

    pub fn rho_b(&self) -> CMatrix {
        partial_trace(&self.rho, self.dims, Side::A).expect("dims checked at construction")
    }

    /// The state mapped back into the original (unrestricted) Hilbert space.
    pub fn embed(&self) -> CMatrix {
        let iso = kron(&self.iso_a, &self.iso_b);
        &iso * &self.rho * iso.adjoint()
    }

    /// `mu_B = tr_A(M_A rho_AB) / tr(M_A rho_A)` for an effect `0 <= M_A <= I`.
    pub fn conditional_state(&self, effect: &CMatrix) -> Result<CMatrix> {
        let da = self.dims.da;
        if effect.nrows() != da || effect.ncols() != da {
            return Err(Error::Dimension(format!("effect must be {da}x{da}")));
        }
        let weighted = kron(effect, &identity(self.dims.db)) * &self.rho;
        let mu = partial_trace(&weighted, self.dims, Side::A)?;
        let norm = trace(&mu).re;
        if norm <= 1e-14 {
            return Err(Error::Invalid("effect has zero probability on this state".into()));
        }
        Ok(mu.unscale(norm))
    }
}

fn check_density(raw: &CMatrix, dims: DimPair) -> Result<()> {
    dims.check_square(raw)?;
    if dims.da == 0 || dims.db == 0 {
        return Err(Error::Dimension("local dimensions must be positive".into()));
    }
    if raw.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Invalid("non-finite matrix entry".into()));
    }
    let eig = herm_eig(raw, STATE_TOL)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    if min < -STATE_TOL {
        return Err(Error::NotPsd(min));
    }
    let tr = trace(raw);
    if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
        return Err(Error::Trace(tr.re));
    }
    Ok(())
}

/// Isometry onto the support of a marginal, or `None` if it already has full rank.
fn support_isometry(marginal: &CMatrix, rank_tol: f64) -> Option<CMatrix> {
    let eig = herm_eig(marginal, 1e-8).expect("marginal of a Hermitian matrix");
    let max = eig.max_abs();
    let thr = rank_tol * max;
    let n = eig.values.len();
    let mut keep: Vec<usize> = (0..n).filter(|&j| eig.values[j] > thr).collect();
    if keep.len() == n {
        return None;
    }
    // descending eigenvalue, ties broken lexicographically on the (phase-fixed) entries
    let mut cols: Vec<(f64, CVector)> = keep
        .drain(..)
        .map(|j| {
            let mut v = eig.vectors.column(j).into_owned();
            fix_phase(&mut v);
            (eig.values[j], v)
        })
        .collect();
    cols.sort_by(|(la, va), (lb, vb)| {
        lb.total_cmp(la).then_with(|| {
            for (x, y) in va.iter().zip(vb.iter()) {
                let o = x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im));
                if o != std::cmp::Ordering::Equal {
                    return o;
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    let mut iso = CMatrix::zeros(n, cols.len());
    for (j, (_, v)) in cols.iter().enumerate() {
        iso.set_column(j, v);
    }
    Some(iso)
}

/// Validate a raw density matrix and restrict both factors to the supports of
/// the reduced states.
pub fn validate_and_restrict(raw: &CMatrix, dims: DimPair, rank_tol: f64) -> Result<BipartiteState> {
    check_density(raw, dims)?;
    let rho = crate::linalg::hermitian_part(raw);
    let rho_a = partial_trace(&rho, dims, Side::B)?;
    let rho_b = partial_trace(&rho, dims, Side::A)?;
    let iso_a = support_isometry(&rho_a, rank_tol);
    let iso_b = support_isometry(&rho_b, rank_tol);
    let restricted = iso_a.is_some() || iso_b.is_some();
    let iso_a = iso_a.unwrap_or_else(|| identity(dims.da));
    let iso_b = iso_b.unwrap_or_else(|| identity(dims.db));
    let new_dims = DimPair::new(iso_a.ncols(), iso_b.ncols());
    let rho = if restricted {
        let iso = kron(&iso_a, &iso_b);
        crate::linalg::hermitian_part(&(iso.adjoint() * &rho * &iso))
    } else {
        rho
    };
    Ok(BipartiteState { dims: new_dims, rho, restricted, original_dims: dims, iso_a, iso_b })
}

/// Residual `||embed(restrict(raw)) - raw||_F`.
pub fn restriction_residual(raw: &CMatrix, state: &BipartiteState) -> f64 {
    frobenius(&(state.embed() - raw))
}

/// `rho = sum_{a,b} p(a,b) |a,b><a,b|` for a `dA x dB` table `p[a][b]`.
pub fn make_classical(p: &[Vec<f64>], rank_tol: f64) -> Result<BipartiteState> {
    let da = p.len();
    let db = p.first().map(|r| r.len()).unwrap_or(0);
    if da == 0 || db == 0 || p.iter().any(|r| r.len() != db) {
        return Err(Error::Invalid("probability table must be a non-empty rectangle".into()));
    }
    if p.iter().flatten().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Invalid("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = p.iter().flatten().sum();
    if (total - 1.0).abs() > STATE_TOL {
        return Err(Error::Invalid(format!("probabilities sum to {total}, expected 1")));
    }
    let dims = DimPair::new(da, db);
    let mut rho = CMatrix::zeros(da * db, da * db);
    for a in 0..da {
        for b in 0..db {
            rho[(a * db + b, a * db + b)] = C64::new(p[a][b], 0.0);
        }
    }
    validate_and_restrict(&rho, dims, rank_tol)
}

/// `|psi> = sum_{a,b} coeffs[a,b] |a,b>`, support-restricted.
pub fn make_pure(coeffs: &CMatrix, rank_tol: f64) -> Result<BipartiteState> {
    let norm = frobenius(coeffs);
    if norm == 0.0 {
        return Err(Error::Invalid("zero state vector".into()));
    }
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("state vector has norm {norm}, expected 1")));
    }
    let (da, db) = coeffs.shape();
    let psi = crate::linalg::vectorize(coeffs).unscale(norm);
    validate_and_restrict(&(&psi * psi.adjoint()), DimPair::new(da, db), rank_tol)
}

/// One direct-sum block `p * sigma_{A L} (x) omega_R` of a planted state.
#[derive(Debug, Clone)]
pub struct PlantBlock {
    pub d_l: usize,
    /// Density matrix on `H_A (x) H_L`, composite index `a * d_l + l`.
    pub sigma_al: CMatrix,
    pub omega_r: CMatrix,
    pub weight: f64,
}

/// Ground truth recorded by [`make_planted`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlantTruth {
    pub d_l: Vec<usize>,
    pub d_r: Vec<usize>,
    pub weights: Vec<f64>,
    pub d_min: usize,
    pub d_r_total: usize,
    pub rank_c: usize,
}

#[derive(Debug, Clone)]
pub struct PlantedState {
    pub state: BipartiteState,
    pub truth: PlantTruth,
}

/// Direct sum of blocks placed in consecutive coordinate subspaces of `H_B`;
/// inside block `i` the local index is `l * d_R + r`.
pub fn make_planted(blocks: &[PlantBlock], rank_tol: f64) -> Result<PlantedState> {
    if blocks.is_empty() {
        return Err(Error::Invalid("at least one block required".into()));
    }
    let mut da = None;
    for (i, b) in blocks.iter().enumerate() {
        if b.d_l == 0 || b.sigma_al.nrows() % b.d_l != 0 || !b.sigma_al.is_square() || !b.omega_r.is_square() {
            return Err(Error::Dimension(format!("block {i}: malformed sigma/omega shapes")));
        }
        let a = b.sigma_al.nrows() / b.d_l;
        match da {
            None => da = Some(a),
            Some(prev) if prev != a => {
                return Err(Error::Dimension(format!("block {i}: dA = {a} differs from {prev}")))
            }
            _ => {}
        }
        if b.weight.is_nan() || b.weight <= 0.0 {
            return Err(Error::Invalid(format!("block {i}: weight must be positive")));
        }
    }
    let da = da.unwrap();
    let wsum: f64 = blocks.iter().map(|b| b.weight).sum();
    if (wsum - 1.0).abs() > STATE_TOL {
        return Err(Error::Invalid(format!("block weights sum to {wsum}, expected 1")));
    }
    let db: usize = blocks.iter().map(|b| b.d_l * b.omega_r.nrows()).sum();
    let dims = DimPair::new(da, db);
    let mut rho = CMatrix::zeros(da * db, da * db);
    let mut offset = 0;
    for b in blocks {
        let (dl, dr) = (b.d_l, b.omega_r.nrows());
        for a in 0..da {
            for ap in 0..da {
                for l in 0..dl {
                    for lp in 0..dl {
                        let s = b.sigma_al[(a * dl + l, ap * dl + lp)] * b.weight;
                        for r in 0..dr {
                            for rp in 0..dr {
                                let row = a * db + offset + l * dr + r;
                                let col = ap * db + offset + lp * dr + rp;
                                rho[(row, col)] = s * b.omega_r[(r, rp)];
                            }
                        }
                    }
                }
            }
        }
        offset += dl * dr;
    }
    let state = validate_and_restrict(&rho, dims, rank_tol)?;
    let d_l: Vec<usize> = blocks.iter().map(|b| b.d_l).collect();
    let d_r: Vec<usize> = blocks.iter().map(|b| b.omega_r.nrows()).collect();
    let truth = PlantTruth {
        d_min: d_l.iter().sum(),
        d_r_total: d_r.iter().sum(),
        rank_c: d_l.iter().map(|l| l * l).sum(),
        weights: blocks.iter().map(|b| b.weight).collect(),
        d_l,
        d_r,
    };
    Ok(PlantedState { state, truth })
}

/// Block weights and dimensions satisfy `sum dL dR == dB` by construction.
pub fn truth_block_dim(truth: &PlantTruth) -> usize {
    truth.d_l.iter().zip(&truth.d_r).map(|(l, r)| l * r).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, random_density, svd_rank, CVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bell_coeffs() -> CMatrix {
        identity(2).scale(0.5f64.sqrt())
    }

    #[test]
    fn bell_is_unchanged() {
        let s = make_pure(&bell_coeffs(), 1e-9).unwrap();
        assert!(!s.restricted);
        assert_eq!(s.dims, DimPair::new(2, 2));
        let again = validate_and_restrict(&s.rho, s.dims, 1e-9).unwrap();
        assert!(!again.restricted);
        assert!(max_abs(&(again.rho - &s.rho)) < 1e-15);
    }

    #[test]
    fn rank_deficient_a_is_restricted() {
        let mut zero = CMatrix::zeros(3, 3);
        zero[(0, 0)] = C64::new(1.0, 0.0);
        let raw = kron(&zero, &identity(2).scale(0.5));
        let s = validate_and_restrict(&raw, DimPair::new(3, 2), 1e-9).unwrap();
        assert!(s.restricted);
        assert_eq!(s.dims, DimPair::new(1, 2));
        assert!(restriction_residual(&raw, &s) < 1e-12);
    }

    #[test]
    fn rank_deficient_b_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // rank-2 support on B inside dB = 4
        let sup = crate::linalg::random_unitary(&mut rng, 4).columns(0, 2).into_owned();
        let small = random_density(&mut rng, 4, 4);
        let iso = kron(&identity(2), &sup);
        let raw = &iso * small * iso.adjoint();
        let s = validate_and_restrict(&raw, DimPair::new(2, 4), 1e-9).unwrap();
        assert_eq!(s.dims, DimPair::new(2, 2));
        assert!(restriction_residual(&raw, &s) < 1e-10);
        // idempotent
        let again = validate_and_restrict(&s.rho, s.dims, 1e-9).unwrap();
        assert!(!again.restricted);
    }

    #[test]
    fn validation_errors() {
        let d = DimPair::new(2, 2);
        assert!(matches!(validate_and_restrict(&identity(4), d, 1e-9), Err(Error::Trace(_))));
        let mut bad = identity(4).scale(0.25);
        bad[(0, 0)] = C64::new(-0.1, 0.0);
        bad[(1, 1)] = C64::new(0.6, 0.0);
        assert!(matches!(validate_and_restrict(&bad, d, 1e-9), Err(Error::NotPsd(_))));
        assert!(matches!(validate_and_restrict(&identity(3), d, 1e-9), Err(Error::Dimension(_))));
    }

    #[test]
    fn classical_constructors() {
        let u = make_classical(&[vec![0.25, 0.25], vec![0.25, 0.25]], 1e-9).unwrap();
        assert!(max_abs(&(u.rho - identity(4).scale(0.25))) < 1e-15);
        let corr = make_classical(&[vec![0.5, 0.0], vec![0.0, 0.5]], 1e-9).unwrap();
        assert!((corr.rho[(0, 0)].re - 0.5).abs() < 1e-15 && (corr.rho[(3, 3)].re - 0.5).abs() < 1e-15);
        assert!(make_classical(&[vec![0.5, -0.1], vec![0.3, 0.3]], 1e-9).is_err());
        assert!(make_classical(&[vec![0.5, 0.1], vec![0.3, 0.3]], 1e-9).is_err());
    }

    #[test]
    fn pure_constructors() {
        let s = make_pure(&bell_coeffs(), 1e-9).unwrap();
        assert_eq!(svd_rank(&s.rho_a(), 1e-9), 2);
        let mut prod = CMatrix::zeros(2, 3);
        prod[(0, 1)] = C64::new(1.0, 0.0);
        let p = make_pure(&prod, 1e-9).unwrap();
        assert_eq!(p.dims, DimPair::new(1, 1));
        let c = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(0.5f64.sqrt(), 0.0),
            C64::new(0.3f64.sqrt(), 0.0),
            C64::new(0.2f64.sqrt(), 0.0),
        ]));
        let s3 = make_pure(&c, 1e-9).unwrap();
        assert_eq!(s3.dims, DimPair::new(3, 3));
        assert!(make_pure(&CMatrix::zeros(2, 2), 1e-9).is_err());
    }

    #[test]
    fn planted_three_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let da = 2;
        let spec = [(1usize, 1usize, 0.2), (2, 1, 0.5), (1, 2, 0.3)];
        let blocks: Vec<PlantBlock> = spec
            .iter()
            .map(|&(dl, dr, w)| PlantBlock {
                d_l: dl,
                sigma_al: random_density(&mut rng, da * dl, da * dl),
                omega_r: random_density(&mut rng, dr, dr),
                weight: w,
            })
            .collect();
        let p = make_planted(&blocks, 1e-9).unwrap();
        assert_eq!(p.truth.d_min, 4);
        assert_eq!(p.truth.rank_c, 6);
        assert_eq!(truth_block_dim(&p.truth), p.state.dims.db);
        assert!(!p.state.restricted);
        assert!((trace(&p.state.rho).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn planted_inconsistent_da() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let blocks = vec![
            PlantBlock { d_l: 1, sigma_al: random_density(&mut rng, 2, 2), omega_r: identity(1), weight: 0.5 },
            PlantBlock { d_l: 1, sigma_al: random_density(&mut rng, 3, 3), omega_r: identity(1), weight: 0.5 },
        ];
        assert!(matches!(make_planted(&blocks, 1e-9), Err(Error::Dimension(_))));
    }

    #[test]
    fn conditional_state_of_identity_effect_is_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rho = random_density(&mut rng, 6, 6);
        let s = validate_and_restrict(&rho, DimPair::new(2, 3), 1e-9).unwrap();
        let mu = s.conditional_state(&identity(2)).unwrap();
        assert!(max_abs(&(mu - s.rho_b())) < 1e-14);
    }
}
