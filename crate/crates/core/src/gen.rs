//! Seeded instance families with their known answers.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::channel::{make_twirl, s3_regular_representation, ChannelSpec};
use crate::error::{Error, Result};
use crate::linalg::{kron, random_density, random_unitary, CMatrix, DimPair, C64};
use crate::state::{make_planted, PlantBlock};

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Classical { da: usize, db: usize, classes: usize },
    Pure { da: usize, db: usize, schmidt: usize },
    Planted { da: usize, blocks: Vec<(usize, usize)> },
    Product { da: usize, db: usize },
    Random { da: usize, db: usize, rank: usize },
    TwirlS3,
}

/// Known answer for a generated instance. Fields that the family does not
/// determine are left out.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Truth {
    pub family: String,
    pub d_min: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_r_total: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_l_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_r_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Truth {
    fn bare(family: &str, d_min: usize) -> Self {
        Truth {
            family: family.into(),
            d_min,
            d_r_total: None,
            rank_c: None,
            d_l_list: None,
            d_r_list: None,
            weights: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Instance {
    State { dims: DimPair, rho: CMatrix, truth: Truth, table: Option<Vec<Vec<f64>>> },
    Channel { channel: ChannelSpec, truth: Truth },
}

/// Parse `"1x1,2x1,1x2"` into `(dL, dR)` pairs.
pub fn parse_blocks(text: &str) -> Result<Vec<(usize, usize)>> {
    let parse = |part: &str| -> Option<(usize, usize)> {
        let (l, r) = part.trim().split_once(['x', 'X'])?;
        Some((l.trim().parse().ok()?, r.trim().parse().ok()?))
    };
    let blocks = text
        .split(',')
        .map(|part| parse(part).ok_or_else(|| Error::Invalid(format!("bad block '{part}', expected LxR"))))
        .collect::<Result<Vec<_>>>()?;
    if blocks.is_empty() || blocks.iter().any(|&(l, r)| l == 0 || r == 0) {
        return Err(Error::Invalid("blocks must be positive LxR pairs".into()));
    }
    Ok(blocks)
}

/// Probability vector with entries bounded away from zero.
fn random_weights<R: Rng + ?Sized>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + floor).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Invalid(format!("{name} must be positive")));
    }
    Ok(())
}

/// Classical `p(a, b)` whose columns fall into `classes` groups sharing one
/// conditional distribution `p(a|b)`.
pub fn classical_table<R: Rng + ?Sized>(rng: &mut R, da: usize, db: usize, classes: usize) -> Result<Vec<Vec<f64>>> {
    positive("dA", da)?;
    positive("classes", classes)?;
    if classes > db {
        return Err(Error::Invalid(format!("classes ({classes}) cannot exceed dB ({db})")));
    }
    if classes > 1 && da < 2 {
        return Err(Error::Invalid("distinct conditionals need dA >= 2".into()));
    }
    let conditionals: Vec<Vec<f64>> = (0..classes).map(|_| random_weights(rng, da, 0.1)).collect();
    let mut labels: Vec<usize> = (0..classes).collect();
    labels.extend((classes..db).map(|_| rng.random_range(0..classes)));
    labels.shuffle(rng);
    let q = random_weights(rng, db, 0.1);
    Ok((0..da).map(|a| (0..db).map(|b| q[b] * conditionals[labels[b]][a]).collect()).collect())
}

/// Number of distinct columns of `p(a|b)`, comparing entries to `tol`.
pub fn distinct_conditionals(p: &[Vec<f64>], tol: f64) -> usize {
    let da = p.len();
    let db = p.first().map(|r| r.len()).unwrap_or(0);
    let cols: Vec<Vec<f64>> = (0..db)
        .filter_map(|b| {
            let s: f64 = (0..da).map(|a| p[a][b]).sum();
            (s > 0.0).then(|| (0..da).map(|a| p[a][b] / s).collect())
        })
        .collect();
    let mut reps: Vec<&Vec<f64>> = Vec::new();
    for c in &cols {
        if !reps.iter().any(|r| r.iter().zip(c).all(|(x, y)| (x - y).abs() <= tol)) {
            reps.push(c);
        }
    }
    reps.len()
}

/// Coefficient matrix of a pure state with exactly `schmidt` nonzero Schmidt
/// coefficients in random local bases.
pub fn pure_coefficients<R: Rng + ?Sized>(rng: &mut R, da: usize, db: usize, schmidt: usize) -> Result<CMatrix> {
    positive("schmidt", schmidt)?;
    if schmidt > da.min(db) {
        return Err(Error::Invalid(format!("Schmidt rank {schmidt} exceeds min(dA, dB)")));
    }
    let lambdas = random_weights(rng, schmidt, 0.2);
    let ua = random_unitary(rng, da);
    let ub = random_unitary(rng, db);
    let mut c = CMatrix::zeros(da, db);
    for (k, lam) in lambdas.iter().enumerate() {
        let s = C64::new(lam.sqrt(), 0.0);
        c += ua.column(k) * ub.column(k).transpose() * s;
    }
    Ok(c)
}

pub fn planted_blocks<R: Rng + ?Sized>(rng: &mut R, da: usize, blocks: &[(usize, usize)]) -> Vec<PlantBlock> {
    let weights = random_weights(rng, blocks.len(), 0.3);
    blocks
        .iter()
        .zip(weights)
        .map(|(&(l, r), w)| PlantBlock {
            d_l: l,
            sigma_al: random_density(rng, da * l, da * l),
            omega_r: random_density(rng, r, r),
            weight: w,
        })
        .collect()
}

pub fn generate<R: Rng + ?Sized>(family: &Family, rng: &mut R, rank_tol: f64) -> Result<Instance> {
    match family {
        Family::Classical { da, db, classes } => {
            let table = classical_table(rng, *da, *db, *classes)?;
            let dims = DimPair::new(*da, *db);
            let mut rho = CMatrix::zeros(da * db, da * db);
            for a in 0..*da {
                for b in 0..*db {
                    rho[(a * db + b, a * db + b)] = C64::new(table[a][b], 0.0);
                }
            }
            let mut truth = Truth::bare("classical", *classes);
            truth.d_l_list = Some(vec![1; *classes]);
            truth.rank_c = Some(*classes);
            Ok(Instance::State { dims, rho, truth, table: Some(table) })
        }
        Family::Pure { da, db, schmidt } => {
            let c = pure_coefficients(rng, *da, *db, *schmidt)?;
            let psi = crate::linalg::vectorize(&c);
            let mut truth = Truth::bare("pure", *schmidt);
            truth.rank_c = Some(schmidt * schmidt);
            truth.d_r_total = Some(1);
            Ok(Instance::State { dims: DimPair::new(*da, *db), rho: &psi * psi.adjoint(), truth, table: None })
        }
        Family::Planted { da, blocks } => {
            positive("dA", *da)?;
            if *da < 2 {
                return Err(Error::Invalid("planted structures need dA >= 2 to be identifiable".into()));
            }
            let planted = make_planted(&planted_blocks(rng, *da, blocks), rank_tol)?;
            let t = planted.truth;
            let truth = Truth {
                family: "planted".into(),
                d_min: t.d_min,
                d_r_total: Some(t.d_r_total),
                rank_c: Some(t.rank_c),
                d_l_list: Some(t.d_l),
                d_r_list: Some(t.d_r),
                weights: Some(t.weights),
            };
            Ok(Instance::State { dims: planted.state.dims, rho: planted.state.rho, truth, table: None })
        }
        Family::Product { da, db } => {
            positive("dA", *da)?;
            positive("dB", *db)?;
            let rho = kron(&random_density(rng, *da, *da), &random_density(rng, *db, *db));
            let mut truth = Truth::bare("product", 1);
            truth.rank_c = Some(1);
            truth.d_r_total = Some(*db);
            Ok(Instance::State { dims: DimPair::new(*da, *db), rho, truth, table: None })
        }
        Family::Random { da, db, rank } => {
            positive("dA", *da)?;
            positive("dB", *db)?;
            positive("rank", *rank)?;
            let rho = random_density(rng, da * db, (*rank).min(da * db));
            // generic states are incompressible once the support is restricted
            let d_b_support = (*db).min(da * rank);
            Ok(Instance::State {
                dims: DimPair::new(*da, *db),
                rho,
                truth: Truth::bare("random", d_b_support),
                table: None,
            })
        }
        Family::TwirlS3 => {
            let channel = make_twirl(&s3_regular_representation(), 1e-12)?;
            let mut truth = Truth::bare("twirl_s3", 4);
            truth.d_l_list = Some(vec![1, 1, 2]);
            truth.d_r_list = Some(vec![1, 1, 2]);
            Ok(Instance::Channel { channel, truth })
        }
    }
}

/// Draw a random block layout with `dL, dR` in `1..=3` and `d_B <= max_db`.
pub fn random_block_layout<R: Rng + ?Sized>(rng: &mut R, max_db: usize, max_blocks: usize) -> Vec<(usize, usize)> {
    loop {
        let n = rng.random_range(1..=max_blocks);
        let blocks: Vec<(usize, usize)> =
            (0..n).map(|_| (rng.random_range(1..=3usize), rng.random_range(1..=3usize))).collect();
        let db: usize = blocks.iter().map(|(l, r)| l * r).sum();
        if db <= max_db && db >= 2 {
            return blocks;
        }
    }
}
