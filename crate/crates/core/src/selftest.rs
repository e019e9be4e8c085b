//! Invariant suite run by `qlocomp selftest`: generated instances go through
//! the whole pipeline and every module-level invariant is checked on them.

use rand::Rng;
use serde::Serialize;

use crate::algebra::{apply_channel, commutant_basis, oracle_dmin, petz_roundtrip_error, tp_residual};
use crate::channel::{
    make_twirl, petz_adjoint_residual, random_unitary_mixture, s3_regular_representation, unital_shortcut,
    z2_representation,
};
use crate::choi::{entropy_and_gradient, entropy_bbbar, purification_marginal, purify};
use crate::gen::{generate, Family, Instance, Truth};
use crate::linalg::{
    expm_i_herm, frobenius, herm_eig_unchecked, hermitian_deviation, identity, is_unitary, kron, matrix_fn, max_abs,
    partial_trace, random_density, random_hermitian, random_unitary, reshuffle, trace, vectorize, CMatrix, DimPair,
    MatrixFn, Side, C64,
};
use crate::pipeline::{analyze, analyze_channel, Analysis, PipelineConfig};
use crate::rng::{stream_rng, streams};
use crate::state::validate_and_restrict;
use crate::sufficiency::{apply_omega_tilde, choi_of_map};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub quick: bool,
    pub seed: u64,
    pub config: PipelineConfig,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions { quick: false, seed: 7, config: PipelineConfig::default() }
    }
}

#[derive(Default)]
struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    fn record(&mut self, name: &str, ok: bool, detail: impl FnOnce() -> String) {
        let idx = match self.checks.iter().position(|c| c.name == name) {
            Some(i) => i,
            None => {
                self.checks.push(Check { name: name.into(), passed: true, cases: 0, failures: vec![] });
                self.checks.len() - 1
            }
        };
        let c = &mut self.checks[idx];
        c.cases += 1;
        if !ok {
            c.passed = false;
            if c.failures.len() < 5 {
                c.failures.push(detail());
            }
        }
    }

    fn le(&mut self, name: &str, label: &str, value: f64, bound: f64) {
        self.record(name, value <= bound, || format!("{label}: {value:.3e} > {bound:.0e}"));
    }

    fn eq<T: PartialEq + std::fmt::Debug>(&mut self, name: &str, label: &str, got: T, want: T) {
        let ok = got == want;
        self.record(name, ok, || format!("{label}: got {got:?}, expected {want:?}"));
    }
}

fn instance_list(quick: bool) -> Vec<Family> {
    use Family::*;
    let mut list = vec![
        Classical { da: 2, db: 3, classes: 2 },
        Classical { da: 3, db: 4, classes: 3 },
        Pure { da: 2, db: 2, schmidt: 2 },
        Pure { da: 3, db: 3, schmidt: 2 },
        Planted { da: 2, blocks: vec![(1, 1), (2, 1)] },
        Planted { da: 2, blocks: vec![(2, 2)] },
        Planted { da: 2, blocks: vec![(1, 2), (1, 2)] },
        Product { da: 2, db: 2 },
        Random { da: 2, db: 2, rank: 4 },
    ];
    if !quick {
        list.extend([
            Classical { da: 4, db: 6, classes: 3 },
            Pure { da: 4, db: 4, schmidt: 3 },
            Planted { da: 2, blocks: vec![(1, 1), (2, 1), (1, 2)] },
            Planted { da: 2, blocks: vec![(2, 2), (1, 2)] },
            Planted { da: 2, blocks: vec![(3, 1), (1, 3), (2, 1)] },
            Product { da: 3, db: 3 },
            Random { da: 3, db: 3, rank: 9 },
        ]);
    }
    list
}

fn label(f: &Family) -> String {
    format!("{f:?}")
}

/// Run the suite; `progress` is called with each instance label as it starts.
pub fn run(opts: &SelftestOptions, mut progress: impl FnMut(&str)) -> Vec<Check> {
    let mut suite = Suite::default();
    let tol = opts.config.tolerances;

    progress("kernel identities");
    kernel_checks(&mut suite, opts.seed);

    progress("entropy gradient");
    gradient_checks(&mut suite, opts.seed, if opts.quick { 4 } else { 10 });

    for (k, fam) in instance_list(opts.quick).iter().enumerate() {
        let name = label(fam);
        progress(&name);
        let mut rng = stream_rng(opts.seed, streams::SELFTEST_BASE + k as u64);
        let inst = match generate(fam, &mut rng, tol.rank_tol) {
            Ok(i) => i,
            Err(e) => {
                suite.record("generators", false, || format!("{name}: {e}"));
                continue;
            }
        };
        let Instance::State { dims, rho, truth, .. } = inst else { continue };
        match analyze(dims, &rho, &opts.config) {
            Ok(a) => instance_checks(&mut suite, &name, dims, &rho, &a, &truth, &opts.config, &mut rng),
            Err(e) => suite.record("pipeline runs", false, || format!("{name}: {e}")),
        }
    }

    progress("channels");
    channel_checks(&mut suite, opts);

    progress("determinism");
    let fam = Family::Classical { da: 2, db: 3, classes: 2 };
    let mut r1 = stream_rng(opts.seed, streams::SELFTEST_BASE + 999);
    let mut r2 = stream_rng(opts.seed, streams::SELFTEST_BASE + 999);
    if let (Ok(Instance::State { dims, rho, .. }), Ok(Instance::State { rho: rho2, .. })) =
        (generate(&fam, &mut r1, tol.rank_tol), generate(&fam, &mut r2, tol.rank_tol))
    {
        suite.record("determinism", rho == rho2, || "generator output differs".into());
        let a = analyze(dims, &rho, &opts.config).map(|a| a.report.deterministic_json());
        let b = analyze(dims, &rho, &opts.config).map(|a| a.report.deterministic_json());
        suite.record("determinism", matches!((&a, &b), (Ok(x), Ok(y)) if x == y), || "reports differ".into());
    }

    suite.checks
}

fn kernel_checks(s: &mut Suite, seed: u64) {
    let mut rng = stream_rng(seed, streams::SELFTEST_BASE + 500);
    for n in [4usize, 16, 64] {
        let h = random_hermitian(&mut rng, n);
        let e = herm_eig_unchecked(&h);
        s.le("herm_eig reconstruction", &format!("n={n}"), frobenius(&(e.reconstruct() - &h)) / frobenius(&h), 1e-10);
    }
    let m = random_density(&mut rng, 4, 4);
    s.le(
        "reshuffle involution",
        "4x4",
        max_abs(&(reshuffle(&reshuffle(&m, DimPair::new(2, 2)).unwrap(), DimPair::new(2, 2)).unwrap() - &m)),
        0.0,
    );
    let x = crate::linalg::random_complex_gaussian(&mut rng, 2, 2);
    let v = vectorize(&x);
    let lhs = reshuffle(&kron(&x, &x.map(|z| z.conj())), DimPair::new(2, 2)).unwrap();
    s.le("reshuffle of X (x) conj(X)", "2x2", max_abs(&(lhs - &v * v.adjoint())), 1e-12);
    let a = random_density(&mut rng, 3, 3);
    let b = random_density(&mut rng, 2, 2);
    let ab = kron(&a, &b);
    let pa = partial_trace(&ab, DimPair::new(3, 2), Side::B).unwrap();
    s.le("partial trace", "tr_B(a (x) b)", max_abs(&(pa - &a)), 1e-12);
    let rho = random_density(&mut rng, 4, 2);
    let sq = matrix_fn(&rho, MatrixFn::Sqrt, 1e-9).unwrap();
    s.le("matrix sqrt", "rank-2 4x4", max_abs(&(&sq * &sq - &rho)), 1e-10);
    let inv = matrix_fn(&rho, MatrixFn::InvSqrt, 1e-9).unwrap();
    let proj = &inv * &rho * &inv;
    s.le("matrix inv_sqrt", "support projector", max_abs(&(&proj * &proj - &proj)), 1e-9);
}

fn gradient_checks(s: &mut Suite, seed: u64, count: usize) {
    let mut rng = stream_rng(seed, streams::SELFTEST_BASE + 600);
    for k in 0..count {
        let d = 2 + k % 3;
        let n = d * d;
        let rho = random_density(&mut rng, n, n);
        let psi = matrix_fn(&rho, MatrixFn::Sqrt, 1e-12).unwrap() * random_unitary(&mut rng, n);
        let (_, grad) = entropy_and_gradient(&psi, d);
        let h = random_hermitian(&mut rng, n);
        let eps = 1e-5;
        let fd = (entropy_bbbar(&(&psi * expm_i_herm(&h.scale(eps))), d)
            - entropy_bbbar(&(&psi * expm_i_herm(&h.scale(-eps))), d))
            / (2.0 * eps);
        let an = trace(&(&grad * &h)).re;
        let rel = (fd - an).abs() / an.abs().max(1e-3);
        s.le("entropy gradient vs finite differences", &format!("d={d}"), rel, 1e-5);
    }
}

fn random_effect<R: Rng + ?Sized>(rng: &mut R, d: usize) -> CMatrix {
    let u = random_unitary(rng, d);
    let diag = CMatrix::from_diagonal(&crate::linalg::CVector::from_fn(d, |_, _| C64::new(rng.random::<f64>(), 0.0)));
    &u * diag * u.adjoint()
}

#[allow(clippy::too_many_arguments)]
fn instance_checks<R: Rng + ?Sized>(
    s: &mut Suite,
    name: &str,
    dims: DimPair,
    rho: &CMatrix,
    a: &Analysis,
    truth: &Truth,
    config: &PipelineConfig,
    rng: &mut R,
) {
    let tol = &config.tolerances;
    let st = &a.state;
    let core = &a.core;
    let d_b = st.dims.db;
    let r = &a.report;

    // state model
    let again = validate_and_restrict(&st.rho, st.dims, tol.rank_tol);
    s.record("validate_and_restrict idempotent", matches!(&again, Ok(x) if !x.restricted), || name.into());
    s.le("restriction residual", name, crate::state::restriction_residual(rho, st), 1e-9);
    let _ = dims;

    // sufficiency core
    s.le("J marginal is identity", name, core.unitality_residual(), 1e-9);
    s.le("Kraus orthogonality", name, core.diagnostics.orthogonality_residual, 1e-9);
    s.le("E_T self-adjoint", name, core.et_hermiticity(), 1e-9);
    let et_eigs = herm_eig_unchecked(&crate::linalg::hermitian_part(&core.e_t)).values;
    let spread = et_eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    s.le("E_T spectrum in [-1, 1]", name, spread - 1.0, 1e-9);
    s.le("Kraus-route equality", name, core.diagnostics.kraus_route_residual, 1e-9);
    s.le("Anderson vs SVD-intersection P_V", name, core.diagnostics.pv_route_residual, tol.agree_tol);
    for (label, p) in [("P_1", &core.p1), ("P_V", &core.pv)] {
        s.le(
            "projections are orthogonal",
            &format!("{name} {label}"),
            max_abs(&(p * p - p)).max(hermitian_deviation(p)),
            1e-9,
        );
    }
    for q in &core.q_list {
        let qq = &q.basis * q.basis.adjoint();
        s.le("projections are orthogonal", &format!("{name} Q"), max_abs(&(&qq * &qq - &qq)), 1e-9);
    }
    let vi = vectorize(&identity(d_b));
    for (label, m) in [("E_T", &core.e_t), ("P_1", &core.p1), ("P_V", &core.pv)] {
        s.le("identity is fixed", &format!("{name} {label}"), (m * &vi - &vi).norm(), 1e-9);
    }
    s.le("E_T P_V = P_V", name, max_abs(&(&core.e_t * &core.pv - &core.pv)), 1e-8);
    s.le("[RL, P_V] = 0", name, frobenius(&(&core.rl * &core.pv - &core.pv * &core.rl)), 1e-8);
    let choi_tilde = choi_of_map(st.dims.da, d_b, |x| apply_omega_tilde(&core.kraus, x));
    if let Ok(sqrt_j) = matrix_fn(&core.j, MatrixFn::Sqrt, tol.rank_tol) {
        s.le("Choi of deformed map is sqrt(J)", name, max_abs(&(choi_tilde - sqrt_j)), 1e-9);
    }
    if d_b <= 4 {
        let comm = commutant_basis(&core.image_generators(), d_b, 1e-9).len();
        s.eq("rank(P_1) = dim commutant of image", name, core.rank_p1(), comm);
    }

    // Choi state and optimizer
    let psi = purify(&a.choi);
    s.le("purification reproduces C", name, frobenius(&(purification_marginal(&psi) - &a.choi.c)), 1e-9);
    let opt = &a.optimization;
    s.record("U_opt unitary", is_unitary(&opt.u_opt, 1e-9), || name.into());
    s.record("best restart is the minimum", opt.restarts_log.iter().all(|x| x.entropy >= opt.entropy_min), || {
        name.into()
    });
    let (lo, hi) = (r.bounds.lower, r.bounds.upper);
    s.record("rank bounds bracket d_min", lo <= opt.d_min && opt.d_min <= hi, || {
        format!("{name}: {lo} <= {} <= {hi}", opt.d_min)
    });
    let pred = r.entropy_predicted.unwrap_or(f64::NAN);
    s.le("entropy optimum matches block prediction", name, (opt.entropy_min - pred).abs(), 1e-6);
    s.eq("cross_check = rank(C)", name, opt.rank_check, a.choi.rank_c);

    // oracle and compression
    let ki = &a.blocks;
    let sum_pi = ki.blocks.iter().fold(CMatrix::zeros(d_b, d_b), |acc, b| acc + &b.pi);
    s.le("central projections resolve identity", name, max_abs(&(sum_pi - identity(d_b))), 1e-8);
    for (i, bi) in ki.blocks.iter().enumerate() {
        for bj in ki.blocks.iter().skip(i + 1) {
            s.le("central projections orthogonal", name, max_abs(&(&bi.pi * &bj.pi)), 1e-8);
        }
        s.le("block isometries", name, max_abs(&(bi.u_iso.adjoint() * &bi.u_iso - identity(bi.d_l * bi.d_r))), 1e-8);
    }
    s.eq("sum dL dR = d_B", name, ki.d_b(), d_b);
    s.eq("rank(C) = sum dL^2", name, a.choi.rank_c, ki.sum_dl_squared());
    s.le("block weights reproduce rho_B", name, ki.marginal_residual(&st.rho_b()), 1e-8);
    s.le("exact round trip", name, a.pair.roundtrip_error, 1e-8);
    s.le(
        "compression channels trace preserving",
        name,
        tp_residual(&a.pair.e_kraus).max(tp_residual(&a.pair.r_kraus)),
        1e-9,
    );
    s.le("original-space compression trace preserving", name, tp_residual(&a.pair_original.e_kraus), 1e-9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = random_effect(rng, st.dims.da);
        if let Ok(mu) = st.conditional_state(&m) {
            let back = apply_channel(&apply_channel(&mu, &a.pair.e_kraus), &a.pair.r_kraus);
            worst = worst.max(max_abs(&(back - mu)));
        }
    }
    s.le("conditional states recovered", name, worst, 1e-8);
    if let Ok(e) = petz_roundtrip_error(st, &a.pair, tol.rank_tol) {
        s.le("Petz recovery is exact", name, e, 1e-8);
    }
    let compressed = crate::algebra::apply_on_b(&st.rho, st.dims.da, &a.pair.e_kraus);
    let cdims = DimPair::new(st.dims.da, a.pair.d_btilde);
    let mut orng = stream_rng(config.optimizer.seed, streams::ORACLE + 7);
    match validate_and_restrict(&compressed, cdims, tol.rank_tol).and_then(|c| oracle_dmin(&c, tol, &mut orng)) {
        Ok(o) => {
            s.eq("compression is idempotent", &format!("{name} d_min"), o.d_min, ki.d_min);
            s.record("compression is idempotent", o.d_r_list.iter().all(|&x| x == 1), || {
                format!("{name}: dR {:?}", o.d_r_list)
            });
        }
        Err(e) => s.record("compression is idempotent", false, || format!("{name}: {e}")),
    }

    // cross-route and ground truth
    s.eq("entropy d_min = oracle d_min", name, opt.d_min, ki.d_min);
    s.eq("d_R_total agrees", name, opt.d_r_total, ki.d_r_total);
    s.eq("d_min matches generator truth", name, ki.d_min, truth.d_min);
    if let Some(rc) = truth.rank_c {
        s.eq("rank(C) matches generator truth", name, a.choi.rank_c, rc);
    }
    if let Some(dr) = truth.d_r_total {
        s.eq("d_R_total matches generator truth", name, ki.d_r_total, dr);
    }
    if !r.screen_nonabelian {
        s.eq("abelian screen implies no compression", name, ki.d_min, d_b);
    }
    s.record("no MISMATCH warnings", !r.has_mismatch(), || format!("{name}: {:?}", r.warnings));
}

fn channel_checks(s: &mut Suite, opts: &SelftestOptions) {
    let mut rng = stream_rng(opts.seed, streams::SELFTEST_BASE + 700);
    let count = if opts.quick { 4 } else { 10 };
    for k in 0..count {
        let d = 2 + k % 3;
        let ch = random_unitary_mixture(&mut rng, d, 1 + k % 3);
        let fast = unital_shortcut(&ch, 1e-9, &mut rng).map(|u| u.d_min_fast);
        let full = crate::channel::choi_state(&ch, opts.config.tolerances.rank_tol)
            .and_then(|st| oracle_dmin(&st, &opts.config.tolerances, &mut rng))
            .map(|o| o.d_min);
        s.record("unital shortcut agrees with pipeline", matches!((&fast, &full), (Ok(x), Ok(y)) if x == y), || {
            format!("d={d}: {fast:?} vs {full:?}")
        });
        let ch2 = crate::channel::random_channel(&mut rng, d, 2 + (k + 1) % 3, 2);
        match petz_adjoint_residual(&ch2, opts.config.tolerances.rank_tol) {
            Ok(r) => s.le("J equals Choi of adjoint Petz map", &format!("channel {k}"), r, 1e-8),
            Err(e) => s.record("J equals Choi of adjoint Petz map", false, || e.to_string()),
        }
    }
    let z2 = make_twirl(&z2_representation(), 1e-12).expect("Z2 is a group");
    let twirls = if opts.quick {
        vec![("Z2", z2, 2usize)]
    } else {
        vec![("Z2", z2, 2), ("S3", make_twirl(&s3_regular_representation(), 1e-12).expect("S3 is a group"), 4)]
    };
    for (label, t, want) in twirls {
        let tt = t.then(&t).expect("square channel");
        s.le("twirl idempotence", label, max_abs(&(tt.choi_matrix() - t.choi_matrix())), 1e-9);
        match analyze_channel(&t, &opts.config) {
            Ok(a) => {
                s.eq("twirl d_min", &format!("{label} entropy route"), a.optimization.d_min, want);
                s.eq("twirl d_min", &format!("{label} oracle"), a.blocks.d_min, want);
                s.record("no MISMATCH warnings", !a.report.has_mismatch(), || {
                    format!("{label}: {:?}", a.report.warnings)
                });
            }
            Err(e) => s.record("twirl d_min", false, || format!("{label}: {e}")),
        }
    }
}
