//! End-to-end analysis of one state: validation, sufficiency projections, the
//! Choi-state optimization, the block-structure oracle, and the explicit
//! compression pair, summarized in a [`Report`].

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::algebra::{decompose, lift_to_original, synthesize_compression, CompressionPair, KIDecomposition};
use crate::channel::{choi_state, petz_adjoint_residual, unital_shortcut, ChannelSpec};
use crate::choi::{bounds, build_choi, minimize_entropy, predicted_entropy, purify, Bounds, ChoiState};
use crate::choi::{OptimizationResult, OptimizerOptions, RestartOutcome};
use crate::config::Tolerances;
use crate::error::Result;
use crate::io::matrix_to_json;
use crate::linalg::{CMatrix, DimPair};
use crate::rng::{stream_rng, streams};
use crate::state::{validate_and_restrict, BipartiteState};
use crate::sufficiency::SufficiencyCore;

pub const SCHEMA: &str = "qlocomp/1";
const ENTROPY_TOL: f64 = 1e-6;
const ROUNDTRIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PipelineConfig {
    pub tolerances: Tolerances,
    pub optimizer: OptimizerOptions,
}

/// Wall-clock stopwatch; reads zero where no clock is available (wasm).
pub struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    pub fn lap_ms(&mut self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            let now = std::time::Instant::now();
            let ms = (now - self.start).as_secs_f64() * 1e3;
            self.start = now;
            ms
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DimsReport {
    pub original: DimPair,
    pub restricted: DimPair,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub validate: f64,
    pub sufficiency: f64,
    pub choi: f64,
    pub optimize: f64,
    pub oracle: f64,
    pub compress: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub rank_p1: usize,
    pub rank_pv: usize,
    pub modular_blocks: usize,
    pub kraus_route_residual: f64,
    pub pv_route_residual: f64,
    pub o_e_offdiag: f64,
    pub restriction_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelReport {
    #[serde(rename = "dA")]
    pub d_in: usize,
    #[serde(rename = "dB")]
    pub d_out: usize,
    pub kraus_count: usize,
    pub unital: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_min_unital_shortcut: Option<usize>,
    pub petz_adjoint_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub input_digest: String,
    pub dims: DimsReport,
    pub screen_nonabelian: bool,
    #[serde(rename = "rankC")]
    pub rank_c: usize,
    pub bounds: Bounds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_min_theorem1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_min_oracle: Option<usize>,
    #[serde(rename = "d_R_total_theorem1", skip_serializing_if = "Option::is_none")]
    pub d_r_total_theorem1: Option<usize>,
    #[serde(rename = "d_R_total_oracle", skip_serializing_if = "Option::is_none")]
    pub d_r_total_oracle: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<usize>,
    #[serde(rename = "d_L_list", skip_serializing_if = "Option::is_none")]
    pub d_l_list: Option<Vec<usize>>,
    #[serde(rename = "d_R_list", skip_serializing_if = "Option::is_none")]
    pub d_r_list: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_predicted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts_log: Option<Vec<RestartOutcome>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roundtrip_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelReport>,
    pub diagnostics: Diagnostics,
    pub config: PipelineConfig,
    pub warnings: Vec<String>,
    pub timings: Timings,
}

impl Report {
    pub fn has_mismatch(&self) -> bool {
        self.warnings.iter().any(|w| w.starts_with("MISMATCH"))
    }

    /// Pretty JSON without the `timings` field, for byte comparisons.
    pub fn deterministic_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("serializable");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("timings");
        }
        serde_json::to_string_pretty(&v).expect("serializable")
    }
}

/// SHA-256 over the input matrix, its dimensions, and the configuration.
pub fn input_digest(dims: DimPair, rho: &CMatrix, config: &PipelineConfig) -> String {
    #[derive(Serialize)]
    struct Canonical<'a> {
        dims: DimPair,
        rho: Vec<Vec<[f64; 2]>>,
        config: &'a PipelineConfig,
    }
    let text = serde_json::to_string(&Canonical { dims, rho: matrix_to_json(rho), config }).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything produced by a full run, for callers that need more than the report.
pub struct Analysis {
    pub state: BipartiteState,
    pub core: SufficiencyCore,
    pub choi: ChoiState,
    pub optimization: OptimizationResult,
    pub blocks: KIDecomposition,
    /// Compression on the restricted `H_B`.
    pub pair: CompressionPair,
    /// The same compression acting on the original `H_B`.
    pub pair_original: CompressionPair,
    pub report: Report,
}

struct Front {
    state: BipartiteState,
    core: SufficiencyCore,
    choi: ChoiState,
    report: Report,
    watch: Stopwatch,
}

fn front(dims: DimPair, raw: &CMatrix, config: &PipelineConfig) -> Result<Front> {
    let tol = &config.tolerances;
    let mut watch = Stopwatch::start();
    let mut timings = Timings::default();
    let state = validate_and_restrict(raw, dims, tol.rank_tol)?;
    timings.validate = watch.lap_ms();
    let core = SufficiencyCore::build(&state, tol)?;
    timings.sufficiency = watch.lap_ms();
    let choi = build_choi(&core.pv, state.dims.db, tol.rank_tol)?;
    timings.choi = watch.lap_ms();
    let mut warnings = Vec::new();
    if state.restricted {
        warnings.push(format!(
            "input restricted to the supports of its marginals: ({}, {}) -> ({}, {})",
            dims.da, dims.db, state.dims.da, state.dims.db
        ));
    }
    let report = Report {
        schema: SCHEMA,
        input_digest: input_digest(dims, raw, config),
        dims: DimsReport { original: dims, restricted: state.dims },
        screen_nonabelian: core.screen_nonabelian(tol),
        rank_c: choi.rank_c,
        bounds: bounds(&choi),
        d_min_theorem1: None,
        d_min_oracle: None,
        d_r_total_theorem1: None,
        d_r_total_oracle: None,
        cross_check: None,
        d_l_list: None,
        d_r_list: None,
        block_weights: None,
        entropy_min: None,
        entropy_predicted: None,
        optimizer_converged: None,
        restarts_log: None,
        roundtrip_error: None,
        channel: None,
        diagnostics: Diagnostics {
            rank_p1: core.rank_p1(),
            rank_pv: core.rank_pv(),
            modular_blocks: core.q_list.len(),
            kraus_route_residual: core.diagnostics.kraus_route_residual,
            pv_route_residual: core.diagnostics.pv_route_residual,
            o_e_offdiag: core.diagnostics.o_e_offdiag,
            restriction_residual: crate::state::restriction_residual(raw, &state),
        },
        config: *config,
        warnings,
        timings,
    };
    Ok(Front { state, core, choi, report, watch })
}

/// Rank bounds only: no optimization and no oracle.
pub fn run_bounds(dims: DimPair, raw: &CMatrix, config: &PipelineConfig) -> Result<Report> {
    Ok(front(dims, raw, config)?.report)
}

pub fn analyze(dims: DimPair, raw: &CMatrix, config: &PipelineConfig) -> Result<Analysis> {
    let Front { state, core, choi, mut report, mut watch } = front(dims, raw, config)?;
    let tol = &config.tolerances;
    let d_b = state.dims.db;

    let optimization = minimize_entropy(&purify(&choi), d_b, &config.optimizer, tol.opt_rank_tol)?;
    report.timings.optimize = watch.lap_ms();

    let mut rng = stream_rng(config.optimizer.seed, streams::ORACLE);
    let (_, blocks) = decompose(&state, &core, tol, &mut rng)?;
    report.timings.oracle = watch.lap_ms();

    let pair = synthesize_compression(&state, &blocks)?;
    let pair_original = lift_to_original(&pair, &state.iso_b);
    report.timings.compress = watch.lap_ms();

    let predicted = predicted_entropy(&blocks.d_l_list(), &blocks.d_r_list());
    let w = &mut report.warnings;
    if optimization.d_min != blocks.d_min {
        w.push(format!(
            "MISMATCH: entropy-optimization d_min = {} but block-structure oracle d_min = {}",
            optimization.d_min, blocks.d_min
        ));
    }
    if optimization.d_r_total != blocks.d_r_total {
        w.push(format!(
            "d_R_total from the optimized purification ({}) differs from the oracle ({})",
            optimization.d_r_total, blocks.d_r_total
        ));
    }
    if optimization.rank_check != choi.rank_c {
        w.push(format!(
            "cross_check rank {} differs from rank(C) = {}; optimizer not at block form",
            optimization.rank_check, choi.rank_c
        ));
    }
    if blocks.sum_dl_squared() != choi.rank_c {
        w.push(format!("rank(C) = {} but oracle sum dL^2 = {}", choi.rank_c, blocks.sum_dl_squared()));
    }
    if (optimization.entropy_min - predicted).abs() > ENTROPY_TOL {
        w.push(format!(
            "optimized entropy {:.9} differs from block prediction {:.9}",
            optimization.entropy_min, predicted
        ));
    }
    if !optimization.converged {
        w.push("no optimizer restart met the convergence criterion within max_iters".into());
    }
    if !report.screen_nonabelian && blocks.d_min < d_b {
        w.push("fixed-point algebra is abelian yet a nontrivial compression was found".into());
    }
    if pair.roundtrip_error > ROUNDTRIP_TOL {
        w.push(format!("round-trip error {:.3e} exceeds {ROUNDTRIP_TOL:.0e}", pair.roundtrip_error));
    }

    report.d_min_theorem1 = Some(optimization.d_min);
    report.d_min_oracle = Some(blocks.d_min);
    report.d_r_total_theorem1 = Some(optimization.d_r_total);
    report.d_r_total_oracle = Some(blocks.d_r_total);
    report.cross_check = Some(optimization.rank_check);
    report.d_l_list = Some(blocks.d_l_list());
    report.d_r_list = Some(blocks.d_r_list());
    report.block_weights = Some(blocks.blocks.iter().map(|b| b.p).collect());
    report.entropy_min = Some(optimization.entropy_min);
    report.entropy_predicted = Some(predicted);
    report.optimizer_converged = Some(optimization.converged);
    report.restarts_log = Some(optimization.restarts_log.clone());
    report.roundtrip_error = Some(pair.roundtrip_error);

    Ok(Analysis { state, core, choi, optimization, blocks, pair, pair_original, report })
}

/// Channel route: analyze the normalized Choi state, and for unital channels
/// also the commutant of the image.
pub fn analyze_channel(ch: &ChannelSpec, config: &PipelineConfig) -> Result<Analysis> {
    let tol = &config.tolerances;
    let raw = ch.choi_matrix();
    let dims = DimPair::new(ch.da_in, ch.db_out);
    // validates the channel's Choi state once up front so errors name the channel
    choi_state(ch, tol.rank_tol)?;
    let mut analysis = analyze(dims, &raw, config)?;
    let unital = ch.is_unital(1e-9);
    let shortcut = if unital {
        let mut rng = stream_rng(config.optimizer.seed, streams::ORACLE + 1);
        Some(unital_shortcut(ch, 1e-9, &mut rng)?.d_min_fast)
    } else {
        None
    };
    if let Some(fast) = shortcut {
        if Some(fast) != analysis.report.d_min_oracle {
            analysis.report.warnings.push(format!(
                "MISMATCH: unital shortcut d_min = {fast} but general pipeline d_min = {}",
                analysis.blocks.d_min
            ));
        }
    }
    analysis.report.channel = Some(ChannelReport {
        d_in: ch.da_in,
        d_out: ch.db_out,
        kraus_count: ch.kraus.len(),
        unital,
        d_min_unital_shortcut: shortcut,
        petz_adjoint_residual: petz_adjoint_residual(ch, tol.rank_tol)?,
    });
    Ok(analysis)
}

/// `(id (x) E)(rho)` on the original input, with `E` the lifted compression.
pub fn compressed_state(analysis: &Analysis) -> (DimPair, CMatrix) {
    let rho = analysis.state.embed();
    let da = analysis.state.original_dims.da;
    let out = crate::algebra::apply_on_b(&rho, da, &analysis.pair_original.e_kraus);
    (DimPair::new(da, analysis.pair_original.d_btilde), crate::linalg::hermitian_part(&out))
}
