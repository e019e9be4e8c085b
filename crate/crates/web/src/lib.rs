//! wasm-bindgen exports for the static demo page in `www/`. Every export
//! takes plain values and returns a JSON string for the page to render.

use qlocomp::channel::{make_twirl, s3_regular_representation, z2_representation};
use qlocomp::gen::{generate, parse_blocks, Family, Instance};
use qlocomp::linalg::{CMatrix, DimPair, C64};
use qlocomp::pipeline::{analyze, analyze_channel, Analysis, PipelineConfig};
use qlocomp::rng::{stream_rng, streams};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// What the page shows for one analysis.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub d_a: usize,
    pub d_b: usize,
    pub rank_c: usize,
    pub lower: usize,
    pub upper: usize,
    pub d_min_theorem1: usize,
    pub d_min_oracle: usize,
    pub d_l: Vec<usize>,
    pub d_r: Vec<usize>,
    pub weights: Vec<f64>,
    pub entropy_min: f64,
    pub entropy_predicted: f64,
    pub restart_entropies: Vec<f64>,
    pub roundtrip_error: f64,
    pub screen_nonabelian: bool,
    pub warnings: Vec<String>,
    /// Ground truth when the instance was generated with a known answer.
    pub expected_d_min: Option<usize>,
}

fn summarize(a: &Analysis, expected: Option<usize>) -> Summary {
    let r = &a.report;
    Summary {
        d_a: r.dims.original.da,
        d_b: r.dims.original.db,
        rank_c: r.rank_c,
        lower: r.bounds.lower,
        upper: r.bounds.upper,
        d_min_theorem1: a.optimization.d_min,
        d_min_oracle: a.blocks.d_min,
        d_l: a.blocks.d_l_list(),
        d_r: a.blocks.d_r_list(),
        weights: a.blocks.blocks.iter().map(|b| b.p).collect(),
        entropy_min: a.optimization.entropy_min,
        entropy_predicted: r.entropy_predicted.unwrap_or(f64::NAN),
        restart_entropies: a.optimization.restarts_log.iter().map(|x| x.entropy).collect(),
        roundtrip_error: a.pair.roundtrip_error,
        screen_nonabelian: r.screen_nonabelian,
        warnings: r.warnings.clone(),
        expected_d_min: expected,
    }
}

fn config(seed: u64, restarts: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.optimizer.seed = seed;
    c.optimizer.restarts = restarts.clamp(1, 64);
    c
}

/// Plant a block structure such as `"1x1,2x1"` and recover it.
pub fn planted_summary(blocks: &str, da: usize, seed: u64, restarts: usize) -> Result<Summary, String> {
    let blocks = parse_blocks(blocks).map_err(|e| e.to_string())?;
    let db: usize = blocks.iter().map(|(l, r)| l * r).sum();
    if db > 8 {
        return Err(format!("d_B = {db} is too large for the demo (limit 8)"));
    }
    let cfg = config(seed, restarts);
    let mut rng = stream_rng(seed, streams::GEN_BASE);
    let inst =
        generate(&Family::Planted { da, blocks }, &mut rng, cfg.tolerances.rank_tol).map_err(|e| e.to_string())?;
    let Instance::State { dims, rho, truth, .. } = inst else { unreachable!("planted families are states") };
    let a = analyze(dims, &rho, &cfg).map_err(|e| e.to_string())?;
    Ok(summarize(&a, Some(truth.d_min)))
}

/// A classical joint distribution given as rows `a`, columns `b`; entries
/// are normalized here so the page can accept raw counts.
pub fn classical_summary(table: &[Vec<f64>], seed: u64, restarts: usize) -> Result<Summary, String> {
    let da = table.len();
    let db = table.first().map(|r| r.len()).unwrap_or(0);
    if da == 0 || db == 0 || table.iter().any(|r| r.len() != db) {
        return Err("the table must be a non-empty rectangle".into());
    }
    if da * db > 48 || db > 8 {
        return Err("table too large for the demo (d_B <= 8, d_A d_B <= 48)".into());
    }
    if table.iter().flatten().any(|&x| !x.is_finite() || x < 0.0) {
        return Err("entries must be non-negative numbers".into());
    }
    let total: f64 = table.iter().flatten().sum();
    if total <= 0.0 {
        return Err("the table sums to zero".into());
    }
    let mut rho = CMatrix::zeros(da * db, da * db);
    for (a, row) in table.iter().enumerate() {
        for (b, &x) in row.iter().enumerate() {
            rho[(a * db + b, a * db + b)] = C64::new(x / total, 0.0);
        }
    }
    let a = analyze(DimPair::new(da, db), &rho, &config(seed, restarts)).map_err(|e| e.to_string())?;
    let expected = qlocomp::gen::distinct_conditionals(table, 1e-10);
    Ok(summarize(&a, Some(expected)))
}

/// Twirl over `"s3"` (regular representation, d = 6) or `"z2"` ({I, X}).
pub fn twirl_summary(group: &str, seed: u64, restarts: usize) -> Result<Summary, String> {
    let (reps, expected) = match group {
        "s3" => (s3_regular_representation(), 4),
        "z2" => (z2_representation(), 2),
        other => return Err(format!("unknown group '{other}'")),
    };
    let ch = make_twirl(&reps, 1e-12).map_err(|e| e.to_string())?;
    let a = analyze_channel(&ch, &config(seed, restarts)).map_err(|e| e.to_string())?;
    Ok(summarize(&a, Some(expected)))
}

fn to_js(result: Result<Summary, String>) -> Result<String, JsError> {
    let s = result.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&s).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn analyze_planted(blocks: &str, da: usize, seed: u64, restarts: usize) -> Result<String, JsError> {
    to_js(planted_summary(blocks, da, seed, restarts))
}

/// `table_json` is a JSON array of rows.
#[wasm_bindgen]
pub fn analyze_classical(table_json: &str, seed: u64, restarts: usize) -> Result<String, JsError> {
    let table: Vec<Vec<f64>> = serde_json::from_str(table_json).map_err(|e| JsError::new(&e.to_string()))?;
    to_js(classical_summary(&table, seed, restarts))
}

#[wasm_bindgen]
pub fn analyze_twirl(group: &str, seed: u64, restarts: usize) -> Result<String, JsError> {
    to_js(twirl_summary(group, seed, restarts))
}
