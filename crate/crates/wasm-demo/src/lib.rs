//! Browser bindings for three interactive operations: the exact posterior
//! over clusterings of a small tuple, by-the-book AHC on a handful of
//! points, and DER scoring of two RTTM texts.
//!
//! Every function returns JSON (or a plain-text table) on success and an
//! error message otherwise, so the page needs no generated types.

use probdiar::clustering::{ahc_by_the_book_traced, AhcConfig};
use probdiar::evalkit::{parse_rttm, score_all, ScoringOptions};
use probdiar::partitions::{CrpParams, PartitionTables};
use probdiar::plda::{clustering_log_posterior, DiagPlda, ProbEmbedding};
use serde::Serialize;
use std::path::Path;
use wasm_bindgen::prelude::*;

/// Largest tuple the posterior view enumerates (B₇ = 877 clusterings).
const MAX_TUPLE: usize = 7;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Row-major `n × dim` means and precisions into embeddings.
fn embeddings(means: &[f64], precisions: &[f64], dim: usize) -> Result<Vec<ProbEmbedding>, String> {
    if dim == 0 || !means.len().is_multiple_of(dim) || means.len() != precisions.len() {
        return Err(format!(
            "expected equal-length means and precisions, a multiple of dim = {dim}; got {} and {}",
            means.len(),
            precisions.len()
        ));
    }
    means
        .chunks(dim)
        .zip(precisions.chunks(dim))
        .map(|(x, p)| ProbEmbedding::new(x.to_vec(), p.to_vec()).map_err(err))
        .collect()
}

#[derive(Serialize)]
struct Hypothesis {
    labels: Vec<usize>,
    probability: f64,
}

/// The `top` most probable clusterings of the tuple, most probable first.
#[wasm_bindgen]
pub fn posterior(
    means: Vec<f64>,
    precisions: Vec<f64>,
    within: Vec<f64>,
    concentration: f64,
    discount: f64,
    top: usize,
) -> Result<String, String> {
    let plda = DiagPlda::new(within).map_err(err)?;
    let tuple = embeddings(&means, &precisions, plda.dim())?;
    if tuple.is_empty() || tuple.len() > MAX_TUPLE {
        return Err(format!("give between 1 and {MAX_TUPLE} segments"));
    }
    let prior = CrpParams::new(concentration, discount).map_err(err)?;
    let tables = PartitionTables::build(tuple.len(), prior).map_err(err)?;
    let lp = clustering_log_posterior(&tuple, &plda, &tables).map_err(err)?;
    let mut order: Vec<usize> = (0..lp.len()).collect();
    order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]));
    let out: Vec<Hypothesis> = order
        .into_iter()
        .take(top.max(1))
        .map(|k| Hypothesis {
            labels: tables.label_string(k).one_based(),
            probability: lp[k].exp(),
        })
        .collect();
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct Merge {
    kept: usize,
    absorbed: usize,
    gain: f64,
    total_loglik: f64,
}

#[derive(Serialize)]
struct Clustering {
    labels: Vec<usize>,
    merges: Vec<Merge>,
}

/// By-the-book AHC with its merge trace.
#[wasm_bindgen]
pub fn cluster(
    means: Vec<f64>,
    precisions: Vec<f64>,
    within: Vec<f64>,
    sigma: f64,
    scale: f64,
) -> Result<String, String> {
    let plda = DiagPlda::new(within).map_err(err)?;
    let tuple = embeddings(&means, &precisions, plda.dim())?;
    let cfg = AhcConfig {
        sigma,
        likelihood_scale: scale,
        ..AhcConfig::default()
    };
    let (labels, steps) = ahc_by_the_book_traced(&tuple, &plda, &cfg).map_err(err)?;
    let out = Clustering {
        labels: labels.one_based(),
        merges: steps
            .iter()
            .map(|s| Merge {
                kept: s.kept,
                absorbed: s.absorbed,
                gain: s.delta,
                total_loglik: s.total_loglik,
            })
            .collect(),
    };
    serde_json::to_string(&out).map_err(err)
}

/// DER table for two RTTM texts.
#[wasm_bindgen]
pub fn score(reference: &str, hypothesis: &str, collar: f64) -> Result<String, String> {
    let refs = parse_rttm(reference, Path::new("reference")).map_err(err)?;
    let hyps = parse_rttm(hypothesis, Path::new("hypothesis")).map_err(err)?;
    let opts = ScoringOptions {
        collar,
        ..ScoringOptions::default()
    };
    Ok(score_all(&refs, &hyps, &opts).map_err(err)?.table())
}
