//! Browser demo. Every export returns a JSON string (or an error string
//! thrown as a JS exception).

use serde::Serialize;
use tlsxai::dataset::train_test_split;
use tlsxai::explain::{explain_rows, global_summary, local_report, LocalReport};
use tlsxai::features::{discretize, markov_features, FeatureSchema, TransitionMatrix};
use tlsxai::model::{evaluate, train_dataset, HyperParams, MetricsReport, ModelKind};
use tlsxai::synth::synthetic_dataset;
use wasm_bindgen::prelude::*;

const N_STATES: usize = 3;

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct MarkovOut {
    size_states: Vec<usize>,
    iat_states: Vec<usize>,
    size_matrix: TransitionMatrix,
    iat_matrix: TransitionMatrix,
}

/// Discretizes packet sizes (bytes) and inter-arrival times (ms) and returns
/// both state sequences and their transition matrices.
#[wasm_bindgen]
pub fn markov_demo(sizes: Vec<f64>, iats: Vec<f64>, bin_width: f64) -> Result<String, JsError> {
    if !(bin_width > 0.0) {
        return Err(JsError::new("bin width must be positive"));
    }
    let m = markov_features(&sizes, &iats, bin_width, N_STATES);
    to_json(&MarkovOut {
        size_states: discretize(&sizes, bin_width, N_STATES),
        iat_states: discretize(&iats, bin_width, N_STATES),
        size_matrix: m.size_matrix,
        iat_matrix: m.iat_matrix,
    })
}

#[wasm_bindgen]
pub fn metrics_from_confusion(tp: u32, tn: u32, fp: u32, fn_: u32) -> Result<String, JsError> {
    to_json(&MetricsReport::from_confusion(tp.into(), tn.into(), fp.into(), fn_.into()))
}

#[derive(Serialize)]
struct RankedFeature {
    feature: String,
    mean_abs_phi: f64,
}

#[derive(Serialize)]
struct TrainExplainOut {
    model: ModelKind,
    n_train: usize,
    n_test: usize,
    test: MetricsReport,
    top_features: Vec<RankedFeature>,
    examples: Vec<LocalReport>,
}

/// Trains a model on a small synthetic corpus, scores a held-out split and
/// explains it. `model` is `rf`, `xgb` or `extra`.
#[wasm_bindgen]
pub fn train_and_explain(model: &str, flows_per_class: u32, seed: u32, top_k: u32) -> Result<String, JsError> {
    let err = |e: &dyn std::fmt::Display| JsError::new(&e.to_string());
    let kind: ModelKind = model.parse().map_err(|e| err(&e))?;
    let n = (flows_per_class as usize).clamp(10, 1000);
    let schema = FeatureSchema::default();
    let ds = synthetic_dataset(n, n, u64::from(seed), &schema).map_err(|e| err(&e))?;
    let (tr, te) = train_test_split(&ds.labels(), 0.2, u64::from(seed)).map_err(|e| err(&e))?;
    let (train, test) = (ds.subset(&tr), ds.subset(&te));
    let mut params = HyperParams::for_kind(kind);
    params.n_estimators = params.n_estimators.min(30);
    params.seed = u64::from(seed);
    let m = train_dataset(kind, &train, &params).map_err(|e| err(&e))?;
    let metrics = evaluate(&m, &test).map_err(|e| err(&e))?;

    let rows = test.rows();
    let ids: Vec<String> = test.vectors.iter().map(|v| v.flow_id.clone()).collect();
    let expls = explain_rows(&m, &rows, &ids).map_err(|e| err(&e))?;
    let k = top_k as usize;
    let summary = global_summary(&expls, &ds.feature_names, k).map_err(|e| err(&e))?;
    let top_features = summary
        .features
        .iter()
        .take(k)
        .map(|f| RankedFeature {
            feature: f.feature.clone(),
            mean_abs_phi: f.mean_abs_phi,
        })
        .collect();
    // first flow of each class
    let mut examples = Vec::new();
    for label in [tlsxai::features::Label::Malware, tlsxai::features::Label::Normal] {
        if let Some(i) = test.vectors.iter().position(|v| v.label == Some(label)) {
            examples.push(local_report(&expls[i], &ds.feature_names, rows[i], k));
        }
    }
    to_json(&TrainExplainOut {
        model: kind,
        n_train: train.len(),
        n_test: test.len(),
        test: metrics,
        top_features,
        examples,
    })
}
