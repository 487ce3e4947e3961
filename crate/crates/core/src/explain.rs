//! Exact Shapley attributions for tree ensembles.
//!
//! [`tree_shap`] is the polynomial path-dependent algorithm; node covers act
//! as the conditioning distribution. [`brute_force_shap`] enumerates every
//! coalition with the same conditional expectation and exists to check it.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{logit, sigmoid, ModelError, Tree, TreeEnsemble};
use crate::par::map_indexed;

/// Largest feature count the subset enumeration accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 14;
/// Relative tolerance of the efficiency gate.
pub const EFFICIENCY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("tree {tree} node {node} has no usable cover")]
    MissingCover { tree: usize, node: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("brute force supports at most {BRUTE_FORCE_MAX_FEATURES} features, got {0}")]
    TooManyFeatures(usize),
    #[error("no explanations to summarize")]
    EmptyInput,
    #[error("explanations have differing dimensions")]
    RaggedInput,
    #[error("sample {flow_id}: base + sum(phi) misses f(x) by {gap:e}")]
    EfficiencyViolation { flow_id: String, gap: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Space the attributions add up in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSpace {
    /// Log-odds; boosted models.
    Margin,
    /// Mean leaf probability; averaging models.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub flow_id: String,
    pub output_space: OutputSpace,
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub fx: f64,
}

impl ShapExplanation {
    pub fn efficiency_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.fx).abs()
    }

    pub fn check_efficiency(&self) -> Result<(), ExplainError> {
        let gap = self.efficiency_gap();
        if gap <= EFFICIENCY_TOLERANCE * self.fx.abs().max(1.0) {
            Ok(())
        } else {
            Err(ExplainError::EfficiencyViolation {
                flow_id: self.flow_id.clone(),
                gap,
            })
        }
    }

    /// Malware probability at `x`.
    pub fn probability(&self) -> f64 {
        match self.output_space {
            OutputSpace::Margin => sigmoid(self.fx),
            OutputSpace::Probability => self.fx,
        }
    }

    /// `(base, fx)` as log-odds for display.
    pub fn margins(&self) -> (f64, f64) {
        match self.output_space {
            OutputSpace::Margin => (self.base_value, self.fx),
            OutputSpace::Probability => (logit(self.base_value), logit(self.fx)),
        }
    }
}

fn check_covers(model: &TreeEnsemble) -> Result<(), ExplainError> {
    for (t, tree) in model.trees.iter().enumerate() {
        for (i, n) in tree.nodes.iter().enumerate() {
            if !(n.cover > 0.0 && n.cover.is_finite()) {
                return Err(ExplainError::MissingCover { tree: t, node: i });
            }
        }
    }
    Ok(())
}

// --- Path-dependent TreeSHAP --------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let lf = l as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i as f64 + 1.0) / (lf + 1.0);
        path[i].weight = zero * path[i].weight * (lf - i as f64) / (lf + 1.0);
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let lf = l as f64;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut n = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = n * (lf + 1.0) / ((j as f64 + 1.0) * one);
            n = t - path[j].weight * zero * (lf - j as f64) / (lf + 1.0);
        } else {
            path[j].weight = path[j].weight * (lf + 1.0) / (zero * (lf - j as f64));
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let lf = l as f64;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut n = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = n * (lf + 1.0) / ((j as f64 + 1.0) * one);
            total += t;
            n = path[j].weight - t * zero * (lf - j as f64) / (lf + 1.0);
        } else {
            total += path[j].weight / zero / ((lf - j as f64) / (lf + 1.0));
        }
    }
    total
}

fn recurse(
    tree: &Tree,
    x: &[f64],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
    scale: f64,
) {
    extend(&mut path, zero, one, feature);
    let n = &tree.nodes[node];
    let (Some(f), Some(l), Some(r)) = (n.feature, n.left, n.right) else {
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            phi[e.feature.expect("non-root path entry")] += w * (e.one - e.zero) * n.value * scale;
        }
        return;
    };
    let (hot, cold) = if x[f] < n.threshold { (l, r) } else { (r, l) };
    let (mut iz, mut io) = (1.0, 1.0);
    if let Some(k) = (1..path.len()).find(|&k| path[k].feature == Some(f)) {
        iz = path[k].zero;
        io = path[k].one;
        unwind(&mut path, k);
    }
    let cover = n.cover;
    let (hc, cc) = (tree.nodes[hot].cover, tree.nodes[cold].cover);
    recurse(tree, x, phi, hot, path.clone(), iz * hc / cover, io, Some(f), scale);
    recurse(tree, x, phi, cold, path, iz * cc / cover, 0.0, Some(f), scale);
}

/// Adds `scale` times one tree's attributions at `x` to `phi`.
pub fn tree_shap_single(tree: &Tree, x: &[f64], phi: &mut [f64], scale: f64) {
    recurse(tree, x, phi, 0, Vec::with_capacity(32), 1.0, 1.0, None, scale);
}

/// Cover-weighted mean leaf value, the output when nothing is known about x.
pub fn expected_value(tree: &Tree) -> f64 {
    fn walk(tree: &Tree, node: usize) -> f64 {
        let n = &tree.nodes[node];
        match (n.left, n.right) {
            (Some(l), Some(r)) => {
                let (cl, cr) = (tree.nodes[l].cover, tree.nodes[r].cover);
                (cl * walk(tree, l) + cr * walk(tree, r)) / n.cover
            }
            _ => n.value,
        }
    }
    walk(tree, 0)
}

fn ensemble_scale(model: &TreeEnsemble) -> (f64, f64, OutputSpace) {
    if model.kind.averages() {
        let t = model.trees.len().max(1) as f64;
        (1.0 / t, 0.0, OutputSpace::Probability)
    } else {
        (1.0, model.base_score, OutputSpace::Margin)
    }
}

pub fn tree_shap(model: &TreeEnsemble, x: &[f64], flow_id: &str) -> Result<ShapExplanation, ExplainError> {
    if x.len() != model.feature_count {
        return Err(ExplainError::DimensionMismatch {
            expected: model.feature_count,
            got: x.len(),
        });
    }
    check_covers(model)?;
    let (scale, offset, output_space) = ensemble_scale(model);
    let mut phi = vec![0.0; model.feature_count];
    let mut base = offset;
    for tree in &model.trees {
        tree_shap_single(tree, x, &mut phi, scale);
        base += scale * expected_value(tree);
    }
    if model.kind.averages() && model.trees.is_empty() {
        base = 0.5;
    }
    Ok(ShapExplanation {
        flow_id: flow_id.to_string(),
        output_space,
        base_value: base,
        phi,
        fx: model.raw_output(x)?,
    })
}

/// Explains many rows; every result passes the efficiency gate or the call
/// fails.
pub fn explain_rows(model: &TreeEnsemble, rows: &[&[f64]], ids: &[String]) -> Result<Vec<ShapExplanation>, ExplainError> {
    let out: Vec<Result<ShapExplanation, ExplainError>> = map_indexed(rows.len(), |i| {
        let e = tree_shap(model, rows[i], ids.get(i).map_or("", String::as_str))?;
        e.check_efficiency()?;
        Ok(e)
    });
    out.into_iter().collect()
}

// --- Brute-force oracle -------------------------------------------------------

/// E[f(x) | x_S] with the path-dependent rule: known features follow x,
/// unknown ones average children by cover.
fn conditional_expectation(tree: &Tree, node: usize, x: &[f64], known: u32) -> f64 {
    let n = &tree.nodes[node];
    match (n.feature, n.left, n.right) {
        (Some(f), Some(l), Some(r)) => {
            if known & (1 << f) != 0 {
                let next = if x[f] < n.threshold { l } else { r };
                conditional_expectation(tree, next, x, known)
            } else {
                let (cl, cr) = (tree.nodes[l].cover, tree.nodes[r].cover);
                (cl * conditional_expectation(tree, l, x, known) + cr * conditional_expectation(tree, r, x, known))
                    / n.cover
            }
        }
        _ => n.value,
    }
}

/// Ensemble value with features in `known` fixed to x.
pub fn coalition_value(model: &TreeEnsemble, x: &[f64], known: u32) -> f64 {
    let (scale, offset, _) = ensemble_scale(model);
    offset
        + model
            .trees
            .iter()
            .map(|t| scale * conditional_expectation(t, 0, x, known))
            .sum::<f64>()
}

/// Exact Shapley values by enumerating all 2^d coalitions.
pub fn brute_force_shap(model: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>, ExplainError> {
    let d = model.feature_count;
    if d > BRUTE_FORCE_MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures(d));
    }
    if x.len() != d {
        return Err(ExplainError::DimensionMismatch { expected: d, got: x.len() });
    }
    check_covers(model)?;
    let values: Vec<f64> = (0..1u32 << d).map(|s| coalition_value(model, x, s)).collect();
    // |S|! (d - |S| - 1)! / d!
    let mut fact = vec![1.0f64; d + 1];
    for i in 1..=d {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..d).map(|s| fact[s] * fact[d - s - 1] / fact[d]).collect();
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for s in 0..1u32 << d {
            if s & bit == 0 {
                *p += weight[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]);
            }
        }
    }
    Ok(phi)
}

// --- Global summary -----------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantiles; all zero for an empty slice.
pub fn quantiles(values: &[f64]) -> Quantiles {
    if values.is_empty() {
        return Quantiles::default();
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Quantiles {
        count: v.len(),
        min: v[0],
        q25: q(0.25),
        median: q(0.5),
        q75: q(0.75),
        max: v[v.len() - 1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub index: usize,
    pub rank: usize,
    pub mean_abs_phi: f64,
    pub mean_phi: f64,
    pub positive: Quantiles,
    pub negative: Quantiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub n_samples: usize,
    pub output_space: OutputSpace,
    /// All features in rank order.
    pub features: Vec<FeatureImportance>,
    pub top_k: Vec<String>,
}

fn feature_name(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("f{i}"))
}

/// Mean |phi| ranking; ties keep feature order.
pub fn global_summary(explanations: &[ShapExplanation], names: &[String], k: usize) -> Result<GlobalSummary, ExplainError> {
    let first = explanations.first().ok_or(ExplainError::EmptyInput)?;
    let d = first.phi.len();
    if explanations.iter().any(|e| e.phi.len() != d) {
        return Err(ExplainError::RaggedInput);
    }
    let n = explanations.len() as f64;
    let mut features: Vec<FeatureImportance> = (0..d)
        .map(|j| {
            let col: Vec<f64> = explanations.iter().map(|e| e.phi[j]).collect();
            let pos: Vec<f64> = col.iter().copied().filter(|v| *v > 0.0).collect();
            let neg: Vec<f64> = col.iter().copied().filter(|v| *v < 0.0).collect();
            FeatureImportance {
                feature: feature_name(names, j),
                index: j,
                rank: 0,
                mean_abs_phi: col.iter().map(|v| v.abs()).sum::<f64>() / n,
                mean_phi: col.iter().sum::<f64>() / n,
                positive: quantiles(&pos),
                negative: quantiles(&neg),
            }
        })
        .collect();
    features.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi));
    for (r, f) in features.iter_mut().enumerate() {
        f.rank = r + 1;
    }
    let top_k = features.iter().take(k.min(d)).map(|f| f.feature.clone()).collect();
    Ok(GlobalSummary {
        n_samples: explanations.len(),
        output_space: first.output_space,
        features,
        top_k,
    })
}

impl GlobalSummary {
    /// `feature,mean_abs_phi,rank` rows in rank order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["feature", "mean_abs_phi", "rank"])?;
        for f in &self.features {
            out.write_record([f.feature.clone(), format!("{}", f.mean_abs_phi), f.rank.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Long-format `(sample, feature, value, phi)` rows for beeswarm plots.
pub fn write_beeswarm_csv<W: Write>(
    w: W,
    names: &[String],
    explanations: &[ShapExplanation],
    rows: &[&[f64]],
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["flow_id", "feature", "value", "phi"])?;
    for (e, x) in explanations.iter().zip(rows) {
        for (j, phi) in e.phi.iter().enumerate() {
            out.write_record([e.flow_id.clone(), feature_name(names, j), format!("{}", x[j]), format!("{phi}")])?;
        }
    }
    out.flush()?;
    Ok(())
}

// --- Local reports ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Push {
    PushesMalware,
    PushesNormal,
    Neutral,
}

impl Push {
    pub fn of(v: f64) -> Push {
        if v > 0.0 {
            Push::PushesMalware
        } else if v < 0.0 {
            Push::PushesNormal
        } else {
            Push::Neutral
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    /// Raw feature value; absent for the aggregate "others" entry.
    pub value: Option<f64>,
    pub phi: f64,
    pub direction: Push,
}

/// Force-plot data for one sample: the top contributions plus an "others"
/// term, so `base_value + sum(phi) == fx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub flow_id: String,
    pub output_space: OutputSpace,
    pub base_value: f64,
    pub fx: f64,
    pub probability: f64,
    /// Log-odds view of `base_value` and `fx`.
    pub base_margin: f64,
    pub fx_margin: f64,
    pub direction: Push,
    pub contributions: Vec<Contribution>,
}

pub const OTHERS: &str = "others";

pub fn local_report(e: &ShapExplanation, names: &[String], x: &[f64], top_k: usize) -> LocalReport {
    let mut order: Vec<usize> = (0..e.phi.len()).collect();
    order.sort_by(|&a, &b| e.phi[b].abs().total_cmp(&e.phi[a].abs()));
    let shown = top_k.min(order.len());
    let mut contributions: Vec<Contribution> = order[..shown]
        .iter()
        .map(|&j| Contribution {
            feature: feature_name(names, j),
            value: x.get(j).copied(),
            phi: e.phi[j],
            direction: Push::of(e.phi[j]),
        })
        .collect();
    if shown < order.len() {
        let rest: f64 = order[shown..].iter().map(|&j| e.phi[j]).sum();
        contributions.push(Contribution {
            feature: OTHERS.into(),
            value: None,
            phi: rest,
            direction: Push::of(rest),
        });
    }
    let (base_margin, fx_margin) = e.margins();
    LocalReport {
        flow_id: e.flow_id.clone(),
        output_space: e.output_space,
        base_value: e.base_value,
        fx: e.fx,
        probability: e.probability(),
        base_margin,
        fx_margin,
        direction: Push::of(e.fx - e.base_value),
        contributions,
    }
}
