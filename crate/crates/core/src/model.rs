//! Tree ensembles: bagged random forest, second-order logistic boosting and
//! extremely randomized trees, plus the binary metric suite and k-fold
//! validation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{adasyn, fold_pairs, kfold_split, AdasynParams, LabeledDataset};
use crate::features::Label;
use crate::par::map_indexed;

/// Bound on |logit| when mapping probabilities to margins.
pub const LOGIT_CLAMP: f64 = 15.0;
pub const MODEL_FORMAT_VERSION: u32 = 1;
const MIN_COVER: f64 = 1e-16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training data is empty")]
    EmptyData,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {0} is not 0 or 1")]
    NonBinaryLabel(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidParam(String),
    #[error("unknown hyperparameter {0}")]
    UnknownParam(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

pub fn sigmoid(m: f64) -> f64 {
    1.0 / (1.0 + (-m).exp())
}

/// `ln(p / (1 - p))` clamped to ±[`LOGIT_CLAMP`].
pub fn logit(p: f64) -> f64 {
    let l = (p / (1.0 - p)).ln();
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    }
}

// --- Trees --------------------------------------------------------------------

/// One node of an index-linked tree. Internal nodes route `x[feature] <
/// threshold` left. `value` is the node's output (probability for gini trees,
/// scaled leaf weight for boosted trees); only leaf values reach predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub value: f64,
    pub cover: f64,
}

impl TreeNode {
    pub fn leaf(value: f64, cover: f64) -> Self {
        TreeNode {
            feature: None,
            threshold: 0.0,
            left: None,
            right: None,
            value,
            cover,
        }
    }

    pub fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: f64) -> Self {
        TreeNode {
            feature: Some(feature),
            threshold,
            left: Some(left),
            right: Some(right),
            value: 0.0,
            cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

/// Nodes in pre-order; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match (n.feature, n.left, n.right) {
                (Some(f), Some(l), Some(r)) => i = if x[f] < n.threshold { l } else { r },
                _ => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match (t.nodes[i].left, t.nodes[i].right) {
                (Some(l), Some(r)) => 1 + go(t, l).max(go(t, r)),
                _ => 0,
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Structural checks: children in range and after their parent, features
    /// in range, positive root cover, internal cover equal to child sum.
    pub fn validate(&self, feature_count: usize) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidModel(m));
        if self.nodes.is_empty() {
            return bad("tree has no nodes".into());
        }
        if !(self.nodes[0].cover > 0.0) {
            return bad("root cover must be positive".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match (n.feature, n.left, n.right) {
                (None, None, None) => {}
                (Some(f), Some(l), Some(r)) => {
                    if f >= feature_count {
                        return bad(format!("node {i} uses feature {f} >= {feature_count}"));
                    }
                    if l <= i || r <= i || l >= self.nodes.len() || r >= self.nodes.len() || l == r {
                        return bad(format!("node {i} has invalid children"));
                    }
                    parents[l] += 1;
                    parents[r] += 1;
                    let sum = self.nodes[l].cover + self.nodes[r].cover;
                    if (n.cover - sum).abs() > 1e-9 * n.cover.abs().max(1.0) {
                        return bad(format!("node {i} cover {} != children {sum}", n.cover));
                    }
                    if !n.threshold.is_finite() {
                        return bad(format!("node {i} threshold is not finite"));
                    }
                }
                _ => return bad(format!("node {i} is half internal")),
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return bad("nodes do not form a single tree".into());
        }
        Ok(())
    }
}

/// Sets every internal cover to the sum of its children (children follow
/// their parent, so a reverse sweep suffices).
fn close_covers(nodes: &mut [TreeNode]) {
    for i in (0..nodes.len()).rev() {
        if let (Some(l), Some(r)) = (nodes[i].left, nodes[i].right) {
            nodes[i].cover = nodes[l].cover + nodes[r].cover;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "forest-average")]
    Forest,
    #[serde(rename = "boosted-sum")]
    Boosted,
    #[serde(rename = "extra-average")]
    Extra,
}

impl ModelKind {
    pub fn cli_name(self) -> &'static str {
        match self {
            ModelKind::Forest => "rf",
            ModelKind::Boosted => "xgb",
            ModelKind::Extra => "extra",
        }
    }

    /// Averaging kinds output probabilities; boosting outputs margins.
    pub fn averages(self) -> bool {
        !matches!(self, ModelKind::Boosted)
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "forest" | "random-forest" | "forest-average" => Ok(ModelKind::Forest),
            "xgb" | "boosted" | "boost" | "boosted-sum" => Ok(ModelKind::Boosted),
            "extra" | "et" | "extra-trees" | "extra-average" => Ok(ModelKind::Extra),
            other => Err(ModelError::InvalidParam(format!("unknown model kind {other:?}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub margin: f64,
    pub probability: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub kind: ModelKind,
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_count: usize,
    pub schema_version: String,
    #[serde(default)]
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn new(kind: ModelKind, trees: Vec<Tree>, base_score: f64, learning_rate: f64, feature_count: usize) -> Self {
        TreeEnsemble {
            format_version: MODEL_FORMAT_VERSION,
            kind,
            base_score,
            learning_rate,
            feature_count,
            schema_version: String::new(),
            feature_names: Vec::new(),
            trees,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.feature_count {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mean leaf probability (averaging kinds) or margin (boosted): the
    /// quantity tree attributions add up to.
    pub fn raw_output(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check(x)?;
        Ok(self.raw_output_unchecked(x))
    }

    fn raw_output_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        if self.kind.averages() {
            if self.trees.is_empty() {
                0.5
            } else {
                sum / self.trees.len() as f64
            }
        } else {
            self.base_score + sum
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        let raw = self.raw_output(x)?;
        let (margin, probability) = if self.kind.averages() {
            (logit(raw), raw)
        } else {
            (raw, sigmoid(raw))
        };
        Ok(Prediction {
            margin,
            probability,
            label: if probability >= 0.5 { Label::Malware } else { Label::Normal },
        })
    }

    pub fn predict_labels(&self, rows: &[&[f64]]) -> Result<Vec<Label>, ModelError> {
        rows.iter().map(|x| self.predict(x).map(|p| p.label)).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::InvalidModel(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.feature_count {
            return Err(ModelError::InvalidModel("feature_names length != feature_count".into()));
        }
        for t in &self.trees {
            t.validate(self.feature_count)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let m: TreeEnsemble = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

// --- Hyperparameters ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub colsample: f64,
    pub subsample: f64,
    pub lambda_l2: f64,
    /// Candidate features per split; `None` means `floor(sqrt(d))`.
    /// Boosting ignores it and uses `colsample`.
    #[serde(default)]
    pub max_features: Option<usize>,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

/// Depth used where no limit is intended.
pub const UNLIMITED_DEPTH: usize = 1 << 20;

impl HyperParams {
    pub fn random_forest() -> Self {
        HyperParams {
            n_estimators: 23,
            max_depth: 42,
            min_samples_split: 6,
            min_samples_leaf: 2,
            learning_rate: 1.0,
            min_child_weight: 0.0,
            gamma: 0.0,
            colsample: 1.0,
            subsample: 1.0,
            lambda_l2: 1.0,
            max_features: None,
            bootstrap: true,
            seed: 42,
        }
    }

    pub fn boosted() -> Self {
        HyperParams {
            n_estimators: 23,
            max_depth: 43,
            min_samples_split: 2,
            min_samples_leaf: 1,
            learning_rate: 0.47,
            min_child_weight: 0.4,
            gamma: 3.28,
            colsample: 1.0,
            subsample: 0.82,
            lambda_l2: 1.0,
            max_features: None,
            bootstrap: false,
            seed: 42,
        }
    }

    pub fn extra_trees() -> Self {
        HyperParams {
            n_estimators: 100,
            max_depth: UNLIMITED_DEPTH,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: false,
            ..HyperParams::random_forest()
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Forest => Self::random_forest(),
            ModelKind::Boosted => Self::boosted(),
            ModelKind::Extra => Self::extra_trees(),
        }
    }

    pub const NAMES: [&'static str; 13] = [
        "n_estimators",
        "max_depth",
        "min_samples_split",
        "min_samples_leaf",
        "learning_rate",
        "min_child_weight",
        "gamma",
        "colsample",
        "subsample",
        "lambda_l2",
        "max_features",
        "bootstrap",
        "seed",
    ];

    /// Sets a field by name; integer fields reject fractional values.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        let count = |v: f64| -> Result<usize, ModelError> {
            if v >= 0.0 && v.fract() == 0.0 && v <= 1e15 {
                Ok(v as usize)
            } else {
                Err(ModelError::InvalidParam(format!("{name} must be a whole number, got {v}")))
            }
        };
        match name {
            "n_estimators" => self.n_estimators = count(value)?,
            "max_depth" => self.max_depth = count(value)?,
            "min_samples_split" => self.min_samples_split = count(value)?,
            "min_samples_leaf" => self.min_samples_leaf = count(value)?,
            "learning_rate" => self.learning_rate = value,
            "min_child_weight" => self.min_child_weight = value,
            "gamma" => self.gamma = value,
            "colsample" => self.colsample = value,
            "subsample" => self.subsample = value,
            "lambda_l2" | "lambda" => self.lambda_l2 = value,
            "max_features" => self.max_features = Some(count(value)?),
            "bootstrap" => self.bootstrap = value != 0.0,
            "seed" => self.seed = count(value)? as u64,
            other => return Err(ModelError::UnknownParam(other.into())),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::InvalidParam(m.into()));
        if self.n_estimators < 1 || self.max_depth < 1 || self.min_samples_split < 1 || self.min_samples_leaf < 1 {
            return err("counts must be at least 1");
        }
        if self.max_features == Some(0) {
            return err("max_features must be at least 1");
        }
        for (v, n) in [
            (self.learning_rate, "learning_rate"),
            (self.colsample, "colsample"),
            (self.subsample, "subsample"),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ModelError::InvalidParam(format!("{n} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.gamma >= 0.0) || !(self.min_child_weight >= 0.0) {
            return err("gamma and min_child_weight must be non-negative");
        }
        if !(self.lambda_l2 >= 0.0) {
            return err("lambda_l2 must be non-negative");
        }
        Ok(())
    }
}

// --- Data checks --------------------------------------------------------------

fn check_data(x: &[&[f64]], y: &[f64]) -> Result<usize, ModelError> {
    if x.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(ModelError::LengthMismatch(x.len(), y.len()));
    }
    let d = x[0].len();
    for r in x {
        if r.len() != d {
            return Err(ModelError::DimensionMismatch { expected: d, got: r.len() });
        }
    }
    if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(ModelError::NonBinaryLabel(*bad));
    }
    Ok(d)
}

// --- Split search -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Exact greedy gini over midpoints.
    Gini,
    /// Gini over one uniform random cut per candidate feature.
    RandomGini,
    /// Second-order logistic gain with L2 and gamma.
    BoostedGain,
}

/// Per-sample statistics a node builder needs.
struct Stats<'a> {
    x: &'a [&'a [f64]],
    /// Gini: class weight pairs (w, w*y). Boosted: (h, g).
    a: Vec<f64>,
    b: Vec<f64>,
}

struct Builder<'a> {
    st: Stats<'a>,
    rule: SplitRule,
    params: &'a HyperParams,
    features: Vec<usize>,
    max_features: usize,
    nodes: Vec<TreeNode>,
    buf: Vec<(f64, usize)>,
}

fn gini(w: f64, wy: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let p = wy / w;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    fn totals(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + self.st.a[i], b + self.st.b[i]))
    }

    fn leaf_value(&self, a: f64, b: f64) -> f64 {
        match self.rule {
            SplitRule::BoostedGain => -b / (a + self.params.lambda_l2) * self.params.learning_rate,
            _ => {
                if a > 0.0 {
                    b / a
                } else {
                    0.0
                }
            }
        }
    }

    fn leaf_cover(&self, a: f64) -> f64 {
        match self.rule {
            SplitRule::BoostedGain => a.max(MIN_COVER),
            _ => a,
        }
    }

    fn score(&self, la: f64, lb: f64, ta: f64, tb: f64) -> f64 {
        let (ra, rb) = (ta - la, tb - lb);
        match self.rule {
            SplitRule::BoostedGain => {
                let l = self.params.lambda_l2;
                0.5 * (lb * lb / (la + l) + rb * rb / (ra + l) - tb * tb / (ta + l)) - self.params.gamma
            }
            _ => ta * gini(ta, tb) - la * gini(la, lb) - ra * gini(ra, rb),
        }
    }

    fn children_ok(&self, nl: usize, nr: usize, la: f64, ra: f64) -> bool {
        match self.rule {
            SplitRule::BoostedGain => {
                nl > 0 && nr > 0 && la >= self.params.min_child_weight && ra >= self.params.min_child_weight
            }
            _ => nl >= self.params.min_samples_leaf && nr >= self.params.min_samples_leaf,
        }
    }

    fn better(c: &Candidate, best: &Option<Candidate>) -> bool {
        match best {
            None => true,
            Some(b) => c.score > b.score || (c.score == b.score && c.feature < b.feature),
        }
    }

    fn find_split(&mut self, idx: &[usize], ta: f64, tb: f64, rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let x = self.st.x;
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        let mut order = std::mem::take(&mut self.features);
        let n_feat = order.len();
        for k in 0..n_feat {
            if visited >= self.max_features {
                break;
            }
            let pick = rng.random_range(k..n_feat);
            order.swap(k, pick);
            let f = order[k];
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in idx {
                lo = lo.min(x[i][f]);
                hi = hi.max(x[i][f]);
            }
            if hi <= lo {
                continue;
            }
            visited += 1;
            if self.rule == SplitRule::RandomGini {
                let mut thr = lo + rng.random::<f64>() * (hi - lo);
                if thr <= lo {
                    thr = hi;
                }
                let (mut la, mut lb, mut nl) = (0.0, 0.0, 0);
                for &i in idx {
                    if x[i][f] < thr {
                        la += self.st.a[i];
                        lb += self.st.b[i];
                        nl += 1;
                    }
                }
                if !self.children_ok(nl, idx.len() - nl, la, ta - la) {
                    continue;
                }
                let c = Candidate {
                    score: self.score(la, lb, ta, tb),
                    feature: f,
                    threshold: thr,
                };
                if Self::better(&c, &best) {
                    best = Some(c);
                }
                continue;
            }
            self.buf.clear();
            self.buf.extend(idx.iter().map(|&i| (x[i][f], i)));
            self.buf.sort_by(|p, q| p.0.total_cmp(&q.0));
            let (mut la, mut lb) = (0.0, 0.0);
            for pos in 0..self.buf.len() - 1 {
                let (v, i) = self.buf[pos];
                la += self.st.a[i];
                lb += self.st.b[i];
                let next = self.buf[pos + 1].0;
                if next <= v {
                    continue;
                }
                let nl = pos + 1;
                if !self.children_ok(nl, idx.len() - nl, la, ta - la) {
                    continue;
                }
                let mut thr = 0.5 * (v + next);
                if thr <= v {
                    thr = next;
                }
                let c = Candidate {
                    score: self.score(la, lb, ta, tb),
                    feature: f,
                    threshold: thr,
                };
                if Self::better(&c, &best) {
                    best = Some(c);
                }
            }
        }
        self.features = order;
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (ta, tb) = self.totals(idx);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::leaf(self.leaf_value(ta, tb), self.leaf_cover(ta)));

        let stop = depth >= self.params.max_depth
            || idx.len() < 2
            || match self.rule {
                SplitRule::BoostedGain => false,
                _ => {
                    idx.len() < self.params.min_samples_split
                        || idx.len() < 2 * self.params.min_samples_leaf
                        || tb <= 0.0
                        || tb >= ta
                }
            };
        if stop {
            return me;
        }
        let Some(best) = self.find_split(idx, ta, tb, rng) else {
            return me;
        };
        if !(best.score > 0.0) {
            return me;
        }
        let x = self.st.x;
        let (f, thr) = (best.feature, best.threshold);
        // stable partition keeps child order independent of the sort buffer
        let mut left: Vec<usize> = Vec::with_capacity(idx.len());
        let mut right: Vec<usize> = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            if x[i][f] < thr {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        let nl = left.len();
        idx[..nl].copy_from_slice(&left);
        idx[nl..].copy_from_slice(&right);
        let (li, ri) = idx.split_at_mut(nl);
        let l = self.build(li, depth + 1, rng);
        let r = self.build(ri, depth + 1, rng);
        let value = self.nodes[me].value;
        self.nodes[me] = TreeNode::split(f, thr, l, r, 0.0);
        self.nodes[me].value = value;
        me
    }
}

fn default_max_features(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

/// Grows one tree on `rows` (with multiplicity weights for gini rules).
#[allow(clippy::too_many_arguments)]
fn grow(
    x: &[&[f64]],
    a: Vec<f64>,
    b: Vec<f64>,
    rows: &mut [usize],
    features: Vec<usize>,
    max_features: usize,
    rule: SplitRule,
    params: &HyperParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut builder = Builder {
        st: Stats { x, a, b },
        rule,
        params,
        features,
        max_features,
        nodes: Vec::new(),
        buf: Vec::new(),
    };
    builder.build(rows, 0, rng);
    let mut nodes = builder.nodes;
    close_covers(&mut nodes);
    Tree { nodes }
}

/// Single decision tree on all rows. For [`SplitRule::BoostedGain`] the tree
/// is one boosting round from the base-rate margin.
pub fn train_cart(
    x: &[&[f64]],
    y: &[f64],
    params: &HyperParams,
    rule: SplitRule,
    rng: &mut ChaCha8Rng,
) -> Result<Tree, ModelError> {
    let d = check_data(x, y)?;
    params.validate()?;
    let n = x.len();
    let mut rows: Vec<usize> = (0..n).collect();
    let all: Vec<usize> = (0..d).collect();
    let tree = match rule {
        SplitRule::BoostedGain => {
            let p = sigmoid(logit(y.iter().sum::<f64>() / n as f64));
            let g = y.iter().map(|yi| p - yi).collect();
            let h = vec![p * (1.0 - p); n];
            grow(x, h, g, &mut rows, all, d, rule, params, rng)
        }
        _ => {
            let mf = params.max_features.unwrap_or(d).min(d);
            grow(x, vec![1.0; n], y.to_vec(), &mut rows, all, mf, rule, params, rng)
        }
    };
    Ok(tree)
}

// --- Averaging ensembles ------------------------------------------------------

/// Fitted averaging ensemble with its per-tree in-bag multiplicities.
#[derive(Debug, Clone)]
pub struct ForestFit {
    pub ensemble: TreeEnsemble,
    /// `inbag[t][i]`: how often sample `i` was drawn for tree `t`.
    pub inbag: Vec<Vec<u32>>,
}

fn tree_rng(seed: u64, t: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ t as u64)
}

fn fit_averaging(x: &[&[f64]], y: &[f64], params: &HyperParams, kind: ModelKind) -> Result<ForestFit, ModelError> {
    let d = check_data(x, y)?;
    params.validate()?;
    let n = x.len();
    let mf = params.max_features.unwrap_or_else(|| default_max_features(d)).min(d);
    let rule = if kind == ModelKind::Extra {
        SplitRule::RandomGini
    } else {
        SplitRule::Gini
    };
    let bootstrap = params.bootstrap && kind == ModelKind::Forest;
    let fitted: Vec<(Tree, Vec<u32>)> = map_indexed(params.n_estimators, |t| {
        let mut rng = tree_rng(params.seed, t);
        let mut counts = vec![1u32; n];
        if bootstrap {
            counts.iter_mut().for_each(|c| *c = 0);
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        }
        let mut rows: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
        let w: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
        let wy: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * y).collect();
        let tree = grow(x, w, wy, &mut rows, (0..d).collect(), mf, rule, params, &mut rng);
        (tree, counts)
    });
    let (trees, inbag): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();
    let mut ensemble = TreeEnsemble::new(kind, trees, 0.0, 1.0, d);
    ensemble.base_score = logit(y.iter().sum::<f64>() / n as f64);
    Ok(ForestFit { ensemble, inbag })
}

pub fn fit_random_forest(x: &[&[f64]], y: &[f64], params: &HyperParams) -> Result<ForestFit, ModelError> {
    fit_averaging(x, y, params, ModelKind::Forest)
}

pub fn train_random_forest(x: &[&[f64]], y: &[f64], params: &HyperParams) -> Result<TreeEnsemble, ModelError> {
    Ok(fit_random_forest(x, y, params)?.ensemble)
}

pub fn train_extra_trees(x: &[&[f64]], y: &[f64], params: &HyperParams) -> Result<TreeEnsemble, ModelError> {
    Ok(fit_averaging(x, y, params, ModelKind::Extra)?.ensemble)
}

// --- Boosting -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BoostFit {
    pub ensemble: TreeEnsemble,
    /// Mean training log-loss at the base margin and after each round.
    pub train_loss: Vec<f64>,
}

pub fn log_loss(y: &[f64], margins: &[f64]) -> f64 {
    // log(1 + e^m) - y m; for 0/1 labels this is softplus(-m) or
    // softplus(m), which avoids cancelling two large terms.
    fn softplus(z: f64) -> f64 {
        z.max(0.0) + (-z.abs()).exp().ln_1p()
    }
    let mut total = 0.0;
    let mut comp = 0.0;
    for (y, m) in y.iter().zip(margins) {
        let term = match *y {
            1.0 => softplus(-m),
            0.0 => softplus(*m),
            y => softplus(*m) - y * m,
        };
        // Neumaier summation
        let t = total + term;
        comp += if total.abs() >= term.abs() { (total - t) + term } else { (term - t) + total };
        total = t;
    }
    (total + comp) / y.len() as f64
}

fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    let (chosen, _) = all.partial_shuffle(rng, k);
    let mut v = chosen.to_vec();
    v.sort_unstable();
    v
}

pub fn fit_boosted(x: &[&[f64]], y: &[f64], params: &HyperParams) -> Result<BoostFit, ModelError> {
    let d = check_data(x, y)?;
    params.validate()?;
    let n = x.len();
    let rate = y.iter().sum::<f64>() / n as f64;
    let base = logit(rate);
    let mut margins = vec![base; n];
    let mut train_loss = vec![log_loss(y, &margins)];
    let mut trees = Vec::new();
    if rate == 0.0 || rate == 1.0 {
        log::warn!("boosting on a single class: returning a constant model");
    } else {
        for round in 0..params.n_estimators {
            let mut rng = tree_rng(params.seed, round);
            let mut rows = if params.subsample < 1.0 {
                let k = ((n as f64 * params.subsample).round() as usize).clamp(1, n);
                sample_without_replacement(n, k, &mut rng)
            } else {
                (0..n).collect()
            };
            let cols = if params.colsample < 1.0 {
                let k = ((d as f64 * params.colsample).round() as usize).clamp(1, d);
                sample_without_replacement(d, k, &mut rng)
            } else {
                (0..d).collect()
            };
            let mut g = vec![0.0; n];
            let mut h = vec![0.0; n];
            for i in 0..n {
                let p = sigmoid(margins[i]);
                g[i] = p - y[i];
                h[i] = p * (1.0 - p);
            }
            let n_cols = cols.len();
            let tree = grow(x, h, g, &mut rows, cols, n_cols, SplitRule::BoostedGain, params, &mut rng);
            for i in 0..n {
                margins[i] += tree.predict(x[i]);
            }
            train_loss.push(log_loss(y, &margins));
            trees.push(tree);
        }
    }
    let ensemble = TreeEnsemble::new(ModelKind::Boosted, trees, base, params.learning_rate, d);
    Ok(BoostFit { ensemble, train_loss })
}

pub fn train_boosted(x: &[&[f64]], y: &[f64], params: &HyperParams) -> Result<TreeEnsemble, ModelError> {
    Ok(fit_boosted(x, y, params)?.ensemble)
}

pub fn train(kind: ModelKind, x: &[&[f64]], y: &[f64], params: &HyperParams) -> Result<TreeEnsemble, ModelError> {
    match kind {
        ModelKind::Forest => train_random_forest(x, y, params),
        ModelKind::Boosted => train_boosted(x, y, params),
        ModelKind::Extra => train_extra_trees(x, y, params),
    }
}

/// Trains on a labeled dataset and stamps schema information on the model.
pub fn train_dataset(kind: ModelKind, ds: &LabeledDataset, params: &HyperParams) -> Result<TreeEnsemble, ModelError> {
    let rows = ds.rows();
    let mut m = train(kind, &rows, &ds.targets(), params)?;
    m.schema_version = ds.schema_version.clone();
    m.feature_names = ds.feature_names.clone();
    Ok(m)
}

// --- Metrics ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl MetricsReport {
    pub fn from_confusion(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let n = tp + tn + fp + fn_;
        let precision = ratio(tp as f64, (tp + fp) as f64);
        let recall = ratio(tp as f64, (tp + fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        let num = (tp as i128 * tn as i128 - fp as i128 * fn_ as i128) as f64;
        let den = ((tp + fp) as u128 * (tp + fn_) as u128 * (tn + fp) as u128 * (tn + fn_) as u128) as f64;
        MetricsReport {
            tp,
            tn,
            fp,
            fn_,
            accuracy: ratio((tp + tn) as f64, n as f64),
            precision,
            recall,
            f1,
            mcc: if den == 0.0 { 0.0 } else { num / den.sqrt() },
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio(self.fp as f64, (self.fp + self.tn) as f64)
    }
}

/// Metrics with malware as the positive class.
pub fn compute_metrics(y_true: &[Label], y_pred: &[Label]) -> Result<MetricsReport, ModelError> {
    if y_true.len() != y_pred.len() {
        return Err(ModelError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (t, p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (Label::Malware, Label::Malware) => tp += 1,
            (Label::Normal, Label::Normal) => tn += 1,
            (Label::Normal, Label::Malware) => fp += 1,
            (Label::Malware, Label::Normal) => fn_ += 1,
        }
    }
    Ok(MetricsReport::from_confusion(tp, tn, fp, fn_))
}

/// Same as [`compute_metrics`] for numeric 0/1 labels.
pub fn compute_metrics_numeric(y_true: &[f64], y_pred: &[f64]) -> Result<MetricsReport, ModelError> {
    let conv = |v: &[f64]| -> Result<Vec<Label>, ModelError> {
        v.iter()
            .map(|x| match *x {
                0.0 => Ok(Label::Normal),
                1.0 => Ok(Label::Malware),
                other => Err(ModelError::NonBinaryLabel(other)),
            })
            .collect()
    };
    compute_metrics(&conv(y_true)?, &conv(y_pred)?)
}

pub fn evaluate(model: &TreeEnsemble, ds: &LabeledDataset) -> Result<MetricsReport, ModelError> {
    let pred = model.predict_labels(&ds.rows())?;
    compute_metrics(&ds.labels(), &pred)
}

// --- Cross-validation ---------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let s = crate::features::summarize(values);
        MeanStd { mean: s.mean, std: s.std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub mcc: MeanStd,
}

impl MetricSummary {
    pub fn of(reports: &[MetricsReport]) -> Self {
        let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        MetricSummary {
            accuracy: pick(|r| r.accuracy),
            precision: pick(|r| r.precision),
            recall: pick(|r| r.recall),
            f1: pick(|r| r.f1),
            mcc: pick(|r| r.mcc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub train: MetricsReport,
    pub validation: MetricsReport,
    pub synthetic_added: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub train: MetricSummary,
    pub validation: MetricSummary,
}

/// Applies ADASYN to a training set when requested. Never touches
/// validation data.
pub fn oversample_training(
    train: &LabeledDataset,
    oversample: Option<&AdasynParams>,
    seed: u64,
) -> crate::Result<(LabeledDataset, usize)> {
    match oversample {
        None => Ok((train.clone(), 0)),
        Some(p) => {
            let (out, rep) = adasyn(train, p, seed)?;
            Ok((out, rep.origins.len()))
        }
    }
}

/// Stratified k-fold evaluation; oversampling is fit per training fold.
pub fn cross_validate(
    ds: &LabeledDataset,
    kind: ModelKind,
    params: &HyperParams,
    k: usize,
    seed: u64,
    oversample: Option<&AdasynParams>,
) -> crate::Result<CvReport> {
    let labels = ds.labels();
    let folds = kfold_split(ds.len(), k, Some(&labels), seed)?;
    let pairs = fold_pairs(&folds);
    let results: Vec<crate::Result<FoldResult>> = map_indexed(pairs.len(), |f| {
        let (tr, va) = &pairs[f];
        let train = ds.subset(tr);
        let (train_os, added) = oversample_training(&train, oversample, seed ^ (f as u64) << 32)?;
        let model = train_dataset(kind, &train_os, params)?;
        Ok(FoldResult {
            train: evaluate(&model, &train)?,
            validation: evaluate(&model, &ds.subset(va))?,
            synthetic_added: added,
        })
    });
    let folds: Vec<FoldResult> = results.into_iter().collect::<crate::Result<_>>()?;
    let tr: Vec<MetricsReport> = folds.iter().map(|f| f.train).collect();
    let va: Vec<MetricsReport> = folds.iter().map(|f| f.validation).collect();
    Ok(CvReport {
        k,
        train: MetricSummary::of(&tr),
        validation: MetricSummary::of(&va),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub value: f64,
    pub train: MeanStd,
    pub validation: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCurve {
    pub param: String,
    pub points: Vec<CurvePoint>,
    pub best_value: f64,
}

/// k-fold accuracy for each candidate value of one hyperparameter. The best
/// value maximizes mean validation accuracy; ties go to the smallest value.
pub fn validation_curve(
    ds: &LabeledDataset,
    kind: ModelKind,
    base: &HyperParams,
    param: &str,
    values: &[f64],
    k: usize,
    seed: u64,
    oversample: Option<&AdasynParams>,
) -> crate::Result<ValidationCurve> {
    if values.is_empty() {
        return Err(ModelError::InvalidParam(format!("no candidate values for {param}")).into());
    }
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let mut p = base.clone();
        p.set(param, v)?;
        let cv = cross_validate(ds, kind, &p, k, seed, oversample)?;
        points.push(CurvePoint {
            value: v,
            train: cv.train.accuracy,
            validation: cv.validation.accuracy,
        });
    }
    let best = points
        .iter()
        .fold(None::<&CurvePoint>, |best, p| match best {
            Some(b)
                if b.validation.mean > p.validation.mean
                    || (b.validation.mean == p.validation.mean && b.value <= p.value) =>
            {
                Some(b)
            }
            _ => Some(p),
        })
        .expect("non-empty");
    Ok(ValidationCurve {
        param: param.to_string(),
        best_value: best.value,
        points,
    })
}
