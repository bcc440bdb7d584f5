//! Supervised classification of centrality features into global behaviors.
//!
//! The classifier is a small multi-layer perceptron (two rectifier hidden
//! layers, softmax output) trained by full-batch gradient descent on the
//! squared loss against 1-hot targets. A logistic-regression baseline sits
//! behind the same predict interface. Gradients are validated against
//! central finite differences.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyfit::CentralityPolynomial;
use crate::styles::StyleReport;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorLabel {
    Aggressive,
    Conservative,
}

impl BehaviorLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Aggressive => "aggressive",
            Self::Conservative => "conservative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aggressive" => Ok(Self::Aggressive),
            "conservative" => Ok(Self::Conservative),
            other => Err(Error::Type(format!("unknown behavior label {other:?}"))),
        }
    }

    fn one_hot(&self) -> [f64; 2] {
        match self {
            Self::Aggressive => [1.0, 0.0],
            Self::Conservative => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLayout {
    /// Closeness-fit β followed by degree-fit β.
    Coefficients,
    /// Coefficients plus per-style SLE maxima and the weaving count.
    Extended,
}

impl FeatureLayout {
    pub fn len(&self, degree: usize) -> usize {
        match self {
            Self::Coefficients => 2 * (degree + 1),
            Self::Extended => 2 * (degree + 1) + 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

/// Builds the feature vector: closeness β, degree β, and under the extended
/// layout the SLE maxima (overspeeding, overtaking, sudden lane-change,
/// weaving max sharpness) plus |𝒯|.
pub fn extract_features(
    report: &StyleReport,
    closeness_poly: Option<&CentralityPolynomial>,
    degree_poly: Option<&CentralityPolynomial>,
    layout: FeatureLayout,
) -> Result<FeatureVector> {
    let closeness = closeness_poly
        .ok_or_else(|| Error::Incomplete("missing closeness fit for feature extraction".into()))?;
    let degree = degree_poly
        .ok_or_else(|| Error::Incomplete("missing degree fit for feature extraction".into()))?;
    let mut values = Vec::with_capacity(layout.len(closeness.degree));
    values.extend_from_slice(&closeness.beta);
    values.extend_from_slice(&degree.beta);
    if layout == FeatureLayout::Extended {
        values.push(report.overspeeding.sle_max);
        values.push(report.overtaking.sle_max);
        values.push(report.sudden_lane_change.sle_max);
        values.push(report.weaving.max_sharpness);
        values.push(report.weaving.count as f64);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Incomplete("non-finite feature value".into()));
    }
    Ok(FeatureVector { values, layout })
}

/// Per-feature standardization fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[&FeatureVector]) -> Self {
        let dim = rows[0].values.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(&row.values) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; dim];
        for row in rows {
            for (s, (v, m)) in std.iter_mut().zip(row.values.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major weights: `w[out][in]`.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            w: self.w.iter().map(|r| vec![0.0; r.len()]).collect(),
            b: vec![0.0; self.b.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            learning_rate: 1e-3,
            epochs: 2000,
            seed: 0,
        }
    }
}

/// MLP: input → hidden×2 (rectifier) → 2-way softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptronModel {
    pub format_version: u32,
    pub layout: FeatureLayout,
    pub layers: Vec<Layer>,
    pub standardizer: Standardizer,
    pub config: TrainConfig,
}

impl PerceptronModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Type(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w[0].len()
    }
}

fn seeded_layers(input_dim: usize, hidden: usize, seed: u64) -> Vec<Layer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [(input_dim, hidden), (hidden, hidden), (hidden, 2)];
    dims.iter()
        .map(|&(fan_in, fan_out)| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Layer {
                w: (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.gen_range(-bound..bound)).collect())
                    .collect(),
                b: vec![0.0; fan_out],
            }
        })
        .collect()
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

struct ForwardPass {
    /// Post-activation per layer, including the input as element 0 and the
    /// softmax scores as the last element.
    activations: Vec<Vec<f64>>,
    /// Pre-activation per layer.
    pre: Vec<Vec<f64>>,
}

fn forward(layers: &[Layer], input: &[f64]) -> ForwardPass {
    let mut activations = vec![input.to_vec()];
    let mut pre = Vec::with_capacity(layers.len());
    for (li, layer) in layers.iter().enumerate() {
        let x = activations.last().expect("input present");
        let z: Vec<f64> = layer
            .w
            .iter()
            .zip(&layer.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect();
        let a = if li + 1 == layers.len() {
            softmax(&z)
        } else {
            z.iter().map(|&v| relu(v)).collect()
        };
        pre.push(z);
        activations.push(a);
    }
    ForwardPass { activations, pre }
}

/// Summed squared loss and its parameter gradients over a batch.
pub fn loss_and_gradients(
    layers: &[Layer],
    batch: &[(Vec<f64>, [f64; 2])],
) -> (f64, Vec<Layer>) {
    let mut grads: Vec<Layer> = layers.iter().map(Layer::zeros_like).collect();
    let mut loss = 0.0;
    for (x, target) in batch {
        let pass = forward(layers, x);
        let scores = pass.activations.last().expect("softmax output");
        loss += scores
            .iter()
            .zip(target)
            .map(|(p, y)| (y - p) * (y - p))
            .sum::<f64>();

        // dL/dp_j = −2(y_j − p_j); through softmax:
        // dL/dz_k = p_k (g_k − Σ_j g_j p_j) with g = dL/dp.
        let g: Vec<f64> = scores
            .iter()
            .zip(target)
            .map(|(p, y)| -2.0 * (y - p))
            .collect();
        let dot: f64 = g.iter().zip(scores).map(|(gj, pj)| gj * pj).sum();
        let mut delta: Vec<f64> = scores.iter().zip(&g).map(|(pk, gk)| pk * (gk - dot)).collect();

        for li in (0..layers.len()).rev() {
            let input = &pass.activations[li];
            for (k, dk) in delta.iter().enumerate() {
                for (gw, xi) in grads[li].w[k].iter_mut().zip(input) {
                    *gw += dk * xi;
                }
                grads[li].b[k] += dk;
            }
            if li > 0 {
                let mut next = vec![0.0; input.len()];
                for (k, dk) in delta.iter().enumerate() {
                    for (ni, w) in next.iter_mut().zip(&layers[li].w[k]) {
                        *ni += dk * w;
                    }
                }
                for (ni, z) in next.iter_mut().zip(&pass.pre[li - 1]) {
                    if *z <= 0.0 {
                        *ni = 0.0;
                    }
                }
                delta = next;
            }
        }
    }
    (loss, grads)
}

fn standardized_batch(
    dataset: &[(FeatureVector, BehaviorLabel)],
    standardizer: &Standardizer,
) -> Vec<(Vec<f64>, [f64; 2])> {
    dataset
        .iter()
        .map(|(fv, label)| (standardizer.apply(&fv.values), label.one_hot()))
        .collect()
}

/// Trains the perceptron by full-batch gradient descent, stepping with the
/// per-example mean gradient. Returns the model and the per-epoch summed
/// loss trace. Deterministic given the seed.
pub fn train(
    dataset: &[(FeatureVector, BehaviorLabel)],
    config: &TrainConfig,
) -> Result<(PerceptronModel, Vec<f64>)> {
    validate_dataset(dataset)?;
    let layout = dataset[0].0.layout;
    let input_dim = dataset[0].0.values.len();

    let rows: Vec<&FeatureVector> = dataset.iter().map(|(fv, _)| fv).collect();
    let standardizer = Standardizer::fit(&rows);
    let batch = standardized_batch(dataset, &standardizer);

    let mut layers = seeded_layers(input_dim, config.hidden_width, config.seed);
    let n = batch.len() as f64;
    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (loss, grads) = loss_and_gradients(&layers, &batch);
        trace.push(loss);
        for (layer, grad) in layers.iter_mut().zip(&grads) {
            for (wr, gr) in layer.w.iter_mut().zip(&grad.w) {
                for (w, g) in wr.iter_mut().zip(gr) {
                    *w -= config.learning_rate * g / n;
                }
            }
            for (b, g) in layer.b.iter_mut().zip(&grad.b) {
                *b -= config.learning_rate * g / n;
            }
        }
    }

    Ok((
        PerceptronModel {
            format_version: MODEL_FORMAT_VERSION,
            layout,
            layers,
            standardizer,
            config: *config,
        },
        trace,
    ))
}

fn validate_dataset(dataset: &[(FeatureVector, BehaviorLabel)]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Degenerate("empty training set".into()));
    }
    let layout = dataset[0].0.layout;
    let dim = dataset[0].0.values.len();
    let mut counts: BTreeMap<BehaviorLabel, usize> = BTreeMap::new();
    for (fv, label) in dataset {
        if fv.layout != layout || fv.values.len() != dim {
            return Err(Error::Type("inconsistent feature layout in dataset".into()));
        }
        *counts.entry(*label).or_insert(0) += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(Error::Degenerate(
            "training needs at least 2 examples of each class".into(),
        ));
    }
    Ok(())
}

/// Shared predict surface for the perceptron and the logistic baseline.
pub trait Classifier {
    fn predict(&self, fv: &FeatureVector) -> Result<(BehaviorLabel, [f64; 2])>;
}

impl Classifier for PerceptronModel {
    /// Argmax of the softmax scores; an exact tie defaults to Conservative.
    fn predict(&self, fv: &FeatureVector) -> Result<(BehaviorLabel, [f64; 2])> {
        if fv.layout != self.layout || fv.values.len() != self.input_dim() {
            return Err(Error::Type(format!(
                "feature vector of length {} does not match model input {}",
                fv.values.len(),
                self.input_dim()
            )));
        }
        let x = self.standardizer.apply(&fv.values);
        let pass = forward(&self.layers, &x);
        let scores = pass.activations.last().expect("softmax output");
        let out = [scores[0], scores[1]];
        let label = if out[0] > out[1] {
            BehaviorLabel::Aggressive
        } else if out[1] > out[0] {
            BehaviorLabel::Conservative
        } else {
            BehaviorLabel::Conservative
        };
        Ok((label, out))
    }
}

/// Max relative error between analytic gradients and central finite
/// differences of the loss, over every parameter of the model, on one
/// sample.
pub fn gradient_check(
    model: &PerceptronModel,
    sample: &(FeatureVector, BehaviorLabel),
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step h must be positive, got {h}")));
    }
    let x = model.standardizer.apply(&sample.0.values);
    let batch = vec![(x, sample.1.one_hot())];
    let (_, grads) = loss_and_gradients(&model.layers, &batch);

    let loss_of = |layers: &[Layer]| loss_and_gradients(layers, &batch).0;
    let mut max_rel = 0.0f64;
    let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut Vec<Layer>, f64)| {
        let mut plus = model.layers.clone();
        perturb(&mut plus, h);
        let mut minus = model.layers.clone();
        perturb(&mut minus, -h);
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let denom = (analytic.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic - numeric).abs() / denom);
    };

    for li in 0..model.layers.len() {
        for r in 0..model.layers[li].w.len() {
            for c in 0..model.layers[li].w[r].len() {
                check(grads[li].w[r][c], &mut |layers, d| {
                    layers[li].w[r][c] += d;
                });
            }
            check(grads[li].b[r], &mut |layers, d| {
                layers[li].b[r] += d;
            });
        }
    }
    Ok(max_rel)
}

/// Weighted classification accuracy: Σ_c freq(c) · recall(c), frequencies
/// over the ground-truth labels.
pub fn weighted_accuracy(preds: &[BehaviorLabel], labels: &[BehaviorLabel]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Domain(format!(
            "length mismatch: {} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Domain("empty evaluation set".into()));
    }
    let mut total: BTreeMap<BehaviorLabel, usize> = BTreeMap::new();
    let mut correct: BTreeMap<BehaviorLabel, usize> = BTreeMap::new();
    for (p, l) in preds.iter().zip(labels) {
        *total.entry(*l).or_insert(0) += 1;
        if p == l {
            *correct.entry(*l).or_insert(0) += 1;
        }
    }
    let n = labels.len() as f64;
    let mut acc = 0.0;
    for (label, &count) in &total {
        let freq = count as f64 / n;
        let recall = correct.get(label).copied().unwrap_or(0) as f64 / count as f64;
        acc += freq * recall;
    }
    Ok(acc)
}

/// Logistic-regression baseline behind the same predict interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub format_version: u32,
    pub layout: FeatureLayout,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
}

/// Trains binary logistic regression (class 0 = Aggressive) by full-batch
/// gradient descent on the cross-entropy loss.
pub fn train_logistic(
    dataset: &[(FeatureVector, BehaviorLabel)],
    config: &TrainConfig,
) -> Result<LogisticModel> {
    validate_dataset(dataset)?;
    let layout = dataset[0].0.layout;
    let rows: Vec<&FeatureVector> = dataset.iter().map(|(fv, _)| fv).collect();
    let standardizer = Standardizer::fit(&rows);

    let xs: Vec<Vec<f64>> = dataset
        .iter()
        .map(|(fv, _)| standardizer.apply(&fv.values))
        .collect();
    let ys: Vec<f64> = dataset
        .iter()
        .map(|(_, l)| if *l == BehaviorLabel::Aggressive { 1.0 } else { 0.0 })
        .collect();

    let dim = xs[0].len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let n = xs.len() as f64;
    // Cross-entropy is much better conditioned here than the MLP's squared
    // loss; a larger step converges within the same epoch budget.
    let lr = config.learning_rate.max(1e-2);
    for _ in 0..config.epochs {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += err * xi;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
    }

    Ok(LogisticModel {
        format_version: MODEL_FORMAT_VERSION,
        layout,
        weights: w,
        bias: b,
        standardizer,
    })
}

impl Classifier for LogisticModel {
    fn predict(&self, fv: &FeatureVector) -> Result<(BehaviorLabel, [f64; 2])> {
        if fv.layout != self.layout || fv.values.len() != self.weights.len() {
            return Err(Error::Type(format!(
                "feature vector of length {} does not match model input {}",
                fv.values.len(),
                self.weights.len()
            )));
        }
        let x = self.standardizer.apply(&fv.values);
        let z: f64 = self.weights.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>() + self.bias;
        let p_aggr = 1.0 / (1.0 + (-z).exp());
        let scores = [p_aggr, 1.0 - p_aggr];
        let label = if scores[0] > scores[1] {
            BehaviorLabel::Aggressive
        } else {
            BehaviorLabel::Conservative
        };
        Ok((label, scores))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centrality::CentralityKind;
    use crate::styles::{StyleChannel, StyleReport, WeavingChannel};
    use crate::io::AgentId;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            layout: FeatureLayout::Coefficients,
        }
    }

    /// Two blobs separated along the first feature.
    fn separable_dataset(n_per_class: usize) -> Vec<(FeatureVector, BehaviorLabel)> {
        let mut out = Vec::new();
        for i in 0..n_per_class {
            let wiggle = (i as f64 * 0.7).sin() * 0.3;
            out.push((fv(vec![2.0 + wiggle, 1.0 - wiggle]), BehaviorLabel::Aggressive));
            out.push((fv(vec![-2.0 - wiggle, -1.0 + wiggle]), BehaviorLabel::Conservative));
        }
        out
    }

    fn report_with(os: f64, ot: f64, weaving_count: usize) -> StyleReport {
        let ch = |m: f64| StyleChannel {
            sle: vec![m],
            sie: vec![0.0],
            sle_max: m,
            t_sle: 0,
        };
        StyleReport {
            agent: AgentId::from("a"),
            window: (0, 0),
            overspeeding: ch(os),
            overtaking: ch(ot),
            sudden_lane_change: ch(ot),
            weaving: WeavingChannel {
                critical_points: vec![],
                count: weaving_count,
                max_sharpness: 0.0,
                t_peak: None,
            },
            conservative: false,
        }
    }

    fn poly(kind: CentralityKind) -> CentralityPolynomial {
        CentralityPolynomial {
            beta: vec![1.0, 2.0, 3.0],
            degree: 2,
            alpha: 0.0,
            window: (0, 10),
            kappa: 1.0,
            kind,
        }
    }

    #[test]
    fn coefficient_layout_has_length_six() {
        let report = report_with(0.0, 0.0, 0);
        let f = extract_features(
            &report,
            Some(&poly(CentralityKind::Closeness)),
            Some(&poly(CentralityKind::Degree)),
            FeatureLayout::Coefficients,
        )
        .unwrap();
        assert_eq!(f.values.len(), 6);
    }

    #[test]
    fn extended_layout_has_length_eleven() {
        let report = report_with(1.0, 2.0, 3);
        let f = extract_features(
            &report,
            Some(&poly(CentralityKind::Closeness)),
            Some(&poly(CentralityKind::Degree)),
            FeatureLayout::Extended,
        )
        .unwrap();
        assert_eq!(f.values.len(), 11);
        assert_eq!(f.values[10], 3.0);
    }

    #[test]
    fn missing_fit_is_incomplete_input() {
        let report = report_with(0.0, 0.0, 0);
        assert!(matches!(
            extract_features(&report, None, Some(&poly(CentralityKind::Degree)), FeatureLayout::Coefficients),
            Err(Error::Incomplete(_))
        ));
    }

    #[test]
    fn identical_agents_get_identical_vectors() {
        let report = report_with(0.5, 0.25, 1);
        let make = || {
            extract_features(
                &report,
                Some(&poly(CentralityKind::Closeness)),
                Some(&poly(CentralityKind::Degree)),
                FeatureLayout::Extended,
            )
            .unwrap()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn separable_toy_set_reaches_full_training_accuracy() {
        let dataset = separable_dataset(10);
        let config = TrainConfig {
            epochs: 500,
            learning_rate: 0.05,
            hidden_width: 8,
            seed: 3,
        };
        let (model, trace) = train(&dataset, &config).unwrap();
        assert_eq!(trace.len(), 500);
        let preds: Vec<BehaviorLabel> = dataset
            .iter()
            .map(|(f, _)| model.predict(f).unwrap().0)
            .collect();
        let labels: Vec<BehaviorLabel> = dataset.iter().map(|(_, l)| *l).collect();
        assert_eq!(weighted_accuracy(&preds, &labels).unwrap(), 1.0);
    }

    #[test]
    fn zero_epochs_returns_seeded_initialization() {
        let dataset = separable_dataset(2);
        let config = TrainConfig {
            epochs: 0,
            seed: 11,
            ..TrainConfig::default()
        };
        let (m1, trace) = train(&dataset, &config).unwrap();
        let (m2, _) = train(&dataset, &config).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m1, m2);
        let other = train(&dataset, &TrainConfig { seed: 12, ..config }).unwrap().0;
        assert_ne!(m1, other);
    }

    #[test]
    fn duplicated_dataset_trains_to_identical_parameters() {
        let dataset = separable_dataset(5);
        let mut doubled = Vec::new();
        for pair in &dataset {
            doubled.push(pair.clone());
            doubled.push(pair.clone());
        }
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            hidden_width: 8,
            seed: 5,
        };
        let (m1, _) = train(&dataset, &config).unwrap();
        let (m2, _) = train(&doubled, &config).unwrap();
        for (l1, l2) in m1.layers.iter().zip(&m2.layers) {
            for (r1, r2) in l1.w.iter().zip(&l2.w) {
                for (a, b) in r1.iter().zip(r2) {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
            }
            for (a, b) in l1.b.iter().zip(&l2.b) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_class_dataset_is_degenerate() {
        let dataset: Vec<_> = (0..4)
            .map(|i| (fv(vec![i as f64, 1.0]), BehaviorLabel::Aggressive))
            .collect();
        assert!(matches!(
            train(&dataset, &TrainConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn training_loss_is_non_increasing_at_small_lr() {
        let dataset = separable_dataset(8);
        let config = TrainConfig {
            epochs: 300,
            learning_rate: 1e-3,
            hidden_width: 16,
            seed: 2,
        };
        let (_, trace) = train(&dataset, &config).unwrap();
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn softmax_scores_sum_to_one() {
        let dataset = separable_dataset(3);
        let (model, _) = train(&dataset, &TrainConfig { epochs: 10, ..TrainConfig::default() }).unwrap();
        for i in 0..50 {
            let x = fv(vec![(i as f64 * 1.37).sin() * 5.0, (i as f64 * 0.61).cos() * 5.0]);
            let (_, scores) = model.predict(&x).unwrap();
            assert!((scores[0] + scores[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_and_tie_rules() {
        let dataset = separable_dataset(3);
        let (model, _) = train(&dataset, &TrainConfig { epochs: 200, learning_rate: 0.05, hidden_width: 8, seed: 1 }).unwrap();
        let (label, scores) = model.predict(&fv(vec![2.0, 1.0])).unwrap();
        assert_eq!(label, BehaviorLabel::Aggressive);
        assert!(scores[0] > scores[1]);
        // Dimension mismatch is a type error.
        assert!(matches!(
            model.predict(&fv(vec![1.0, 2.0, 3.0])),
            Err(Error::Type(_))
        ));
    }

    #[test]
    fn gradient_check_stays_below_tolerance() {
        for seed in 0..10 {
            let dataset = separable_dataset(3);
            let config = TrainConfig {
                epochs: 5,
                hidden_width: 6,
                seed,
                ..TrainConfig::default()
            };
            let (model, _) = train(&dataset, &config).unwrap();
            let sample = (fv(vec![0.8, -0.4]), BehaviorLabel::Aggressive);
            let err = gradient_check(&model, &sample, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: gradient error {err}");
        }
    }

    #[test]
    fn gradient_vanishes_at_exact_fit() {
        // Force the output to exactly match the 1-hot target by rigging a
        // trivial network: huge logit gap → softmax saturates to (1, 0)
        // and the squared-loss gradient underflows to ~0.
        let dataset = separable_dataset(2);
        let (mut model, _) = train(&dataset, &TrainConfig { epochs: 0, hidden_width: 4, ..TrainConfig::default() }).unwrap();
        let last = model.layers.len() - 1;
        for w in model.layers[last].w[0].iter_mut() {
            *w = 0.0;
        }
        for w in model.layers[last].w[1].iter_mut() {
            *w = 0.0;
        }
        model.layers[last].b = vec![800.0, -800.0];
        let x = model.standardizer.apply(&[0.3, 0.1]);
        let batch = vec![(x, BehaviorLabel::Aggressive.one_hot())];
        let (loss, grads) = loss_and_gradients(&model.layers, &batch);
        assert!(loss < 1e-16);
        let norm: f64 = grads
            .iter()
            .flat_map(|l| l.w.iter().flatten().chain(l.b.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn duplicating_a_sample_doubles_its_gradient() {
        let dataset = separable_dataset(2);
        let (model, _) = train(&dataset, &TrainConfig { epochs: 3, hidden_width: 4, ..TrainConfig::default() }).unwrap();
        let x = model.standardizer.apply(&[0.5, -0.2]);
        let single = vec![(x.clone(), BehaviorLabel::Aggressive.one_hot())];
        let double = vec![
            (x.clone(), BehaviorLabel::Aggressive.one_hot()),
            (x, BehaviorLabel::Aggressive.one_hot()),
        ];
        let (l1, g1) = loss_and_gradients(&model.layers, &single);
        let (l2, g2) = loss_and_gradients(&model.layers, &double);
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            for (ra, rb) in a.w.iter().zip(&b.w) {
                for (x1, x2) in ra.iter().zip(rb) {
                    assert!((x2 - 2.0 * x1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weighted_accuracy_examples() {
        use BehaviorLabel::{Aggressive as A, Conservative as C};
        assert_eq!(weighted_accuracy(&[A, C, A], &[A, C, A]).unwrap(), 1.0);
        // labels [A,A,A,C], preds [A,A,C,C] → 0.75·(2/3) + 0.25·1 = 0.75
        let acc = weighted_accuracy(&[A, A, C, C], &[A, A, A, C]).unwrap();
        assert!((acc - 0.75).abs() < 1e-15);
        assert_eq!(weighted_accuracy(&[C, C], &[A, A]).unwrap(), 0.0);
        assert!(matches!(
            weighted_accuracy(&[A], &[A, C]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn weighted_accuracy_is_permutation_invariant() {
        use BehaviorLabel::{Aggressive as A, Conservative as C};
        let preds = [A, C, A, C, C, A];
        let labels = [A, A, A, C, C, C];
        let base = weighted_accuracy(&preds, &labels).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let p2: Vec<_> = perm.iter().map(|&i| preds[i]).collect();
        let l2: Vec<_> = perm.iter().map(|&i| labels[i]).collect();
        assert_eq!(base, weighted_accuracy(&p2, &l2).unwrap());
    }

    #[test]
    fn logistic_baseline_separates_toy_data() {
        let dataset = separable_dataset(10);
        let model = train_logistic(&dataset, &TrainConfig { epochs: 500, ..TrainConfig::default() }).unwrap();
        let preds: Vec<BehaviorLabel> = dataset
            .iter()
            .map(|(f, _)| model.predict(f).unwrap().0)
            .collect();
        let labels: Vec<BehaviorLabel> = dataset.iter().map(|(_, l)| *l).collect();
        assert_eq!(weighted_accuracy(&preds, &labels).unwrap(), 1.0);
    }

    #[test]
    fn model_round_trips_through_versioned_json() {
        let dataset = separable_dataset(3);
        let (model, _) = train(&dataset, &TrainConfig { epochs: 5, ..TrainConfig::default() }).unwrap();
        let text = model.to_json().unwrap();
        assert!(text.contains("\"format_version\": 1"));
        let back = PerceptronModel::from_json(&text).unwrap();
        assert_eq!(model, back);
    }
}
