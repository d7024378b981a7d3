//! The classifier: a backbone followed by either the quantum head
//! `dense → QDI → dense` or the width-matched classical head
//! `dense → relu → dense`, plus loss, training and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::layers::{ActivationCache, Layer};
use crate::qdi::{QdiConfig, QdiLayer};
use crate::tensor::Tensor;

pub const N_CLASSES: usize = 2;

/// Smallest probability fed to the logarithm in [`loss`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Hybrid,
    Classical,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Hybrid => "hybrid",
            Variant::Classical => "classical",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Variant::Hybrid),
            "classical" => Ok(Variant::Classical),
            other => Err(Error::Invalid(format!("unknown model variant {other:?}"))),
        }
    }
}

/// Convolutional feature extractor.
///
/// An optional stem convolution with kernel == stride downsamples the image,
/// then each stage is `conv3x3(pad 1) → relu → maxpool2`, then flatten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnConfig {
    /// Output channels of the stem; 0 disables it.
    pub stem_channels: usize,
    /// Stem kernel and stride. `None` picks `height / 16`.
    pub stem_stride: Option<usize>,
    pub stages: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            stem_channels: 4,
            stem_stride: None,
            stages: vec![8, 16],
        }
    }
}

impl CnnConfig {
    /// Single stage of 2 channels: a 4×4 image becomes an 8-dim feature.
    pub fn micro() -> Self {
        Self {
            stem_channels: 0,
            stem_stride: None,
            stages: vec![2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Backbone {
    SmallCnn(CnnConfig),
    /// Inputs are precomputed feature vectors; the head reads them directly.
    ExternalFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub backbone: Backbone,
    pub input_shape: Vec<usize>,
    /// Width of the classical hidden layer (classical variant only; the
    /// hybrid head uses the QDI feature count).
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub qdi: QdiConfig,
}

fn default_hidden() -> usize {
    100
}

impl ModelSpec {
    /// Small CNN on `[1, size, size]` grayscale images.
    pub fn image(variant: Variant, size: usize) -> Self {
        Self {
            variant,
            backbone: Backbone::SmallCnn(CnnConfig::default()),
            input_shape: vec![1, size, size],
            hidden: 100,
            qdi: QdiConfig::default(),
        }
    }

    /// 4×4 images, 8-dim backbone, full-size QDI layer.
    pub fn micro(variant: Variant) -> Self {
        Self {
            variant,
            backbone: Backbone::SmallCnn(CnnConfig::micro()),
            input_shape: vec![1, 4, 4],
            hidden: 100,
            qdi: QdiConfig::default(),
        }
    }

    /// Small-CNN spec for `[c, h, w]` images, feature spec for vectors.
    pub fn for_input(variant: Variant, shape: &[usize]) -> Result<Self> {
        match shape {
            [dim] => Ok(Self::features(variant, *dim)),
            [_, _, _] => Ok(Self {
                input_shape: shape.to_vec(),
                ..Self::image(variant, shape[1])
            }),
            _ => Err(Error::Invalid(format!("unsupported input shape {shape:?}"))),
        }
    }

    pub fn features(variant: Variant, dim: usize) -> Self {
        Self {
            variant,
            backbone: Backbone::ExternalFeatures,
            input_shape: vec![dim],
            hidden: 100,
            qdi: QdiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Classical(Layer),
    Qdi(QdiLayer),
}

impl Stage {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Stage::Classical(l) => l.params(),
            Stage::Qdi(q) => vec![&q.params],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Stage::Classical(l) => l.params_mut(),
            Stage::Qdi(q) => vec![&mut q.params],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Stage::Classical(l) => l.name(),
            Stage::Qdi(_) => "qdi",
        }
    }
}

#[derive(Debug, Clone)]
enum StageCache {
    Classical(ActivationCache),
    Qdi(Vec<f64>),
}

/// Per-sample activations recorded by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stages: Vec<StageCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    stages: Vec<Stage>,
    /// Number of leading stages that form the backbone.
    backbone_len: usize,
}

fn backbone_layers(cfg: &CnnConfig, input: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<Layer>> {
    if input.len() != 3 {
        return Err(Error::Invalid(format!(
            "small-cnn backbone expects [channels, height, width], got {input:?}"
        )));
    }
    let mut layers = Vec::new();
    let mut channels = input[0];
    if cfg.stem_channels > 0 {
        let stride = cfg.stem_stride.unwrap_or(input[1] / 16).max(1);
        layers.push(Layer::conv2d(channels, cfg.stem_channels, stride, stride, 0, rng));
        layers.push(Layer::Relu);
        channels = cfg.stem_channels;
    }
    for &c in &cfg.stages {
        layers.push(Layer::conv2d(channels, c, 3, 1, 1, rng));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool2d { size: 2 });
        channels = c;
    }
    layers.push(Layer::Flatten);
    Ok(layers)
}

impl Model {
    /// Builds and randomly initialises a model; identical seeds give identical
    /// parameters.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages: Vec<Stage> = match &spec.backbone {
            Backbone::SmallCnn(cfg) => backbone_layers(cfg, &spec.input_shape, &mut rng)?
                .into_iter()
                .map(Stage::Classical)
                .collect(),
            Backbone::ExternalFeatures => {
                if spec.input_shape.len() != 1 {
                    return Err(Error::Invalid(format!(
                        "external features must be vectors, got shape {:?}",
                        spec.input_shape
                    )));
                }
                Vec::new()
            }
        };
        let backbone_len = stages.len();
        let mut shape = spec.input_shape.clone();
        for s in &stages {
            if let Stage::Classical(l) = s {
                shape = l.output_shape(&shape)?;
            }
        }
        let feat_dim = shape[0];
        match spec.variant {
            Variant::Hybrid => {
                let qdi = QdiLayer::random(spec.qdi, &mut rng)?;
                stages.push(Stage::Classical(Layer::dense(feat_dim, spec.qdi.n_features(), &mut rng)));
                stages.push(Stage::Qdi(qdi));
                stages.push(Stage::Classical(Layer::dense(spec.qdi.n_qubits, N_CLASSES, &mut rng)));
            }
            Variant::Classical => {
                stages.push(Stage::Classical(Layer::dense(feat_dim, spec.hidden, &mut rng)));
                stages.push(Stage::Classical(Layer::Relu));
                stages.push(Stage::Classical(Layer::dense(spec.hidden, N_CLASSES, &mut rng)));
            }
        }
        Ok(Self {
            spec,
            stages,
            backbone_len,
        })
    }

    /// A model with no stages at all; only useful as a degenerate case.
    pub fn empty(spec: ModelSpec) -> Self {
        Self {
            spec,
            stages: Vec::new(),
            backbone_len: 0,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [Stage] {
        &mut self.stages
    }

    /// Dimension of the backbone output feeding the head.
    pub fn backbone_dim(&self) -> Result<usize> {
        let mut shape = self.spec.input_shape.clone();
        for s in &self.stages[..self.backbone_len] {
            if let Stage::Classical(l) = s {
                shape = l.output_shape(&shape)?;
            }
        }
        Ok(shape.iter().product())
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.stages.iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stages.iter_mut().flat_map(|s| s.params_mut()).collect()
    }

    /// Parameter tensors named `<stage index>.<stage kind>.<weight|bias|angles>`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            match s {
                Stage::Classical(l) => {
                    for (p, n) in l.params().into_iter().zip(["weight", "bias"]) {
                        out.push((format!("{i}.{}.{n}", l.name()), p));
                    }
                }
                Stage::Qdi(q) => out.push((format!("{i}.qdi.angles"), &q.params)),
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = count_parameters(self);
        if flat.len() != n {
            return Err(Error::length("flat parameter vector", n, flat.len()));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    pub fn set_grad_method(&mut self, method: crate::qdi::GradMethod) {
        for s in &mut self.stages {
            if let Stage::Qdi(q) = s {
                q.grad_method = method;
            }
        }
    }

    /// Logits for one sample plus the activations needed by [`Model::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        input.ensure_shape(&self.spec.input_shape, "model input")?;
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            match stage {
                Stage::Classical(l) => {
                    let mut c = ActivationCache::new();
                    x = l.forward(&x, &mut c)?;
                    caches.push(StageCache::Classical(c));
                }
                Stage::Qdi(q) => {
                    let feats = x.data().to_vec();
                    let out = q.forward(&feats)?;
                    caches.push(StageCache::Qdi(feats));
                    x = Tensor::from_parts(vec![out.len()], out);
                }
            }
        }
        Ok((x, ForwardCache { stages: caches }))
    }

    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input)?.0)
    }

    /// Parameter gradients, in [`Model::params`] order, for upstream
    /// gradient `d_logits`.
    pub fn backward(&self, d_logits: &Tensor, cache: &ForwardCache) -> Result<Vec<Tensor>> {
        if cache.stages.len() != self.stages.len() {
            return Err(Error::MissingCache("model".into()));
        }
        let mut per_stage: Vec<Vec<Tensor>> = vec![Vec::new(); self.stages.len()];
        let mut up = d_logits.clone();
        for (i, (stage, c)) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            match (stage, c) {
                (Stage::Classical(l), StageCache::Classical(ac)) => {
                    let (g, dx) = l.backward(&up, ac)?;
                    per_stage[i] = g;
                    up = dx;
                }
                (Stage::Qdi(q), StageCache::Qdi(feats)) => {
                    let g = q.backward(feats, up.data())?;
                    per_stage[i] = vec![Tensor::from_parts(vec![g.params.len()], g.params)];
                    up = Tensor::from_parts(vec![g.features.len()], g.features);
                }
                _ => return Err(Error::MissingCache(stage.name().into())),
            }
        }
        Ok(per_stage.into_iter().flatten().collect())
    }
}

/// Total trainable scalars, QDI rotation angles included.
pub fn count_parameters(model: &Model) -> usize {
    model.params().iter().map(|p| p.len()).sum()
}

/// Parameters of the stages after the backbone.
pub fn count_head_parameters(model: &Model) -> usize {
    model.stages[model.backbone_len..]
        .iter()
        .flat_map(|s| s.params())
        .map(|p| p.len())
        .sum()
}

pub fn build_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    Model::new(spec, seed)
}

/// Class-weighted cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight on samples whose true class is non-transplantable; must be ≥ 1.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl LossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0 && lambda.is_finite()) {
            return Err(Error::Invalid(format!("lambda must be >= 1, got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn weight(&self, label: Label) -> f64 {
        match label {
            Label::NonTransplantable => self.lambda,
            Label::Transplantable => 1.0,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `w·(−ln p_true)` with `w = λ` for the non-transplantable class, and its
/// gradient `w·(p − onehot)`. `p_true` is floored at [`PROB_FLOOR`] inside the
/// logarithm only.
pub fn loss(logits: &[f64], truth: Label, config: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if logits.len() != N_CLASSES {
        return Err(Error::length("logits", N_CLASSES, logits.len()));
    }
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(Error::NonFinite("loss logits".into()));
    }
    let w = config.weight(truth);
    let p = softmax(logits);
    let t = truth.index();
    let value = w * -p[t].max(PROB_FLOOR).ln();
    let grad = p
        .iter()
        .enumerate()
        .map(|(c, pc)| w * (pc - if c == t { 1.0 } else { 0.0 }))
        .collect();
    Ok((value, grad))
}

/// Accuracy, false-negative rate and the confusion matrix
/// `confusion[true][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub fn_rate: f64,
    pub confusion: [[u64; 2]; 2],
}

impl Metrics {
    pub fn from_confusion(confusion: [[u64; 2]; 2]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let correct = confusion[0][0] + confusion[1][1];
        let positives = confusion[1][0] + confusion[1][1];
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            fn_rate: if positives == 0 {
                0.0
            } else {
                confusion[1][0] as f64 / positives as f64
            },
            confusion,
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Self {
        let mut c = [[0u64; 2]; 2];
        for (t, p) in truth.iter().zip(predicted) {
            c[t.index()][p.index()] += 1;
        }
        Self::from_confusion(c)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn false_negatives(&self) -> u64 {
        self.confusion[1][0]
    }
}

pub fn predict(logits: &Tensor) -> Label {
    if logits.data()[1] > logits.data()[0] {
        Label::NonTransplantable
    } else {
        Label::Transplantable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub mean_loss: f64,
}

/// Argmax predictions over the whole dataset.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Metrics> {
    Ok(evaluate_with_loss(model, data, &LossConfig::default())?.metrics)
}

pub fn evaluate_with_loss(model: &Model, data: &Dataset, loss_config: &LossConfig) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluate".into()));
    }
    let results: Vec<(Label, f64)> = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| {
            let logits = model.logits(x)?;
            let (l, _) = loss(logits.data(), y, loss_config)?;
            Ok((predict(&logits), l))
        })
        .collect::<Result<_>>()?;
    let preds: Vec<Label> = results.iter().map(|r| r.0).collect();
    let total_loss: f64 = results.iter().map(|r| r.1).sum();
    Ok(Evaluation {
        metrics: Metrics::from_predictions(&data.labels, &preds),
        mean_loss: total_loss / data.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> Result<LossConfig> {
        LossConfig::new(self.lambda)
    }
}

pub fn new_optimizer(model: &Model, config: AdamConfig) -> Adam {
    let shapes = model.param_shapes();
    Adam::new(shapes.iter().map(|s| s.as_slice()), config)
}

/// Derives the shuffle seed for one epoch.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    // splitmix64 finaliser over (seed, epoch)
    let mut z = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Predictions made during the pass, before each batch's update.
    pub metrics: Metrics,
}

/// One shuffled pass of mini-batch Adam over `data`.
///
/// Per-sample gradients are computed (possibly in parallel) and then summed
/// in sample order, so results do not depend on the thread count.
pub fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    optimizer: &mut Adam,
    loss_config: &LossConfig,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("train_epoch".into()));
    }
    if batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));

    let mut total_loss = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    let mut truth = Vec::with_capacity(data.len());
    for batch in order.chunks(batch_size) {
        let m: &Model = model;
        let per_sample: Vec<(f64, Label, Vec<Tensor>)> = batch
            .par_iter()
            .map(|&i| {
                let (logits, cache) = m.forward(&data.inputs[i])?;
                let (l, dl) = loss(logits.data(), data.labels[i], loss_config)?;
                let grads = m.backward(&Tensor::from_parts(vec![N_CLASSES], dl), &cache)?;
                Ok((l, predict(&logits), grads))
            })
            .collect::<Result<_>>()?;

        let mut sum: Option<Vec<Tensor>> = None;
        for (&i, (l, pred, grads)) in batch.iter().zip(per_sample) {
            total_loss += l;
            preds.push(pred);
            truth.push(data.labels[i]);
            match &mut sum {
                None => sum = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g)?;
                    }
                }
            }
        }
        let mut grads = sum.expect("non-empty batch");
        let scale = 1.0 / batch.len() as f64;
        for g in &mut grads {
            g.scale(scale);
        }
        optimizer.step(model.params_mut(), &grads)?;
    }
    for p in model.params() {
        p.ensure_finite("parameters after train_epoch")?;
    }
    Ok(EpochStats {
        mean_loss: total_loss / data.len() as f64,
        metrics: Metrics::from_predictions(&truth, &preds),
    })
}

/// Per-epoch record of centralized training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: EpochStats,
    pub test: Option<Evaluation>,
}

/// Centralized training from a fresh model. Epoch `e` shuffles with
/// `epoch_seed(seed, e)`; the test set, when given, is evaluated after every
/// epoch.
pub fn train(
    model: &mut Model,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    let loss_config = config.loss_config()?;
    let mut opt = new_optimizer(model, config.adam);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let stats = train_epoch(
            model,
            train_data,
            &mut opt,
            &loss_config,
            config.batch_size,
            epoch_seed(seed, epoch as u64),
        )?;
        let test = test_data
            .map(|t| evaluate_with_loss(model, t, &loss_config))
            .transpose()?;
        log::debug!(
            "epoch {epoch}: loss {:.4} train acc {:.4}",
            stats.mean_loss,
            stats.metrics.accuracy
        );
        history.push(EpochRecord {
            epoch,
            train: stats,
            test,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_parameter_counts() {
        let spec = ModelSpec::features(Variant::Hybrid, 256);
        let m = Model::new(spec, 0).unwrap();
        assert_eq!(count_parameters(&m), 25_817);
        let spec = ModelSpec::features(Variant::Classical, 256);
        let m = Model::new(spec, 0).unwrap();
        assert_eq!(count_parameters(&m), 25_902);
    }

    #[test]
    fn default_image_backbone_is_256_wide() {
        let m = Model::new(ModelSpec::image(Variant::Hybrid, 64), 0).unwrap();
        assert_eq!(m.backbone_dim().unwrap(), 256);
        assert_eq!(count_head_parameters(&m), 25_817);
        let m = Model::new(ModelSpec::micro(Variant::Hybrid), 0).unwrap();
        assert_eq!(m.backbone_dim().unwrap(), 8);
    }

    #[test]
    fn zero_layer_model_has_no_parameters() {
        let m = Model::empty(ModelSpec::features(Variant::Classical, 3));
        assert_eq!(count_parameters(&m), 0);
    }

    #[test]
    fn both_variants_emit_two_logits() {
        for v in [Variant::Hybrid, Variant::Classical] {
            let m = Model::new(ModelSpec::image(v, 64), 1).unwrap();
            let out = m.logits(&Tensor::zeros(&[1, 64, 64])).unwrap();
            assert_eq!(out.shape(), &[2]);
        }
    }

    #[test]
    fn loss_examples() {
        let (l, _) = loss(&[800.0, -800.0], Label::Transplantable, &LossConfig::new(7.0).unwrap()).unwrap();
        assert_eq!(l, 0.0);
        let (l, g) = loss(&[0.3, 0.3], Label::Transplantable, &LossConfig::default()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        let (l, _) = loss(&[0.3, 0.3], Label::NonTransplantable, &LossConfig::new(3.0).unwrap()).unwrap();
        assert!((l - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_clamps_underflow() {
        let (l, g) = loss(&[2000.0, -2000.0], Label::NonTransplantable, &LossConfig::default()).unwrap();
        assert!((l + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_below_one_rejected() {
        assert!(LossConfig::new(0.5).is_err());
        assert!(LossConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn confusion_metrics() {
        let m = Metrics::from_confusion([[40, 10], [5, 45]]);
        assert!((m.accuracy - 0.85).abs() < 1e-15);
        assert!((m.fn_rate - 0.1).abs() < 1e-15);
        assert_eq!(m.total(), 100);

        let truth = [Label::Transplantable, Label::NonTransplantable];
        let m = Metrics::from_predictions(&truth, &[Label::Transplantable; 2]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.fn_rate, 1.0);
        let m = Metrics::from_predictions(&truth, &truth);
        assert_eq!((m.accuracy, m.fn_rate), (1.0, 0.0));
    }

    #[test]
    fn flat_params_roundtrip() {
        let mut m = Model::new(ModelSpec::micro(Variant::Hybrid), 5).unwrap();
        let flat: Vec<f64> = (0..count_parameters(&m)).map(|i| i as f64 * 1e-3).collect();
        m.set_params_flat(&flat).unwrap();
        assert_eq!(m.params_flat(), flat);
        assert!(m.set_params_flat(&flat[1..]).is_err());
    }

    #[test]
    fn empty_dataset_errors() {
        let mut m = Model::new(ModelSpec::features(Variant::Classical, 2), 0).unwrap();
        let mut opt = new_optimizer(&m, AdamConfig::default());
        let empty = Dataset::default();
        assert!(train_epoch(&mut m, &empty, &mut opt, &LossConfig::default(), 4, 0).is_err());
        assert!(evaluate(&m, &empty).is_err());
    }
}
