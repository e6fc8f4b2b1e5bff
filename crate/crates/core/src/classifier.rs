//! Point-wise shared-MLP classifier with a max-pooled global feature.
//!
//! Every point passes through the same stack of linear → batch-norm → ReLU
//! layers, the per-channel maximum over points forms the global feature, and
//! a small fully connected head maps it to class probabilities. There are no
//! input or feature alignment sub-networks, so the only thing that changes
//! between feature modes is the width of the first weight matrix.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    softmax_rows, AdamConfig, AdamState, BatchNormConfig, BatchNormState, Checkpoint,
    CheckpointError, Graph, Mode, NamedTensor, Real, Tensor, TensorError, Var,
};
use crate::geometry::{FeatureMatrix, FeatureMode};
use crate::rng::SeedStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("model expects {expected} input channels, features have {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("objects in one batch have different point counts ({0} vs {1})")]
    InconsistentPoints(usize, usize),
    #[error("bad checkpoint metadata: {0}")]
    Metadata(String),
    #[error("failed to prepare sample: {0}")]
    Sample(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl ClassifierError {
    pub fn code(&self) -> &'static str {
        match self {
            ClassifierError::InvalidConfig(_) => "InvalidConfig",
            ClassifierError::ChannelMismatch { .. } => "ChannelMismatch",
            ClassifierError::EmptyDataset => "EmptyDataset",
            ClassifierError::InconsistentPoints(..) => "InconsistentPoints",
            ClassifierError::Metadata(_) => "BadCheckpointMetadata",
            ClassifierError::Sample(_) => "SampleError",
            ClassifierError::Tensor(e) => e.code(),
            ClassifierError::Checkpoint(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Default,
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Preset::Default),
            "tiny" => Ok(Preset::Tiny),
            other => Err(ClassifierError::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub shared_mlp_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
}

impl ClassifierConfig {
    pub fn preset(preset: Preset, mode: FeatureMode, num_classes: usize) -> Self {
        let (shared, head) = match preset {
            Preset::Default => (vec![64, 128, 1024], vec![512, 256]),
            Preset::Tiny => (vec![32, 64, 256], vec![128, 64]),
        };
        Self {
            in_channels: mode.channels(),
            shared_mlp_widths: shared,
            head_widths: head,
            num_classes,
            dropout_rate: 0.3,
            use_batchnorm: true,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |msg: &str| Err(ClassifierError::InvalidConfig(msg.to_string()));
        if FeatureMode::from_channels(self.in_channels).is_none() {
            return bad("in_channels must be 3, 4, 10 or 11");
        }
        if self.num_classes < 2 {
            return bad("at least two classes are required");
        }
        if self.shared_mlp_widths.is_empty() || self.head_widths.is_empty() {
            return bad("layer width lists must be non-empty");
        }
        if self.shared_mlp_widths.contains(&0) || self.head_widths.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn feature_mode(&self) -> Option<FeatureMode> {
        FeatureMode::from_channels(self.in_channels)
    }

    /// Length of the global feature vector.
    pub fn global_width(&self) -> usize {
        *self.shared_mlp_widths.last().expect("validated config")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Shared,
    Head,
    Output,
}

#[derive(Debug, Clone)]
struct Layer {
    stage: Stage,
    weight: usize,
    bias: usize,
    /// Parameter indices of gamma and beta plus the running-state index.
    bn: Option<(usize, usize, usize)>,
}

/// Extra information stored with a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    #[serde(default)]
    pub class_names: Vec<String>,
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub log_scale: bool,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format: String,
    config: ClassifierConfig,
    info: ModelInfo,
}

const METADATA_FORMAT: &str = "gscls-classifier";

#[derive(Debug, Clone)]
pub struct ClassifierModel {
    config: ClassifierConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    layers: Vec<Layer>,
    bn_states: Vec<BatchNormState>,
    bn_config: BatchNormConfig,
    mode: Mode,
    pub info: ModelInfo,
}

fn layer_plan(config: &ClassifierConfig) -> Vec<(Stage, String, usize, usize, bool)> {
    let mut plan = Vec::new();
    let mut width = config.in_channels;
    for (i, &w) in config.shared_mlp_widths.iter().enumerate() {
        plan.push((Stage::Shared, format!("mlp.{i}"), width, w, config.use_batchnorm));
        width = w;
    }
    for (i, &w) in config.head_widths.iter().enumerate() {
        plan.push((Stage::Head, format!("head.{i}"), width, w, config.use_batchnorm));
        width = w;
    }
    plan.push((Stage::Output, "out".to_string(), width, config.num_classes, false));
    plan
}

/// He-uniform weights, zero biases, unit gamma and zero beta.
pub fn build_model(config: ClassifierConfig, seed: u64) -> Result<ClassifierModel, ClassifierError> {
    config.validate()?;
    let root = SeedStream::new(seed).derive("init");
    let mut names = Vec::new();
    let mut params = Vec::new();
    let mut layers = Vec::new();
    let mut bn_states = Vec::new();
    for (stage, prefix, fan_in, fan_out, bn) in layer_plan(&config) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = root.derive(&prefix).rng();
        let w: Vec<Real> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound) as Real)
            .collect();
        let weight = params.len();
        names.push(format!("{prefix}.weight"));
        params.push(Tensor::matrix(fan_in, fan_out, w)?);
        let bias = params.len();
        names.push(format!("{prefix}.bias"));
        params.push(Tensor::zeros(vec![fan_out]));
        let bn = if bn {
            let gamma = params.len();
            names.push(format!("{prefix}.bn.gamma"));
            params.push(Tensor::filled(vec![fan_out], 1.0));
            let beta = params.len();
            names.push(format!("{prefix}.bn.beta"));
            params.push(Tensor::zeros(vec![fan_out]));
            bn_states.push(BatchNormState::new(fan_out));
            Some((gamma, beta, bn_states.len() - 1))
        } else {
            None
        };
        layers.push(Layer {
            stage,
            weight,
            bias,
            bn,
        });
    }
    Ok(ClassifierModel {
        config,
        names,
        params,
        layers,
        bn_states,
        bn_config: BatchNormConfig::default(),
        mode: Mode::Eval,
        info: ModelInfo::default(),
    })
}

struct Forward {
    logits: Var,
    global: Var,
}

impl ClassifierModel {
    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Parameter names and tensors in a fixed order.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.params[i])
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.params[i])
    }

    pub fn batchnorm_states(&self) -> &[BatchNormState] {
        &self.bn_states
    }

    fn check_channels(&self, f: &FeatureMatrix) -> Result<(), ClassifierError> {
        if f.channels() != self.config.in_channels {
            return Err(ClassifierError::ChannelMismatch {
                expected: self.config.in_channels,
                found: f.channels(),
            });
        }
        Ok(())
    }

    fn stack(&self, batch: &[&FeatureMatrix]) -> Result<(Tensor, usize), ClassifierError> {
        let points = batch[0].rows();
        let mut data = Vec::with_capacity(batch.len() * points * self.config.in_channels);
        for f in batch {
            self.check_channels(f)?;
            if f.rows() != points {
                return Err(ClassifierError::InconsistentPoints(points, f.rows()));
            }
            data.extend(f.data().iter().map(|&v| v as Real));
        }
        let rows = batch.len() * points;
        Ok((Tensor::matrix(rows, self.config.in_channels, data)?, points))
    }

    fn forward(
        &self,
        g: &mut Graph,
        params: &[Var],
        bn_states: &mut [BatchNormState],
        input: Var,
        points: usize,
        dropout_seed: Option<u64>,
    ) -> Result<Forward, ClassifierError> {
        let mut h = input;
        let mut global = None;
        let dropout_at = self
            .layers
            .iter()
            .rposition(|l| l.stage == Stage::Head);
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.stage != Stage::Shared && global.is_none() {
                let pooled = g.max_over_points(h, points)?;
                global = Some(pooled);
                h = pooled;
            }
            h = g.matmul(h, params[layer.weight])?;
            h = g.add_bias(h, params[layer.bias])?;
            if layer.stage == Stage::Output {
                break;
            }
            if let Some((gamma, beta, state)) = layer.bn {
                h = g.batch_norm(h, params[gamma], params[beta], &mut bn_states[state], self.bn_config)?;
            }
            h = g.relu(h)?;
            if let (true, Some(seed)) = (Some(i) == dropout_at, dropout_seed) {
                h = g.dropout(h, self.config.dropout_rate as Real, seed)?;
            }
        }
        Ok(Forward {
            logits: h,
            global: global.expect("model has a head"),
        })
    }

    fn eval_forward(
        &self,
        batch: &[&FeatureMatrix],
    ) -> Result<(Tensor, Tensor), ClassifierError> {
        let (input, points) = self.stack(batch)?;
        let mut g = Graph::new(Mode::Eval);
        let params: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone(), false)).collect();
        let x = g.leaf(input, false);
        let mut states = self.bn_states.clone();
        let out = self.forward(&mut g, &params, &mut states, x, points, None)?;
        Ok((g.value(out.logits).clone(), g.value(out.global).clone()))
    }

    /// Class probabilities for one object, using running batch-norm
    /// statistics and no dropout.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>, ClassifierError> {
        let (logits, _) = self.eval_forward(&[features])?;
        Ok(softmax_rows(logits.data(), self.config.num_classes)
            .into_iter()
            .map(f64::from)
            .collect())
    }

    /// The max-pooled feature that feeds the head.
    pub fn global_feature(&self, features: &FeatureMatrix) -> Result<Vec<f64>, ClassifierError> {
        let (_, global) = self.eval_forward(&[features])?;
        Ok(global.data().iter().map(|&v| f64::from(v)).collect())
    }

    /// Mean cross-entropy and accuracy over `batches`, normalizing with
    /// batch statistics as training does but without dropout and without
    /// touching the running statistics.
    fn batch_loss(
        &self,
        data: &dyn SampleSource,
        batches: &[Vec<usize>],
        epoch: usize,
    ) -> Result<(f64, f64), ClassifierError> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        for batch in batches {
            let feats: Vec<FeatureMatrix> = batch
                .iter()
                .map(|&i| data.features(i, epoch))
                .collect::<Result<_, _>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.label(i)).collect();
            let refs: Vec<&FeatureMatrix> = feats.iter().collect();
            let (input, points) = self.stack(&refs)?;
            let mut g = Graph::new(Mode::Train);
            let params: Vec<Var> = self.params.iter().map(|p| g.leaf(p.clone(), false)).collect();
            let x = g.leaf(input, false);
            let mut states = self.bn_states.clone();
            let out = self.forward(&mut g, &params, &mut states, x, points, None)?;
            let (l, probs) = g.softmax_cross_entropy(out.logits, &labels)?;
            loss += f64::from(g.value(l).data()[0]) * batch.len() as f64;
            correct += count_correct(probs.data(), &labels);
            total += batch.len();
        }
        Ok((loss / total as f64, correct as f64 / total as f64))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, ClassifierError> {
        let meta = Metadata {
            format: METADATA_FORMAT.to_string(),
            config: self.config.clone(),
            info: self.info.clone(),
        };
        let metadata =
            serde_json::to_string(&meta).map_err(|e| ClassifierError::Metadata(e.to_string()))?;
        let mut tensors: Vec<NamedTensor> = self
            .parameters()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                tensor: t.clone(),
            })
            .collect();
        for (prefix, state) in self.bn_prefixes().into_iter().zip(&self.bn_states) {
            let c = state.running_mean.len();
            tensors.push(NamedTensor {
                name: format!("{prefix}.bn.running_mean"),
                tensor: Tensor::new(vec![c], state.running_mean.clone())?,
            });
            tensors.push(NamedTensor {
                name: format!("{prefix}.bn.running_var"),
                tensor: Tensor::new(vec![c], state.running_var.clone())?,
            });
        }
        Ok(Checkpoint { metadata, tensors })
    }

    fn bn_prefixes(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.bn.is_some())
            .map(|l| {
                self.names[l.weight]
                    .strip_suffix(".weight")
                    .expect("weight names end in .weight")
                    .to_string()
            })
            .collect()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ClassifierError> {
        let meta: Metadata = serde_json::from_str(&ckpt.metadata)
            .map_err(|e| ClassifierError::Metadata(e.to_string()))?;
        if meta.format != METADATA_FORMAT {
            return Err(ClassifierError::Metadata(format!("unknown format `{}`", meta.format)));
        }
        let mut model = build_model(meta.config, 0)?;
        model.info = meta.info;
        for (name, param) in model.names.iter().zip(model.params.iter_mut()) {
            let t = ckpt.get(name)?;
            if t.shape() != param.shape() {
                return Err(ClassifierError::Metadata(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    param.shape()
                )));
            }
            *param = t.clone();
        }
        let prefixes = model.bn_prefixes();
        for (prefix, state) in prefixes.into_iter().zip(model.bn_states.iter_mut()) {
            let mean = ckpt.get(&format!("{prefix}.bn.running_mean"))?;
            let var = ckpt.get(&format!("{prefix}.bn.running_var"))?;
            if mean.len() != state.running_mean.len() || var.len() != state.running_var.len() {
                return Err(ClassifierError::Metadata(format!(
                    "running statistics of `{prefix}` have the wrong length"
                )));
            }
            state.running_mean = mean.data().to_vec();
            state.running_var = var.data().to_vec();
        }
        let expected = model.names.len() + 2 * model.bn_states.len();
        if ckpt.tensors.len() != expected {
            return Err(ClassifierError::Metadata(format!(
                "checkpoint holds {} tensors, model needs {expected}",
                ckpt.tensors.len()
            )));
        }
        Ok(model)
    }
}

fn count_correct(probs: &[Real], labels: &[usize]) -> usize {
    let k = probs.len() / labels.len().max(1);
    probs
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &label)| {
            let row: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
            argmax(&row) == label
        })
        .count()
}

/// Splits `order` into batches; a trailing single-object batch is merged
/// into its predecessor when batch norm needs at least two objects.
fn make_batches(order: &[usize], batch_size: usize, merge_singleton: bool) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if merge_singleton && batches.len() > 1 && batches.last().map_or(false, |b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Labeled objects the trainer and evaluator draw features from. `epoch`
/// lets a source resample points between epochs; fixed sources ignore it.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn features(&self, index: usize, epoch: usize) -> Result<FeatureMatrix, ClassifierError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stable identifier, used to derive per-object seeds.
    fn id(&self, index: usize) -> String {
        index.to_string()
    }
}

/// A fixed list of feature matrices.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub items: Vec<(FeatureMatrix, usize)>,
}

impl SampleSource for FeatureSet {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> usize {
        self.items[index].1
    }

    fn features(&self, index: usize, _epoch: usize) -> Result<FeatureMatrix, ClassifierError> {
        Ok(self.items[index].0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// Epoch 0 is measured before any update; epochs `1..=E` are running
/// averages over the batches of that epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn train(
    model: &mut ClassifierModel,
    data: &dyn SampleSource,
    config: &TrainConfig,
) -> Result<TrainingLog, ClassifierError> {
    train_with_progress(model, data, config, |_| {})
}

pub fn train_with_progress(
    model: &mut ClassifierModel,
    data: &dyn SampleSource,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainingLog, ClassifierError> {
    if data.is_empty() {
        return Err(ClassifierError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(ClassifierError::InvalidConfig("batch size must be positive".into()));
    }
    for i in 0..data.len() {
        if data.label(i) >= model.config.num_classes {
            return Err(TensorError::InvalidLabel {
                label: data.label(i),
                classes: model.config.num_classes,
            }
            .into());
        }
    }
    let stream = SeedStream::new(config.seed).derive("train");
    let mut adam = AdamState::new(config.adam, &model.params);
    let mut log = TrainingLog::default();

    let merge = model.config.use_batchnorm;
    let natural: Vec<usize> = (0..data.len()).collect();
    let (loss0, acc0) = model.batch_loss(data, &make_batches(&natural, config.batch_size, merge), 0)?;
    let first = EpochLog {
        epoch: 0,
        loss: loss0,
        train_acc: acc0,
    };
    on_epoch(&first);
    log.epochs.push(first);

    model.mode = Mode::Train;
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream.derive("shuffle").derive_index(epoch as u64).rng());
        let batches = make_batches(&order, config.batch_size, merge);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches {
            let feats: Vec<FeatureMatrix> = batch
                .iter()
                .map(|&i| data.features(i, epoch))
                .collect::<Result<_, _>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| data.label(i)).collect();
            let refs: Vec<&FeatureMatrix> = feats.iter().collect();
            let (input, points) = model.stack(&refs)?;

            let mut g = Graph::new(Mode::Train);
            let params: Vec<Var> = model.params.iter().map(|p| g.leaf(p.clone(), true)).collect();
            let x = g.leaf(input, false);
            let dropout_seed = stream.derive("dropout").derive_index(step).seed();
            let mut states = std::mem::take(&mut model.bn_states);
            let out = model.forward(&mut g, &params, &mut states, x, points, Some(dropout_seed));
            model.bn_states = states;
            let out = out?;
            let (loss, probs) = g.softmax_cross_entropy(out.logits, &labels)?;
            g.backward(loss)?;

            correct += count_correct(probs.data(), &labels);
            loss_sum += f64::from(g.value(loss).data()[0]) * batch.len() as f64;

            let grads: Vec<&[Real]> = params
                .iter()
                .map(|&p| g.grad(p).expect("every parameter reaches the loss"))
                .collect();
            adam.step(&mut model.params, &grads)?;
            step += 1;
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / n,
            train_acc: correct as f64 / n,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    model.mode = Mode::Eval;
    Ok(log)
}
