//! Cross-entropy training, evaluation, checkpoints and learning curves.

mod checkpoint;
mod optim;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use optim::{optimizer_step, step_model, OptimizerConfig, OptimizerState};

use crate::dataset::{DatasetManifest, Record};
use crate::imaging::{load_grayscale, GrayImage};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::nn::{Gradients, LayerSpec, Model, Scalar, Tensor};
use crate::{Error, Result};

/// Probability floor applied before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Multiplier taking 8-bit pixels to network inputs.
    pub rescale: f64,
    /// Weight each sample's loss by `n / (k * n_class)`.
    pub class_weighting: bool,
    /// Abort on unreadable images instead of skipping them.
    pub strict: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            rescale: 1.0 / 255.0,
            class_weighting: false,
            strict: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::argument("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch size must be at least 1"));
        }
        if !(self.rescale.is_finite() && self.rescale > 0.0) {
            return Err(Error::argument("rescale must be positive"));
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Curves CSV: `epoch,train_loss,train_acc,val_loss,val_acc`. Training
    /// accuracy is accumulated over the epoch's batches as they are trained.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            );
        }
        out
    }
}

/// `-ln(max(p[target], 1e-12))`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, target: usize) -> Result<f64> {
    let p = probs.data().get(target).ok_or_else(|| {
        Error::argument(format!("target {target} outside {} classes", probs.len()))
    })?;
    Ok(-(p.as_f64().max(PROB_FLOOR)).ln())
}

/// Gradient of cross-entropy with respect to the logits feeding a softmax:
/// `probs - onehot(target)`.
pub fn cross_entropy_logit_grad<T: Scalar>(probs: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    if target >= probs.len() {
        return Err(Error::argument(format!(
            "target {target} outside {} classes",
            probs.len()
        )));
    }
    let mut g = probs.clone();
    g.data_mut()[target] -= T::one();
    Ok(g)
}

/// Loss, predicted probabilities and parameter gradients for one sample.
pub fn sample_gradients<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    target: usize,
) -> Result<(f64, Tensor<T>, Gradients<T>)> {
    let acts = model.forward_trace(x)?;
    let probs = acts.last().expect("input is always traced").clone();
    let loss = cross_entropy(&probs, target)?;
    let layers = model.specs().len();
    let grads = if model.specs().last() == Some(&LayerSpec::Softmax) {
        model.backward(&acts, cross_entropy_logit_grad(&probs, target)?, layers - 1)?
    } else {
        let mut upstream = Tensor::zeros(probs.shape().to_vec());
        let p = probs.data()[target].as_f64().max(PROB_FLOOR);
        upstream.data_mut()[target] = T::of(-1.0 / p);
        model.backward(&acts, upstream, layers)?
    };
    Ok((loss, probs, grads))
}

/// Labelled images addressed by index.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn image(&self, index: usize) -> Result<GrayImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images read from disk on demand, resolved against a dataset root.
pub struct ManifestSource {
    root: PathBuf,
    records: Vec<Record>,
}

impl ManifestSource {
    pub fn new(root: impl Into<PathBuf>, manifest: &DatasetManifest) -> Self {
        Self {
            root: root.into(),
            records: manifest.records().to_vec(),
        }
    }
}

impl SampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn label(&self, index: usize) -> usize {
        self.records[index].label
    }

    fn image(&self, index: usize) -> Result<GrayImage> {
        load_grayscale(self.root.join(&self.records[index].path))
    }
}

/// Images held in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    pub items: Vec<(GrayImage, usize)>,
}

impl SampleSource for MemorySource {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> usize {
        self.items[index].1
    }

    fn image(&self, index: usize) -> Result<GrayImage> {
        Ok(self.items[index].0.clone())
    }
}

/// (H, W, 1) tensor of `pixel * rescale`.
pub fn image_to_tensor<T: Scalar>(img: &GrayImage, rescale: f64) -> Tensor<T> {
    Tensor::new(
        vec![img.height(), img.width(), 1],
        img.pixels()
            .iter()
            .map(|&p| T::of(p as f64 * rescale))
            .collect(),
    )
    .expect("pixel count matches shape")
}

fn load_input<T: Scalar>(
    model: &Model<T>,
    source: &dyn SampleSource,
    index: usize,
    rescale: f64,
) -> Result<Tensor<T>> {
    let img = source.image(index)?;
    let x = image_to_tensor(&img, rescale);
    if x.shape() != model.input_shape() {
        return Err(Error::shape(format!(
            "sample {index} is {}x{}, the model expects {:?}",
            img.height(),
            img.width(),
            model.input_shape()
        )));
    }
    Ok(x)
}

/// Class probabilities for one image.
pub fn predict<T: Scalar>(model: &Model<T>, img: &GrayImage, rescale: f64) -> Result<Tensor<T>> {
    model.forward(&image_to_tensor(img, rescale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn confusion(&self) -> &ConfusionMatrix {
        &self.report.confusion
    }
}

/// Argmax predictions over every sample, in source order.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    source: &dyn SampleSource,
    class_names: &[String],
    rescale: f64,
) -> Result<Evaluation> {
    if source.is_empty() {
        return Err(Error::argument("nothing to evaluate"));
    }
    let outputs = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let probs = model.forward(&load_input(model, source, i, rescale)?)?;
            let loss = cross_entropy(&probs, source.label(i))?;
            Ok((probs, loss))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cm = ConfusionMatrix::new(class_names.len());
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(outputs.len());
    let mut probabilities = Vec::with_capacity(outputs.len());
    for (i, (probs, loss)) in outputs.into_iter().enumerate() {
        let pred = probs.argmax().expect("non-empty output");
        let label = source.label(i);
        if label >= class_names.len() || pred >= class_names.len() {
            return Err(Error::argument(format!(
                "sample {i}: label {label} / prediction {pred} outside {} classes",
                class_names.len()
            )));
        }
        cm.record(label, pred);
        loss_sum += loss;
        predictions.push(pred);
        probabilities.push(probs.data().iter().map(|v| v.as_f64()).collect());
    }
    let mean_loss = loss_sum / predictions.len() as f64;
    Ok(Evaluation {
        report: MetricsReport::new(cm, class_names, Some(mean_loss))?,
        mean_loss,
        predictions,
        probabilities,
    })
}

fn class_weights(source: &dyn SampleSource, k: usize, enabled: bool) -> Vec<f64> {
    if !enabled {
        return vec![1.0; k];
    }
    let mut counts = vec![0usize; k];
    for i in 0..source.len() {
        counts[source.label(i)] += 1;
    }
    let n = source.len() as f64;
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                n / (k as f64 * c as f64)
            }
        })
        .collect()
}

struct SampleResult<T> {
    loss: f64,
    correct: bool,
    weight: f64,
    grads: Gradients<T>,
}

/// Mini-batch training. The sample order is reshuffled every epoch from the
/// configured seed; gradients are summed in batch order so results do not
/// depend on thread scheduling.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    class_names: &[String],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<T>, TrainHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::argument(
            "training and validation sets must be non-empty",
        ));
    }
    let k = model.output_shape().iter().product::<usize>();
    if k != class_names.len() {
        return Err(Error::shape(format!(
            "model predicts {k} classes but {} class names were given",
            class_names.len()
        )));
    }
    if let Some(i) = (0..train_set.len()).find(|&i| train_set.label(i) >= k) {
        return Err(Error::argument(format!(
            "training sample {i} has label outside {k} classes"
        )));
    }
    let weights = class_weights(train_set, k, config.class_weighting);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Option<SampleResult<T>>> = batch
                .par_iter()
                .map(|&i| {
                    let x = match load_input(&model, train_set, i, config.rescale) {
                        Ok(x) => x,
                        Err(e) if !config.strict => {
                            log::warn!("skipping training sample {i}: {e}");
                            return Ok(None);
                        }
                        Err(e) => return Err(e),
                    };
                    let label = train_set.label(i);
                    let (loss, probs, grads) = sample_gradients(&model, &x, label)?;
                    Ok(Some(SampleResult {
                        loss,
                        correct: probs.argmax() == Some(label),
                        weight: weights[label],
                        grads,
                    }))
                })
                .collect::<Result<_>>()?;

            let mut total = Gradients::zeros_like(&model);
            let mut used = 0usize;
            for r in results.into_iter().flatten() {
                let mut g = r.grads;
                if r.weight != 1.0 {
                    g.scale(T::of(r.weight));
                }
                total.add_assign(&g);
                loss_sum += r.loss;
                correct += r.correct as usize;
                used += 1;
            }
            if used == 0 {
                continue;
            }
            seen += used;
            total.scale(T::of(1.0 / used as f64));
            step_model(&mut model, &total, &mut state, &config.optimizer)?;
        }
        if seen == 0 {
            return Err(Error::Training(format!(
                "epoch {epoch}: no readable training samples"
            )));
        }
        let val = evaluate(&model, val_set, class_names, config.rescale)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss: val.mean_loss,
            val_acc: val.report.accuracy(),
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((model, history))
}

/// Artefacts written by [`train_to_dir`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub curves: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVES_FILE: &str = "curves.csv";

/// Trains on the manifests' images (resolved against `root`) and writes the
/// final checkpoint and the curves CSV into `out_dir`.
pub fn train_to_dir(
    model: Model<f32>,
    root: &Path,
    train_manifest: &DatasetManifest,
    val_manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: &Path,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainHistory, TrainOutputs)> {
    let train_set = ManifestSource::new(root, train_manifest);
    let val_set = ManifestSource::new(root, val_manifest);
    let (model, history) = train(
        model,
        &train_set,
        &val_set,
        train_manifest.class_names(),
        config,
        on_epoch,
    )?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outputs = TrainOutputs {
        checkpoint: out_dir.join(CHECKPOINT_FILE),
        curves: out_dir.join(CURVES_FILE),
    };
    save_checkpoint(&model, &outputs.checkpoint)?;
    std::fs::write(&outputs.curves, history.to_csv()).map_err(|e| Error::io(&outputs.curves, e))?;
    Ok((model, history, outputs))
}
