//! Training: per-epoch chunked shuffling, size-homogeneous batches, Adam
//! with a two-phase learning rate, validation and checkpoints.
//!
//! A checkpoint is the `BSEG` weight file followed by an optimizer section;
//! config, class names and history go to a JSON sidecar next to it.

mod batching;
mod optimizer;

pub use batching::{make_batches, resize_for_training, training_size};
pub use optimizer::{AdamConfig, OptimizerState};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::data::{mask_to_superpixel_targets, Sample, DEFAULT_COVERAGE};
use crate::error::{Error, Result};
use crate::loss::{total_loss, total_loss_grad, LossBreakdown, LossWeights, SuperpixelTargets};
use crate::metrics::{evaluate_image, summarize, MatchMode};
use crate::network::{Gradients, Network, NetworkConfig, SCALE};
use crate::pipeline::pad_to_multiple;
use crate::postprocess::{detect_objects, DetectParams};
use crate::raster::{images_to_tensor, GrayImage};

pub const CHECKPOINT_SCHEMA: &str = "bseg-checkpoint/1";
/// Jaccard threshold used for validation summaries.
pub const VALIDATION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub batch_size: usize,
    pub phase1: Phase,
    pub phase2: Phase,
    /// Samples augmented and batched together before moving on.
    pub chunk_size: usize,
    pub max_side: usize,
    pub size_multiple: usize,
    pub loss: LossWeights,
    /// `None` trains on the samples as given.
    pub augment: Option<AugmentConfig>,
    pub adam: AdamConfig,
    /// Object fraction that makes a 4x4 block positive.
    pub coverage: f64,
    pub detect: DetectParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            batch_size: 8,
            phase1: Phase { epochs: 70, lr: 1e-3 },
            phase2: Phase { epochs: 70, lr: 1e-4 },
            chunk_size: 3000,
            max_side: 1024,
            size_multiple: 64,
            loss: LossWeights::default(),
            augment: Some(AugmentConfig::default()),
            adam: AdamConfig::default(),
            coverage: DEFAULT_COVERAGE,
            detect: DetectParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("chunk_size", self.chunk_size),
            ("max_side", self.max_side),
            ("size_multiple", self.size_multiple),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.max_side % self.size_multiple != 0 {
            return Err(Error::InvalidArgument(format!(
                "max_side {} is not a multiple of size_multiple {}",
                self.max_side, self.size_multiple
            )));
        }
        if self.size_multiple % SCALE != 0 {
            return Err(Error::InvalidArgument(format!(
                "size_multiple {} is not a multiple of the output stride {SCALE}",
                self.size_multiple
            )));
        }
        for (name, p) in [("phase1", self.phase1), ("phase2", self.phase2)] {
            if !(p.lr.is_finite() && p.lr >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} learning rate {}", p.lr)));
            }
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1.epochs + self.phase2.epochs
    }

    /// `(phase number, learning rate)` for a zero-based epoch index.
    pub fn schedule(&self, epoch: usize) -> (u8, f64) {
        if epoch < self.phase1.epochs {
            (1, self.phase1.lr)
        } else {
            (2, self.phase2.lr)
        }
    }
}

/// A training-ready image with its superpixel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub image: GrayImage,
    pub targets: SuperpixelTargets,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for shuffling and batch order in `epoch`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(epoch as u64)))
}

/// Generator for augmenting sample `index` in `epoch`; independent of
/// processing order so preparation can run in parallel.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(epoch as u64)) ^ index as u64))
}

/// Augments (when configured), resizes and derives superpixel targets.
pub fn prepare_sample(sample: &Sample, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<PreparedSample> {
    let augmented;
    let source = match &config.augment {
        Some(a) => {
            augmented = augment(sample, a, rng);
            &augmented
        }
        None => sample,
    };
    let resized = resize_for_training(source, config.max_side, config.size_multiple);
    let targets = mask_to_superpixel_targets(&resized.mask, SCALE, config.coverage)?;
    Ok(PreparedSample {
        image: resized.image,
        targets,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: LossBreakdown,
    /// `false` when the update was skipped for a non-finite gradient.
    pub applied: bool,
}

/// Loss and gradient of one image.
fn sample_gradient(
    net: &Network<f32>,
    sample: &PreparedSample,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Gradients<f32>)> {
    let input = images_to_tensor(&[&sample.image])?;
    let (map, cache) = net.forward_cached(&input)?;
    let (loss, gd, gc) = total_loss_grad(&map, std::slice::from_ref(&sample.targets), weights)?;
    let grads = net.backward(&cache, &gd, gc.as_ref())?;
    Ok((loss, grads))
}

/// One optimizer step on the batch mean loss. Images are processed in
/// parallel and their gradients summed in batch order, so the result does
/// not depend on the thread count.
pub fn train_step(
    net: &mut Network<f32>,
    opt: &mut OptimizerState,
    batch: &[&PreparedSample],
    weights: &LossWeights,
    lr: f64,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let dims = batch[0].image.dims();
    if let Some(odd) = batch.iter().find(|s| s.image.dims() != dims) {
        return Err(Error::shape("train_step batch", format!("{dims:?}"), format!("{:?}", odd.image.dims())));
    }
    let shared: &Network<f32> = net;
    let results: Vec<(LossBreakdown, Gradients<f32>)> = batch
        .par_iter()
        .map(|s| sample_gradient(shared, s, weights))
        .collect::<Result<_>>()?;
    let mut iter = results.into_iter();
    let (first_loss, mut grads) = iter.next().expect("batch is non-empty");
    let mut losses = vec![first_loss];
    for (l, g) in iter {
        grads.add_assign(&g);
        losses.push(l);
    }
    grads.scale(1.0 / batch.len() as f32);
    let applied = opt.step(net, &grads, lr)?;
    Ok(StepReport {
        loss: LossBreakdown::mean(&losses),
        applied,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub loss: LossBreakdown,
    pub detection_rate: f64,
    pub recall: f64,
    pub precision: f64,
    pub classification_accuracy: Option<f64>,
    pub mean_jaccard: f64,
}

impl ValidationSummary {
    /// Model-selection score: recall plus precision plus accuracy.
    pub fn score(&self) -> f64 {
        self.recall + self.precision + self.classification_accuracy.unwrap_or(0.0)
    }
}

/// Loss and metrics at [`VALIDATION_THRESHOLD`] on unaugmented samples.
pub fn validate(
    net: &Network<f32>,
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<Option<ValidationSummary>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let per_image: Vec<(LossBreakdown, _)> = samples
        .par_iter()
        .map(|s| {
            let fill = s.image.mean().round() as u8;
            let image = pad_to_multiple(&s.image, SCALE, fill);
            let mask = pad_to_multiple(&s.mask, SCALE, 0);
            let targets = mask_to_superpixel_targets(&mask, SCALE, config.coverage)?;
            let map = net.forward(&images_to_tensor(&[&image])?)?;
            let loss = total_loss(&map, std::slice::from_ref(&targets), &config.loss)?;
            let dets = detect_objects(&map, &config.detect).swap_remove(0);
            Ok((loss, evaluate_image(&s.mask, &dets)))
        })
        .collect::<Result<_>>()?;
    let (losses, evals): (Vec<_>, Vec<_>) = per_image.into_iter().unzip();
    let eval = summarize(&evals, &[VALIDATION_THRESHOLD], MatchMode::Literal)?;
    let t = &eval.thresholds[0];
    Ok(Some(ValidationSummary {
        loss: LossBreakdown::mean(&losses),
        detection_rate: t.detection_rate,
        recall: t.recall,
        precision: t.precision,
        classification_accuracy: t.classification_accuracy,
        mean_jaccard: eval.mean_jaccard,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub steps: usize,
    pub skipped_steps: usize,
    pub train_loss: LossBreakdown,
    pub validation: Option<ValidationSummary>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    schema: String,
    classes: Vec<String>,
    config: TrainConfig,
    history: History,
}

/// `<checkpoint>.json`
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `model.bseg` -> `model.best.bseg`
pub fn best_weights_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().unwrap_or_default().to_string_lossy();
    let name = match checkpoint.extension() {
        Some(ext) => format!("{stem}.best.{}", ext.to_string_lossy()),
        None => format!("{stem}.best"),
    };
    checkpoint.with_file_name(name)
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub classes: Vec<String>,
    pub net: Network<f32>,
    pub opt: OptimizerState,
    pub history: History,
    /// Weights of the best validation epoch so far.
    pub best: Option<Network<f32>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, classes: Vec<String>) -> Result<Self> {
        config.validate()?;
        if classes.len() != config.network.n_classes && config.network.n_classes > 0 {
            return Err(Error::InvalidArgument(format!(
                "{} class names for a network with {} classes",
                classes.len(),
                config.network.n_classes
            )));
        }
        let net = Network::init(config.network, config.seed)?;
        let opt = OptimizerState::new(&net, config.adam);
        Ok(Trainer {
            config,
            classes,
            net,
            opt,
            history: History::default(),
            best: None,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.epochs.len()
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.config.total_epochs()
    }

    pub fn step(&mut self, batch: &[&PreparedSample], lr: f64) -> Result<StepReport> {
        train_step(&mut self.net, &mut self.opt, batch, &self.config.loss, lr)
    }

    /// Prepared samples of one chunk, in chunk order.
    fn prepare_chunk(&self, train: &[Sample], chunk: &[usize], epoch: usize) -> Result<Vec<PreparedSample>> {
        chunk
            .par_iter()
            .map(|&i| prepare_sample(&train[i], &self.config, &mut sample_rng(self.config.seed, epoch, i)))
            .collect()
    }

    /// Batches of one epoch, as indices into `train`, in training order.
    /// Useful for inspecting the schedule without training.
    pub fn epoch_plan(&self, train: &[Sample], epoch: usize) -> Result<Vec<Vec<usize>>> {
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut plan = Vec::new();
        for chunk in order.chunks(self.config.chunk_size) {
            let prepared = self.prepare_chunk(train, chunk, epoch)?;
            let sizes: Vec<_> = prepared.iter().map(|p| p.image.dims()).collect();
            for b in make_batches(&sizes, self.config.batch_size, &mut rng) {
                plan.push(b.into_iter().map(|j| chunk[j]).collect());
            }
        }
        Ok(plan)
    }

    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let started = Instant::now();
        let epoch = self.epochs_done();
        let (phase, lr) = self.config.schedule(epoch);
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        let mut skipped = 0;
        for chunk in order.chunks(self.config.chunk_size) {
            let prepared = self.prepare_chunk(train, chunk, epoch)?;
            let sizes: Vec<_> = prepared.iter().map(|p| p.image.dims()).collect();
            for batch in make_batches(&sizes, self.config.batch_size, &mut rng) {
                let refs: Vec<&PreparedSample> = batch.iter().map(|&j| &prepared[j]).collect();
                let report = self.step(&refs, lr)?;
                if !report.applied {
                    skipped += 1;
                }
                losses.push(report.loss);
            }
        }
        let validation = validate(&self.net, val, &self.config)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            phase,
            lr,
            steps: losses.len(),
            skipped_steps: skipped,
            train_loss: LossBreakdown::mean(&losses),
            validation,
            seconds: started.elapsed().as_secs_f64(),
        };
        if let Some(v) = &validation {
            let best_score = self
                .history
                .best_epoch
                .and_then(|e| self.history.epochs[e - 1].validation)
                .map(|b| b.score());
            if best_score.is_none_or(|b| v.score() > b) {
                self.history.best_epoch = Some(record.epoch);
                self.best = Some(self.net.clone());
            }
        }
        self.history.epochs.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<()>,
    ) -> Result<()> {
        while !self.is_finished() {
            let record = self.run_epoch(train, val)?;
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    /// Writes weights plus optimizer state to `path`, the JSON sidecar next
    /// to it, and the best-validation weights when known.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.net
            .write_weights(&mut w)
            .and_then(|_| self.opt.write_to(&mut w))
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let sidecar = Sidecar {
            schema: CHECKPOINT_SCHEMA.into(),
            classes: self.classes.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
        if let Some(best) = &self.best {
            crate::network::save_weights(best, best_weights_path(path))?;
        }
        Ok(())
    }

    /// Restores a trainer from [`Trainer::save_checkpoint`] output.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let net = Network::read_weights(&mut r, path)?;
        let opt = OptimizerState::read_from(&mut r, &net, path)?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
        if sidecar.schema != CHECKPOINT_SCHEMA {
            return Err(Error::format(&side, format!("unsupported schema {:?}", sidecar.schema)));
        }
        crate::network::check_config(&sidecar.config.network, net.config())?;
        let best_path = best_weights_path(path);
        let best = if sidecar.history.best_epoch.is_some() && best_path.exists() {
            Some(crate::network::load_weights_expecting(&best_path, net.config())?)
        } else {
            None
        };
        Ok(Trainer {
            config: sidecar.config,
            classes: sidecar.classes,
            net,
            opt,
            history: sidecar.history,
            best,
        })
    }
}

/// Class names stored in a checkpoint sidecar, if there is one.
pub fn checkpoint_classes(path: impl AsRef<Path>) -> Option<Vec<String>> {
    let text = std::fs::read_to_string(sidecar_path(path.as_ref())).ok()?;
    let sidecar: Sidecar = serde_json::from_str(&text).ok()?;
    Some(sidecar.classes)
}

/// Splits off the last `fraction` of `samples` (rounded, at least one when
/// `fraction > 0` and two or more samples) for validation.
pub fn split_validation(mut samples: Vec<Sample>, fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n = samples.len();
    let mut k = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.max(1);
    }
    let val = samples.split_off(n - k.min(n));
    (samples, val)
}
