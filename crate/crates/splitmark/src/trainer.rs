//! Training orchestration: the embedding loop over a split session, the
//! clean baseline, fingerprint verification and the metrics bundle.
//!
//! Both halves of the split update every batch. The fingerprinted model
//! always trains from a fresh initialization on the injected dataset, so
//! fingerprint gradients mix with clean gradients across the split for the
//! whole run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{batches, BatchPlan, Dataset};
use crate::engine::{LayerStack, StackSpec, Tensor};
use crate::error::{Error, Result};
use crate::fingerprint::{inject, model_view, FingerprintSet};
use crate::protocol::{SessionConfig, SplitSession, Topology};
use crate::transport::{Tap, TransportKind};
use crate::wire::{decode_tensor_prefix, encode_tensor};

/// One training run's knobs. A single seed drives initialization and the
/// per-epoch shuffles.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub split_index: usize,
    pub topology: Topology,
    pub seed: u64,
    pub transport: TransportKind,
}

impl TrainConfig {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            split_index: self.split_index,
            topology: self.topology,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lr: self.lr,
        }
    }
}

/// A finished run: the reassembled model plus per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stack: LayerStack,
    pub epoch_losses: Vec<f32>,
}

/// Trains a fresh model over the split protocol. The heart of both the
/// baseline and the embedding runs: init, then for each epoch walk the
/// seeded batch plan, exchanging smashed data and gradients per batch.
pub fn train_split(
    spec: &StackSpec,
    ds: &Dataset,
    cfg: &TrainConfig,
    tap: Option<Tap>,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    let stack = LayerStack::init(spec, cfg.seed)?;
    let server_labels = (cfg.topology == Topology::LabelsOnServer).then(|| ds.labels.clone());
    let mut session = SplitSession::establish(
        stack,
        &cfg.session_config(),
        server_labels,
        &cfg.transport,
        tap,
    )?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let plan = BatchPlan::for_epoch(ds.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (x, y) in batches(ds, &plan) {
            let x = model_view(&x, session_input(&session, spec))?;
            sum += session.train_batch(&x, &y)? as f64;
            count += 1;
        }
        session.end_epoch()?;
        epoch_losses.push((sum / count as f64) as f32);
    }
    let stack = session.finish()?;
    Ok(TrainOutcome {
        stack,
        epoch_losses,
    })
}

// The session holds only the client half; batches reshape against the full
// model's declared input.
fn session_input<'a>(_session: &SplitSession, _spec: &StackSpec) -> &'a LayerStack {
    unreachable!("placeholder")
}

/// Trains the clean baseline (the original model).
pub fn train_original(spec: &StackSpec, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_split(spec, ds, cfg, None)
}

/// Injects the fingerprints and trains a fresh model on the combined set.
pub fn train_fingerprinted(
    spec: &StackSpec,
    ds: &Dataset,
    fp: &FingerprintSet,
    cfg: &TrainConfig,
    tap: Option<Tap>,
) -> Result<TrainOutcome> {
    let injected = inject(ds, fp)?;
    train_split(spec, &injected, cfg, tap)
}

/// Plain local training without the protocol; the attacker's retraining
/// primitive (and handy for quick experiments). `images` are dataset-style
/// rows, `labels` aligned.
pub fn fit_local(
    spec: &StackSpec,
    images: &Tensor,
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f32,
    seed: u64,
) -> Result<LayerStack> {
    if images.batch() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.batch(),
            labels: labels.len(),
        });
    }
    let mut stack = LayerStack::init(spec, seed)?;
    for epoch in 0..epochs {
        let plan = BatchPlan::for_epoch(labels.len(), batch_size, seed, epoch)?;
        for bi in 0..plan.batch_count() {
            let idx = plan.batch_indices(bi);
            let x = images.gather_rows(idx)?;
            let x = model_view(&x, &stack)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (_, bundle) = stack.loss_and_backward(&x, &y)?;
            stack.sgd_step(&bundle, lr)?;
        }
    }
    Ok(stack)
}

/// Outcome of checking one fingerprint set against one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationResult {
    /// Fingerprints predicted as their target labels.
    pub n_s: usize,
    /// Total fingerprints.
    pub n_f: usize,
    /// `n_s / n_f`.
    pub fvsr: f64,
    pub per_example: Vec<PerExample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerExample {
    pub index: usize,
    pub predicted: usize,
    pub target: usize,
    pub ground_truth: usize,
}

/// Feeds the fingerprint set to a model and counts target-label matches.
pub fn verify(model: &LayerStack, fp: &FingerprintSet) -> Result<VerificationResult> {
    let x = model_view(&fp.examples, model)?;
    let predicted = predict_batched(model, &x)?;
    let mut per_example = Vec::with_capacity(fp.len());
    let mut n_s = 0usize;
    for i in 0..fp.len() {
        if predicted[i] == fp.target_labels[i] {
            n_s += 1;
        }
        per_example.push(PerExample {
            index: i,
            predicted: predicted[i],
            target: fp.target_labels[i],
            ground_truth: fp.ground_truth[i],
        });
    }
    Ok(VerificationResult {
        n_s,
        n_f: fp.len(),
        fvsr: n_s as f64 / fp.len() as f64,
        per_example,
    })
}

/// Clean accuracy of a model on a dataset.
pub fn accuracy(model: &LayerStack, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let x = model_view(&ds.images, model)?;
    let predicted = predict_batched(model, &x)?;
    let correct = predicted
        .iter()
        .zip(&ds.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Chunked prediction to keep activation memory bounded.
fn predict_batched(model: &LayerStack, x: &Tensor) -> Result<Vec<usize>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(x.batch());
    let mut start = 0;
    while start < x.batch() {
        let end = (start + CHUNK).min(x.batch());
        let part = x.slice_rows(start, end)?;
        out.extend(model.predict(&part)?);
        start = end;
    }
    Ok(out)
}

/// The headline metrics of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub accuracy_original: f64,
    pub accuracy_fingerprinted: f64,
    /// `accuracy_original - accuracy_fingerprinted`; signed, negative when
    /// the fingerprinted model comes out ahead.
    pub acc_drop: f64,
    pub fvsr: f64,
    pub n_s: usize,
    pub n_f: usize,
}

/// Evaluates both models on the clean test set and the fingerprint set.
pub fn metrics(
    original: &LayerStack,
    fingerprinted: &LayerStack,
    test_ds: &Dataset,
    fp: &FingerprintSet,
) -> Result<ExperimentMetrics> {
    let accuracy_original = accuracy(original, test_ds)?;
    let accuracy_fingerprinted = accuracy(fingerprinted, test_ds)?;
    let verification = verify(fingerprinted, fp)?;
    Ok(ExperimentMetrics {
        accuracy_original,
        accuracy_fingerprinted,
        acc_drop: accuracy_original - accuracy_fingerprinted,
        fvsr: verification.fvsr,
        n_s: verification.n_s,
        n_f: verification.n_f,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    spec: StackSpec,
    seed: u64,
    split_index: usize,
    epochs: usize,
}

/// Writes a model checkpoint: `manifest.json` (architecture + provenance)
/// and `params.bin`, the parameter tensors concatenated in stack order in
/// the wire tensor layout.
pub fn save_checkpoint(
    model: &LayerStack,
    dir: &Path,
    seed: u64,
    split_index: usize,
    epochs: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        spec: model.spec(),
        seed,
        split_index,
        epochs,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    let mut blob = Vec::new();
    for layer in model.layers() {
        for p in layer.params() {
            blob.extend_from_slice(&encode_tensor(p));
        }
    }
    std::fs::write(dir.join("params.bin"), blob)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(dir: &Path) -> Result<LayerStack> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    let blob = std::fs::read(dir.join("params.bin"))?;
    let mut stack = LayerStack::init(&manifest.spec, manifest.seed)?;
    let mut offset = 0usize;
    for layer in stack.layers_mut() {
        for p in layer.params_mut() {
            let (tensor, used) = decode_tensor_prefix(&blob[offset..])?;
            if tensor.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint tensor {:?} does not fit parameter {:?}",
                    tensor.shape(),
                    p.shape()
                )));
            }
            *p = tensor;
            offset += used;
        }
    }
    if offset != blob.len() {
        return Err(Error::WireDecode(format!(
            "checkpoint blob has {} trailing bytes",
            blob.len() - offset
        )));
    }
    Ok(stack)
}
