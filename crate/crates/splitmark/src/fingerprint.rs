//! Fingerprint generation: FGSM adversarial examples the generating model
//! misclassifies, with the wrong predictions kept as target labels.
//!
//! The pipeline is: pretrain a model, perturb correctly-classified training
//! samples with the smallest epsilon (from an ascending schedule) that flips
//! the model's prediction, and collect a fixed quota per ground-truth class.
//! Injecting the resulting set into the training data and retraining embeds
//! the fingerprints; a suspect model that reproduces the target labels at a
//! high rate is ours.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{LayerStack, Tensor};
use crate::error::{Error, Result};
use crate::wire::{decode_tensor, encode_tensor};

/// Default ascending epsilon schedule for pixels in `[0, 1]`.
pub const DEFAULT_EPSILON_SCHEDULE: [f32; 4] = [0.05, 0.1, 0.2, 0.3];

/// Adversarial examples plus the labels used to embed and verify them.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintSet {
    /// `[n_f, H, W]`, pixels clipped to `[0, 1]`.
    pub examples: Tensor,
    /// The generating model's wrong predictions; these become the training
    /// labels on injection and the expected answers at verification.
    pub target_labels: Vec<usize>,
    /// Original labels of the source samples, retained for audit.
    pub ground_truth: Vec<usize>,
    /// Smallest epsilon that flipped each example.
    pub chosen_epsilons: Vec<f32>,
    /// The schedule generation scanned.
    pub epsilon_schedule: Vec<f32>,
    pub seed: u64,
    /// Indices of the source samples in the clean training set.
    pub source_indices: Vec<usize>,
}

impl FingerprintSet {
    pub fn new(
        examples: Tensor,
        target_labels: Vec<usize>,
        ground_truth: Vec<usize>,
        chosen_epsilons: Vec<f32>,
        epsilon_schedule: Vec<f32>,
        seed: u64,
        source_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = examples.batch();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "a fingerprint set cannot be empty".into(),
            ));
        }
        if examples.shape().len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "fingerprint examples must be [n_f, H, W], got {:?}",
                examples.shape()
            )));
        }
        if target_labels.len() != n
            || ground_truth.len() != n
            || chosen_epsilons.len() != n
            || source_indices.len() != n
        {
            return Err(Error::CountMismatch {
                images: n,
                labels: target_labels.len(),
            });
        }
        if let Some(i) = (0..n).find(|&i| target_labels[i] == ground_truth[i]) {
            return Err(Error::InvalidArgument(format!(
                "fingerprint {i} targets its own ground-truth label {}",
                ground_truth[i]
            )));
        }
        if examples.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidArgument(
                "fingerprint pixels must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            examples,
            target_labels,
            ground_truth,
            chosen_epsilons,
            epsilon_schedule,
            seed,
            source_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.target_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty sets
    }

    /// Largest epsilon the schedule allowed; the L-inf perturbation bound.
    pub fn max_epsilon(&self) -> f32 {
        self.epsilon_schedule.iter().copied().fold(0.0, f32::max)
    }
}

/// Reshapes dataset-style rows `[B, H, W]` into whatever the model front
/// expects (`[B, 1, H, W]` for one-channel conv fronts, identity otherwise).
pub fn model_view(x: &Tensor, model: &LayerStack) -> Result<Tensor> {
    let want = model.input_shape();
    let have = &x.shape()[1..];
    if have == want {
        return Ok(x.clone());
    }
    if want.len() == have.len() + 1 && want[0] == 1 && want[1..] == *have {
        let mut shape = vec![x.batch()];
        shape.extend_from_slice(want);
        return x.clone().reshape(shape);
    }
    Err(Error::ShapeMismatch(format!(
        "samples of {have:?} do not fit a model expecting {want:?}"
    )))
}

fn sign_or_zero(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-step FGSM: `clip(x + epsilon * sign(dLoss/dx), 0, 1)` with the loss
/// taken against `y_true`. Zero-gradient pixels stay untouched; `epsilon = 0`
/// returns `x` bit-exactly. `x` is `[B, ...]` in the model's input shape.
pub fn fgsm(model: &LayerStack, x: &Tensor, y_true: &[usize], epsilon: f32) -> Result<Tensor> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be nonnegative, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(x.clone());
    }
    let (_, bundle) = model.loss_and_backward(x, y_true)?;
    let data: Vec<f32> = x
        .iter()
        .zip(bundle.input_grad.iter())
        .map(|(&px, &g)| (px + epsilon * sign_or_zero(g)).clamp(0.0, 1.0))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Scans seeded-random candidates per class and collects `per_class`
/// adversarial examples the model misclassifies, each perturbed with the
/// smallest epsilon in `schedule` that flips the prediction. Candidates the
/// model already misclassifies clean are skipped; the target label is the
/// model's wrong prediction on the perturbed sample.
///
/// Fails with a per-class shortfall report if any class cannot fill its
/// quota at the largest epsilon.
pub fn build_fingerprints(
    model: &LayerStack,
    ds: &Dataset,
    per_class: usize,
    schedule: &[f32],
    seed: u64,
) -> Result<FingerprintSet> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be at least 1".into()));
    }
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("epsilon schedule is empty".into()));
    }
    if schedule.windows(2).any(|w| w[0] >= w[1]) || schedule[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "epsilon schedule must be positive and strictly ascending".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = ds.image_dims();
    let mut examples: Vec<f32> = Vec::with_capacity(per_class * ds.class_count * h * w);
    let mut target_labels = Vec::new();
    let mut ground_truth = Vec::new();
    let mut chosen_epsilons = Vec::new();
    let mut source_indices = Vec::new();
    let mut shortfalls: Vec<(usize, usize)> = Vec::new();

    for class in 0..ds.class_count {
        let mut candidates: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        candidates.shuffle(&mut rng);
        let mut found = 0usize;
        for &idx in &candidates {
            if found == per_class {
                break;
            }
            let row = ds.images.slice_rows(idx, idx + 1)?;
            let x = model_view(&row, model)?;
            if model.predict(&x)?[0] != class {
                continue; // already misclassified clean; FGSM needs a correct base point
            }
            for &eps in schedule {
                let adv = fgsm(model, &x, &[class], eps)?;
                let pred = model.predict(&adv)?[0];
                if pred != class {
                    examples.extend_from_slice(adv.data());
                    target_labels.push(pred);
                    ground_truth.push(class);
                    chosen_epsilons.push(eps);
                    source_indices.push(idx);
                    found += 1;
                    break;
                }
            }
        }
        if found < per_class {
            shortfalls.push((class, per_class - found));
        }
    }

    if !shortfalls.is_empty() {
        let detail: Vec<String> = shortfalls
            .iter()
            .map(|(c, missing)| format!("class {c} short by {missing}"))
            .collect();
        return Err(Error::FingerprintExhaustion(format!(
            "largest epsilon {} could not fill the quota: {}",
            schedule.last().expect("nonempty"),
            detail.join(", ")
        )));
    }

    let n = target_labels.len();
    FingerprintSet::new(
        Tensor::new(vec![n, h, w], examples)?,
        target_labels,
        ground_truth,
        chosen_epsilons,
        schedule.to_vec(),
        seed,
        source_indices,
    )
}

/// Appends the fingerprint examples to `ds`, labelled with their targets.
/// The combined set is reshuffled downstream by the epoch batch plans.
pub fn inject(ds: &Dataset, fp: &FingerprintSet) -> Result<Dataset> {
    let (h, w) = ds.image_dims();
    if fp.examples.shape()[1..] != [h, w] {
        return Err(Error::ShapeMismatch(format!(
            "fingerprints are {:?}, dataset images are {h}x{w}",
            &fp.examples.shape()[1..]
        )));
    }
    if let Some(&bad) = fp.target_labels.iter().find(|&&t| t >= ds.class_count) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: ds.class_count,
        });
    }
    let images = ds.images.concat_rows(&fp.examples)?;
    let mut labels = ds.labels.clone();
    labels.extend_from_slice(&fp.target_labels);
    Dataset::new(images, labels, ds.class_count)
}

/// Injection rate as the paper-style percentage string, e.g. `0.166%` for
/// 100 fingerprints in 60,000 clean samples.
pub fn injection_rate_percent(clean_count: usize, fingerprint_count: usize) -> String {
    let rate = 100.0 * fingerprint_count as f64 / (clean_count + fingerprint_count) as f64;
    format!("{rate:.3}%")
}

#[derive(Serialize, Deserialize)]
struct FingerprintManifest {
    seed: u64,
    epsilon_schedule: Vec<f32>,
    chosen_epsilons: Vec<f32>,
    target_labels: Vec<usize>,
    ground_truth: Vec<usize>,
    source_indices: Vec<usize>,
}

/// Persists a fingerprint set as a directory: `manifest.json` with the
/// metadata and `examples.bin` holding the example tensor in the wire
/// tensor layout.
pub fn save_fingerprints(fp: &FingerprintSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = FingerprintManifest {
        seed: fp.seed,
        epsilon_schedule: fp.epsilon_schedule.clone(),
        chosen_epsilons: fp.chosen_epsilons.clone(),
        target_labels: fp.target_labels.clone(),
        ground_truth: fp.ground_truth.clone(),
        source_indices: fp.source_indices.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    std::fs::write(dir.join("examples.bin"), encode_tensor(&fp.examples))?;
    Ok(())
}

/// Loads a set written by [`save_fingerprints`].
pub fn load_fingerprints(dir: &Path) -> Result<FingerprintSet> {
    let manifest: FingerprintManifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    let examples = decode_tensor(&std::fs::read(dir.join("examples.bin"))?)?;
    FingerprintSet::new(
        examples,
        manifest.target_labels,
        manifest.ground_truth,
        manifest.chosen_epsilons,
        manifest.epsilon_schedule,
        manifest.seed,
        manifest.source_indices,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::engine::{LayerSpec, StackSpec};

    fn blob_model_spec(dim: usize, classes: usize) -> StackSpec {
        StackSpec::new(
            vec![1, dim],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: dim,
                    outputs: 16,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 16,
                    outputs: classes,
                },
                LayerSpec::SoftmaxOutput,
            ],
        )
    }

    /// Trains a small MLP on blobs well enough to generate fingerprints from.
    fn fitted_model(ds: &Dataset) -> LayerStack {
        let spec = blob_model_spec(ds.images.row_len(), ds.class_count);
        let mut stack = LayerStack::init(&spec, 7).unwrap();
        for epoch in 0..30 {
            let plan = crate::data::BatchPlan::for_epoch(ds.len(), 10, 7, epoch).unwrap();
            for (x, y) in crate::data::batches(ds, &plan) {
                let (_, bundle) = stack.loss_and_backward(&x, &y).unwrap();
                stack.sgd_step(&bundle, 0.5).unwrap();
            }
        }
        stack
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let ds = synth_dataset(5, 3, 6, 2).unwrap();
        let model = fitted_model(&ds);
        let x = ds.images.slice_rows(0, 3).unwrap();
        let out = fgsm(&model, &x, &ds.labels[0..3], 0.0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn fgsm_moves_interior_pixels_by_exactly_plus_minus_epsilon_or_zero() {
        let ds = synth_dataset(5, 3, 6, 2).unwrap();
        let model = fitted_model(&ds);
        // Interior pixels so clipping stays inert.
        let data: Vec<f32> = ds.images.data()[..18]
            .iter()
            .map(|&p| p.clamp(0.31, 0.69))
            .collect();
        let x = Tensor::new(vec![3, 1, 6], data).unwrap();
        let eps = 0.25f32;
        let out = fgsm(&model, &x, &[0, 1, 2], eps).unwrap();
        for (a, b) in x.iter().zip(out.iter()) {
            let delta = b - a;
            assert!(
                delta == 0.0 || delta == eps || delta == -eps,
                "delta {delta} not in {{-eps, 0, +eps}}"
            );
        }
    }

    #[test]
    fn fgsm_clips_to_unit_interval() {
        let ds = synth_dataset(5, 3, 6, 2).unwrap();
        let model = fitted_model(&ds);
        let x = ds.images.slice_rows(0, 5).unwrap();
        let out = fgsm(&model, &x, &ds.labels[0..5], 0.9).unwrap();
        assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn fgsm_direction_matches_closed_form_linear_gradient() {
        // Single dense layer + softmax: dLoss/dx = W^T (p - onehot(y)) / B,
        // computable by hand from the weights.
        let spec = StackSpec::new(
            vec![1, 4],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 4,
                    outputs: 3,
                },
                LayerSpec::SoftmaxOutput,
            ],
        );
        let model = LayerStack::init(&spec, 5).unwrap();
        let x = Tensor::new(vec![1, 1, 4], vec![0.5, 0.4, 0.6, 0.5]).unwrap();
        let y = 1usize;

        // Closed-form oracle.
        let w = model.layers()[1].params()[0].data().to_vec(); // [3, 4]
        let logits: Vec<f32> = (0..3)
            .map(|o| (0..4).map(|i| w[o * 4 + i] * x.data()[i]).sum())
            .collect();
        let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
        let z: f32 = exps.iter().sum();
        let probs: Vec<f32> = exps.iter().map(|&e| e / z).collect();
        let mut grad = vec![0.0f32; 4];
        for i in 0..4 {
            for (o, &p) in probs.iter().enumerate() {
                let seed = if o == y { p - 1.0 } else { p };
                grad[i] += w[o * 4 + i] * seed;
            }
        }

        let eps = 0.05f32;
        let adv = fgsm(&model, &x, &[y], eps).unwrap();
        for i in 0..4 {
            let delta = adv.data()[i] - x.data()[i];
            let expected = eps * sign_or_zero(grad[i]);
            assert!(
                (delta - expected).abs() < 1e-6,
                "pixel {i}: delta {delta}, oracle {expected}"
            );
        }
    }

    #[test]
    fn built_fingerprints_are_all_misclassified_with_matching_targets() {
        let ds = synth_dataset(60, 3, 6, 11).unwrap();
        let model = fitted_model(&ds);
        let fp = build_fingerprints(&model, &ds, 4, &DEFAULT_EPSILON_SCHEDULE, 13).unwrap();
        assert_eq!(fp.len(), 12);
        let x = model_view(&fp.examples, &model).unwrap();
        let preds = model.predict(&x).unwrap();
        for i in 0..fp.len() {
            assert_eq!(preds[i], fp.target_labels[i], "fingerprint {i}");
            assert_ne!(fp.target_labels[i], fp.ground_truth[i], "fingerprint {i}");
        }
        // Perturbation bound.
        for (i, &src) in fp.source_indices.iter().enumerate() {
            let row = ds.images.slice_rows(src, src + 1).unwrap();
            let adv = fp.examples.slice_rows(i, i + 1).unwrap();
            let linf = row
                .iter()
                .zip(adv.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(linf <= fp.max_epsilon() + 1e-6);
        }
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        let ds = synth_dataset(60, 3, 6, 11).unwrap();
        let model = fitted_model(&ds);
        let a = build_fingerprints(&model, &ds, 3, &DEFAULT_EPSILON_SCHEDULE, 21).unwrap();
        let b = build_fingerprints(&model, &ds, 3, &DEFAULT_EPSILON_SCHEDULE, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exhaustion_reports_per_class_shortfall() {
        let ds = synth_dataset(20, 3, 6, 11).unwrap();
        let model = fitted_model(&ds);
        // Tiny epsilon cannot flip anything on a well-separated blob set.
        let err = build_fingerprints(&model, &ds, 2, &[1e-6], 3).unwrap_err();
        match err {
            Error::FingerprintExhaustion(msg) => {
                assert!(msg.contains("class"), "got: {msg}");
                assert!(msg.contains("short by"), "got: {msg}");
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn inject_appends_targets_and_counts_add_up() {
        let ds = synth_dataset(20, 3, 6, 11).unwrap();
        let model = fitted_model(&ds);
        let fp = build_fingerprints(&model, &ds, 2, &DEFAULT_EPSILON_SCHEDULE, 5).unwrap();
        let injected = inject(&ds, &fp).unwrap();
        assert_eq!(injected.len(), ds.len() + fp.len());

        // Label histogram equals clean histogram plus target histogram.
        let mut expected = vec![0usize; ds.class_count];
        for &l in &ds.labels {
            expected[l] += 1;
        }
        for &t in &fp.target_labels {
            expected[t] += 1;
        }
        let mut got = vec![0usize; injected.class_count];
        for &l in &injected.labels {
            got[l] += 1;
        }
        assert_eq!(got, expected);

        // Fingerprint rows carry targets, not ground truth.
        for i in 0..fp.len() {
            assert_eq!(injected.labels[ds.len() + i], fp.target_labels[i]);
        }
    }

    #[test]
    fn injection_rate_prints_paper_style() {
        assert_eq!(injection_rate_percent(60_000, 100), "0.166%");
        assert_eq!(injection_rate_percent(50_000, 100), "0.200%");
    }

    #[test]
    fn empty_fingerprint_set_is_rejected() {
        let examples = Tensor::zeros(vec![0, 2, 2]);
        assert!(FingerprintSet::new(
            examples,
            vec![],
            vec![],
            vec![],
            vec![0.1],
            0,
            vec![]
        )
        .is_err());
    }

    #[test]
    fn fingerprints_roundtrip_through_disk() {
        let ds = synth_dataset(30, 3, 6, 11).unwrap();
        let model = fitted_model(&ds);
        let fp = build_fingerprints(&model, &ds, 2, &DEFAULT_EPSILON_SCHEDULE, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_fingerprints(&fp, dir.path()).unwrap();
        let loaded = load_fingerprints(dir.path()).unwrap();
        assert_eq!(loaded, fp);
    }
}
