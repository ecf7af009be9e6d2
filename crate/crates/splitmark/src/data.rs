//! Dataset ingestion and batching.
//!
//! Real data comes in as MNIST-style IDX files (big-endian headers, unsigned
//! byte pixels, magic 0x00000803 for images and 0x00000801 for labels).
//! Synthetic corpora cover fast tests and desk-scale experiments: Gaussian
//! class blobs for MLPs and template-based images for CNNs. Batch order is a
//! seeded permutation, reseeded per epoch as `seed + epoch`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A labelled image set. Images are `[N, H, W]` with pixels in `[0, 1]`;
/// labels are class indices below `class_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.shape().len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "dataset images must be [N, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        if images.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidArgument(
                "dataset pixels must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Image height and width.
    pub fn image_dims(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }
}

fn read_u32_be(reader: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::TruncatedFile {
            path: path.display().to_string(),
            detail: format!("missing {what}"),
        })?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an IDX image/label file pair into a normalized [`Dataset`].
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut ir = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut ir, images_path, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n = read_u32_be(&mut ir, images_path, "image count")? as usize;
    let h = read_u32_be(&mut ir, images_path, "row count")? as usize;
    let w = read_u32_be(&mut ir, images_path, "column count")? as usize;
    let mut pixels = vec![0u8; n * h * w];
    ir.read_exact(&mut pixels)
        .map_err(|_| Error::TruncatedFile {
            path: images_path.display().to_string(),
            detail: format!("expected {} pixel bytes", n * h * w),
        })?;

    let mut lr = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lr, labels_path, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let ln = read_u32_be(&mut lr, labels_path, "label count")? as usize;
    if ln != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: ln,
        });
    }
    let mut raw_labels = vec![0u8; ln];
    lr.read_exact(&mut raw_labels)
        .map_err(|_| Error::TruncatedFile {
            path: labels_path.display().to_string(),
            detail: format!("expected {ln} label bytes"),
        })?;

    let data: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().map_or(1, |m| m + 1).max(2);
    Dataset::new(Tensor::new(vec![n, h, w], data)?, labels, class_count)
}

/// Writes a dataset back out as an IDX image/label file pair. Pixels are
/// quantized to bytes with `round(p * 255)`, so loading a written pair
/// returns bit-identical tensors for datasets that came from IDX files.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (h, w) = ds.image_dims();
    let mut iw = BufWriter::new(File::create(images_path)?);
    iw.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    iw.write_all(&(ds.len() as u32).to_be_bytes())?;
    iw.write_all(&(h as u32).to_be_bytes())?;
    iw.write_all(&(w as u32).to_be_bytes())?;
    let bytes: Vec<u8> = ds
        .images
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    iw.write_all(&bytes)?;
    iw.flush()?;

    let mut lw = BufWriter::new(File::create(labels_path)?);
    lw.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lw.write_all(&(ds.len() as u32).to_be_bytes())?;
    let labels: Vec<u8> = ds.labels.iter().map(|&l| l as u8).collect();
    lw.write_all(&labels)?;
    lw.flush()?;
    Ok(())
}

/// Gaussian class blobs: `class_count` well-separated means in `[0, 1]^dim`
/// (pairwise distance at least six standard deviations), `n_per_class`
/// samples each. Images come out as `[N, 1, dim]`. Deterministic in `seed`.
pub fn synth_dataset(
    n_per_class: usize,
    class_count: usize,
    dim: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || class_count == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "n_per_class, class_count and dim must be positive".into(),
        ));
    }
    let sigma = 0.05f32;
    let min_sep = 6.0 * sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<Vec<f32>> = Vec::with_capacity(class_count);
    let mut attempts = 0;
    while means.len() < class_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidArgument(format!(
                "cannot place {class_count} class means at {min_sep} separation in {dim} dims"
            )));
        }
        let candidate: Vec<f32> = (0..dim).map(|_| rng.gen_range(0.2f32..0.8)).collect();
        let ok = means.iter().all(|m| {
            let d2: f32 = m
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2.sqrt() >= min_sep
        });
        if ok {
            means.push(candidate);
        }
    }
    let noise = Normal::new(0.0f32, sigma).expect("valid sigma");
    let n = n_per_class * class_count;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                data.push((m + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, dim], data)?, labels, class_count)
}

/// Template-based synthetic images for CNN experiments: each class owns a
/// deterministic smooth pattern (a sum of random Gaussian bumps) and samples
/// are the template plus pixel noise, clipped to `[0, 1]`. Deterministic in
/// `seed`.
pub fn synth_images(
    n_per_class: usize,
    class_count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || class_count == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "n_per_class, class_count, height and width must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps = 4usize;
    let mut templates: Vec<Vec<f32>> = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let mut field = vec![0.0f32; height * width];
        for _ in 0..bumps {
            let cy = rng.gen_range(0.15f32..0.85) * height as f32;
            let cx = rng.gen_range(0.15f32..0.85) * width as f32;
            let s = rng.gen_range(0.09f32..0.22) * height.max(width) as f32;
            let amp: f32 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            for y in 0..height {
                for x in 0..width {
                    let dy = (y as f32 - cy) / s;
                    let dx = (x as f32 - cx) / s;
                    field[y * width + x] += amp * (-(dy * dy + dx * dx) / 2.0).exp();
                }
            }
        }
        let lo = field.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = field.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = (hi - lo).max(1e-6);
        for v in field.iter_mut() {
            *v = 0.15 + 0.7 * (*v - lo) / span;
        }
        templates.push(field);
    }
    let noise = Normal::new(0.0f32, 0.08).expect("valid sigma");
    let n = n_per_class * class_count;
    let mut data = Vec::with_capacity(n * height * width);
    let mut labels = Vec::with_capacity(n);
    for (c, template) in templates.iter().enumerate() {
        for _ in 0..n_per_class {
            for &t in template {
                data.push((t + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::new(vec![n, height, width], data)?,
        labels,
        class_count,
    )
}

/// A seeded pass order over a dataset: a true permutation of `[0, N)`
/// chunked into `batch_size` pieces, with the final partial batch kept.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub order: Vec<usize>,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::InvalidArgument(format!(
                "batch_size {batch_size} invalid for {n} samples"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        Ok(Self {
            batch_size,
            order,
            seed,
        })
    }

    /// The plan for a given epoch of a run: reseeded as `seed + epoch`.
    pub fn for_epoch(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Self> {
        Self::new(n, batch_size, seed.wrapping_add(epoch as u64))
    }

    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Index slice for batch `i`.
    pub fn batch_indices(&self, i: usize) -> &[usize] {
        let start = i * self.batch_size;
        let end = ((i + 1) * self.batch_size).min(self.order.len());
        &self.order[start..end]
    }
}

/// Iterates `(x_batch, y_batch)` pairs over `ds` in plan order. Every sample
/// appears exactly once per pass; labels stay aligned with their images.
pub fn batches<'a>(
    ds: &'a Dataset,
    plan: &'a BatchPlan,
) -> impl Iterator<Item = (Tensor, Vec<usize>)> + 'a {
    (0..plan.batch_count()).map(move |i| {
        let idx = plan.batch_indices(i);
        let x = ds.images.gather_rows(idx).expect("plan indices in range");
        let y = idx.iter().map(|&j| ds.labels[j]).collect();
        (x, y)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    /// Hand-crafted two-image IDX fixture, byte by byte.
    #[test]
    fn idx_fixture_roundtrips_exact_bytes() {
        let dir = tmpdir();
        let images = dir.path().join("imgs");
        let labels = dir.path().join("lbls");
        let mut img_bytes = Vec::new();
        img_bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes()); // two images
        img_bytes.extend_from_slice(&2u32.to_be_bytes()); // 2x2
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&[0, 51, 102, 255, 255, 204, 153, 0]);
        std::fs::write(&images, &img_bytes).unwrap();
        let mut lbl_bytes = Vec::new();
        lbl_bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl_bytes.extend_from_slice(&2u32.to_be_bytes());
        lbl_bytes.extend_from_slice(&[7, 3]);
        std::fs::write(&labels, &lbl_bytes).unwrap();

        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_dims(), (2, 2));
        assert_eq!(ds.labels, vec![7, 3]);
        let expected: Vec<f32> = [0u8, 51, 102, 255, 255, 204, 153, 0]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        assert_eq!(ds.images.data(), &expected[..]);

        // Round-trip through the writer reproduces identical tensors.
        let images2 = dir.path().join("imgs2");
        let labels2 = dir.path().join("lbls2");
        write_idx(&ds, &images2, &labels2).unwrap();
        let ds2 = load_idx(&images2, &labels2).unwrap();
        assert_eq!(ds2.images, ds.images);
        assert_eq!(ds2.labels, ds.labels);
    }

    #[test]
    fn bad_magic_is_a_distinct_error_naming_the_file() {
        let dir = tmpdir();
        let images = dir.path().join("imgs");
        let labels = dir.path().join("bad-labels");
        let mut img_bytes = Vec::new();
        img_bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img_bytes.extend_from_slice(&1u32.to_be_bytes());
        img_bytes.extend_from_slice(&1u32.to_be_bytes());
        img_bytes.extend_from_slice(&1u32.to_be_bytes());
        img_bytes.push(9);
        std::fs::write(&images, &img_bytes).unwrap();
        let mut lbl_bytes = Vec::new();
        lbl_bytes.extend_from_slice(&0xdead_beefu32.to_be_bytes());
        lbl_bytes.extend_from_slice(&1u32.to_be_bytes());
        lbl_bytes.push(0);
        std::fs::write(&labels, &lbl_bytes).unwrap();
        let err = load_idx(&images, &labels).unwrap_err();
        match err {
            Error::BadMagic { path, found, .. } => {
                assert!(path.contains("bad-labels"));
                assert_eq!(found, 0xdead_beef);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched_files_are_rejected() {
        let dir = tmpdir();
        let images = dir.path().join("imgs");
        let labels = dir.path().join("lbls");
        let mut img_bytes = Vec::new();
        img_bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&2u32.to_be_bytes());
        img_bytes.extend_from_slice(&[1, 2, 3]); // five bytes short
        std::fs::write(&images, &img_bytes).unwrap();
        let mut lbl_bytes = Vec::new();
        lbl_bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl_bytes.extend_from_slice(&2u32.to_be_bytes());
        lbl_bytes.extend_from_slice(&[0, 1]);
        std::fs::write(&labels, &lbl_bytes).unwrap();
        assert!(matches!(
            load_idx(&images, &labels),
            Err(Error::TruncatedFile { .. })
        ));

        // Fix the images, break the count.
        img_bytes.extend_from_slice(&[4, 5, 6, 7, 8]);
        std::fs::write(&images, &img_bytes).unwrap();
        let mut short = Vec::new();
        short.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        short.extend_from_slice(&3u32.to_be_bytes());
        short.extend_from_slice(&[0, 1, 0]);
        std::fs::write(&labels, &short).unwrap();
        assert!(matches!(
            load_idx(&images, &labels),
            Err(Error::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
    }

    #[test]
    fn synth_dataset_is_deterministic() {
        let a = synth_dataset(10, 2, 4, 3).unwrap();
        let b = synth_dataset(10, 2, 4, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(10, 2, 4, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_dataset_single_sample_per_class() {
        let ds = synth_dataset(1, 5, 4, 0).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn nearest_centroid_oracle_classifies_synth_blobs() {
        let ds = synth_dataset(50, 4, 8, 7).unwrap();
        // Estimate centroids from the data itself.
        let dim = ds.images.row_len();
        let mut centroids = vec![vec![0.0f64; dim]; 4];
        let mut counts = vec![0usize; 4];
        for (i, &label) in ds.labels.iter().enumerate() {
            counts[label] += 1;
            for d in 0..dim {
                centroids[label][d] += ds.images.data()[i * dim + d] as f64;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            for v in centroid.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        let mut correct = 0;
        for i in 0..ds.len() {
            let row = &ds.images.data()[i * dim..(i + 1) * dim];
            let mut best = f64::INFINITY;
            let mut arg = 0;
            for (c, centroid) in centroids.iter().enumerate() {
                let d2: f64 = row
                    .iter()
                    .zip(centroid)
                    .map(|(&x, &m)| (x as f64 - m) * (x as f64 - m))
                    .sum();
                if d2 < best {
                    best = d2;
                    arg = c;
                }
            }
            if arg == ds.labels[i] {
                correct += 1;
            }
        }
        let acc = correct as f64 / ds.len() as f64;
        assert!(acc >= 0.99, "centroid oracle accuracy {acc}");
    }

    #[test]
    fn synth_images_are_deterministic_and_in_range() {
        let a = synth_images(3, 4, 12, 12, 5).unwrap();
        let b = synth_images(3, 4, 12, 12, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn batch_sizes_follow_the_plan() {
        let ds = synth_dataset(5, 2, 4, 1).unwrap(); // N = 10
        let plan = BatchPlan::new(ds.len(), 4, 9).unwrap();
        let sizes: Vec<usize> = batches(&ds, &plan).map(|(x, _)| x.batch()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn every_sample_appears_exactly_once_per_epoch() {
        let ds = synth_dataset(7, 3, 4, 2).unwrap();
        let plan = BatchPlan::new(ds.len(), 5, 33).unwrap();
        let mut seen = HashSet::new();
        for idx in (0..plan.batch_count()).flat_map(|i| plan.batch_indices(i)) {
            assert!(seen.insert(*idx), "index {idx} repeated");
        }
        assert_eq!(seen.len(), ds.len());
    }

    #[test]
    fn same_seed_same_batches_and_labels_stay_aligned() {
        let ds = synth_dataset(6, 2, 4, 8).unwrap();
        let p1 = BatchPlan::new(ds.len(), 4, 17).unwrap();
        let p2 = BatchPlan::new(ds.len(), 4, 17).unwrap();
        assert_eq!(p1.order, p2.order);
        for ((x1, y1), (x2, y2)) in batches(&ds, &p1).zip(batches(&ds, &p2)) {
            assert_eq!(x1, x2);
            assert_eq!(y1, y2);
        }
        // Alignment: the first row of each batch is the image of its index.
        for (bi, (x, y)) in batches(&ds, &p1).enumerate() {
            let idx = p1.batch_indices(bi)[0];
            assert_eq!(
                &x.data()[..x.row_len()],
                &ds.images.data()[idx * x.row_len()..(idx + 1) * x.row_len()]
            );
            assert_eq!(y[0], ds.labels[idx]);
        }
    }

    #[test]
    fn batch_size_larger_than_dataset_is_rejected() {
        assert!(BatchPlan::new(3, 4, 0).is_err());
        assert!(BatchPlan::new(3, 0, 0).is_err());
    }
}
