//! Dataset ingestion: the CIFAR binary layouts and a synthetic
//! class-conditional blob generator for desk-scale experiments.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use dhvt_core::init::seeded_rng;
use dhvt_core::tensor::{Element, Tensor};

use crate::error::{CliError, Result};

/// Per-channel normalization applied after the 1/255 scaling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// No-op normalization, keeps raw [0,1] pixels.
    pub fn identity() -> Self {
        Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

impl Default for Normalization {
    /// CIFAR-100 training-set statistics (see scripts/compute_cifar_stats.py).
    fn default() -> Self {
        Normalization {
            mean: [0.5071, 0.4865, 0.4409],
            std: [0.2673, 0.2564, 0.2762],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CifarFlavor {
    #[default]
    Cifar100,
    Cifar10,
}

impl CifarFlavor {
    /// Bytes per record: labels + 3072 pixel bytes.
    pub fn record_stride(self) -> usize {
        match self {
            CifarFlavor::Cifar100 => 3074, // coarse label + fine label + pixels
            CifarFlavor::Cifar10 => 3073,  // label + pixels
        }
    }

    fn files(self, split: Split) -> Vec<&'static str> {
        match (self, split) {
            (CifarFlavor::Cifar100, Split::Train) => vec!["train.bin"],
            (CifarFlavor::Cifar100, Split::Test) => vec!["test.bin"],
            (CifarFlavor::Cifar10, Split::Train) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            (CifarFlavor::Cifar10, Split::Test) => vec!["test_batch.bin"],
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarFlavor::Cifar100 => 100,
            CifarFlavor::Cifar10 => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Where training/eval samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    CifarBinary {
        dir: PathBuf,
        #[serde(default)]
        flavor: CifarFlavor,
        #[serde(default)]
        normalize: Option<Normalization>,
    },
    Synthetic {
        classes: usize,
        samples: usize,
        size: usize,
        seed: u64,
    },
}

impl DataConfig {
    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self {
            DataConfig::CifarBinary {
                dir,
                flavor,
                normalize,
            } => load_cifar_binary(dir, split, *flavor, normalize.unwrap_or_default()),
            DataConfig::Synthetic {
                classes,
                samples,
                size,
                seed,
            } => {
                // The synthetic set has no held-out split; both splits see
                // the same deterministic data.
                Ok(gen_synthetic(*classes, *samples, *size, *seed))
            }
        }
    }
}

/// In-memory labeled image set, images flattened [n, 3, size, size].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub image_size: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        3 * self.image_size * self.image_size
    }

    /// Assemble a batch in the requested element type.
    pub fn batch<E: Element>(&self, indices: &[usize]) -> (Tensor<E>, Vec<usize>) {
        let sl = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * sl);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend(
                self.images[i * sl..(i + 1) * sl]
                    .iter()
                    .map(|&v| E::from_f64(v as f64)),
            );
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(
            vec![indices.len(), 3, self.image_size, self.image_size],
            data,
        )
        .expect("batch length matches by construction");
        (t, labels)
    }
}

/// Read the standard CIFAR binary files: one record per image, label
/// byte(s) first, then 3072 pixel bytes (channel-major 32x32 planes).
/// Pixels are scaled to [0,1] and normalized per channel.
pub fn load_cifar_binary(
    dir: &Path,
    split: Split,
    flavor: CifarFlavor,
    normalize: Normalization,
) -> Result<Dataset> {
    let stride = flavor.record_stride();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for file in flavor.files(split) {
        let path = dir.join(file);
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if bytes.len() % stride != 0 {
            let records = bytes.len() / stride;
            return Err(CliError::Data(format!(
                "{} is truncated: expected a multiple of {stride} bytes ({} for {records} records), got {}",
                path.display(),
                records * stride,
                bytes.len()
            )));
        }
        for record in bytes.chunks(stride) {
            let (label, pixels) = match flavor {
                CifarFlavor::Cifar100 => (record[1] as usize, &record[2..]),
                CifarFlavor::Cifar10 => (record[0] as usize, &record[1..]),
            };
            labels.push(label);
            for c in 0..3 {
                let (mean, std) = (normalize.mean[c] as f32, normalize.std[c] as f32);
                images.extend(
                    pixels[c * 1024..(c + 1) * 1024]
                        .iter()
                        .map(|&b| (b as f32 / 255.0 - mean) / std),
                );
            }
        }
    }
    Ok(Dataset {
        images,
        labels,
        image_size: 32,
        num_classes: flavor.num_classes(),
    })
}

/// Deterministic class-conditional Gaussian blobs. Each class owns a blob
/// center on a ring and a channel amplitude pattern, so per-class means are
/// pairwise distinct and the classes are linearly separable at pixel level.
pub fn gen_synthetic(classes: usize, samples: usize, size: usize, seed: u64) -> Dataset {
    assert!(classes >= 2, "need at least two classes");
    let mut rng = seeded_rng(seed);
    let centers: Vec<(f64, f64)> = (0..classes)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            (
                size as f64 / 2.0 + size as f64 / 4.0 * angle.cos(),
                size as f64 / 2.0 + size as f64 / 4.0 * angle.sin(),
            )
        })
        .collect();
    let amplitudes: Vec<[f64; 3]> = (0..classes)
        .map(|_| {
            [
                0.4 + 0.6 * rng.random_range(0.0..1.0),
                0.4 + 0.6 * rng.random_range(0.0..1.0),
                0.4 + 0.6 * rng.random_range(0.0..1.0),
            ]
        })
        .collect();
    let sigma = size as f64 / 6.0;
    let noise_scale = 0.05;
    let mut images = Vec::with_capacity(samples * 3 * size * size);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % classes;
        let (cy, cx) = centers[class];
        labels.push(class);
        for &amp in &amplitudes[class] {
            for y in 0..size {
                for x in 0..size {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let blob = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    let noise = noise_scale * (rng.random_range(0.0..1.0) - 0.5);
                    images.push((blob + noise) as f32);
                }
            }
        }
    }
    Dataset {
        images,
        labels,
        image_size: size,
        num_classes: classes,
    }
}
