//! Datasets: the built-in `bars8` toy set and an IDX (MNIST format) loader.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParam(format!("unknown split {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dataset_id: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn new(
        dataset_id: impl Into<String>,
        num_classes: usize,
        train: Vec<Sample>,
        test: Vec<Sample>,
    ) -> Result<Self> {
        let dataset_id = dataset_id.into();
        let input_shape = train
            .first()
            .or(test.first())
            .map(|s| s.input.shape.clone())
            .ok_or_else(|| Error::InvalidInput(format!("dataset {dataset_id:?} is empty")))?;
        for s in train.iter().chain(&test) {
            if s.input.shape != input_shape {
                return Err(Error::InvalidInput(format!(
                    "dataset {dataset_id:?}: mixed input shapes {:?} and {input_shape:?}",
                    s.input.shape
                )));
            }
            if s.label >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "dataset {dataset_id:?}: label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(Dataset {
            dataset_id,
            input_shape,
            num_classes,
            train,
            test,
        })
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn sample(&self, split: Split, index: usize) -> Result<&Sample> {
        self.split(split).get(index).ok_or_else(|| {
            Error::NotFound(format!(
                "sample {index} in {} split of {:?}",
                split.as_str(),
                self.dataset_id
            ))
        })
    }
}

/// Generator settings for the bars toy set: images with one bright vertical
/// (class 0) or horizontal (class 1) bar on a dark background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarsConfig {
    pub size: usize,
    pub bar_length: usize,
    /// Standard deviation of Gaussian pixel noise.
    pub noise: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl BarsConfig {
    pub const BARS8: BarsConfig = BarsConfig {
        size: 8,
        bar_length: 3,
        noise: 0.05,
        n_train: 400,
        n_test: 100,
        seed: 8,
    };
}

pub const BARS8: &str = "bars8";

fn bars_sample(cfg: &BarsConfig, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Sample {
    let n = cfg.size;
    let label = rng.random_range(0..2usize);
    let along = rng.random_range(0..=n - cfg.bar_length);
    let across = rng.random_range(0..n);
    let mut data = vec![0.0; n * n];
    for k in along..along + cfg.bar_length {
        let (r, c) = if label == 0 { (k, across) } else { (across, k) };
        data[r * n + c] = 1.0;
    }
    for v in &mut data {
        *v += noise.sample(rng);
    }
    Sample {
        input: Tensor {
            shape: vec![n, n, 1],
            data,
        },
        label,
    }
}

pub fn bars(dataset_id: &str, cfg: BarsConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).expect("valid noise level");
    let train = (0..cfg.n_train).map(|_| bars_sample(&cfg, &mut rng, &noise)).collect();
    let test = (0..cfg.n_test).map(|_| bars_sample(&cfg, &mut rng, &noise)).collect();
    Dataset::new(dataset_id, 2, train, test).expect("generated bars are consistent")
}

/// The built-in 8x8 two-class bars set (400 train / 100 test).
pub fn bars8() -> Dataset {
    bars(BARS8, BarsConfig::BARS8)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::InvalidInput("truncated IDX header".into()))
}

/// Parses an IDX image file into `[rows, cols, 1]` tensors scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::UnsupportedFormat(format!("IDX image magic {magic:#010x}")));
    }
    let (n, rows, cols) = (
        be_u32(bytes, 4)? as usize,
        be_u32(bytes, 8)? as usize,
        be_u32(bytes, 12)? as usize,
    );
    let pixels = &bytes[16..];
    if pixels.len() != n * rows * cols {
        return Err(Error::InvalidInput(format!(
            "IDX image payload has {} bytes, header says {n}x{rows}x{cols}",
            pixels.len()
        )));
    }
    Ok(pixels
        .chunks_exact(rows * cols)
        .map(|img| Tensor {
            shape: vec![rows, cols, 1],
            data: img.iter().map(|&p| p as f64 / 255.0).collect(),
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::UnsupportedFormat(format!("IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let labels = &bytes[8..];
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "IDX label payload has {} bytes, header says {n}",
            labels.len()
        )));
    }
    Ok(labels.iter().map(|&l| l as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx_split(images: &Path, labels: &Path) -> Result<Vec<Sample>> {
    let imgs = parse_idx_images(&read(images)?)?;
    let labels = parse_idx_labels(&read(labels)?)?;
    if imgs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} labels",
            imgs.len(),
            labels.len()
        )));
    }
    Ok(imgs
        .into_iter()
        .zip(labels)
        .map(|(input, label)| Sample { input, label })
        .collect())
}

/// Paths of an IDX dataset, as given in the workspace config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxPaths {
    pub train_images: std::path::PathBuf,
    pub train_labels: std::path::PathBuf,
    pub test_images: std::path::PathBuf,
    pub test_labels: std::path::PathBuf,
    #[serde(default = "ten")]
    pub num_classes: usize,
}

fn ten() -> usize {
    10
}

pub fn load_idx(dataset_id: &str, paths: &IdxPaths) -> Result<Dataset> {
    let train = load_idx_split(&paths.train_images, &paths.train_labels)?;
    let test = load_idx_split(&paths.test_images, &paths.test_labels)?;
    Dataset::new(dataset_id, paths.num_classes, train, test)
}
