//! In-memory labelled datasets and their on-disk formats.
//!
//! A generated dataset directory holds `index.json` plus one raw image file
//! per sample (little-endian `f32`, row-major, dimensions declared in the
//! index). Precomputed feature vectors are read from CSV: one row per sample,
//! feature columns followed by a final 0/1 label column.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary transplantability label. Class index 1 is the non-transplantable
/// class whose misclassification counts as a false negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Transplantable = 0,
    NonTransplantable = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Transplantable),
            1 => Ok(Label::NonTransplantable),
            _ => Err(Error::Invalid(format!("class index {i} is not 0 or 1"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<Label>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::length("dataset labels", inputs.len(), labels.len()));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::shape("dataset sample", first.shape(), bad.shape()));
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(|t| t.shape())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }
}

/// One entry of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub fraction: f64,
    pub grade: u8,
    pub label: Label,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<IndexEntry>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn encode_image_f32(image: &Tensor) -> Vec<u8> {
    image
        .data()
        .iter()
        .flat_map(|v| (*v as f32).to_le_bytes())
        .collect()
}

pub fn decode_image_f32(bytes: &[u8], shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::length("raw image bytes", 4 * n, bytes.len()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Writes a dataset directory: raw images and `index.json`.
pub fn save_dataset_dir(dir: &Path, index: &DatasetIndex, images: &[Tensor]) -> Result<()> {
    if images.len() != index.samples.len() {
        return Err(Error::length("images for index", index.samples.len(), images.len()));
    }
    fs::create_dir_all(dir)?;
    let shape = [index.channels, index.height, index.width];
    for (entry, img) in index.samples.iter().zip(images) {
        img.ensure_shape(&shape, "dataset image")?;
        write_atomic(&dir.join(&entry.file), &encode_image_f32(img))?;
    }
    write_atomic(&dir.join("index.json"), &serde_json::to_vec_pretty(index)?)
}

pub fn load_dataset_dir(dir: &Path) -> Result<(DatasetIndex, Dataset)> {
    let index: DatasetIndex = serde_json::from_slice(&fs::read(dir.join("index.json"))?)?;
    let shape = [index.channels, index.height, index.width];
    let mut inputs = Vec::with_capacity(index.samples.len());
    for entry in &index.samples {
        inputs.push(decode_image_f32(&fs::read(dir.join(&entry.file))?, &shape)?);
    }
    let labels = index.samples.iter().map(|e| e.label).collect();
    let data = Dataset::new(inputs, labels)?;
    Ok((index, data))
}

/// Reads precomputed feature vectors: each row is `f_1,…,f_n,label`. A first
/// row that does not parse as numbers is treated as a header.
pub fn load_feature_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let values: std::result::Result<Vec<f64>, _> =
            record.iter().map(|f| f.parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => {
                return Err(Error::Invalid(format!("feature CSV row {}: {e}", row + 1)))
            }
        };
        let (label, feats) = values
            .split_last()
            .filter(|(_, f)| !f.is_empty())
            .ok_or_else(|| Error::Invalid(format!("feature CSV row {} is too short", row + 1)))?;
        if label.fract() != 0.0 {
            return Err(Error::Invalid(format!("feature CSV row {}: label {label}", row + 1)));
        }
        labels.push(Label::from_index(*label as usize)?);
        inputs.push(Tensor::from_vec(feats.to_vec())?);
    }
    Dataset::new(inputs, labels)
}
