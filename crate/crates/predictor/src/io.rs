//! Binary feature files and model files.
//!
//! Feature file: `TAGF`, `u16` version, `u32` T, `u32` D, then `T·D`
//! little-endian `f32` values row-major. The sequence id lives in a JSON
//! sidecar next to it (`<name>.json`).
//!
//! Model file: one line of JSON header, then every tensor as little-endian
//! `f64` in declared order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::features::FeatureNormalizer;
use crate::params::TagrnParams;
use crate::{FeatureSequence, PredictorError, TagrnConfig};

const FEATURE_MAGIC: &[u8; 4] = b"TAGF";
const FEATURE_VERSION: u16 = 1;
const MODEL_FORMAT: &str = "tagrn-model";
const MODEL_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PredictorError + '_ {
    move |source| PredictorError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> PredictorError {
    PredictorError::Format { path: path.to_path_buf(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureSidecar {
    sequence_id: String,
    frames: u32,
    dim: u32,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_features(path: &Path, seq: &FeatureSequence) -> Result<(), PredictorError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let (t, d) = seq.values.dim();
    let mut buf = Vec::with_capacity(14 + 4 * t * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for v in seq.values.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))?;
    let sidecar = FeatureSidecar { sequence_id: seq.sequence_id.clone(), frames: t as u32, dim: d as u32 };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar") + "\n";
    fs::write(&side, text).map_err(io_err(&side))
}

pub fn read_features(path: &Path) -> Result<FeatureSequence, PredictorError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 14 || &bytes[..4] != FEATURE_MAGIC {
        return Err(format_err(path, "not a feature file (bad magic)"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(format_err(path, format!("unsupported feature version {version}")));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (t, d) = (word(6), word(10));
    if bytes.len() != 14 + 4 * t * d {
        return Err(format_err(path, format!("{} bytes for a {t}×{d} matrix", bytes.len())));
    }
    let values: Vec<f64> = bytes[14..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let sidecar: FeatureSidecar = serde_json::from_str(&text).map_err(|e| format_err(&side, e.to_string()))?;
    if (sidecar.frames as usize, sidecar.dim as usize) != (t, d) {
        return Err(format_err(&side, format!("sidecar says {}×{}, file holds {t}×{d}", sidecar.frames, sidecar.dim)));
    }
    let values = Array2::from_shape_vec((t, d), values).expect("checked length");
    FeatureSequence::new(sidecar.sequence_id, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    format_version: u32,
    config: TagrnConfig,
    seed: u64,
    #[serde(default)]
    normalizer: Option<FeatureNormalizer>,
    tensors: Vec<TensorInfo>,
}

/// A trained network plus what is needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub config: TagrnConfig,
    pub seed: u64,
    pub normalizer: Option<FeatureNormalizer>,
    pub params: TagrnParams,
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<(), PredictorError> {
    model.params.check_shapes(&model.config)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let named = model.params.named_tensors();
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        format_version: MODEL_VERSION,
        config: model.config.clone(),
        seed: model.seed,
        normalizer: model.normalizer.clone(),
        tensors: named.iter().map(|(n, t)| TensorInfo { name: n.clone(), rows: t.nrows(), cols: t.ncols() }).collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("model header");
    out.push(b'\n');
    for (_, t) in &named {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<ModelFile, PredictorError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line).map_err(io_err(path))?;
    let header: ModelHeader = serde_json::from_slice(&line).map_err(|e| format_err(path, format!("header: {e}")))?;
    if header.format != MODEL_FORMAT || header.format_version != MODEL_VERSION {
        return Err(format_err(path, format!("unsupported model {} v{}", header.format, header.format_version)));
    }
    header.config.validate()?;
    let mut params = TagrnParams::zeros(&header.config);
    let expected: Vec<TensorInfo> = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| TensorInfo { name, rows: t.nrows(), cols: t.ncols() })
        .collect();
    if expected != header.tensors {
        return Err(format_err(path, "tensor table does not match the config"));
    }
    let mut blob = Vec::new();
    reader.read_to_end(&mut blob).map_err(io_err(path))?;
    if blob.len() != 8 * params.num_params() {
        return Err(format_err(path, format!("{} weight bytes, expected {}", blob.len(), 8 * params.num_params())));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in params.tensors_mut() {
        t.mapv_inplace(|_| values.next().expect("checked length"));
    }
    Ok(ModelFile { config: header.config, seed: header.seed, normalizer: header.normalizer, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;

    #[test]
    fn feature_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f/seq.tagf");
        let seq = FeatureSequence::new("seq", Array2::from_shape_fn((3, 5), |(i, j)| i as f64 * 0.5 - j as f64)).unwrap();
        write_features(&path, &seq).unwrap();
        assert_eq!(read_features(&path).unwrap(), seq);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"TAGF");
        assert_eq!(bytes.len(), 14 + 4 * 15);
        fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(read_features(&path), Err(PredictorError::Format { .. })));
    }

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let config = TagrnConfig { feature_dim: 8, heads: 2, gru_hidden: 5, ..TagrnConfig::new(3, 4) };
        let model = ModelFile {
            params: init_params(&config, 11).unwrap(),
            config,
            seed: 11,
            normalizer: Some(FeatureNormalizer { mean: vec![0.1; 8], std: vec![1.0 / 3.0; 8] }),
        };
        save_model(&path, &model).unwrap();
        assert_eq!(load_model(&path).unwrap(), model);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(load_model(&path).is_err());
    }
}
