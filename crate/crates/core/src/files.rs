//! On-disk JSON layouts for RD datasets and ladders.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BitrateLadder, EncodingRecipe, LadderEntry, ModelError, RDPoint, RDSurface, Resolution};

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Invalid { path: String, source: ModelError },
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(|source| FileError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| FileError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Writes pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let io = |source| FileError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(io)
}

/// RD dataset file: every encoded point of one sequence plus the recipe it
/// was produced under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdDataset {
    pub sequence_id: String,
    pub quality_metric: String,
    pub recipe: EncodingRecipe,
    pub points: Vec<RDPoint>,
}

impl RdDataset {
    pub fn from_surface(surface: &RDSurface, recipe: &EncodingRecipe) -> Self {
        Self {
            sequence_id: surface.sequence_id.clone(),
            quality_metric: surface.quality_metric.clone(),
            recipe: recipe.clone(),
            points: surface.ordered_points(recipe),
        }
    }

    pub fn into_surface(self) -> Result<(RDSurface, EncodingRecipe), ModelError> {
        let surface = RDSurface::from_points(self.sequence_id, self.quality_metric, &self.recipe, self.points)?;
        Ok((surface, self.recipe))
    }

    pub fn load(path: &Path) -> Result<(RDSurface, EncodingRecipe), FileError> {
        let ds: Self = read_json(path)?;
        ds.into_surface().map_err(|source| FileError::Invalid { path: path.display().to_string(), source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderFileEntry {
    pub bitrate_kbps: u32,
    pub width: u32,
    pub height: u32,
}

/// Ladder file: `{sequence_id, entries: [{bitrate_kbps, width, height}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderFile {
    pub sequence_id: String,
    pub entries: Vec<LadderFileEntry>,
}

impl LadderFile {
    pub fn new(sequence_id: impl Into<String>, ladder: &BitrateLadder) -> Self {
        Self {
            sequence_id: sequence_id.into(),
            entries: ladder
                .entries()
                .iter()
                .map(|e| LadderFileEntry {
                    bitrate_kbps: e.bitrate_kbps,
                    width: e.resolution.width,
                    height: e.resolution.height,
                })
                .collect(),
        }
    }

    pub fn to_ladder(&self, recipe: &EncodingRecipe) -> Result<BitrateLadder, ModelError> {
        let entries = self
            .entries
            .iter()
            .map(|e| LadderEntry { bitrate_kbps: e.bitrate_kbps, resolution: Resolution::new(e.width, e.height) })
            .collect();
        BitrateLadder::from_entries(recipe, entries)
    }

    pub fn load(path: &Path, recipe: &EncodingRecipe) -> Result<(String, BitrateLadder), FileError> {
        let file: Self = read_json(path)?;
        let ladder = file
            .to_ladder(recipe)
            .map_err(|source| FileError::Invalid { path: path.display().to_string(), source })?;
        Ok((file.sequence_id, ladder))
    }
}
