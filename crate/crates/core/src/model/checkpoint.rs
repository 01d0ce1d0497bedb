//! Self-describing JSON checkpoints: config, vocabulary, and row-major
//! weight matrices behind a mandatory format version.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LayerWeights, ModelConfig, ModelError, ToyTransformer, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl MatrixData {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>, ModelError> {
        if self.data.len() != self.rows * self.cols {
            return Err(ModelError::Checkpoint(format!(
                "matrix data length {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |r, c| self.data[r * self.cols + c]))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerData {
    wq: MatrixData,
    wk: MatrixData,
    wv: MatrixData,
    wo: MatrixData,
    w_in: MatrixData,
    w_out: MatrixData,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
    embed: MatrixData,
    layers: Vec<LayerData>,
    unembed: MatrixData,
}

impl ToyTransformer {
    pub fn save_checkpoint<P: AsRef<Path>>(&self, path: P) -> Result<(), ModelError> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_VERSION,
            config: self.config().clone(),
            vocab: self.vocab().tokens().to_vec(),
            embed: MatrixData::from_matrix(self.embed()),
            layers: self
                .layers()
                .iter()
                .map(|l| LayerData {
                    wq: MatrixData::from_matrix(&l.wq),
                    wk: MatrixData::from_matrix(&l.wk),
                    wv: MatrixData::from_matrix(&l.wv),
                    wo: MatrixData::from_matrix(&l.wo),
                    w_in: MatrixData::from_matrix(&l.w_in),
                    w_out: MatrixData::from_matrix(&l.w_out),
                })
                .collect(),
            unembed: MatrixData::from_matrix(self.unembed()),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if file.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_VERSION})",
                file.format_version
            )));
        }
        let vocab = Vocab::new(file.vocab)?;
        let layers = file
            .layers
            .iter()
            .map(|l| {
                Ok(LayerWeights {
                    wq: l.wq.to_matrix()?,
                    wk: l.wk.to_matrix()?,
                    wv: l.wv.to_matrix()?,
                    wo: l.wo.to_matrix()?,
                    w_in: l.w_in.to_matrix()?,
                    w_out: l.w_out.to_matrix()?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        ToyTransformer::from_parts(
            file.config,
            vocab,
            file.embed.to_matrix()?,
            layers,
            file.unembed.to_matrix()?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_model;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let model = tiny_model(13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_checkpoint(&path).unwrap();
        let loaded = ToyTransformer::load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let model = tiny_model(13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_checkpoint(&path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            ToyTransformer::load_checkpoint(&path),
            Err(ModelError::Checkpoint(_))
        ));
    }
}
