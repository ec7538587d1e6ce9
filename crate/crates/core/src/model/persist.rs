//! Fitted models and their versioned binary file format: magic bytes, a
//! little-endian format version, a length-prefixed JSON description of the
//! model spec, then the bincode-encoded model.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FeatureRow, ForestModel, GamModel, ModelError};

pub const MAGIC: &[u8; 8] = b"GHMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gam,
    GamShrinkage,
    RandomForest,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gam => "gam",
            ModelKind::GamShrinkage => "gam_shrinkage",
            ModelKind::RandomForest => "random_forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelBody {
    Gam(GamModel),
    Forest(ForestModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub body: ModelBody,
    /// Amenity vocabulary the feature rows were built with.
    pub vocab: Vec<String>,
    pub train_ids: Vec<String>,
}

#[derive(Serialize)]
struct Header<'a> {
    kind: ModelKind,
    vocab: &'a [String],
    n_train: usize,
    spec: serde_json::Value,
}

impl FittedModel {
    pub fn gam(model: GamModel, vocab: &[String], train: &[FeatureRow]) -> Self {
        FittedModel {
            kind: if model.spec.shrinkage { ModelKind::GamShrinkage } else { ModelKind::Gam },
            body: ModelBody::Gam(model),
            vocab: vocab.to_vec(),
            train_ids: train.iter().map(|r| r.id.clone()).collect(),
        }
    }

    pub fn forest(model: ForestModel, vocab: &[String], train: &[FeatureRow]) -> Self {
        FittedModel {
            kind: ModelKind::RandomForest,
            body: ModelBody::Forest(model),
            vocab: vocab.to_vec(),
            train_ids: train.iter().map(|r| r.id.clone()).collect(),
        }
    }

    pub fn predict(&self, row: &FeatureRow) -> Result<f64, ModelError> {
        match &self.body {
            ModelBody::Gam(m) => m.predict(row),
            ModelBody::Forest(m) => Ok(m.predict(row)),
        }
    }

    pub fn as_gam(&self) -> Option<&GamModel> {
        match &self.body {
            ModelBody::Gam(m) => Some(m),
            ModelBody::Forest(_) => None,
        }
    }

    pub fn as_forest(&self) -> Option<&ForestModel> {
        match &self.body {
            ModelBody::Forest(m) => Some(m),
            ModelBody::Gam(_) => None,
        }
    }

    /// JSON description of the spec, as embedded in saved files.
    pub fn spec_json(&self) -> Result<String, ModelError> {
        let spec = match &self.body {
            ModelBody::Gam(m) => serde_json::to_value(&m.spec)?,
            ModelBody::Forest(m) => serde_json::json!({
                "params": m.params,
                "encoder": m.encoder,
                "seed": m.seed,
            }),
        };
        Ok(serde_json::to_string(&Header {
            kind: self.kind,
            vocab: &self.vocab,
            n_train: self.train_ids.len(),
            spec,
        })?)
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let header = self.spec_json()?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        let payload = bincode::serialize(self).map_err(|e| ModelError::Format(e.to_string()))?;
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Format("not a model file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported format version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8);
        let mut header = Vec::new();
        r.by_ref().take(len).read_to_end(&mut header)?;
        if header.len() as u64 != len {
            return Err(ModelError::Format("truncated spec header".into()));
        }
        let _: serde_json::Value = serde_json::from_slice(&header)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        bincode::deserialize(&payload).map_err(|e| ModelError::Format(e.to_string()))
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_file(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
