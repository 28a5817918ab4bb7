//! Weight files: `BSWT`, a little-endian `u32` version, a `u32` manifest
//! length, the JSON manifest, then every parameter as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::linalg::{Params, TensorSpec};
use super::{ModelError, SimilarityModel};
use crate::embedding::EmbeddingTable;
use crate::features::ModelFamily;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"BSWT";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightManifest {
    pub family: ModelFamily,
    pub seed: u64,
    pub tensors: Vec<TensorSpec>,
    /// Vocabulary size and dimension of the embedding table the weights were
    /// trained against (sequence family only).
    pub embedding: Option<(usize, usize)>,
}

impl WeightManifest {
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(TensorSpec::numel).sum()
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_header(r: &mut impl Read) -> Result<WeightManifest, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != WEIGHTS_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| ModelError::Format(format!("manifest: {e}")))
}

/// Reads only the manifest of a weights file.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<WeightManifest, ModelError> {
    read_header(&mut BufReader::new(File::open(path)?))
}

impl SimilarityModel {
    pub fn manifest(&self) -> WeightManifest {
        WeightManifest {
            family: self.family,
            seed: self.seed,
            tensors: self.params.specs().to_vec(),
            embedding: self.table().map(|t| (t.len(), t.dim())),
        }
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), ModelError> {
        let json = serde_json::to_vec(&self.manifest()).map_err(|e| ModelError::Format(e.to_string()))?;
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for x in &self.params.data {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads weights; `table` must match the one used in training for the
    /// sequence family.
    pub fn read(mut r: impl Read, table: Option<Arc<EmbeddingTable>>) -> Result<Self, ModelError> {
        let m = read_header(&mut r)?;
        let expected = match m.family {
            ModelFamily::AcfgGnn => super::acfg_gnn::specs(),
            ModelFamily::GraphMatcher => super::graph_matcher::specs(),
            ModelFamily::SeqEmbed => {
                let t = table.as_ref().ok_or(ModelError::MissingEmbeddings)?;
                if m.embedding != Some((t.len(), t.dim())) {
                    return Err(ModelError::ShapeMismatch(format!(
                        "weights expect embeddings {:?}, table is ({}, {})",
                        m.embedding,
                        t.len(),
                        t.dim()
                    )));
                }
                super::seq_embed::specs(t.dim())
            }
        };
        if m.tensors != expected {
            return Err(ModelError::ShapeMismatch("tensor layout differs from the model family".into()));
        }
        let mut params = Params::zeros(expected);
        let mut buf = vec![0u8; 4 * params.len()];
        r.read_exact(&mut buf)?;
        for (x, b) in params.data.iter_mut().zip(buf.chunks_exact(4)) {
            let v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(ModelError::Format("non-finite weight".into()));
            }
            *x = v as f64;
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(ModelError::Format("trailing bytes".into()));
        }
        Self::with_params(m.family, m.seed, params, table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>, table: Option<Arc<EmbeddingTable>>) -> Result<Self, ModelError> {
        Self::read(BufReader::new(File::open(path)?), table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::synth::{generate, SynthConfig};
    use crate::models::tests::all_models;

    #[test]
    fn round_trip_is_exact() {
        let fs = generate(&SynthConfig { families: 4, variants: 2, ..Default::default() });
        for m in all_models(7, &fs) {
            let mut buf = Vec::new();
            m.write(&mut buf).unwrap();
            let back = SimilarityModel::read(&buf[..], m.table().cloned()).unwrap();
            assert_eq!(back.params(), m.params());
            assert_eq!(back.manifest(), m.manifest());
            assert_eq!(back.sim(&fs[0], &fs[3]), m.sim(&fs[0], &fs[3]));
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = SimilarityModel::new(ModelFamily::AcfgGnn, 1, None).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(SimilarityModel::read(&bad[..], None), Err(ModelError::Format(_))));
        assert!(matches!(SimilarityModel::read(&buf[..buf.len() - 1], None), Err(ModelError::Io(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(SimilarityModel::read(&extra[..], None), Err(ModelError::Format(_))));
    }
}
