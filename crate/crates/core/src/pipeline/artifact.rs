use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::binio::{ReadResult, Reader, Writer};
use super::PipelineError;
use crate::autodiff::{ParameterStore, Tensor};
use crate::config::{parse_model_definition, ModelDefinition, Registries, TrainingParams};
use crate::features::FeatureMetadata;
use crate::model::EcdModel;

pub const METADATA_FILE: &str = "metadata.json";
pub const DEFINITION_FILE: &str = "model_definition.yaml";
pub const WEIGHTS_FILE: &str = "weights.bin";

const WEIGHTS_MAGIC: &[u8; 4] = b"ECDW";
pub const WEIGHTS_VERSION: u16 = 1;

pub fn encode_weights(params: &ParameterStore) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(WEIGHTS_MAGIC);
    w.u16(WEIGHTS_VERSION);
    w.u32(params.len() as u32);
    for p in params.iter() {
        w.str(&p.name);
        w.u8(p.tensor.rank() as u8);
        for &d in p.tensor.dims() {
            w.u64(d as u64);
        }
        w.f64s(p.tensor.data());
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightsError {
    Corrupt(String),
    Version(u16),
}

pub fn decode_weights(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>, WeightsError> {
    let read = |bytes| -> ReadResult<(u16, BTreeMap<String, Tensor>)> {
        let mut r = Reader::verified(bytes)?;
        r.magic(WEIGHTS_MAGIC)?;
        let version = r.u16()?;
        if version != WEIGHTS_VERSION {
            return Ok((version, BTreeMap::new()));
        }
        let mut out = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.usize()).collect::<ReadResult<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or("tensor size out of range")?;
            let t = Tensor::new(dims, r.f64s(n)?).map_err(|e| e.to_string())?;
            if out.insert(name.clone(), t).is_some() {
                return Err(format!("duplicate parameter `{name}`"));
            }
        }
        if !r.at_end() {
            return Err("trailing bytes after the last record".into());
        }
        Ok((version, out))
    };
    match read(bytes) {
        Ok((v, _)) if v != WEIGHTS_VERSION => Err(WeightsError::Version(v)),
        Ok((_, out)) => Ok(out),
        Err(e) => Err(WeightsError::Corrupt(e)),
    }
}

/// A model loaded from disk with everything needed to use it.
pub struct LoadedModel {
    pub definition: ModelDefinition,
    pub metadata: BTreeMap<String, FeatureMetadata>,
    pub model: EcdModel,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(|e| PipelineError::Artifact(format!("cannot write {}: {e}", path.display())))
}

pub fn metadata_json(metadata: &BTreeMap<String, FeatureMetadata>) -> String {
    serde_json::to_string_pretty(metadata).expect("metadata is serializable")
}

/// Writes the metadata, resolved definition and weights into `dir`.
/// Only file names are stored, so the directory can be moved.
pub fn save_model(
    model: &EcdModel,
    definition: &ModelDefinition,
    metadata: &BTreeMap<String, FeatureMetadata>,
    dir: &Path,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::Artifact(format!("cannot create {}: {e}", dir.display())))?;
    write(&dir.join(METADATA_FILE), metadata_json(metadata).as_bytes())?;
    write(&dir.join(DEFINITION_FILE), definition.to_yaml().as_bytes())?;
    write(&dir.join(WEIGHTS_FILE), &encode_weights(model.params()))
}

/// Accepts either a model directory or a run directory containing `model/`.
pub fn model_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("model");
    if nested.join(WEIGHTS_FILE).exists() || !dir.join(WEIGHTS_FILE).exists() && nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn load_model(dir: &Path) -> Result<LoadedModel, PipelineError> {
    let dir = model_dir(dir);
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| PipelineError::Artifact(format!("cannot read {}: {e}", path.display())))
    };
    let def_text = String::from_utf8(read(DEFINITION_FILE)?)
        .map_err(|_| PipelineError::Artifact(format!("{DEFINITION_FILE} is not UTF-8")))?;
    let definition = parse_model_definition(&def_text)
        .map_err(|e| PipelineError::Artifact(format!("{DEFINITION_FILE}: {e}")))?;
    let metadata: BTreeMap<String, FeatureMetadata> = serde_json::from_slice(&read(METADATA_FILE)?)
        .map_err(|e| PipelineError::Artifact(format!("{METADATA_FILE}: {e}")))?;
    let weights = decode_weights(&read(WEIGHTS_FILE)?).map_err(|e| match e {
        WeightsError::Corrupt(m) => PipelineError::Artifact(format!("{WEIGHTS_FILE}: {m}")),
        WeightsError::Version(v) => PipelineError::Artifact(format!(
            "{WEIGHTS_FILE}: format version {v} is not supported (expected {WEIGHTS_VERSION})"
        )),
    })?;
    let seed = TrainingParams::from_definition(&definition).seed;
    let mut model = EcdModel::build(&definition, &metadata, &Registries::builtin(), seed)
        .map_err(|e| PipelineError::Artifact(format!("cannot rebuild model: {e}")))?;
    let expected: Vec<&str> = model.params().names().collect();
    let stored: Vec<&str> = weights.keys().map(String::as_str).collect();
    if expected != stored {
        return Err(PipelineError::Artifact(format!(
            "{WEIGHTS_FILE} does not match the model definition: expected parameters {expected:?}, found {stored:?}"
        )));
    }
    for p in model.params_mut().iter_mut() {
        let t = &weights[&p.name];
        if t.dims() != p.tensor.dims() {
            return Err(PipelineError::Artifact(format!(
                "{WEIGHTS_FILE}: parameter `{}` has dims {:?}, the model expects {:?}",
                p.name,
                t.dims(),
                p.tensor.dims()
            )));
        }
        p.tensor = t.clone();
    }
    Ok(LoadedModel {
        definition,
        metadata,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Parameter;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(Parameter::new("a.w", Tensor::new(vec![2, 2], vec![1.0, -0.5, 3.0, 1e-300]).unwrap()).unwrap())
            .unwrap();
        s.insert(Parameter::new("b.bias", Tensor::vector(vec![0.25]).unwrap()).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn weights_round_trip() {
        let bytes = encode_weights(&store());
        let back = decode_weights(&bytes).unwrap();
        for p in store().iter() {
            assert_eq!(back[&p.name], p.tensor);
        }
    }

    #[test]
    fn truncated_weights_are_corrupt() {
        let bytes = encode_weights(&store());
        for cut in [1, 8, bytes.len() / 2] {
            assert!(matches!(
                decode_weights(&bytes[..bytes.len() - cut]),
                Err(WeightsError::Corrupt(_))
            ));
        }
    }

    #[test]
    fn other_version_rejected() {
        let mut w = Writer::default();
        w.buf.extend_from_slice(WEIGHTS_MAGIC);
        w.u16(WEIGHTS_VERSION + 1);
        w.u32(0);
        assert_eq!(decode_weights(&w.finish()), Err(WeightsError::Version(WEIGHTS_VERSION + 1)));
    }
}
