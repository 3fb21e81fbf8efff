use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::binio::{ReadResult, Reader, Writer};
use super::dataset::{Dataset, Splits};
use super::{fnv_digest, PipelineError};
use crate::autodiff::Tensor;
use crate::config::{ModelDefinition, SplitPolicy};
use crate::features::{build_metadata, preprocess_value, tokenize, FeatureMetadata, FeatureType, PreprocParams};
use crate::model::TAGGER;

/// Builds the metadata of every input and output feature from the training
/// split alone.
pub fn collect_metadata(
    train: &Dataset,
    def: &ModelDefinition,
) -> Result<BTreeMap<String, FeatureMetadata>, PipelineError> {
    let mut meta = BTreeMap::new();
    for (name, ftype, params) in def.feature_preprocessing() {
        let column = train.column(&name)?;
        let m = build_metadata(&column, ftype, &params)
            .map_err(|e| PipelineError::Data(format!("feature `{name}`: {e}")))?;
        meta.insert(name, m);
    }
    // tag sequences are laid out on the same timesteps as the tagged input
    let seq_input = def
        .input_features
        .iter()
        .find(|f| f.ftype.is_sequential())
        .and_then(|f| meta.get(&f.name))
        .and_then(|m: &FeatureMetadata| m.vocab())
        .map(|v| v.max_sequence_length);
    for f in &def.output_features {
        if f.decoder.as_deref() == Some(TAGGER) {
            if let (Some(len), Some(v)) = (seq_input, meta.get_mut(&f.name).and_then(|m| m.vocab_mut())) {
                v.max_sequence_length = len;
            }
        }
    }
    Ok(meta)
}

/// Checks that every tagger target has exactly one tag per token of the
/// tagged input.
pub fn check_tag_alignment(ds: &Dataset, def: &ModelDefinition) -> Result<(), PipelineError> {
    let Some(input) = def.input_features.iter().find(|f| f.ftype.is_sequential()) else {
        return Ok(());
    };
    let params: BTreeMap<String, PreprocParams> =
        def.feature_preprocessing().into_iter().map(|(n, _, p)| (n, p)).collect();
    let tokens = ds.column(&input.name)?;
    for f in def.output_features.iter().filter(|f| f.decoder.as_deref() == Some(TAGGER)) {
        for (i, (src, tags)) in tokens.iter().zip(ds.column(&f.name)?).enumerate() {
            let n_in = tokenize(src, params[&input.name].tokenizer).len();
            let n_tags = tokenize(&tags, params[&f.name].tokenizer).len();
            if n_in != n_tags {
                return Err(PipelineError::Data(format!(
                    "row {}: `{}` has {n_tags} tags but `{}` has {n_in} tokens",
                    i + 2,
                    f.name,
                    input.name
                )));
            }
        }
    }
    Ok(())
}

/// Preprocessed values of one feature over the rows of one split, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn from_column(
        values: &[String],
        ftype: FeatureType,
        meta: &FeatureMetadata,
        params: &PreprocParams,
    ) -> Result<Self, PipelineError> {
        let width = meta.tensor_width();
        let mut data = Vec::with_capacity(values.len() * width);
        for (i, v) in values.iter().enumerate() {
            let t = preprocess_value(v, ftype, meta, params)
                .map_err(|e| PipelineError::Data(format!("row {}: {e}", i + 1)))?;
            data.extend_from_slice(t.data());
        }
        Ok(Self {
            rows: values.len(),
            width,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// `[indices.len()×width]` tensor of the chosen rows.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), self.width], data).expect("non-empty batch")
    }
}

/// Preprocessed blocks keyed by split, then feature.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessed {
    pub splits: BTreeMap<String, BTreeMap<String, Block>>,
}

impl Preprocessed {
    pub fn split(&self, name: &str) -> &BTreeMap<String, Block> {
        &self.splits[name]
    }

    pub fn rows(&self, split: &str) -> usize {
        self.splits[split].values().next().map_or(0, |b| b.rows)
    }
}

/// Preprocesses every feature column of a dataset.
pub fn preprocess_split(
    ds: &Dataset,
    features: &[(String, FeatureType, PreprocParams)],
    metadata: &BTreeMap<String, FeatureMetadata>,
) -> Result<BTreeMap<String, Block>, PipelineError> {
    let mut out = BTreeMap::new();
    for (name, ftype, params) in features {
        let meta = metadata
            .get(name)
            .ok_or_else(|| PipelineError::Artifact(format!("no metadata for feature `{name}`")))?;
        let block = Block::from_column(&ds.column(name)?, *ftype, meta, params)
            .map_err(|e| match e {
                PipelineError::Data(m) => PipelineError::Data(format!("feature `{name}`, {m}")),
                other => other,
            })?;
        out.insert(name.clone(), block);
    }
    Ok(out)
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    features: Vec<(String, FeatureType, PreprocParams)>,
    decoders: Vec<(&'a str, Option<&'a str>)>,
    split: String,
    seed: u64,
}

/// Digest of everything the preprocessed tensors depend on.
pub fn fingerprint(dataset_digest: u64, def: &ModelDefinition, split: &SplitPolicy, seed: u64) -> u64 {
    let input = FingerprintInput {
        features: def.feature_preprocessing(),
        decoders: def
            .output_features
            .iter()
            .map(|f| (f.name.as_str(), f.decoder.as_deref()))
            .collect(),
        split: format!("{split:?}"),
        seed,
    };
    let mut bytes = dataset_digest.to_le_bytes().to_vec();
    bytes.extend(serde_json::to_vec(&input).expect("serializable"));
    fnv_digest(&bytes)
}

/// Cache file used for a dataset: `<dataset>.ecdc` beside it.
pub fn cache_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".ecdc");
    dataset.with_file_name(name)
}

const CACHE_MAGIC: &[u8; 4] = b"ECDC";
const CACHE_VERSION: u16 = 1;
const DTYPE_F64: u8 = 0;

pub fn encode_cache(p: &Preprocessed, fingerprint: u64) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(CACHE_MAGIC);
    w.u16(CACHE_VERSION);
    w.u64(fingerprint);
    w.u32(p.splits.len() as u32);
    for (split, blocks) in &p.splits {
        w.str(split);
        w.u32(blocks.len() as u32);
        for (name, b) in blocks {
            w.str(name);
            w.u8(DTYPE_F64);
            w.u8(2);
            w.u64(b.rows as u64);
            w.u64(b.width as u64);
            w.f64s(&b.data);
        }
    }
    w.finish()
}

/// Decodes a cache file, returning its fingerprint and contents.
pub fn decode_cache(bytes: &[u8]) -> ReadResult<(u64, Preprocessed)> {
    let mut r = Reader::verified(bytes)?;
    r.magic(CACHE_MAGIC)?;
    let version = r.u16()?;
    if version != CACHE_VERSION {
        return Err(format!("unsupported cache version {version}"));
    }
    let fp = r.u64()?;
    let mut out = Preprocessed::default();
    for _ in 0..r.u32()? {
        let split = r.str()?;
        let mut blocks = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            if r.u8()? != DTYPE_F64 {
                return Err(format!("block `{name}` has an unknown dtype"));
            }
            if r.u8()? != 2 {
                return Err(format!("block `{name}` is not rank 2"));
            }
            let (rows, width) = (r.usize()?, r.usize()?);
            let n = rows.checked_mul(width).ok_or("block size out of range")?;
            let data = r.f64s(n)?;
            blocks.insert(name, Block { rows, width, data });
        }
        if blocks.values().any(|b: &Block| Some(b.rows) != blocks.values().next().map(|f| f.rows)) {
            return Err(format!("split `{split}` has features with different row counts"));
        }
        out.splits.insert(split, blocks);
    }
    if !r.at_end() {
        return Err("trailing bytes after the last block".into());
    }
    Ok((fp, out))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CacheStatus {
    Disabled,
    /// Loaded from the cache without preprocessing.
    Hit,
    /// No usable cache; computed and written.
    Miss,
}

#[derive(Debug)]
pub struct PreprocessOutcome {
    pub data: Preprocessed,
    pub status: CacheStatus,
    /// Problems with the cache file that were worked around.
    pub warnings: Vec<String>,
}

/// Preprocesses all three splits, reading and writing the cache at `cache`
/// when given.
pub fn preprocess_dataset(
    splits: &Splits,
    metadata: &BTreeMap<String, FeatureMetadata>,
    def: &ModelDefinition,
    cache: Option<(&Path, u64)>,
) -> Result<PreprocessOutcome, PipelineError> {
    let mut warnings = Vec::new();
    if let Some((path, fp)) = cache {
        if let Ok(bytes) = std::fs::read(path) {
            match decode_cache(&bytes) {
                Ok((stored, data)) if stored == fp => {
                    return Ok(PreprocessOutcome {
                        data,
                        status: CacheStatus::Hit,
                        warnings,
                    })
                }
                Ok(_) => {}
                Err(e) => warnings.push(format!(
                    "discarding unreadable cache {}: {e}; recomputing",
                    path.display()
                )),
            }
        }
    }
    let features = def.feature_preprocessing();
    let mut data = Preprocessed::default();
    for (name, ds) in splits.named() {
        data.splits.insert(name.to_string(), preprocess_split(ds, &features, metadata)?);
    }
    let status = match cache {
        Some((path, fp)) => {
            if let Err(e) = std::fs::write(path, encode_cache(&data, fp)) {
                warnings.push(format!("cannot write cache {}: {e}", path.display()));
            }
            CacheStatus::Miss
        }
        None => CacheStatus::Disabled,
    };
    Ok(PreprocessOutcome {
        data,
        status,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Preprocessed {
        let mut p = Preprocessed::default();
        let mut blocks = BTreeMap::new();
        blocks.insert(
            "x".to_string(),
            Block {
                rows: 2,
                width: 3,
                data: vec![1.0, -2.5, 0.0, 3.25, f64::MIN_POSITIVE, 7.0],
            },
        );
        blocks.insert(
            "y".to_string(),
            Block {
                rows: 2,
                width: 1,
                data: vec![0.0, 1.0],
            },
        );
        p.splits.insert("train".into(), blocks);
        p.splits.insert("test".into(), BTreeMap::from([(
            "x".to_string(),
            Block {
                rows: 0,
                width: 3,
                data: vec![],
            },
        )]));
        p
    }

    #[test]
    fn cache_round_trip() {
        let p = sample();
        let bytes = encode_cache(&p, 99);
        assert_eq!(&bytes[..4], b"ECDC");
        assert_eq!(decode_cache(&bytes).unwrap(), (99, p));
    }

    #[test]
    fn corrupt_cache_detected() {
        let bytes = encode_cache(&sample(), 1);
        let mut flipped = bytes.clone();
        flipped[20] ^= 1;
        assert!(decode_cache(&flipped).is_err());
        assert!(decode_cache(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_cache(&[]).is_err());
    }

    #[test]
    fn cache_path_beside_dataset() {
        assert_eq!(cache_path(Path::new("/d/train.csv")), Path::new("/d/train.csv.ecdc"));
    }
}
