//! Deterministic serialization: the model container, the encoded
//! dataset container, run configuration, and evaluation summaries.
//!
//! Containers are a one-line magic header (`MAGIC <header-bytes>`),
//! a structured-text header of exactly that many bytes, then a raw
//! binary payload. Every byte is determined by the content: no
//! timestamps, no map-order nondeterminism.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::EvalSummary;
use crate::ingest::{LabelSchema, LoadOptions};
use crate::nncore::{ModelSpec, ParamSet, PAD_ID};
use crate::synth::SynthProfile;
use crate::textprep::{
    load_char_set, load_word_list, Dataset, EncodedRecord, PrepConfig, SequenceVector, Vocabulary,
};
use crate::train::TrainConfig;

pub const MODEL_MAGIC: &str = "PHASENET-MODEL";
pub const DATASET_MAGIC: &str = "PHASENET-DATA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("not a {expected} container")]
    BadMagic { expected: &'static str },
    #[error("container format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("container header: {0}")]
    HeaderParse(String),
    #[error("container header is semantically invalid: {0}")]
    InvalidHeader(String),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("tensor {tensor} contains a non-finite value")]
    NonFiniteValue { tensor: String },
    #[error("tensor manifest does not match the model dimensions: {0}")]
    ManifestMismatch(String),
    #[error("payload does not match its header: {0}")]
    InvalidPayload(String),
    #[error("vocabulary digest mismatch: model was trained with {expected}, got {found}")]
    DigestMismatch { expected: String, found: String },
}

/// Write via a temporary sibling then rename, so a crash never leaves
/// a half-written file at the destination. Parent directories are
/// created as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let wrap = |source: io::Error| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(wrap)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| wrap(io::Error::new(io::ErrorKind::InvalidInput, "path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|source| ArtifactError::Io {
        path: tmp.display().to_string(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(wrap)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, ArtifactError> {
    fs::read(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_text(path: &Path) -> Result<String, ArtifactError> {
    fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `MAGIC <header-bytes>\n` + header + payload.
pub fn assemble_container(magic: &str, header: &str, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(magic.len() + 16 + header.len() + payload.len());
    out.extend_from_slice(magic.as_bytes());
    out.push(b' ');
    out.extend_from_slice(header.len().to_string().as_bytes());
    out.push(b'\n');
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

/// Inverse of assemble_container; checks the magic word and the header
/// byte count before anything else.
pub fn split_container<'a>(
    bytes: &'a [u8],
    magic: &'static str,
) -> Result<(&'a str, &'a [u8]), ArtifactError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(ArtifactError::BadMagic { expected: magic })?;
    let line = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| ArtifactError::BadMagic { expected: magic })?;
    let rest = &bytes[newline + 1..];
    let (word, len_text) = line
        .split_once(' ')
        .ok_or(ArtifactError::BadMagic { expected: magic })?;
    if word != magic {
        return Err(ArtifactError::BadMagic { expected: magic });
    }
    let header_len: usize = len_text
        .parse()
        .map_err(|_| ArtifactError::BadMagic { expected: magic })?;
    if rest.len() < header_len {
        return Err(ArtifactError::TruncatedPayload {
            expected: header_len,
            found: rest.len(),
        });
    }
    let header = std::str::from_utf8(&rest[..header_len])
        .map_err(|e| ArtifactError::HeaderParse(e.to_string()))?;
    Ok((header, &rest[header_len..]))
}

/// A trained model with everything needed to apply it: dimensions,
/// label schema, the digest of the vocabulary it was encoded with, and
/// the parameters themselves (32-bit storage precision).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelArtifact {
    pub spec: ModelSpec,
    pub schema: LabelSchema,
    pub vocab_digest: String,
    pub params: ParamSet<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    vocab_digest: String,
    spec: ModelSpec,
    schema: LabelSchema,
    tensors: Vec<TensorEntry>,
}

impl ModelArtifact {
    pub fn new(
        spec: ModelSpec,
        schema: LabelSchema,
        vocab_digest: String,
        params: ParamSet<f32>,
    ) -> Self {
        ModelArtifact {
            spec,
            schema,
            vocab_digest,
            params,
        }
    }

    /// Error if this model was built against a different vocabulary.
    pub fn verify_vocabulary(&self, vocab: &Vocabulary) -> Result<(), ArtifactError> {
        let found = vocab.digest();
        if found != self.vocab_digest {
            return Err(ArtifactError::DigestMismatch {
                expected: self.vocab_digest.clone(),
                found,
            });
        }
        Ok(())
    }
}

pub fn model_to_bytes(artifact: &ModelArtifact) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, tensor) in artifact.params.tensors() {
        tensors.push(TensorEntry {
            name,
            shape: tensor.shape().to_vec(),
            offset: payload.len(),
        });
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = ModelHeader {
        format_version: FORMAT_VERSION,
        vocab_digest: artifact.vocab_digest.clone(),
        spec: artifact.spec.clone(),
        schema: artifact.schema.clone(),
        tensors,
    };
    let header_text = toml::to_string(&header).expect("model header serializes");
    assemble_container(MODEL_MAGIC, &header_text, &payload)
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<(), ArtifactError> {
    write_atomic(path, &model_to_bytes(artifact))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<ModelArtifact, ArtifactError> {
    let (header_text, payload) = split_container(bytes, MODEL_MAGIC)?;
    let header: ModelHeader =
        toml::from_str(header_text).map_err(|e| ArtifactError::HeaderParse(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch {
            found: header.format_version,
            supported: FORMAT_VERSION,
        });
    }
    header
        .spec
        .validate()
        .map_err(|e| ArtifactError::InvalidHeader(e.to_string()))?;
    header
        .schema
        .validate()
        .map_err(|e| ArtifactError::InvalidHeader(e.to_string()))?;
    if header.schema.m() != header.spec.num_classes {
        return Err(ArtifactError::InvalidHeader(format!(
            "schema lists {} classes but the model has {}",
            header.schema.m(),
            header.spec.num_classes
        )));
    }

    let mut params: ParamSet<f32> = ParamSet::zeros(&header.spec);
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec()))
        .collect();
    if header.tensors.len() != expected.len() {
        return Err(ArtifactError::ManifestMismatch(format!(
            "manifest lists {} tensors, the model has {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut offset = 0usize;
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if entry.name != *name {
            return Err(ArtifactError::ManifestMismatch(format!(
                "expected tensor {name:?}, manifest says {:?}",
                entry.name
            )));
        }
        if entry.shape != *shape {
            return Err(ArtifactError::ManifestMismatch(format!(
                "tensor {name}: expected shape {shape:?}, manifest says {:?}",
                entry.shape
            )));
        }
        if entry.offset != offset {
            return Err(ArtifactError::ManifestMismatch(format!(
                "tensor {name}: expected offset {offset}, manifest says {}",
                entry.offset
            )));
        }
        offset += shape.iter().product::<usize>() * 4;
    }
    if payload.len() < offset {
        return Err(ArtifactError::TruncatedPayload {
            expected: offset,
            found: payload.len(),
        });
    }
    if payload.len() > offset {
        return Err(ArtifactError::InvalidPayload(format!(
            "{} trailing bytes after the last tensor",
            payload.len() - offset
        )));
    }

    let mut cursor = 0usize;
    for (name, tensor) in params.tensors_mut() {
        for v in tensor.data_mut() {
            let raw: [u8; 4] = payload[cursor..cursor + 4].try_into().expect("bounds checked");
            *v = f32::from_le_bytes(raw);
            cursor += 4;
        }
        if tensor.data().iter().any(|v| !v.is_finite()) {
            return Err(ArtifactError::NonFiniteValue { tensor: name });
        }
    }

    Ok(ModelArtifact {
        spec: header.spec,
        schema: header.schema,
        vocab_digest: header.vocab_digest,
        params,
    })
}

pub fn load_model(path: &Path) -> Result<ModelArtifact, ArtifactError> {
    model_from_bytes(&read_bytes(path)?)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    num_classes: usize,
    max_len: usize,
    vocab_size: usize,
    vocab_digest: String,
    num_records: usize,
}

/// Records are stored as (label, true_length, the non-pad id prefix);
/// the pad tail is layout, not data, and is rebuilt on load.
pub fn dataset_to_bytes(data: &Dataset) -> Vec<u8> {
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        num_classes: data.num_classes,
        max_len: data.max_len,
        vocab_size: data.vocab_size,
        vocab_digest: data.vocab_digest.clone(),
        num_records: data.records.len(),
    };
    let header_text = toml::to_string(&header).expect("dataset header serializes");
    let mut payload = Vec::new();
    for r in &data.records {
        payload.extend_from_slice(&r.label.to_le_bytes());
        payload.extend_from_slice(&(r.seq.true_length as u32).to_le_bytes());
        for &id in &r.seq.ids[..r.seq.true_length] {
            payload.extend_from_slice(&id.to_le_bytes());
        }
    }
    assemble_container(DATASET_MAGIC, &header_text, &payload)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<(), ArtifactError> {
    write_atomic(path, &dataset_to_bytes(data))
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset, ArtifactError> {
    let (header_text, payload) = split_container(bytes, DATASET_MAGIC)?;
    let header: DatasetHeader =
        toml::from_str(header_text).map_err(|e| ArtifactError::HeaderParse(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ArtifactError::VersionMismatch {
            found: header.format_version,
            supported: FORMAT_VERSION,
        });
    }
    if header.num_classes < 2 || header.max_len == 0 || header.vocab_size < 3 {
        return Err(ArtifactError::InvalidHeader(format!(
            "degenerate dimensions: num_classes {}, max_len {}, vocab_size {}",
            header.num_classes, header.max_len, header.vocab_size
        )));
    }

    let mut records = Vec::with_capacity(header.num_records);
    let mut cursor = 0usize;
    let read_u32 = |cursor: &mut usize| -> Result<u32, ArtifactError> {
        let end = *cursor + 4;
        if end > payload.len() {
            return Err(ArtifactError::TruncatedPayload {
                expected: end,
                found: payload.len(),
            });
        }
        let raw: [u8; 4] = payload[*cursor..end].try_into().expect("bounds checked");
        *cursor = end;
        Ok(u32::from_le_bytes(raw))
    };
    for i in 0..header.num_records {
        let label = read_u32(&mut cursor)?;
        if label as usize >= header.num_classes {
            return Err(ArtifactError::InvalidPayload(format!(
                "record {i}: label {label} out of range for {} classes",
                header.num_classes
            )));
        }
        let true_length = read_u32(&mut cursor)? as usize;
        if true_length == 0 || true_length > header.max_len {
            return Err(ArtifactError::InvalidPayload(format!(
                "record {i}: true_length {true_length} outside 1..={}",
                header.max_len
            )));
        }
        let mut ids = Vec::with_capacity(header.max_len);
        for _ in 0..true_length {
            let id = read_u32(&mut cursor)?;
            if id == PAD_ID || id as usize >= header.vocab_size {
                return Err(ArtifactError::InvalidPayload(format!(
                    "record {i}: id {id} invalid for vocab_size {}",
                    header.vocab_size
                )));
            }
            ids.push(id);
        }
        ids.resize(header.max_len, PAD_ID);
        records.push(EncodedRecord {
            label,
            seq: SequenceVector { ids, true_length },
        });
    }
    if cursor != payload.len() {
        return Err(ArtifactError::InvalidPayload(format!(
            "{} trailing bytes after the last record",
            payload.len() - cursor
        )));
    }
    Ok(Dataset {
        num_classes: header.num_classes,
        max_len: header.max_len,
        vocab_size: header.vocab_size,
        vocab_digest: header.vocab_digest,
        records,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, ArtifactError> {
    dataset_from_bytes(&read_bytes(path)?)
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("config parse: {0}")]
    Parse(String),
    #[error("config invalid: {0}")]
    Invalid(String),
}

fn default_corpus_path() -> PathBuf {
    PathBuf::from("corpus.csv")
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_corpus_path")]
    pub corpus: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stoplist: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strip_chars: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: default_corpus_path(),
            stoplist: None,
            strip_chars: None,
            out_dir: default_out_dir(),
        }
    }
}

/// One file configures a whole run. Only `[model]` is required; every
/// other section falls back to defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub prep: PrepConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub ingest: LoadOptions,
    #[serde(default)]
    pub schema: LabelSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthProfile>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Numeric and cross-section consistency. File existence is checked
    /// separately, by the commands that actually read those files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.prep
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("prep: {e}")))?;
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        self.schema
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("schema: {e}")))?;
        if let Some(synth) = &self.synth {
            synth
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("synth: {e}")))?;
        }
        if self.model.vocab_size != self.prep.vocab_size {
            return Err(ConfigError::Invalid(format!(
                "model.vocab_size {} must equal prep.vocab_size {}",
                self.model.vocab_size, self.prep.vocab_size
            )));
        }
        if self.model.max_len != self.prep.max_len {
            return Err(ConfigError::Invalid(format!(
                "model.max_len {} must equal prep.max_len {}",
                self.model.max_len, self.prep.max_len
            )));
        }
        if self.model.num_classes != self.schema.m() {
            return Err(ConfigError::Invalid(format!(
                "model.num_classes {} must equal the schema class count {}",
                self.model.num_classes,
                self.schema.m()
            )));
        }
        Ok(())
    }

    /// Resolve the effective preprocessing config, loading stoplist and
    /// strip-character files when paths are given.
    pub fn effective_prep(&self) -> Result<PrepConfig, ConfigError> {
        let mut prep = self.prep.clone();
        if let Some(path) = &self.paths.stoplist {
            prep.stoplist =
                load_word_list(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(path) = &self.paths.strip_chars {
            prep.strip_chars =
                load_char_set(path).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(prep)
    }

    /// Relative corpus paths live inside the output directory, so the
    /// generate-then-prepare pipeline follows `--out`; absolute paths
    /// point at external corpora and are used as-is.
    pub fn resolved_corpus(&self, out_dir: &Path) -> PathBuf {
        if self.paths.corpus.is_absolute() {
            self.paths.corpus.clone()
        } else {
            out_dir.join(&self.paths.corpus)
        }
    }

    /// Check that the input files a corpus-reading command needs exist.
    pub fn ensure_input_files(&self, resolved_corpus: &Path) -> Result<(), ConfigError> {
        let mut required: Vec<(&str, &Path)> = vec![("paths.corpus", resolved_corpus)];
        if let Some(p) = &self.paths.stoplist {
            required.push(("paths.stoplist", p));
        }
        if let Some(p) = &self.paths.strip_chars {
            required.push(("paths.strip_chars", p));
        }
        for (key, path) in required {
            if !path.exists() {
                return Err(ConfigError::Invalid(format!(
                    "{key}: file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RunConfig::from_toml_str(&text)
}

/// Evaluation results as written to disk: the rendered report for
/// humans plus every metric at full precision for machines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub report: String,
    pub summary: EvalSummary,
}

pub fn summary_to_toml(summary: &EvalSummary, report: &str) -> String {
    let file = SummaryFile {
        report: report.to_string(),
        summary: summary.clone(),
    };
    toml::to_string(&file).expect("summary serializes")
}

pub fn export_summary(summary: &EvalSummary, report: &str, path: &Path) -> Result<(), ArtifactError> {
    write_atomic(path, summary_to_toml(summary, report).as_bytes())
}

pub fn load_summary(path: &Path) -> Result<SummaryFile, ArtifactError> {
    let text = read_text(path)?;
    toml::from_str(&text).map_err(|e| ArtifactError::HeaderParse(e.to_string()))
}
