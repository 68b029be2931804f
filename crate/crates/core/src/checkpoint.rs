//! Single-file checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a JSON manifest of that
//! many bytes, then the payload of little-endian `f64` arrays. Tensor
//! offsets and lengths in the manifest are byte positions within the payload.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LoadError, Result};
use crate::lora::{LoraAdapter, LoraLayer};
use crate::model::{Architecture, Linear, VelocityField};
use crate::tensor::Tensor;
use crate::training::{Phase, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Teacher,
    Adapter,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CheckpointKind::Teacher => "teacher",
            CheckpointKind::Adapter => "adapter",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub shape: [usize; 2],
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<Phase>,
    pub seed: u64,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

/// Provenance stored alongside the tensors.
#[derive(Clone, Debug, Default)]
pub struct SaveInfo {
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
    pub phase: Option<Phase>,
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("'{}' is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn encode(
    kind: CheckpointKind,
    architecture: &Architecture,
    rank_alpha: Option<(usize, f64)>,
    info: &SaveInfo,
    tensors: Vec<(String, &Tensor)>,
) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut dir = BTreeMap::new();
    for (name, t) in tensors {
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        dir.insert(
            name,
            TensorEntry {
                shape: [t.rows(), t.cols()],
                offset,
                length: payload.len() as u64 - offset,
            },
        );
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        kind,
        architecture: architecture.clone(),
        rank: rank_alpha.map(|(r, _)| r),
        alpha: rank_alpha.map(|(_, a)| a),
        phase: info.phase,
        seed: info.seed,
        train_config: info.train_config.clone(),
        tensors: dir,
    };
    let header = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn encode_teacher(model: &VelocityField, info: &SaveInfo) -> Result<Vec<u8>> {
    encode(CheckpointKind::Teacher, model.arch(), None, info, model.named_params())
}

pub fn encode_adapter(adapter: &LoraAdapter, info: &SaveInfo) -> Result<Vec<u8>> {
    encode(
        CheckpointKind::Adapter,
        adapter.target(),
        Some((adapter.rank(), adapter.alpha())),
        info,
        adapter.named_params(),
    )
}

pub fn save_teacher(path: &Path, model: &VelocityField, info: &SaveInfo) -> Result<()> {
    write_atomic(path, &encode_teacher(model, info)?)
}

pub fn save_adapter(path: &Path, adapter: &LoraAdapter, info: &SaveInfo) -> Result<()> {
    write_atomic(path, &encode_adapter(adapter, info)?)
}

/// A validated manifest with every tensor resolved from the payload.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| LoadError::Schema(format!("missing tensor '{name}'")).into())
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(LoadError::Kind {
                expected: kind.to_string(),
                found: self.manifest.kind.to_string(),
            }
            .into());
        }
        Ok(())
    }

    fn reject_leftovers(&self) -> Result<()> {
        match self.tensors.keys().next() {
            Some(name) => Err(LoadError::Schema(format!("unexpected tensor '{name}'")).into()),
            None => Ok(()),
        }
    }

    pub fn into_teacher(mut self) -> Result<VelocityField> {
        self.expect_kind(CheckpointKind::Teacher)?;
        let arch = self.manifest.architecture.clone();
        arch.validate().map_err(|e| LoadError::Schema(e.to_string()))?;
        let mut layers = Vec::new();
        for (i, (out, inp)) in arch.layer_shapes().into_iter().enumerate() {
            let weight = self.take(&format!("layers.{i}.weight"))?;
            let bias = self.take(&format!("layers.{i}.bias"))?;
            if weight.shape() != (out, inp) || bias.shape() != (1, out) {
                return Err(LoadError::Shape(format!(
                    "layer {i}: weight {:?} and bias {:?} do not chain as ({out}, {inp})",
                    weight.shape(),
                    bias.shape()
                ))
                .into());
            }
            layers.push(Linear { weight, bias });
        }
        let cond_table = match arch.num_classes {
            Some(_) => Some(self.take("cond_table")?),
            None => None,
        };
        self.reject_leftovers()?;
        VelocityField::from_parts(arch, layers, cond_table).map_err(|e| LoadError::Shape(e.to_string()).into())
    }

    pub fn into_adapter(mut self) -> Result<LoraAdapter> {
        self.expect_kind(CheckpointKind::Adapter)?;
        let rank = self
            .manifest
            .rank
            .ok_or_else(|| LoadError::Schema("adapter checkpoint has no rank".into()))?;
        let alpha = self
            .manifest
            .alpha
            .ok_or_else(|| LoadError::Schema("adapter checkpoint has no alpha".into()))?;
        let arch = self.manifest.architecture.clone();
        arch.validate().map_err(|e| LoadError::Schema(e.to_string()))?;
        let mut layers = Vec::new();
        for i in 0..arch.layer_shapes().len() {
            let a = self.take(&format!("layers.{i}.A"))?;
            let b = self.take(&format!("layers.{i}.B"))?;
            layers.push(LoraLayer { a, b });
        }
        self.reject_leftovers()?;
        LoraAdapter::from_parts(rank, alpha, arch, layers).map_err(|e| match e {
            Error::AdapterCompat(msg) => LoadError::Shape(msg).into(),
            other => LoadError::Schema(other.to_string()).into(),
        })
    }
}

/// Parses and validates a checkpoint image. Failures map to one
/// [`LoadError`] variant each: version, truncation, shape, schema.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(LoadError::Truncated(format!("{} bytes, header length needs 8", bytes.len())).into());
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let body = &bytes[8..];
    if header_len > body.len() as u64 {
        return Err(LoadError::Truncated(format!("manifest needs {header_len} bytes, {} present", body.len())).into());
    }
    let (header, payload) = body.split_at(header_len as usize);
    let raw: serde_json::Value =
        serde_json::from_slice(header).map_err(|e| LoadError::Schema(format!("manifest is not JSON: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| LoadError::Schema("manifest has no format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(LoadError::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw).map_err(|e| LoadError::Schema(e.to_string()))?;

    let mut tensors = BTreeMap::new();
    for (name, entry) in &manifest.tensors {
        let [rows, cols] = entry.shape;
        let end = entry.offset.checked_add(entry.length);
        if end.is_none_or(|end| end > payload.len() as u64) {
            return Err(LoadError::Truncated(format!(
                "tensor '{name}' spans bytes {}..+{} of a {}-byte payload",
                entry.offset,
                entry.length,
                payload.len()
            ))
            .into());
        }
        if entry.length != (rows * cols * 8) as u64 || entry.offset % 8 != 0 {
            return Err(LoadError::Shape(format!(
                "tensor '{name}' declares shape {rows}x{cols} but {} bytes at offset {}",
                entry.length, entry.offset
            ))
            .into());
        }
        let start = entry.offset as usize;
        let data: Vec<f64> = payload[start..start + entry.length as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(rows, cols, data).map_err(|e| LoadError::Schema(format!("tensor '{name}': {e}")))?;
        tensors.insert(name.clone(), t);
    }
    Ok(Checkpoint { manifest, tensors })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

pub fn load_teacher(path: &Path) -> Result<(VelocityField, CheckpointManifest)> {
    let ckpt = load(path)?;
    let manifest = ckpt.manifest.clone();
    Ok((ckpt.into_teacher()?, manifest))
}

pub fn load_adapter(path: &Path) -> Result<(LoraAdapter, CheckpointManifest)> {
    let ckpt = load(path)?;
    let manifest = ckpt.manifest.clone();
    Ok((ckpt.into_adapter()?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::{LoraInit, LoraSpec};
    use crate::rng::{stream, Purpose};

    fn teacher() -> VelocityField {
        let arch = Architecture {
            hidden: vec![16, 8],
            num_classes: Some(3),
            ..Architecture::default()
        };
        VelocityField::init(arch, &mut stream(1, Purpose::Init, 0)).unwrap()
    }

    fn adapter(base: &VelocityField) -> LoraAdapter {
        let spec = LoraSpec {
            init: LoraInit::GaussianBoth,
            ..LoraSpec::default()
        };
        LoraAdapter::init(base, &spec, &mut stream(1, Purpose::Init, 1)).unwrap()
    }

    fn err_of(bytes: &[u8]) -> LoadError {
        match decode(bytes).and_then(|c| match c.manifest.kind {
            CheckpointKind::Teacher => c.into_teacher().map(|_| ()),
            CheckpointKind::Adapter => c.into_adapter().map(|_| ()),
        }) {
            Err(Error::Load(e)) => e,
            other => panic!("expected a load error, got {other:?}"),
        }
    }

    /// Rewrites the manifest JSON and re-frames the file.
    fn edit_manifest(bytes: &[u8], f: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let mut v: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        f(&mut v);
        let header = serde_json::to_vec(&v).unwrap();
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(&header);
        out.extend_from_slice(&bytes[8 + n..]);
        out
    }

    #[test]
    fn teacher_round_trip_is_bit_exact() {
        let m = teacher();
        let info = SaveInfo {
            seed: 9,
            train_config: Some(TrainConfig::teacher_default()),
            phase: None,
        };
        let back = decode(&encode_teacher(&m, &info).unwrap()).unwrap();
        assert_eq!(back.manifest.seed, 9);
        assert_eq!(back.manifest.train_config, info.train_config);
        assert!(back.into_teacher().unwrap().bit_eq(&m));
    }

    #[test]
    fn adapter_round_trip_through_file() {
        let m = teacher();
        let a = adapter(&m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slow.ckpt");
        let info = SaveInfo {
            seed: 3,
            phase: Some(Phase::Slow),
            ..SaveInfo::default()
        };
        save_adapter(&path, &a, &info).unwrap();
        let (back, manifest) = load_adapter(&path).unwrap();
        assert!(back.bit_eq(&a));
        assert_eq!(manifest.phase, Some(Phase::Slow));
        assert_eq!(
            std::fs::read_dir(dir.path()).unwrap().count(),
            1,
            "no temp files left behind"
        );
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_teacher(&teacher(), &SaveInfo::default()).unwrap();
        assert!(matches!(err_of(&bytes[..bytes.len() - 1]), LoadError::Truncated(_)));
        assert!(matches!(err_of(&bytes[..20]), LoadError::Truncated(_)));
        assert!(matches!(err_of(&bytes[..4]), LoadError::Truncated(_)));
    }

    #[test]
    fn version_mismatch_is_detected() {
        let bytes = encode_teacher(&teacher(), &SaveInfo::default()).unwrap();
        let bad = edit_manifest(&bytes, |v| v["format_version"] = 2.into());
        assert!(matches!(err_of(&bad), LoadError::Version { found: 2, expected: 1 }));
    }

    #[test]
    fn missing_alpha_is_a_schema_error() {
        let m = teacher();
        let bytes = encode_adapter(&adapter(&m), &SaveInfo::default()).unwrap();
        let bad = edit_manifest(&bytes, |v| {
            v.as_object_mut().unwrap().remove("alpha");
        });
        assert!(matches!(err_of(&bad), LoadError::Schema(_)));
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let bytes = encode_teacher(&teacher(), &SaveInfo::default()).unwrap();
        // same byte count, wrong chaining
        let bad = edit_manifest(&bytes, |v| {
            let shape = &mut v["tensors"]["layers.1.weight"]["shape"];
            *shape = serde_json::json!([16, 8]);
        });
        assert!(matches!(err_of(&bad), LoadError::Shape(_)));
        // declared shape disagrees with byte length
        let bad = edit_manifest(&bytes, |v| {
            v["tensors"]["layers.0.bias"]["shape"] = serde_json::json!([1, 15]);
        });
        assert!(matches!(err_of(&bad), LoadError::Shape(_)));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let bytes = encode_teacher(&teacher(), &SaveInfo::default()).unwrap();
        assert!(matches!(
            decode(&bytes).unwrap().into_adapter(),
            Err(Error::Load(LoadError::Kind { .. }))
        ));
    }
}
