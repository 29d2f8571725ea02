//! Binary model checkpoints.
//!
//! Layout: the 8-byte magic `FSFCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor listed in the header as little-endian `f64` values in header
//! order. BN running statistics are stored alongside the parameters so a
//! restored model produces bitwise-identical eval-mode outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneSpec;
use crate::classifier::HeadKind;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"FSFCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub backbone: BackboneSpec,
    pub head: HeadKind,
    pub class_ids: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance (resolved configuration, input hashes, ...).
    pub metadata: serde_json::Value,
}

fn running_stat_name(gamma_path: &str, stat: &str) -> String {
    let base = gamma_path.strip_suffix(".gamma").unwrap_or(gamma_path);
    format!("{base}.{stat}")
}

/// All tensors in a fixed order: parameters, then running statistics.
fn collect_tensors(model: &Model) -> Vec<(String, ArrayD<f64>)> {
    let mut out: Vec<(String, ArrayD<f64>)> = model
        .params()
        .into_iter()
        .map(|p| (p.tag.layer_path.clone(), p.value.clone()))
        .collect();
    for bn in model.backbone.batch_norms() {
        let g = &bn.gamma.tag.layer_path;
        out.push((running_stat_name(g, "running_mean"), bn.running_mean.clone().into_dyn()));
        out.push((running_stat_name(g, "running_var"), bn.running_var.clone().into_dyn()));
    }
    out
}

pub fn to_bytes(model: &Model, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let tensors = collect_tensors(model);
    let header = CheckpointHeader {
        backbone: model.backbone.spec().clone(),
        head: model.head.kind(),
        class_ids: model.head.class_ids().to_vec(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + tensors.iter().map(|(_, t)| 8 * t.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<(Model, CheckpointHeader)> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut bytes, len)?)?;

    let mut stored = BTreeMap::new();
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let raw = take(&mut bytes, 8 * count)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        stored.insert(entry.name.clone(), t);
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }

    let mut model = Model::new(&header.backbone, header.head, header.class_ids.clone(), 0)?;
    let mut fetch = |name: &str, shape: &[usize]| -> Result<ArrayD<f64>> {
        let t = stored
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    for p in model.params_mut() {
        let shape = p.value.shape().to_vec();
        p.value = fetch(&p.tag.layer_path, &shape)?;
    }
    for bn in model.backbone.batch_norms_mut() {
        let g = bn.gamma.tag.layer_path.clone();
        let c = [bn.channels()];
        bn.running_mean = fetch(&running_stat_name(&g, "running_mean"), &c)?
            .into_dimensionality()
            .expect("1-d");
        bn.running_var = fetch(&running_stat_name(&g, "running_var"), &c)?
            .into_dimensionality()
            .expect("1-d");
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok((model, header))
}

pub fn save(model: &Model, path: &Path, metadata: serde_json::Value) -> Result<()> {
    let bytes = to_bytes(model, metadata)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Architecture;
    use crate::nn::BnMode;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    #[test]
    fn roundtrip_preserves_outputs_bitwise() {
        let mut m = Model::new(
            &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
            HeadKind::Normalized,
            vec!["a".into(), "b".into(), "c".into()],
            4,
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Array4::from_shape_simple_fn((4, 3, 32, 32), || rng.random_range(-1.0..1.0));
        // Move running statistics away from their initial values.
        m.backbone.forward(x.clone(), BnMode::Batch).unwrap();
        m.clear_cache();
        let bytes = to_bytes(&m, serde_json::json!({"note": "t"})).unwrap();
        let (r, header) = from_bytes(&bytes).unwrap();
        assert_eq!(header.metadata["note"], "t");
        assert_eq!(m.logits(&x).unwrap(), r.logits(&x).unwrap());
        assert_eq!(to_bytes(&r, serde_json::json!({"note": "t"})).unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = Model::new(
            &BackboneSpec::new(Architecture::ReferenceConvnet, 32),
            HeadKind::Simple,
            vec!["a".into(), "b".into()],
            0,
        )
        .unwrap();
        let bytes = to_bytes(&m, serde_json::Value::Null).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&[]).is_err());
    }
}
