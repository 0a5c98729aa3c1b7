//! Checkpoint format: one JSON header line (config, vocabulary hash, step,
//! seed, tensor manifest) followed by a raw little-endian `f32` blob holding
//! every tensor in declaration order. Optimizer state rides along as extra
//! named tensors so a resumed run is bit-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, Model, ModelConfig, ModelError, Result};
use crate::real::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the `f32` blob.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub seed: u64,
    pub num_token_id: Option<u32>,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &Model<T>,
    step: u64,
    seed: u64,
    extras: &[ExtraTensor],
) -> Result<()> {
    let mut manifest = Vec::new();
    let mut offset = 0usize;
    for p in model.params() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.numel();
    }
    for e in extras {
        manifest.push(ManifestEntry {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset,
        });
        offset += e.data.len();
    }
    let header = CheckpointHeader {
        config: model.config.clone(),
        vocab_hash: model.vocab_hash.clone(),
        step,
        seed,
        num_token_id: model.num_token_id,
        manifest,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for p in model.params() {
        for x in p.value.data() {
            w.write_all(&(x.to_f64_() as f32).to_le_bytes())?;
        }
    }
    for e in extras {
        for x in &e.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(
    path: &Path,
) -> Result<(Model<T>, CheckpointHeader, Vec<ExtraTensor>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    r.read_line(&mut header_line)?;
    let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() % 4 != 0 {
        return Err(ModelError::BadCheckpoint("blob not f32-aligned".into()));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut model: Model<T> = build_model(
        &header.config,
        header.config.vocab_size,
        &header.vocab_hash,
        header.num_token_id,
        header.seed,
    )?;
    let mut extras = Vec::new();
    let mut param_cursor = 0usize;
    for entry in &header.manifest {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n;
        if end > floats.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "tensor {} overruns blob",
                entry.name
            )));
        }
        let slice = &floats[entry.offset..end];
        if param_cursor < model.params().len()
            && model.params()[param_cursor].name == entry.name
        {
            let p = &mut model.params_mut()[param_cursor];
            if p.value.shape() != entry.shape.as_slice() {
                return Err(ModelError::BadCheckpoint(format!(
                    "tensor {} shape {:?} vs expected {:?}",
                    entry.name,
                    entry.shape,
                    p.value.shape()
                )));
            }
            for (dst, &src) in p.value.data_mut().iter_mut().zip(slice) {
                *dst = T::from_f64(src as f64);
            }
            param_cursor += 1;
        } else {
            extras.push(ExtraTensor {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                data: slice.to_vec(),
            });
        }
    }
    if param_cursor != model.params().len() {
        return Err(ModelError::BadCheckpoint(
            "manifest missing model tensors".into(),
        ));
    }
    Ok((model, header, extras))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_config;

    #[test]
    fn roundtrip_preserves_params_and_extras() {
        let cfg = tiny_config();
        let model: Model<f32> = build_model(&cfg, 33, "vh", Some(2), 11).unwrap();
        let extras = vec![ExtraTensor {
            name: "opt.m.embed.token".into(),
            shape: vec![3],
            data: vec![0.5, -1.5, 2.25],
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&path, &model, 42, 11, &extras).unwrap();
        let (back, header, back_extras) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(header.step, 42);
        assert_eq!(header.vocab_hash, "vh");
        assert_eq!(back.num_token_id, Some(2));
        for (a, b) in model.params().iter().zip(back.params()) {
            assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
            assert_eq!(a.decay, b.decay);
        }
        assert_eq!(back_extras, extras);
    }
}
