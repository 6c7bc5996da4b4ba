//! Versioned binary checkpoint; the layout is described in `docs/formats.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{FlowConfig, FlowParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"FLOWCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

/// What a flow was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    /// Noise model at the training scale.
    pub noise: Option<NoiseSpec>,
    pub snr_db: Option<f64>,
    pub n_tx: Option<usize>,
    pub train_samples: usize,
    pub holdout_samples: usize,
    pub epochs: usize,
    pub final_holdout_nll: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FlowParams,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// In `f64` elements from the start of the data section.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: FlowConfig,
    actnorm_initialized: bool,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let params = &ckpt.params;
    let mut offset = 0;
    let tensors = params
        .tensor_names()
        .into_iter()
        .zip(params.tensors())
        .map(|(name, t)| {
            let e = TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
            };
            offset += t.len();
            e
        })
        .collect();
    let header = Header {
        config: params.config,
        actnorm_initialized: params.actnorm_initialized,
        metadata: ckpt.metadata.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::config(format!("checkpoint header: {e}")))?;
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for t in params.tensors() {
        for v in t.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let fmt = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < PREAMBLE {
        return Err(fmt(bytes.len(), "truncated checkpoint preamble".into()));
    }
    if bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt(0, "not a flow checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fmt(
            8,
            format!("incompatible checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"),
        ));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(fmt(bytes.len(), format!("truncated header (expected {header_len} bytes)")));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..data_start])
        .map_err(|e| fmt(PREAMBLE, format!("bad header: {e}")))?;

    let template = FlowParams::new(header.config, 0).map_err(|e| fmt(PREAMBLE, e.to_string()))?;
    let names = template.tensor_names();
    let shapes: Vec<Vec<usize>> = template.tensors().iter().map(|t| t.shape().to_vec()).collect();
    if header.tensors.len() != names.len() {
        return Err(fmt(
            PREAMBLE,
            format!("{} tensors listed, config needs {}", header.tensors.len(), names.len()),
        ));
    }
    let data = &bytes[data_start..];
    let mut tensors = Vec::with_capacity(names.len());
    let mut expected_offset = 0;
    for ((entry, name), shape) in header.tensors.iter().zip(&names).zip(&shapes) {
        if &entry.name != name || &entry.shape != shape || entry.offset != expected_offset {
            return Err(fmt(
                PREAMBLE,
                format!("tensor directory entry {} does not match the config", entry.name),
            ));
        }
        let len: usize = shape.iter().product();
        let (start, end) = (entry.offset * 8, (entry.offset + len) * 8);
        if end > data.len() {
            return Err(fmt(data_start + data.len(), format!("data for {name} is truncated")));
        }
        let vals = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape.clone(), vals)?);
        expected_offset += len;
    }
    if data.len() != expected_offset * 8 {
        return Err(fmt(
            data_start + expected_offset * 8,
            format!("{} trailing bytes", data.len() - expected_offset * 8),
        ));
    }
    let params = FlowParams::from_tensors(header.config, tensors, header.actnorm_initialized)?;
    Ok(Checkpoint {
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = FlowParams::new(FlowConfig::new(2), 5).unwrap();
        for (i, v) in p.latent_mean.values_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64 + 1e-17;
        }
        Checkpoint {
            params: p,
            metadata: TrainingMetadata {
                noise: Some(NoiseSpec::Gaussian { sigma: 0.25 }),
                snr_db: Some(15.0),
                n_tx: Some(2),
                train_samples: 100,
                holdout_samples: 10,
                epochs: 3,
                final_holdout_nll: Some(1.234_567_890_123_456_7),
                seed: 9,
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        write_checkpoint(&c, &mut buf).unwrap();
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), c);
    }

    #[test]
    fn truncation_and_version_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&sample(), &mut buf).unwrap();
        for cut in [3, 20, buf.len() - 4] {
            assert!(matches!(read_checkpoint(&buf[..cut]), Err(Error::Format { .. })));
        }
        let mut bumped = buf.clone();
        bumped[8] += 1;
        match read_checkpoint(&bumped[..]) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 8);
                assert!(message.contains("version"));
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
