//! `IPM1` checkpoints: 4-byte magic, u32 little-endian header length, a JSON
//! header, then every parameter as little-endian f32 in header order.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::models::{Model, ModelConfig, TargetScaling};
use crate::nn::{Network, ParamMap, Tensor};

pub const MAGIC: &[u8; 4] = b"IPM1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    #[serde(default)]
    pub target: TargetScaling,
    pub params: Vec<ParamEntry>,
}

pub fn save_checkpoint(model: &Model) -> Vec<u8> {
    let mut offset = 0;
    let params = model
        .network
        .params()
        .iter()
        .map(|(name, t)| {
            let e = ParamEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += t.len() * 4;
            e
        })
        .collect();
    let header = CheckpointHeader { config: model.config.clone(), target: model.target, params };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.network.params().values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8]), TrainError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TrainError::BadMagic);
    }
    let len_bytes: [u8; 4] = bytes
        .get(4..8)
        .and_then(|b| b.try_into().ok())
        .ok_or(TrainError::TruncatedPayload { expected: 8, found: bytes.len() })?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8 + header_len).ok_or(TrainError::TruncatedPayload {
        expected: 8 + header_len,
        found: bytes.len(),
    })?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    Ok((header, &bytes[8 + header_len..]))
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model, TrainError> {
    let (header, payload) = read_header(bytes)?;
    header.config.validate()?;
    let mut network: Network<f32> = Network::new(
        [header.config.input_size, header.config.input_size, 3],
        header.config.layers(),
    )?;
    let expected_shapes: Vec<(&String, &[usize])> =
        network.params().iter().map(|(n, t)| (n, t.shape())).collect();
    if expected_shapes.len() != header.params.len() {
        return Err(TrainError::ShapeHeaderMismatch(format!(
            "header lists {} tensors, config implies {}",
            header.params.len(),
            expected_shapes.len()
        )));
    }
    let mut offset = 0;
    for (entry, (name, shape)) in header.params.iter().zip(&expected_shapes) {
        if &entry.name != *name || entry.shape != *shape || entry.offset != offset {
            return Err(TrainError::ShapeHeaderMismatch(format!(
                "`{}` {:?} at {}",
                entry.name, entry.shape, entry.offset
            )));
        }
        offset += entry.shape.iter().product::<usize>() * 4;
    }
    if payload.len() < offset {
        return Err(TrainError::TruncatedPayload { expected: offset, found: payload.len() });
    }
    if payload.len() > offset {
        return Err(TrainError::ShapeHeaderMismatch(format!(
            "{} trailing payload bytes",
            payload.len() - offset
        )));
    }
    let mut params = ParamMap::new();
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let data = payload[entry.offset..entry.offset + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    network.set_params(params)?;
    Ok(Model { config: header.config, target: header.target, network })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, Head};

    fn model() -> Model {
        let cfg = ModelConfig {
            input_size: 16,
            base_width: 4,
            blocks: 2,
            dense_units: 8,
            head: Head::Decile10,
            seed: 9,
            ..Default::default()
        };
        let mut m = build_model(&cfg).unwrap();
        m.target = TargetScaling { offset: 23.24, scale: 1.0 / 3.0 };
        m
    }

    #[test]
    fn save_load_save_is_identical() {
        let m = model();
        let bytes = save_checkpoint(&m);
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn corrupted_inputs() {
        let mut bytes = save_checkpoint(&model());
        let truncated = &bytes[..bytes.len() - 4];
        assert!(matches!(load_checkpoint(truncated), Err(TrainError::TruncatedPayload { .. })));
        bytes[0] ^= 0xFF;
        assert!(matches!(load_checkpoint(&bytes), Err(TrainError::BadMagic)));
        assert!(matches!(load_checkpoint(b"IP"), Err(TrainError::BadMagic)));
    }

    #[test]
    fn header_shape_disagreement() {
        let m = model();
        let bytes = save_checkpoint(&m);
        let (mut header, payload) = read_header(&bytes).unwrap();
        header.params[0].shape[0] += 1;
        let json = serde_json::to_vec(&header).unwrap();
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(json.len() as u32).to_le_bytes());
        forged.extend_from_slice(&json);
        forged.extend_from_slice(payload);
        assert!(matches!(load_checkpoint(&forged), Err(TrainError::ShapeHeaderMismatch(_))));
    }
}
