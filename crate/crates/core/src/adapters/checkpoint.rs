//! Adapter checkpoints: `"VDTA"`, a u32 LE header length, a JSON header, then
//! each tensor as little-endian `f32` in the order the header lists them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpAdapterParams, Parameters, SelfAttentionParams};
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VDTA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    SelfAttention,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: AdapterKind,
    pub dim: usize,
    /// Attention heads, or the MLP hidden width.
    pub heads: usize,
    pub seed: u64,
    pub beta: f64,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterParams {
    SelfAttention(SelfAttentionParams),
    Mlp(MlpAdapterParams),
}

impl AdapterParams {
    fn as_parameters(&self) -> &dyn Parameters {
        match self {
            AdapterParams::SelfAttention(p) => p,
            AdapterParams::Mlp(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: AdapterParams,
}

impl Checkpoint {
    pub fn attention(params: SelfAttentionParams, seed: u64, beta: f64) -> Self {
        let header = header_for(AdapterKind::SelfAttention, params.dim, params.heads, seed, beta, &params);
        Self {
            header,
            params: AdapterParams::SelfAttention(params),
        }
    }

    pub fn mlp(params: MlpAdapterParams, seed: u64, alpha: f64) -> Self {
        let header = header_for(AdapterKind::Mlp, params.dim, params.hidden, seed, alpha, &params);
        Self {
            header,
            params: AdapterParams::Mlp(params),
        }
    }

    pub fn into_attention(self) -> Result<(SelfAttentionParams, f64)> {
        match self.params {
            AdapterParams::SelfAttention(p) => Ok((p, self.header.beta)),
            AdapterParams::Mlp(_) => Err(Error::InvalidInput(
                "checkpoint holds an MLP adapter, not self-attention".into(),
            )),
        }
    }

    /// Tensors are stored as `f32`; values are rounded on encode.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.as_parameters().tensors() {
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::TruncatedPayload {
                expected: 8,
                found: bytes.len() as u64,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: CHECKPOINT_MAGIC,
            });
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() < header_len {
            return Err(Error::TruncatedPayload {
                expected: header_len as u64,
                found: body.len() as u64,
            });
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])?;
        let mut params = match header.kind {
            AdapterKind::SelfAttention => {
                AdapterParams::SelfAttention(SelfAttentionParams::zeros(header.dim, header.heads)?)
            }
            AdapterKind::Mlp => {
                if header.heads == 0 || !header.dim.is_multiple_of(header.heads) {
                    return Err(Error::InvalidInput("bad MLP hidden width".into()));
                }
                AdapterParams::Mlp(MlpAdapterParams::zeros(header.dim, header.dim / header.heads)?)
            }
        };
        let payload = &body[header_len..];
        let expected: usize = header.tensors.iter().map(|t| t.len * 4).sum();
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected: expected as u64,
                found: payload.len() as u64,
            });
        }
        if payload.len() > expected {
            return Err(Error::TrailingBytes((payload.len() - expected) as u64));
        }
        let mut offset = 0;
        let tensors = match &mut params {
            AdapterParams::SelfAttention(p) => p.tensors_mut(),
            AdapterParams::Mlp(p) => p.tensors_mut(),
        };
        if tensors.len() != header.tensors.len() {
            return Err(Error::InvalidInput("tensor count does not match adapter kind".into()));
        }
        for ((name, dst), info) in tensors.into_iter().zip(&header.tensors) {
            if name != info.name || dst.len() != info.len {
                return Err(Error::InvalidInput(format!(
                    "tensor {} ({}) does not match expected {name} ({})",
                    info.name,
                    info.len,
                    dst.len()
                )));
            }
            for v in dst.iter_mut() {
                let raw: [u8; 4] = payload[offset..offset + 4].try_into().unwrap();
                *v = f32::from_le_bytes(raw) as f64;
                offset += 4;
            }
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn header_for(
    kind: AdapterKind,
    dim: usize,
    heads: usize,
    seed: u64,
    beta: f64,
    params: &dyn Parameters,
) -> CheckpointHeader {
    CheckpointHeader {
        kind,
        dim,
        heads,
        seed,
        beta,
        tensors: params
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorInfo {
                name: name.to_string(),
                len: t.len(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::AdapterConfig;

    #[test]
    fn attention_round_trip_at_f32_precision() {
        let cfg = AdapterConfig {
            seed: 5,
            heads: 2,
            ..Default::default()
        };
        let mut p = SelfAttentionParams::init(8, &cfg).unwrap();
        // f32-representable values survive exactly
        for (_, t) in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        let ckpt = Checkpoint::attention(p.clone(), 5, 0.3);
        let back = Checkpoint::decode(&ckpt.encode().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.into_attention().unwrap(), (p, 0.3));
    }

    #[test]
    fn mlp_round_trip() {
        let p = MlpAdapterParams::zeros(8, 4).unwrap();
        let ckpt = Checkpoint::mlp(p, 1, 0.2);
        let back = Checkpoint::decode(&ckpt.encode().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        assert!(back.into_attention().is_err());
    }

    #[test]
    fn rejects_corruption() {
        let ckpt = Checkpoint::attention(SelfAttentionParams::zeros(4, 1).unwrap(), 0, 0.5);
        let bytes = ckpt.encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload { .. })
        ));
    }
}
