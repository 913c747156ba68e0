//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian `u64` giving the header length `N`, then
//! `N` bytes of UTF-8 JSON, then every parameter as a little-endian `f64`
//! in header order. The header looks like
//!
//! ```text
//! {"format":"coca-params","version":1,"net":{...NetConfig...},
//!  "tensors":[{"name":"backbone.0.weight","shape":[784,100]}, ...]}
//! ```
//!
//! Weight tensors are stored row-major with shape `[fan_in, fan_out]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetworkParams};
use crate::error::{CocaError, Result};

const FORMAT: &str = "coca-params";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    net: NetConfig,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_checkpoint(params: &NetworkParams) -> Result<Vec<u8>> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        net: params.config.clone(),
        tensors: params
            .tensor_names()
            .into_iter()
            .zip(params.tensor_shapes())
            .map(|(name, shape)| TensorHeader { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + params.num_params() * 8);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<NetworkParams> {
    let truncated = |detail: &str| CocaError::TruncatedFile {
        path: origin.to_path_buf(),
        detail: detail.into(),
    };
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| truncated("missing header length"))?
        .try_into()
        .expect("8 bytes");
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(8..8 + header_len)
        .ok_or_else(|| truncated("header shorter than declared"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(CocaError::config(
            "checkpoint.format",
            format!("unsupported checkpoint {} v{}", header.format, header.version),
        ));
    }
    let mut params = NetworkParams::zeros(&header.net);
    let expected: Vec<TensorHeader> = params
        .tensor_names()
        .into_iter()
        .zip(params.tensor_shapes())
        .map(|(name, shape)| TensorHeader { name, shape })
        .collect();
    if expected != header.tensors {
        return Err(CocaError::shape(
            "tensor list implied by the net config",
            "different tensor list in checkpoint header",
        ));
    }
    let mut body = &bytes[8 + header_len..];
    if body.len() != params.num_params() * 8 {
        return Err(truncated(&format!(
            "expected {} parameter bytes, found {}",
            params.num_params() * 8,
            body.len()
        )));
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            let (chunk, rest) = body.split_at(8);
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            body = rest;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?).map_err(|e| CocaError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| CocaError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Rng;

    #[test]
    fn checkpoint_roundtrip_preserves_bits() {
        let cfg = NetConfig {
            input_dim: 4,
            backbone_hidden: vec![3],
            classes: 2,
            aux_hidden: vec![2],
            proxy_classes: 16,
            projector_hidden: vec![2],
            embed_dim: 2,
        };
        let params = NetworkParams::init(&cfg, &mut Rng::new(1));
        let bytes = encode_checkpoint(&params).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(params.tensors(), back.tensors());
        assert_eq!(params.config, back.config);

        let err = decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("mem")).unwrap_err();
        assert!(matches!(err, CocaError::TruncatedFile { .. }));
    }
}
