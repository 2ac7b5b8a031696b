//! Bit-exact parameter checkpoints: a TOML header describing the network,
//! a `---` line, then the parameters as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkParams, NetworkSpec, NeuralError};

const SEPARATOR: &[u8] = b"\n---\n";
const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    param_count: usize,
    network: NetworkSpec,
    #[serde(default)]
    extra: toml::Table,
}

/// Serialises parameters plus free-form metadata.
pub fn encode(params: &NetworkParams, extra: toml::Table) -> Result<Vec<u8>, NeuralError> {
    let header = Header {
        format: FORMAT,
        param_count: params.as_flat().len(),
        network: params.spec.clone(),
        extra,
    };
    let text = toml::to_string(&header).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    let mut out = text.into_bytes();
    out.extend_from_slice(SEPARATOR);
    for v in params.as_flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkParams, toml::Table), NeuralError> {
    let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
    let split = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| bad("missing header separator"))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    if header.format != FORMAT {
        return Err(bad(&format!("unsupported format {}", header.format)));
    }
    let body = &bytes[split + SEPARATOR.len()..];
    if body.len() != header.param_count * 8 {
        return Err(bad("parameter block length does not match header"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    header.network.validate()?;
    Ok((NetworkParams::from_flat(header.network, values)?, header.extra))
}

pub fn save(path: &Path, params: &NetworkParams, extra: toml::Table) -> Result<(), NeuralError> {
    let bytes = encode(params, extra)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(NetworkParams, toml::Table), NeuralError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
