//! Network checkpoint container.
//!
//! ```text
//! "GSRSDF01"                 8-byte magic
//! header_len: u32 LE
//! header: JSON, header_len bytes
//! params: param_count x f32 LE, layer by layer (weights then biases)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{LayerShape, NetworkConfig, SdfNetwork};
use crate::error::{Error, Result};
use crate::Vec3;

pub const MAGIC: &[u8; 8] = b"GSRSDF01";
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: NetworkConfig,
    pub center: [f64; 3],
    pub half_extent: f64,
    pub layers: Vec<LayerShape>,
    pub param_count: usize,
    pub dtype: String,
    pub weight_layout: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn header_for(net: &SdfNetwork) -> CheckpointHeader {
    let c = net.center();
    CheckpointHeader {
        format_version: 1,
        config: net.config().clone(),
        center: [c.x, c.y, c.z],
        half_extent: net.half_extent(),
        layers: net.layers().to_vec(),
        param_count: net.num_params(),
        dtype: "f32le".into(),
        weight_layout: "column_major".into(),
    }
}

pub fn write_checkpoint<W: Write>(net: &SdfNetwork, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&header_for(net))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(net.num_params() * 4);
    for p in net.params() {
        buf.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<SdfNetwork> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("checkpoint truncated before magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("not a network checkpoint (bad magic)"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| corrupt("checkpoint truncated in header length"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_HEADER {
        return Err(corrupt(format!("header length {len} is implausible")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)
        .map_err(|_| corrupt("checkpoint truncated in header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&header)
        .map_err(|e| corrupt(format!("checkpoint header is not valid JSON: {e}")))?;
    if header.format_version != 1
        || header.dtype != "f32le"
        || header.weight_layout != "column_major"
    {
        return Err(corrupt("unsupported checkpoint version or encoding"));
    }
    let mut net = SdfNetwork::with_frame(
        header.config.clone(),
        Vec3::from(header.center),
        header.half_extent,
    )
    .map_err(|e| {
        corrupt(format!(
            "checkpoint header describes an invalid network: {e}"
        ))
    })?;
    if net.layers() != header.layers.as_slice() || net.num_params() != header.param_count {
        return Err(corrupt("checkpoint layer table disagrees with its config"));
    }
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    if data.len() != header.param_count * 4 {
        return Err(corrupt(format!(
            "expected {} parameter bytes, found {}",
            header.param_count * 4,
            data.len()
        )));
    }
    let params: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(corrupt("checkpoint contains non-finite parameters"));
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn save(net: &SdfNetwork, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SdfNetwork> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
