//! Checkpoint layout: u64 LE header length, JSON header
//! `{config, tensors: [{name, shape, offset}]}`, then all parameters as f64 LE.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ConvNet, NetConfig, ParamSpec};
use super::VelocityModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: NetConfig,
    pub tensors: Vec<ParamSpec>,
}

pub fn to_bytes(net: &ConvNet) -> Vec<u8> {
    let header = CheckpointHeader {
        config: net.config().clone(),
        tensors: net.specs().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(8 + json.len() + net.params().len() * 8);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ConvNet> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 8 {
        return Err(bad("truncated checkpoint".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..).unwrap_or_default();
    if hlen > body.len() {
        return Err(bad("header length exceeds file".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen]).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let data = &body[hlen..];
    if data.len() % 8 != 0 {
        return Err(bad("parameter block is not a whole number of f64".into()));
    }
    let params: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let net = ConvNet::from_parts(header.config, params)?;
    if net.specs() != header.tensors.as_slice() {
        return Err(bad("tensor table does not match the network layout".into()));
    }
    Ok(net)
}

pub fn save(path: &Path, net: &ConvNet) -> Result<()> {
    std::fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ConvNet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
