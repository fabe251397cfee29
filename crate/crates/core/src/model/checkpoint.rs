//! Versioned binary checkpoint.
//!
//! Layout (little-endian): `"TDTICKPT"`, `u32` version, `u32` config byte
//! length, config as JSON, `u32` layer count, then per layer `u32` rows,
//! `u32` cols, `u8` activation, weight values and bias values as `f64`.
//! A `<path>.json` sidecar carries the config for human inspection.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use super::config::ModelConfig;
use super::state::ModelState;
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Tensor2};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"TDTICKPT";
pub const VERSION: u32 = 1;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Sigmoid => 2,
        Activation::Tanh => 3,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    Ok(match code {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::Sigmoid,
        3 => Activation::Tanh,
        other => return Err(Error::Format(format!("unknown activation code {other}"))),
    })
}

pub fn encode<T: Scalar>(state: &ModelState<T>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&state.config)?;
    let mut out = Vec::with_capacity(16 + config.len() + state.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(state.layers().len() as u32).to_le_bytes());
    for layer in state.layers() {
        out.extend_from_slice(&(layer.weight.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.weight.cols() as u32).to_le_bytes());
        out.push(activation_code(layer.activation));
        for v in layer.weight.as_slice().iter().chain(layer.bias.as_slice()) {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<T: Scalar>(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<T>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated checkpoint tensor".into()))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect())
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint: bad magic".into()));
    }
    let mut r = Cursor::new(bytes);
    r.set_position(8);
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut config = vec![0u8; len];
    r.read_exact(&mut config)
        .map_err(|_| Error::Format("truncated checkpoint config".into()))?;
    let config: ModelConfig = serde_json::from_slice(&config)?;
    let count = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for slot in 0..count {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut code = [0u8; 1];
        r.read_exact(&mut code)
            .map_err(|_| Error::Format("truncated checkpoint layer".into()))?;
        let activation = activation_from(code[0])?;
        let weight = Tensor2::from_vec(rows, cols, read_f64s(&mut r, rows * cols)?)?;
        let bias = Tensor2::from_vec(rows, 1, read_f64s(&mut r, rows)?)?;
        layers.push(DenseLayer {
            weight,
            bias,
            activation,
            slot,
        });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    ModelState::from_layers(config, layers)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint<T: Scalar>(state: &ModelState<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(state)?)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&state.config)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelState<T>> {
    decode(&fs::read(path)?)
}
