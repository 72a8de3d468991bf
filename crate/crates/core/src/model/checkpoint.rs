//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! b"SGCK" | u32 version | u32 len, config text | u32 tensor count
//! per tensor: u32 len, name | u32 ndim, u32 dims... | f32 values
//! ```
//!
//! The config text is `key = value` lines describing the network shape.
//! Running normalization statistics are stored like any other tensor.

use std::path::Path;

use super::config::{NetworkConfig, Normalization};
use super::network::{build_network, Model};
use crate::error::{Error, Result};
use crate::pnm::{read_bytes, write_bytes};
use crate::rng::seeded_rng;

const MAGIC: &[u8; 4] = b"SGCK";
const VERSION: u32 = 1;

fn config_text(cfg: &NetworkConfig) -> String {
    let classes: Vec<String> = cfg.task_classes.iter().map(|c| c.to_string()).collect();
    format!(
        "in_channels = {}\nlevels = {}\nbase_channels = {}\ntask_classes = {}\nmultitask_blocks = {}\nnormalization = {}\nleaky_slope = {}\n",
        cfg.in_channels,
        cfg.levels,
        cfg.base_channels,
        classes.join(","),
        cfg.multitask_blocks,
        cfg.normalization,
        cfg.leaky_slope,
    )
}

fn parse_config(text: &str, path: &Path) -> Result<NetworkConfig> {
    let bad = |reason: String| Error::Format {
        what: "checkpoint",
        path: path.to_path_buf(),
        reason,
    };
    let mut cfg = NetworkConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed config line `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{key}: {e}")));
        match key {
            "in_channels" => cfg.in_channels = int(value)?,
            "levels" => cfg.levels = int(value)?,
            "base_channels" => cfg.base_channels = int(value)?,
            "multitask_blocks" => cfg.multitask_blocks = int(value)?,
            "task_classes" => {
                cfg.task_classes = value.split(',').map(|v| int(v.trim())).collect::<Result<_>>()?
            }
            "normalization" => {
                cfg.normalization = value.parse::<Normalization>().map_err(bad)?
            }
            "leaky_slope" => {
                cfg.leaky_slope = value.parse().map_err(|e| bad(format!("{key}: {e}")))?
            }
            other => return Err(bad(format!("unknown config key `{other}`"))),
        }
    }
    Ok(cfg)
}

pub fn encode_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(MAGIC);
    put(&mut out, VERSION);
    let text = config_text(model.config());
    put(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    put(&mut out, model.params.params.len() as u32);
    for p in &model.params.params {
        put(&mut out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put(&mut out, p.shape.len() as u32);
        for &d in &p.shape {
            put(&mut out, d as u32);
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.fail("truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?.to_vec();
        String::from_utf8(bytes).map_err(|_| self.fail("invalid utf-8"))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.fail("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let cfg = parse_config(&r.string()?, path)?;
    let mut model = build_network::<f32>(&cfg, &mut seeded_rng(0))?;
    let count = r.u32()? as usize;
    if count != model.params.params.len() {
        return Err(r.fail(format!(
            "{count} tensors, network has {}",
            model.params.params.len()
        )));
    }
    for i in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let p = &model.params.params[i];
        if p.name != name || p.shape != shape {
            return Err(r.fail(format!(
                "tensor {i} is `{name}` {shape:?}, expected `{}` {:?}",
                p.name, p.shape
            )));
        }
        let len = p.value.len();
        let raw = r.take(len * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.fail(format!("non-finite values in `{name}`")));
        }
        model.params.params[i].value = values;
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    write_bytes(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    decode_checkpoint(&read_bytes(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restores_values_and_config() {
        let cfg = NetworkConfig {
            levels: 2,
            base_channels: 2,
            task_classes: vec![2, 3],
            multitask_blocks: 1,
            normalization: Normalization::None,
            leaky_slope: 0.2,
            ..Default::default()
        };
        let mut model = build_network::<f32>(&cfg, &mut seeded_rng(9)).unwrap();
        model.params.params[1].value[0] = 0.25;
        let bytes = encode_checkpoint(&model);
        let back = decode_checkpoint(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.config(), model.config());
        for (a, b) in back.params.params.iter().zip(&model.params.params) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn rejects_corruption() {
        let cfg = NetworkConfig {
            levels: 2,
            base_channels: 2,
            task_classes: vec![2, 2],
            multitask_blocks: 1,
            ..Default::default()
        };
        let model = build_network::<f32>(&cfg, &mut seeded_rng(1)).unwrap();
        let bytes = encode_checkpoint(&model);
        let p = Path::new("x");
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad, p).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_checkpoint(&long, p).is_err());
    }
}
