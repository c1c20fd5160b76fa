//! Binary tensor container shared by checkpoints and feature caches.
//!
//! ```text
//! "GPL1"                         4 bytes magic
//! header_len                     u32 little-endian
//! header                         UTF-8, one entry per line:
//!                                  "@key value..."  metadata
//!                                  "name d0 d1 ..." tensor, in blob order
//! blobs                          f32 little-endian, row-major, header order
//! ```
//!
//! A file must end exactly after the last blob.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::NetConfig;
use super::params::{Gradients, ModelParams, PARAM_NAMES};
use crate::error::{GaitError, Result};
use crate::layers::{ConvLayer, FcLayer, LrnParams};
use crate::seqpool::PoolingMode;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GPL1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.starts_with('@') && !name.chars().any(char::is_whitespace)
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| GaitError::Format(format!("missing '@{key}' header entry")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            if !valid_name(k) || v.contains('\n') {
                return Err(GaitError::invalid(format!("bad metadata entry '{k}'")));
            }
            header.push_str(&format!("@{k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            if !valid_name(name) {
                return Err(GaitError::invalid(format!("bad tensor name '{name}'")));
            }
            header.push_str(name);
            for d in t.shape() {
                header.push_str(&format!(" {d}"));
            }
            header.push('\n');
        }
        let header_len = u32::try_from(header.len()).map_err(|_| GaitError::invalid("header too large"))?;
        let blob_len: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + header.len() + blob_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(GaitError::Format("bad magic; expected GPL1".into()));
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| GaitError::Format("truncated header".into()))?;
        let header = std::str::from_utf8(&bytes[8..header_end])
            .map_err(|_| GaitError::Format("header is not UTF-8".into()))?;

        let mut c = Container::default();
        let mut shapes = Vec::new();
        for line in header.lines().filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('@') {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                c.meta.push((k.to_string(), v.to_string()));
                continue;
            }
            let mut parts = line.split(' ');
            let name = parts.next().unwrap_or_default().to_string();
            let dims = parts
                .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                .collect::<Option<Vec<_>>>()
                .filter(|d| !d.is_empty())
                .ok_or_else(|| GaitError::Format(format!("bad shape line '{line}'")))?;
            shapes.push((name, dims));
        }

        let mut offset = header_end;
        for (name, dims) in shapes {
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| GaitError::Format(format!("tensor '{name}' too large")))?;
            let end = n
                .checked_mul(4)
                .and_then(|b| offset.checked_add(b))
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| GaitError::Format(format!("file truncated inside tensor '{name}'")))?;
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            c.tensors.push((name, Tensor::new(&dims, data)?));
            offset = end;
        }
        if offset != bytes.len() {
            return Err(GaitError::Format(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - offset
            )));
        }
        Ok(c)
    }

    /// Writes via a temporary sibling file so readers never see a partial file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| GaitError::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, &bytes).map_err(|e| GaitError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| GaitError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| GaitError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            GaitError::Format(m) => GaitError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn format_net(cfg: &NetConfig) -> String {
    format!(
        "input={} conv1={} conv2={} mcnn={}",
        cfg.input_size, cfg.conv1_channels, cfg.conv2_channels, cfg.mcnn_channels
    )
}

fn format_lrn(p: &LrnParams) -> String {
    format!("radius={} k={} alpha={} beta={}", p.radius, p.k, p.alpha, p.beta)
}

fn key_values(s: &str) -> Result<Vec<(&str, &str)>> {
    s.split(' ')
        .map(|kv| kv.split_once('=').ok_or_else(|| GaitError::Format(format!("bad entry '{kv}'"))))
        .collect()
}

fn lookup<V: std::str::FromStr>(kvs: &[(&str, &str)], key: &str) -> Result<V> {
    kvs.iter()
        .find(|(k, _)| *k == key)
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| GaitError::Format(format!("missing or invalid '{key}'")))
}

fn parse_config(c: &Container) -> Result<NetConfig> {
    let net = key_values(c.require_meta("net")?)?;
    let lrn = key_values(c.require_meta("lrn")?)?;
    let cfg = NetConfig {
        input_size: lookup(&net, "input")?,
        conv1_channels: lookup(&net, "conv1")?,
        conv2_channels: lookup(&net, "conv2")?,
        mcnn_channels: lookup(&net, "mcnn")?,
        lrn: LrnParams {
            radius: lookup(&lrn, "radius")?,
            k: lookup(&lrn, "k")?,
            alpha: lookup(&lrn, "alpha")?,
            beta: lookup(&lrn, "beta")?,
        },
    };
    cfg.validate().map_err(|e| GaitError::Format(format!("invalid network config: {e}")))?;
    Ok(cfg)
}

/// Checkpoint container for `params` plus caller-supplied metadata.
pub fn checkpoint_container(params: &ModelParams<f32>, extra_meta: &[(&str, String)]) -> Container {
    let mut meta = vec![
        ("format".to_string(), "checkpoint".to_string()),
        ("net".to_string(), format_net(&params.config)),
        ("lrn".to_string(), format_lrn(&params.config.lrn)),
        ("pooling".to_string(), params.pooling.to_string()),
    ];
    meta.extend(extra_meta.iter().map(|(k, v)| (k.to_string(), v.clone())));
    let mut tensors: Vec<(String, Tensor<f32>)> = PARAM_NAMES
        .iter()
        .zip(params.tensors())
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    tensors.extend(
        PARAM_NAMES
            .iter()
            .zip(&params.velocity.tensors)
            .map(|(n, t)| (format!("velocity.{n}"), t.clone())),
    );
    Container { meta, tensors }
}

pub fn params_from_container(c: &Container) -> Result<ModelParams<f32>> {
    if c.meta("format") != Some("checkpoint") {
        return Err(GaitError::Format("not a checkpoint (missing '@format checkpoint')".into()));
    }
    let config = parse_config(c)?;
    let pooling: PoolingMode = c
        .require_meta("pooling")?
        .parse()
        .map_err(|e| GaitError::Format(format!("{e}")))?;
    let mut params = ModelParams::<f32>::zeros(config, pooling)?;
    let expected: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
    if c.tensors.len() != 2 * PARAM_NAMES.len() {
        return Err(GaitError::Format(format!(
            "expected {} tensors, found {}",
            2 * PARAM_NAMES.len(),
            c.tensors.len()
        )));
    }
    let take = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let t = c
            .tensor(name)
            .ok_or_else(|| GaitError::Format(format!("missing tensor '{name}'")))?;
        if t.shape() != shape {
            return Err(GaitError::Format(format!(
                "tensor '{name}' has shape {:?}, config implies {shape:?}",
                t.shape()
            )));
        }
        Ok(t.clone())
    };
    let mut loaded = Vec::new();
    for (name, shape) in PARAM_NAMES.iter().zip(&expected) {
        loaded.push(take(name, shape)?);
    }
    let mut velocity = Vec::new();
    for (name, shape) in PARAM_NAMES.iter().zip(&expected) {
        velocity.push(take(&format!("velocity.{name}"), shape)?);
    }
    let mut it = loaded.into_iter();
    let mut next_conv = || -> Result<ConvLayer<f32>> {
        let w = it.next().expect("weight");
        let b = it.next().expect("bias");
        ConvLayer::new(w, b)
    };
    params.conv1 = next_conv()?;
    params.conv2 = next_conv()?;
    params.mcnn = next_conv()?;
    params.fc = FcLayer::new(it.next().expect("fc weight"), it.next().expect("fc bias"))?;
    params.velocity = Gradients { tensors: velocity };
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    checkpoint_container(params, &[]).write(path)
}

pub fn save_checkpoint_with_meta(params: &ModelParams<f32>, path: &Path, meta: &[(&str, String)]) -> Result<()> {
    checkpoint_container(params, meta).write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    params_from_container(&Container::read(path)?)
}

pub fn load_checkpoint_with_meta(path: &Path) -> Result<(ModelParams<f32>, Container)> {
    let c = Container::read(path)?;
    Ok((params_from_container(&c)?, c))
}

/// Hex SHA-256 of the canonical checkpoint encoding (no extra metadata),
/// so it identifies the weights rather than the file they came from.
pub fn params_hash(params: &ModelParams<f32>) -> String {
    let bytes = checkpoint_container(params, &[])
        .to_bytes()
        .expect("canonical checkpoint names are valid");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
