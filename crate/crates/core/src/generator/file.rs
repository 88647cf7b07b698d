//! Model file encoding.
//!
//! Layout: the magic line `DECAF-MODEL\n`, a little-endian `u32` format
//! version, a `u32` header length and a JSON header listing the sections
//! with their lengths and SHA-256 digests. The sections follow back to back:
//!
//! - `dag`: the graph as JSON;
//! - `stats`: preprocessing statistics as JSON;
//! - `weights`: a `u32` length, a JSON descriptor, then raw `f64` values.
//!
//! The stats and weights sections each record the digest of the graph they
//! were built for, so sections spliced from different models are caught.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GeneratorError, GeneratorModel, GeneratorNet, Mechanisms, Result};
use crate::graph::CausalDag;
use crate::nn::Dense;
use crate::sem::SemSpec;
use crate::training::{ColumnStats, Preprocessing};

const MAGIC: &[u8] = b"DECAF-MODEL\n";
pub const FORMAT_VERSION: u32 = 1;
const SECTIONS: [&str; 3] = ["dag", "stats", "weights"];

#[derive(Serialize, Deserialize)]
struct Header {
    dag_sha256: String,
    sections: Vec<SectionInfo>,
}

#[derive(Serialize, Deserialize)]
struct SectionInfo {
    name: String,
    length: usize,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct StatsSection {
    dag_sha256: String,
    columns: Vec<ColumnStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "snake_case")]
enum WeightsMeta {
    Network {
        dag_sha256: String,
        width: usize,
        shared_layers: usize,
        values: usize,
    },
    Structural {
        dag_sha256: String,
        sem: SemSpec,
    },
}

impl WeightsMeta {
    fn dag_sha256(&self) -> &str {
        match self {
            Self::Network { dag_sha256, .. } | Self::Structural { dag_sha256, .. } => dag_sha256,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corrupt(msg: impl Into<String>) -> GeneratorError {
    GeneratorError::Corrupt(msg.into())
}

fn encode_sections(sections: [&[u8]; 3], dag_sha256: &str) -> Result<Vec<u8>> {
    let header = Header {
        dag_sha256: dag_sha256.to_string(),
        sections: SECTIONS
            .iter()
            .zip(sections)
            .map(|(name, bytes)| SectionInfo {
                name: name.to_string(),
                length: bytes.len(),
                sha256: sha256_hex(bytes),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for s in sections {
        out.extend_from_slice(s);
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let raw = bytes.get(at..at + 4).ok_or_else(|| corrupt("file ends inside the preamble"))?;
    Ok(u32::from_le_bytes(raw.try_into().expect("four bytes")))
}

fn decode_sections(bytes: &[u8]) -> Result<(Header, [&[u8]; 3])> {
    if !bytes.starts_with(MAGIC) {
        return Err(corrupt("missing magic line"));
    }
    let version = read_u32(bytes, MAGIC.len())?;
    if version != FORMAT_VERSION {
        return Err(GeneratorError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = read_u32(bytes, MAGIC.len() + 4)? as usize;
    let mut pos = MAGIC.len() + 8;
    let header_bytes = bytes
        .get(pos..pos + header_len)
        .ok_or_else(|| corrupt("file ends inside the header"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    pos += header_len;
    let names: Vec<&str> = header.sections.iter().map(|s| s.name.as_str()).collect();
    if names != SECTIONS {
        return Err(corrupt(format!("unexpected sections {names:?}")));
    }
    let mut out: [&[u8]; 3] = [&[]; 3];
    for (slot, info) in out.iter_mut().zip(&header.sections) {
        let body = bytes
            .get(pos..pos + info.length)
            .ok_or_else(|| corrupt(format!("file truncated inside section `{}`", info.name)))?;
        if sha256_hex(body) != info.sha256 {
            return Err(corrupt(format!("checksum mismatch in section `{}`", info.name)));
        }
        *slot = body;
        pos += info.length;
    }
    if pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok((header, out))
}

fn push_dense(values: &mut Vec<f64>, layer: &Dense) {
    values.extend(layer.weight.iter());
    values.extend(layer.bias.iter());
}

fn take_dense(values: &mut std::slice::Iter<'_, f64>, fan_in: usize, fan_out: usize) -> Result<Dense> {
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = values.by_ref().take(n).copied().collect();
        if v.len() == n {
            Ok(v)
        } else {
            Err(corrupt("weights section too short"))
        }
    };
    let weight = Array2::from_shape_vec((fan_in, fan_out), take(fan_in * fan_out)?).expect("sized");
    let bias = Array1::from_vec(take(fan_out)?);
    Ok(Dense { weight, bias })
}

impl GeneratorModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dag_bytes = self.dag.to_json_string().into_bytes();
        let dag_sha256 = sha256_hex(&dag_bytes);
        let stats = serde_json::to_vec(&StatsSection {
            dag_sha256: dag_sha256.clone(),
            columns: self.preprocessing.columns().to_vec(),
        })?;
        let (meta, values) = match &self.mechanisms {
            Mechanisms::Network(net) => {
                let mut values = Vec::with_capacity(net.param_count());
                for layer in net.layers() {
                    push_dense(&mut values, layer);
                }
                let meta = WeightsMeta::Network {
                    dag_sha256: dag_sha256.clone(),
                    width: net.width(),
                    shared_layers: net.shared.len(),
                    values: values.len(),
                };
                (meta, values)
            }
            Mechanisms::Structural(sem) => (
                WeightsMeta::Structural {
                    dag_sha256: dag_sha256.clone(),
                    sem: sem.clone(),
                },
                Vec::new(),
            ),
        };
        let meta = serde_json::to_vec(&meta)?;
        let mut weights = Vec::with_capacity(4 + meta.len() + 8 * values.len());
        weights.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        weights.extend_from_slice(&meta);
        for v in values {
            weights.extend_from_slice(&v.to_le_bytes());
        }
        encode_sections([&dag_bytes, &stats, &weights], &dag_sha256)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, [dag_bytes, stats_bytes, weights_bytes]) = decode_sections(bytes)?;
        let dag_sha256 = sha256_hex(dag_bytes);
        if header.dag_sha256 != dag_sha256 {
            return Err(GeneratorError::Integrity("header graph digest differs from graph section".into()));
        }
        let dag = CausalDag::from_json_str(
            std::str::from_utf8(dag_bytes).map_err(|_| corrupt("graph section is not UTF-8"))?,
        )?;
        let stats: StatsSection = serde_json::from_slice(stats_bytes)?;
        if stats.dag_sha256 != dag_sha256 {
            return Err(GeneratorError::Integrity("stats section was built for another graph".into()));
        }

        let meta_len = read_u32(weights_bytes, 0)? as usize;
        let meta_bytes = weights_bytes
            .get(4..4 + meta_len)
            .ok_or_else(|| corrupt("weights descriptor truncated"))?;
        let meta: WeightsMeta = serde_json::from_slice(meta_bytes)?;
        if meta.dag_sha256() != dag_sha256 {
            return Err(GeneratorError::Integrity("weights section was built for another graph".into()));
        }
        let raw = &weights_bytes[4 + meta_len..];
        if raw.len() % 8 != 0 {
            return Err(corrupt("weights section is not a whole number of values"));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();

        let mechanisms = match meta {
            WeightsMeta::Network {
                width,
                shared_layers,
                values: count,
                ..
            } => {
                if count != values.len() {
                    return Err(corrupt(format!("expected {count} weights, found {}", values.len())));
                }
                let mut it = values.iter();
                let inputs = (0..dag.len())
                    .map(|j| take_dense(&mut it, dag.parents(j).len() + 1, width))
                    .collect::<Result<Vec<_>>>()?;
                let shared = (0..shared_layers)
                    .map(|_| take_dense(&mut it, width, width))
                    .collect::<Result<Vec<_>>>()?;
                let heads = (0..dag.len())
                    .map(|_| take_dense(&mut it, width, 1))
                    .collect::<Result<Vec<_>>>()?;
                if it.next().is_some() {
                    return Err(corrupt("weights section too long for the recorded layout"));
                }
                Mechanisms::Network(GeneratorNet {
                    kinds: dag.nodes().iter().map(|n| n.kind).collect(),
                    inputs,
                    shared,
                    heads,
                })
            }
            WeightsMeta::Structural { sem, .. } => {
                if !values.is_empty() {
                    return Err(corrupt("structural model carries stray weights"));
                }
                Mechanisms::Structural(sem)
            }
        };
        let preprocessing = Preprocessing::from_columns(stats.columns)
            .map_err(|e| corrupt(format!("bad stats section: {e}")))?;
        GeneratorModel::new(dag, mechanisms, preprocessing)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the encoded model, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

#[cfg(test)]
pub(super) fn splice_stats_digest(bytes: &[u8], fake: &str) -> Vec<u8> {
    let (header, [dag, stats, weights]) = decode_sections(bytes).unwrap();
    let mut s: StatsSection = serde_json::from_slice(stats).unwrap();
    s.dag_sha256 = fake.to_string();
    let stats = serde_json::to_vec(&s).unwrap();
    encode_sections([dag, &stats, weights], &header.dag_sha256).unwrap()
}
