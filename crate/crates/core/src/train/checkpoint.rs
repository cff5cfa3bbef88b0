//! Binary checkpoint files.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header,
//! the little-endian parameter payload, then a SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vesseldistill_autograd::{DType, Float, Tensor};

use crate::distill::ProjectorSet;
use crate::nets::{NetworkSpec, ParamStore, SegmentationNetwork};
use crate::synthdata::write_atomic;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"VSLDCKP1";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupMeta {
    name: String,
    arrays: Vec<ArrayMeta>,
}

/// Shape of a stored projector set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorMeta {
    pub levels: Vec<usize>,
    pub channels: Vec<usize>,
    pub hidden: usize,
}

/// Descriptive fields stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub spec: NetworkSpec,
    pub mode: String,
    /// Run configuration in `key = value` form.
    pub config: String,
    pub epoch: usize,
    pub step: u64,
    pub val_miou: Option<f64>,
    pub teacher_checksum: Option<String>,
    pub student_projectors: Option<ProjectorMeta>,
    pub teacher_projectors: Option<ProjectorMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    info: CheckpointInfo,
    groups: Vec<GroupMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub info: CheckpointInfo,
    pub network: ParamStore<F>,
    pub student_projectors: Option<ParamStore<F>>,
    pub teacher_projectors: Option<ParamStore<F>>,
}

fn projector_meta<F: Float>(p: &ProjectorSet<F>) -> ProjectorMeta {
    ProjectorMeta {
        levels: (0..p.len()).map(|k| p.projector(k).level).collect(),
        channels: (0..p.len()).map(|k| p.projector(k).channels).collect(),
        hidden: if p.is_empty() { 0 } else { p.projector(0).hidden },
    }
}

impl<F: Float> Checkpoint<F> {
    pub fn new(
        info: CheckpointInfo,
        network: &SegmentationNetwork<F>,
        student_projectors: Option<&ProjectorSet<F>>,
        teacher_projectors: Option<&ProjectorSet<F>>,
    ) -> Self {
        let mut info = info;
        info.spec = network.spec().clone();
        info.student_projectors = student_projectors.map(projector_meta);
        info.teacher_projectors = teacher_projectors.map(projector_meta);
        Self {
            info,
            network: network.params().clone(),
            student_projectors: student_projectors.map(|p| p.params().clone()),
            teacher_projectors: teacher_projectors.map(|p| p.params().clone()),
        }
    }

    fn groups(&self) -> Vec<(&'static str, &ParamStore<F>)> {
        let mut g = vec![("network", &self.network)];
        if let Some(p) = &self.student_projectors {
            g.push(("student_projectors", p));
        }
        if let Some(p) = &self.teacher_projectors {
            g.push(("teacher_projectors", p));
        }
        g
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let groups = self.groups();
        let header = Header {
            dtype: F::DTYPE.name().to_string(),
            info: self.info.clone(),
            groups: groups
                .iter()
                .map(|(name, store)| GroupMeta {
                    name: name.to_string(),
                    arrays: store
                        .names()
                        .iter()
                        .zip(store.tensors())
                        .map(|(n, t)| ArrayMeta {
                            name: n.clone(),
                            shape: t.shape().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(json.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, store) in groups {
            for t in store.tensors() {
                for &v in t.data() {
                    v.write_le(&mut out);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses a checkpoint, converting values to `F` if it was saved at
    /// the other precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt(m.to_string());
        if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
            return Err(corrupt("file is truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (file is truncated or modified)"));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body.get(16..16usize.saturating_add(hlen)).ok_or_else(|| corrupt("header length out of range"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let dtype = DType::parse(&header.dtype).ok_or_else(|| Error::Corrupt(format!("unknown dtype `{}`", header.dtype)))?;
        let mut payload = &body[16 + hlen..];
        let mut stores = Vec::new();
        for group in &header.groups {
            let mut names = Vec::new();
            let mut tensors = Vec::new();
            for a in &group.arrays {
                let n: usize = a.shape.iter().product();
                let bytes_needed = n * dtype.size_of();
                if payload.len() < bytes_needed {
                    return Err(corrupt("payload shorter than the header declares"));
                }
                let (chunk, rest) = payload.split_at(bytes_needed);
                payload = rest;
                let t = match dtype {
                    DType::F32 => read_tensor::<f32>(&a.shape, chunk)?.cast::<F>(),
                    DType::F64 => read_tensor::<f64>(&a.shape, chunk)?.cast::<F>(),
                };
                names.push(a.name.clone());
                tensors.push(t);
            }
            stores.push((group.name.clone(), ParamStore::from_parts(names, tensors)?));
        }
        if !payload.is_empty() {
            return Err(corrupt("payload longer than the header declares"));
        }
        let mut take = |name: &str| stores.iter().position(|(n, _)| n == name).map(|i| stores.remove(i).1);
        let network = take("network").ok_or_else(|| corrupt("missing network parameters"))?;
        Ok(Self {
            info: header.info,
            network,
            student_projectors: take("student_projectors"),
            teacher_projectors: take("teacher_projectors"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the network, checking the stored arrays against its topology.
    pub fn network(&self) -> Result<SegmentationNetwork<F>> {
        SegmentationNetwork::from_params(&self.info.spec, self.network.clone())
    }

    pub fn projectors(&self, teacher: bool) -> Result<Option<ProjectorSet<F>>> {
        let (meta, store) = if teacher {
            (&self.info.teacher_projectors, &self.teacher_projectors)
        } else {
            (&self.info.student_projectors, &self.student_projectors)
        };
        match (meta, store) {
            (Some(m), Some(s)) => Ok(Some(ProjectorSet::from_params(&m.levels, &m.channels, m.hidden, s.clone())?)),
            (None, None) => Ok(None),
            _ => Err(Error::Corrupt("projector metadata and arrays disagree".into())),
        }
    }
}

fn read_tensor<T: Float>(shape: &[usize], bytes: &[u8]) -> Result<Tensor<T>> {
    let w = T::DTYPE.size_of();
    let data = bytes.chunks_exact(w).map(T::read_le).collect();
    Ok(Tensor::new(shape.to_vec(), data)?)
}
