//! Training checkpoints.
//!
//! Layout: magic `NCKP`, `u32` version, `u64` header length, a JSON header
//! (configs, counters, array lengths), then little-endian arrays: network
//! parameters and both Adam moments (`f32`), camera poses (18 `f64` each:
//! rot6d, translation, row-major intrinsics) and the pose Adam moments
//! (`f64`). Values are stored bit-exactly.

use std::path::Path;

use neucolor_core::fields::{ModelConfig, ParamStore};
use neucolor_core::geometry::{CameraPose, Mat3, Vec3};
use neucolor_core::optim::Adam;
use neucolor_core::trainer::{PoseStore, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};

const MAGIC: &[u8; 4] = b"NCKP";
const VERSION: u32 = 1;
const POSE_F64S: usize = 18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    iter: u64,
    params: usize,
    poses: usize,
    poses_trainable: bool,
    adam_steps: u64,
    pose_adam_steps: u64,
    pose_adam_len: usize,
}

/// Everything needed to continue or use a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub state: TrainState,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let s = &ck.state;
    let header = Header {
        model: s.params.config().clone(),
        train: ck.train.clone(),
        iter: s.iter,
        params: s.params.values.len(),
        poses: s.poses.poses.len(),
        poses_trainable: s.poses.trainable,
        adam_steps: s.adam.steps,
        pose_adam_steps: s.pose_adam.steps,
        pose_adam_len: s.pose_adam.m.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(32 + json.len() + 12 * header.params);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for arr in [&s.params.values, &s.adam.m, &s.adam.v] {
        for v in arr.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for p in &s.poses.poses {
        let k = p.intrinsics.transpose();
        for v in p.rot6d.iter().chain(p.translation.iter()).chain(k.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for arr in [&s.pose_adam.m, &s.pose_adam.v] {
        for v in arr.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let b = self.take(n.checked_mul(4)?)?;
        Some(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let b = self.take(n.checked_mul(8)?)?;
        Some(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let bad = |m: &str| Error::format(origin, m.to_string());
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4).ok_or_else(|| bad("truncated"))?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(r.take(8).ok_or_else(|| bad("truncated"))?.try_into().unwrap()) as usize;
    let hbytes = r.take(hlen).ok_or_else(|| bad("truncated header"))?;
    let h: Header = serde_json::from_slice(hbytes).map_err(|e| bad(&format!("header: {e}")))?;
    let truncated = || bad("truncated body");
    let values = r.f32s(h.params).ok_or_else(truncated)?;
    let m = r.f32s(h.params).ok_or_else(truncated)?;
    let v = r.f32s(h.params).ok_or_else(truncated)?;
    let pose_vals = r.f64s(h.poses * POSE_F64S).ok_or_else(truncated)?;
    let pm = r.f64s(h.pose_adam_len).ok_or_else(truncated)?;
    let pv = r.f64s(h.pose_adam_len).ok_or_else(truncated)?;
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after checkpoint body"));
    }
    let params = ParamStore::from_values(h.model, values).map_err(|e| bad(&e.to_string()))?;
    let poses = pose_vals
        .chunks_exact(POSE_F64S)
        .map(|c| CameraPose {
            rot6d: c[..6].try_into().unwrap(),
            translation: Vec3::new(c[6], c[7], c[8]),
            intrinsics: Mat3::from_row_slice(&c[9..18]),
        })
        .collect();
    Ok(Checkpoint {
        train: h.train,
        state: TrainState {
            params,
            poses: PoseStore::new(poses, h.poses_trainable),
            adam: Adam { m, v, steps: h.adam_steps },
            pose_adam: Adam {
                m: pm,
                v: pv,
                steps: h.pose_adam_steps,
            },
            iter: h.iter,
        },
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    atomic_write(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?, path)
}
