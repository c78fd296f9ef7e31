//! Binary checkpoint: `DEFNCKPT`, a little-endian `u32` header length, a
//! JSON header, then the raw little-endian `f32` tensor data it indexes.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::Phase;
use crate::error::{Error, Result};
use crate::nn::{AdamW, ParamSet, Tensor};

const MAGIC: &[u8; 8] = b"DEFNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Params,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    group: Group,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: RunConfig,
    phase: Phase,
    step: u64,
    total_steps: u64,
    tau: f64,
    adam_step: Option<u64>,
    tensors: Vec<Entry>,
}

/// Model weights, optimizer state and schedule position.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub phase: Phase,
    /// Steps completed.
    pub step: u64,
    pub total_steps: u64,
    /// Schedule position of the last completed step.
    pub tau: f64,
    pub params: ParamSet<f32>,
    pub optimizer: Option<AdamW<f32>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data: Vec<f32> = Vec::new();
        let mut push = |group, set: &ParamSet<f32>| {
            for (name, t) in set.iter() {
                tensors.push(Entry {
                    name: name.to_string(),
                    group,
                    shape: t.shape().to_vec(),
                    offset: data.len(),
                    len: t.numel(),
                });
                data.extend_from_slice(t.data());
            }
        };
        push(Group::Params, &self.params);
        if let Some(opt) = &self.optimizer {
            push(Group::AdamM, &opt.m);
            push(Group::AdamV, &opt.v);
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            phase: self.phase,
            step: self.step,
            total_steps: self.total_steps,
            tau: self.tau,
            adam_step: self.optimizer.as_ref().map(|o| o.step),
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * data.len());
        out.extend_from_slice(MAGIC);
        let mut len = [0u8; 4];
        LittleEndian::write_u32(&mut len, json.len() as u32);
        out.extend_from_slice(&len);
        out.extend_from_slice(&json);
        let start = out.len();
        out.resize(start + 4 * data.len(), 0);
        LittleEndian::write_f32_into(&data, &mut out[start..]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let hlen = LittleEndian::read_u32(&bytes[8..12]) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let raw = &bytes[12 + hlen..];
        if raw.len() % 4 != 0 {
            return Err(bad("tensor data is not a whole number of f32 values"));
        }
        let mut data = vec![0f32; raw.len() / 4];
        LittleEndian::read_f32_into(raw, &mut data);
        let mut params = ParamSet::new();
        let mut m = ParamSet::new();
        let mut v = ParamSet::new();
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Checkpoint(format!("{}: shape {:?} vs length {}", e.name, e.shape, e.len)));
            }
            let slice = data
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| Error::Checkpoint(format!("{}: data out of range", e.name)))?;
            let t = Tensor::from_vec(&e.shape, slice.to_vec());
            match e.group {
                Group::Params => params.insert(e.name, t),
                Group::AdamM => m.insert(e.name, t),
                Group::AdamV => v.insert(e.name, t),
            }
        }
        let optimizer = match header.adam_step {
            Some(step) => {
                let same = |s: &ParamSet<f32>| {
                    s.len() == params.len()
                        && s.iter().all(|(n, t)| params.get(n).map(|p| p.shape()) == Some(t.shape()))
                };
                if !same(&m) || !same(&v) {
                    return Err(bad("optimizer moments do not mirror the parameters"));
                }
                Some(AdamW {
                    config: header.config.optim,
                    step,
                    m,
                    v,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            config: header.config,
            phase: header.phase,
            step: header.step,
            total_steps: header.total_steps,
            tau: header.tau,
            params,
            optimizer,
        })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = ParamSet::new();
        p.insert("a.weight", Tensor::from_vec(&[2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]));
        p.insert("b", Tensor::from_vec(&[1], vec![7.0]));
        let mut opt = AdamW::new(Default::default(), &p);
        opt.step = 3;
        opt.m.get_mut("b").unwrap().data_mut()[0] = 0.5;
        Checkpoint {
            config: RunConfig::default(),
            phase: Phase::Pretrain,
            step: 3,
            total_steps: 10,
            tau: 2.0 / 9.0,
            params: p,
            optimizer: Some(opt),
        }
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.step, 3);
        assert_eq!(back.tau, c.tau);
        assert_eq!(back.config, c.config);
        for (n, t) in c.params.iter() {
            let b = back.params.get(n).unwrap();
            assert_eq!(b.shape(), t.shape());
            let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(b), bits(t));
        }
        let o = back.optimizer.unwrap();
        assert_eq!(o.step, 3);
        assert_eq!(o.m.get("b").unwrap().data(), &[0.5]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut b = sample().to_bytes();
        b.truncate(b.len() - 2);
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn atomic_save_leaves_no_temp() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.ckpt");
        sample().save(&p).unwrap();
        assert!(!d.path().join("x.ckpt.tmp").exists());
        assert_eq!(Checkpoint::load(&p).unwrap().step, 3);
    }
}
