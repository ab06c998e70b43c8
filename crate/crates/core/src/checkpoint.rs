//! Binary network snapshots.
//!
//! Layout: magic `SPKQCKPT`, `u32` format version, `u32` header length, a JSON
//! header (architecture, environment names, frame), then one record per
//! tensor: `u32` name length, name, `u8` kind (0 parameter, 1 running mean,
//! 2 running variance), `u32` rank, `u64` dims, little-endian `f64` data.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qnetwork::{ArchSpec, QNetwork};
use crate::tensor::{Float, Tensor};

const MAGIC: &[u8; 8] = b"SPKQCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ArchSpec,
    pub envs: Vec<String>,
    pub frame: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Param = 0,
    RunningMean = 1,
    RunningVar = 2,
}

fn write_record(w: &mut impl Write, name: &str, kind: Kind, shape: &[usize], data: &[Float]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[kind as u8])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for d in shape {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&(*v as f64).to_le_bytes())?;
    }
    Ok(())
}

pub fn write(w: &mut impl Write, net: &QNetwork, envs: &[String], frame: u64) -> Result<()> {
    let header = CheckpointHeader {
        arch: net.spec().clone(),
        envs: envs.to_vec(),
        frame,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let store = net.params();
    for id in store.ids() {
        let t = store.get(id);
        write_record(w, store.name(id), Kind::Param, t.shape(), t.data())?;
    }
    for (i, r) in net.running_stats().iter().enumerate() {
        let name = format!("bn{}", i + 1);
        write_record(w, &name, Kind::RunningMean, &[r.mean.len()], &r.mean)?;
        write_record(w, &name, Kind::RunningVar, &[r.var.len()], &r.var)?;
    }
    Ok(())
}

pub fn save(path: &Path, net: &QNetwork, envs: &[String], frame: u64) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf, net, envs, frame)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Rebuilds the network stored in a checkpoint.
pub fn read(r: &mut impl Read) -> Result<(QNetwork, CheckpointHeader)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut rd = Reader { bytes: &bytes };
    if rd.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = rd.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(rd.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut net = QNetwork::build(header.arch.clone(), 0)?;
    let mut seen = vec![false; net.params().len()];
    while !rd.bytes.is_empty() {
        let n = rd.u32()? as usize;
        let name = String::from_utf8(rd.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let kind = rd.take(1)?[0];
        let rank = rd.u32()? as usize;
        let shape = (0..rank).map(|_| rd.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data: Vec<Float> = rd
            .take(count * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Float)
            .collect();
        match kind {
            k if k == Kind::Param as u8 => {
                let id = net
                    .params()
                    .find(&name)
                    .ok_or_else(|| Error::StructureMismatch(format!("unexpected parameter `{name}`")))?;
                let dst = net.params_mut().get_mut(id);
                if dst.shape() != shape {
                    return Err(Error::StructureMismatch(format!(
                        "`{name}`: stored {shape:?}, architecture {:?}",
                        dst.shape()
                    )));
                }
                *dst = Tensor::new(shape, data)?;
                seen[id.index()] = true;
            }
            k if k == Kind::RunningMean as u8 || k == Kind::RunningVar as u8 => {
                let idx = name
                    .strip_prefix("bn")
                    .and_then(|i| i.parse::<usize>().ok())
                    .filter(|i| (1..=net.running_stats().len()).contains(i))
                    .ok_or_else(|| Error::StructureMismatch(format!("unexpected statistics `{name}`")))?;
                let stats = &mut net.running_stats_mut()[idx - 1];
                let dst = if k == Kind::RunningMean as u8 { &mut stats.mean } else { &mut stats.var };
                if dst.len() != data.len() {
                    return Err(Error::StructureMismatch(format!("`{name}` statistics length")));
                }
                *dst = data;
            }
            other => return Err(Error::Checkpoint(format!("unknown record kind {other}"))),
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = net.params().ids().nth(i).expect("index in range");
        return Err(Error::Checkpoint(format!("missing parameter `{}`", net.params().name(id))));
    }
    Ok((net, header))
}

pub fn load(path: &Path) -> Result<(QNetwork, CheckpointHeader)> {
    let mut f = std::fs::File::open(path)?;
    read(&mut f)
}
