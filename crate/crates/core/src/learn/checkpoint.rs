//! Binary checkpoints: `EMSL1` magic, a little-endian `u32` tensor count,
//! then per tensor a `u32` rank, `u32` dims and `f64` values. Names, task
//! and architecture live in a TOML sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{Arch, ConvNetModel, Param};
use super::Task;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"EMSL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub task: Task,
    pub arch: Arch,
    pub param_names: Vec<String>,
    #[serde(default)]
    pub class_names: Vec<String>,
}

pub fn encode(model: &ConvNetModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * model.num_weights());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &w in &p.data {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], meta: &CheckpointMeta) -> Result<ConvNetModel> {
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format_version {}",
            meta.format_version
        )));
    }
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let count = r.u32()?;
    if count != meta.param_names.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, sidecar names {}",
            meta.param_names.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for name in &meta.param_names {
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Param {
            name: name.clone(),
            shape,
            data,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    ConvNetModel::from_params(meta.task, meta.arch.clone(), params)
}

pub fn meta_of(model: &ConvNetModel, class_names: &[String]) -> CheckpointMeta {
    CheckpointMeta {
        format_version: FORMAT_VERSION,
        task: model.task,
        arch: model.arch.clone(),
        param_names: model.params.iter().map(|p| p.name.clone()).collect(),
        class_names: class_names.to_vec(),
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Write `path` (weights) and `path.toml` (metadata).
pub fn save(model: &ConvNetModel, class_names: &[String], path: &Path) -> Result<()> {
    let meta = toml::to_string(&meta_of(model, class_names)).map_err(|e| Error::Format(format!("checkpoint meta: {e}")))?;
    write_atomic(path, &encode(model))?;
    write_atomic(&sidecar_path(path), meta.as_bytes())
}

pub fn load(path: &Path) -> Result<(ConvNetModel, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)?;
    let meta: CheckpointMeta =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path)?;
    let model = decode(&bytes, &meta).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ConvNetModel {
        ConvNetModel::new(Task::AppId, Arch::for_task(Task::AppId, [1, 64], 3), 9).unwrap()
    }

    #[test]
    fn round_trip_bytes() {
        let m = model();
        let meta = meta_of(&m, &[]);
        let bytes = encode(&m);
        assert_eq!(&bytes[..5], b"EMSL1");
        assert_eq!(decode(&bytes, &meta).unwrap(), m);
    }

    #[test]
    fn corruption_detected() {
        let m = model();
        let meta = meta_of(&m, &[]);
        let mut bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 3], &meta).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes, &meta).is_err());
        let mut extra = encode(&m);
        extra.push(0);
        assert!(decode(&extra, &meta).is_err());
    }

    #[test]
    fn round_trip_files() {
        let dir = std::env::temp_dir().join(format!("emspy-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.emsl");
        let m = model();
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        save(&m, &names, &path).unwrap();
        let (back, meta) = load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta.class_names, names);
        fs::remove_dir_all(&dir).unwrap();
    }
}
