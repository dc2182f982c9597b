//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"OSCK"
//! version u32 (currently 1)
//! echo    u32 length + UTF-8 JSON config echo
//! iter    u64
//! count   u32 number of entries, then per entry:
//!   name  u32 length + UTF-8 bytes
//!   ndim  u32, dims u32 * ndim
//!   data  f32 little-endian * prod(dims)
//! ```
//!
//! Entries cover student/teacher parameters and norm running statistics
//! (update counts as one-element arrays), plus optimizer velocities, written
//! in a fixed order so identical states serialize to identical bytes.

use std::fs;
use std::io::Read;
use std::path::Path;

use super::TrainerState;
use crate::detector::{DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::trainer::sgd::SgdState;

const MAGIC: &[u8; 4] = b"OSCK";
const VERSION: u32 = 1;

struct Entry {
    name: String,
    dims: Vec<u32>,
    data: Vec<f32>,
}

fn tensor_entry<T: Scalar>(name: String, t: &Tensor<T>) -> Entry {
    Entry {
        name,
        dims: t.shape().iter().map(|&d| d as u32).collect(),
        data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}

fn model_entries<T: Scalar>(prefix: &str, model: &DetectorState<T>, out: &mut Vec<Entry>) {
    for (name, t) in model.params() {
        out.push(tensor_entry(format!("{prefix}.{name}"), t));
    }
    for (name, data, updates) in model.norm_buffers() {
        out.push(Entry {
            name: format!("{prefix}.{name}"),
            dims: vec![data.len() as u32],
            data: data.iter().map(|v| v.as_f64() as f32).collect(),
        });
        out.push(Entry {
            name: format!("{prefix}.{name}.updates"),
            dims: vec![1],
            data: vec![updates as f32],
        });
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    state: &TrainerState<T>,
    config_echo: &str,
) -> Result<()> {
    let mut entries: Vec<Entry> = Vec::new();
    model_entries("student", &state.student, &mut entries);
    model_entries("teacher", &state.teacher, &mut entries);
    for (name, t) in &state.opt.velocities {
        entries.push(tensor_entry(format!("opt.{name}"), t));
    }

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let echo = config_echo.as_bytes();
    buf.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    buf.extend_from_slice(echo);
    buf.extend_from_slice(&state.iteration.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in &entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for d in &e.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 string".into()))
    }
}

/// Read just the config echo and iteration counter of a checkpoint.
pub fn read_checkpoint_header(path: &Path) -> Result<(String, u64)> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("opening {}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    let mut r = Reader { buf: &raw, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let echo = r.string()?;
    let iteration = r.u64()?;
    Ok((echo, iteration))
}

/// Load a checkpoint into a freshly shaped trainer state. The detector config
/// must describe the same architecture the checkpoint was written with.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    det_cfg: &DetectorConfig,
) -> Result<(TrainerState<T>, String)> {
    let mut raw = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("opening {}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    let mut r = Reader { buf: &raw, at: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let echo = r.string()?;
    let iteration = r.u64()?;
    let count = r.u32()? as usize;

    let mut entries: std::collections::HashMap<String, (Vec<usize>, Vec<f32>)> =
        std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let bytes = r.take(len * 4)?;
        let mut data = Vec::with_capacity(len);
        for c in bytes.chunks_exact(4) {
            data.push(f32::from_le_bytes(c.try_into().unwrap()));
        }
        entries.insert(name, (dims, data));
    }

    let mut student = DetectorState::<T>::new(det_cfg.clone(), 0)?;
    let mut teacher = DetectorState::<T>::new(det_cfg.clone(), 0)?;
    let mut opt = SgdState::new(&student);

    let restore_model = |prefix: &str, model: &mut DetectorState<T>| -> Result<()> {
        for (name, tensor) in model.params_mut() {
            let key = format!("{prefix}.{name}");
            let (dims, data) = entries
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {key}")))?;
            if dims != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {key}: checkpoint {dims:?}, model {:?}",
                    tensor.shape()
                )));
            }
            for (dst, &src) in tensor.data_mut().iter_mut().zip(data.iter()) {
                *dst = T::from_f64(src as f64);
            }
        }
        let buffer_names: Vec<String> =
            model.norm_buffers().into_iter().map(|(n, _, _)| n).collect();
        for name in buffer_names {
            let key = format!("{prefix}.{name}");
            let (_, data) = entries
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {key}")))?;
            let (_, upd) = entries
                .get(&format!("{key}.updates"))
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {key}.updates")))?;
            let cast: Vec<T> = data.iter().map(|&v| T::from_f64(v as f64)).collect();
            model.set_norm_buffer(&name, &cast, upd[0] as u64)?;
        }
        Ok(())
    };

    restore_model("student", &mut student)?;
    restore_model("teacher", &mut teacher)?;
    for (name, tensor) in opt.velocities.iter_mut() {
        let key = format!("opt.{name}");
        let (dims, data) = entries
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {key}")))?;
        if dims != tensor.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for {key}")));
        }
        for (dst, &src) in tensor.data_mut().iter_mut().zip(data.iter()) {
            *dst = T::from_f64(src as f64);
        }
    }

    Ok((TrainerState { student, teacher, opt, iteration }, echo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norm::{NormKind, Split};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn state(kind: NormKind) -> TrainerState<f32> {
        let cfg = DetectorConfig { norm: kind, ..DetectorConfig::default() };
        let mut student = DetectorState::<f32>::new(cfg, 42).unwrap();
        let mut rng = stream_rng(1, "ckpt-test", 0);
        let imgs = Tensor::from_vec(
            &[2, 64, 64, 3],
            (0..2 * 64 * 64 * 3).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<f32>>(),
        )
        .unwrap();
        student.warm_norm(&imgs, Split::Labeled).unwrap();
        if kind == NormKind::DataSpecific {
            student.warm_norm(&imgs, Split::Unlabeled).unwrap();
        }
        let teacher = student.clone();
        let opt = SgdState::new(&student);
        TrainerState { student, teacher, opt, iteration: 17 }
    }

    #[test]
    fn save_load_round_trip_is_exact_for_f32() {
        for kind in [NormKind::Batch, NormKind::DataSpecific] {
            let s = state(kind);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("state.ckpt");
            save_checkpoint(&path, &s, "{\"echo\":true}").unwrap();
            let cfg = DetectorConfig { norm: kind, ..DetectorConfig::default() };
            let (loaded, echo) = load_checkpoint::<f32>(&path, &cfg).unwrap();
            assert_eq!(echo, "{\"echo\":true}");
            assert_eq!(loaded.iteration, 17);
            for ((n1, t1), (n2, t2)) in s.student.params().iter().zip(loaded.student.params()) {
                assert_eq!(n1, &n2);
                assert_eq!(t1.data(), t2.data(), "param {n1} drifted");
            }
            for ((n1, d1, u1), (n2, d2, u2)) in
                s.student.norm_buffers().iter().zip(loaded.student.norm_buffers())
            {
                assert_eq!(n1, &n2);
                assert_eq!(d1, &d2, "buffer {n1} drifted");
                assert_eq!(u1, &u2);
            }
        }
    }

    #[test]
    fn identical_states_serialize_to_identical_bytes() {
        let s = state(NormKind::DataSpecific);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&p1, &s, "{}").unwrap();
        save_checkpoint(&p2, &s, "{}").unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn rejects_architecture_mismatch() {
        let s = state(NormKind::Batch);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_checkpoint(&path, &s, "{}").unwrap();
        let other = DetectorConfig {
            channels: [8, 16, 16],
            norm: NormKind::Batch,
            ..DetectorConfig::default()
        };
        assert!(load_checkpoint::<f32>(&path, &other).is_err());
    }
}
