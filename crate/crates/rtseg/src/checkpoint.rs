//! Checkpoint container.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic      8 bytes  "RTSGCKPT"
//! version    u32      1
//! step       u64      training step counter
//! config     u32 len + UTF-8 flat key-value run config
//! n_params   u32
//! per param: u32 name len + name, u32 rank, u32 × rank dims, f32 × numel
//! moments    u8 flag (1), then per param f32 × numel m, f32 × numel v
//! adam_t     u64
//! ```
//!
//! Parameters are stored as raw 32-bit floats; the training loop keeps all
//! live values f32-representable so save → load is lossless.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SegModel;
use crate::run_config::RunConfig;
use crate::train::{Adam, TrainState};

pub const MAGIC: &[u8; 8] = b"RTSGCKPT";
pub const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    fn f32_slice(&mut self, vals: &[f64]) {
        for &v in vals {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::data("checkpoint truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    fn f32_slice(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn save(path: &Path, state: &TrainState) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u64(state.step);
    w.bytes(state.model.config().to_kv_text().as_bytes());
    let store = state.model.store();
    w.u32(store.len() as u32);
    for (_, param) in store.iter() {
        w.bytes(param.name.as_bytes());
        let shape = param.value.shape();
        w.u32(shape.len() as u32);
        for &d in shape {
            w.u32(d as u32);
        }
        w.f32_slice(param.value.data());
    }
    w.buf.push(1u8);
    for (index, _) in store.iter().enumerate() {
        let (m, v) = state.optimizer.moments(index);
        w.f32_slice(m);
        w.f32_slice(v);
    }
    w.u64(state.optimizer.t);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, w.buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let raw = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let mut r = Reader::new(&raw);
    if r.take(8)? != MAGIC {
        return Err(Error::data(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::data(format!(
            "checkpoint version {version} unsupported (expected {VERSION})"
        )));
    }
    let step = r.u64()?;
    let config_text = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| Error::data("checkpoint config is not UTF-8"))?;
    let config = RunConfig::from_kv_text(&config_text)?;
    let mut model = SegModel::init(&config)?;

    let n_params = r.u32()? as usize;
    if n_params != model.store().len() {
        return Err(Error::data(format!(
            "checkpoint has {n_params} parameters, model expects {}",
            model.store().len()
        )));
    }
    for _ in 0..n_params {
        let name = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| Error::data("checkpoint parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = r.f32_slice(numel)?;
        model.store_mut().load_named(&name, &shape, data)?;
    }

    let mut optimizer = Adam::new(model.store());
    let flag = r.u8()?;
    if flag == 1 {
        let shapes: Vec<usize> = model.store().iter().map(|(_, p)| p.value.numel()).collect();
        for (index, numel) in shapes.into_iter().enumerate() {
            let m = r.f32_slice(numel)?;
            let v = r.f32_slice(numel)?;
            optimizer.set_moments(index, m, v);
        }
        optimizer.t = r.u64()?;
    }
    if !r.done() {
        return Err(Error::data("checkpoint has trailing bytes"));
    }
    Ok(TrainState {
        model,
        optimizer,
        step,
        running_loss: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneSpec};
    use crate::model::tiny_config;
    use crate::train::{fit, TrainState};

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut cfg = tiny_config();
        cfg.train.steps = 3;
        let model = SegModel::init(&cfg).unwrap();
        let mut state = TrainState::new(model);
        let data: Vec<_> = (0..2)
            .map(|i| {
                generate_scene(&SceneSpec {
                    seed: i,
                    height: 16,
                    width: 16,
                    ..SceneSpec::default()
                })
                .unwrap()
            })
            .collect();
        let prompt = state.model.tokenize(&cfg.prompt);
        fit(&mut state, &data, &prompt, None).unwrap();

        save(&path, &state).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.step, state.step);
        assert_eq!(loaded.optimizer.t, state.optimizer.t);
        assert_eq!(loaded.model.config(), state.model.config());
        for ((_, a), (_, b)) in state.model.store().iter().zip(loaded.model.store().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{}", a.name);
            }
        }
        // moments round-trip too
        for index in 0..state.model.store().len() {
            let (am, av) = state.optimizer.moments(index);
            let (bm, bv) = loaded.optimizer.moments(index);
            assert_eq!(am, bm);
            assert_eq!(av, bv);
        }

        // save the loaded state again: bytes must be identical
        let path2 = dir.path().join("model2.ckpt");
        save(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn junk_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let err = load(Path::new("/nonexistent/nope.ckpt")).unwrap_err();
        assert!(matches!(err, crate::Error::Data(_)), "{err}");
    }
}
