//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "FLCK"
//! version      u32      currently 1
//! hyper_len    u32      byte length of the hyperparameter block
//! hyper        utf-8    `key = value` lines
//! num_params   u32
//! per parameter:
//!   name_len   u32, name utf-8
//!   trainable  u8
//!   ndim       u32, dims u64 * ndim
//!   values     f64 * prod(dims)
//! has_opt      u8
//! if has_opt == 1:
//!   lr beta1 beta2 eps weight_decay   f64 * 5
//!   step       u64
//!   per parameter, in the order above: first moments, then second moments
//!              (f64 * prod(dims) each)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::optim::{AdamW, AdamWConfig};
use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{FlockError, Result};

const MAGIC: &[u8; 4] = b"FLCK";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub hyperparameters: String,
    pub params: ParamStore,
    pub optimizer: Option<AdamW>,
}

fn bad(msg: impl Into<String>) -> FlockError {
    FlockError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    hyperparameters: &str,
    params: &ParamStore,
    optimizer: Option<&AdamW>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(hyperparameters.len() as u32).to_le_bytes())?;
    w.write_all(hyperparameters.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, p) in params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[p.trainable as u8])?;
        w.write_all(&(p.tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in p.tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, p.tensor.data())?;
    }
    match optimizer {
        None => w.write_all(&[0])?,
        Some(opt) => {
            w.write_all(&[1])?;
            let c = &opt.config;
            write_f64s(&mut w, &[c.lr, c.beta1, c.beta2, c.eps, c.weight_decay])?;
            w.write_all(&opt.step.to_le_bytes())?;
            for m in &opt.m {
                write_f64s(&mut w, m)?;
            }
            for v in &opt.v {
                write_f64s(&mut w, v)?;
            }
        }
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| bad(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.bytes(n)?).map_err(|_| bad("invalid utf-8"))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    if r.bytes(4)? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let hyperparameters = r.string(n)?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = r.string(n)?;
        let trainable = r.u8()? != 0;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let values = r.f64s(shape.iter().product())?;
        let id = params.add(name, Tensor::new(shape, values)?)?;
        params.get_mut(id).trainable = trainable;
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let c = r.f64s(5)?;
            let config = AdamWConfig {
                lr: c[0],
                beta1: c[1],
                beta2: c[2],
                eps: c[3],
                weight_decay: c[4],
            };
            let mut opt = AdamW::new(config, &params);
            opt.step = r.u64()?;
            let lens: Vec<usize> = params.iter().map(|(_, p)| p.tensor.len()).collect();
            for (m, &len) in opt.m.iter_mut().zip(&lens) {
                *m = r.f64s(len)?;
            }
            for (v, &len) in opt.v.iter_mut().zip(&lens) {
                *v = r.f64s(len)?;
            }
            Some(opt)
        }
        other => return Err(bad(format!("bad optimizer flag {other}"))),
    };
    Ok(Checkpoint {
        hyperparameters,
        params,
        optimizer,
    })
}

pub fn save(path: &Path, hyperparameters: &str, params: &ParamStore, optimizer: Option<&AdamW>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, hyperparameters, params, optimizer)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::ParamGrads;

    #[test]
    fn round_trip_with_optimizer() {
        let mut store = ParamStore::new();
        let a = store
            .add("a", Tensor::from_rows(&[&[1.0, -2.5], &[3.0, 0.125]]))
            .unwrap();
        let b = store.add("b", Tensor::scalar(7.0)).unwrap();
        store.get_mut(b).trainable = false;
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        let mut g = ParamGrads::empty(2);
        g.accumulate_slice(a, &[0.1, 0.2, 0.3, 0.4]);
        opt.step(&mut store, &g).unwrap();

        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "d = 4\n", &store, Some(&opt)).unwrap();
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.hyperparameters, "d = 4\n");
        assert_eq!(ck.params.tensor(a), store.tensor(a));
        assert!(!ck.params.get(b).trainable);
        let o = ck.optimizer.unwrap();
        assert_eq!(o.step, 1);
        assert_eq!(o.m, opt.m);
        assert_eq!(o.v, opt.v);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"nope"[..]).is_err());
        assert!(read_checkpoint(&b"FLCK\x01\x00"[..]).is_err());
    }
}
