//! Binary checkpoint container. Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "RYMCKPT\0"
//! version          u32      = 1
//! receptive_field  u64
//! hidden_units     u64
//! out_dim          u64
//! batch_size       u64
//! iterations       u64
//! learning_rate    f64
//! temperature      f64
//! seed             u64
//! hybrid           u8       0 | 1
//! optimizer        u8       0 = sgd, 1 = adam
//! n_sessions       u32
//! per session:
//!   id_len u32, id bytes (UTF-8), n_channels u64,
//!   six tensors w1 b1 w2 b2 w3 b3, each: len u64 then len x f64
//! loss_len         u64, then loss_len x f64
//! digest           32 bytes SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EmbedderModel, Encoder, EncoderConfig, EncoderParams, Optimizer, SessionEncoder};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RYMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(model: &EmbedderModel) -> Vec<u8> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.receptive_field, c.hidden_units, c.out_dim, c.batch_size, c.iterations] {
        put_u64(&mut buf, v as u64);
    }
    put_f64(&mut buf, c.learning_rate);
    put_f64(&mut buf, c.temperature);
    put_u64(&mut buf, c.seed);
    buf.push(c.hybrid as u8);
    buf.push(match c.optimizer {
        Optimizer::Sgd => 0,
        Optimizer::Adam => 1,
    });
    buf.extend_from_slice(&(model.sessions.len() as u32).to_le_bytes());
    for s in &model.sessions {
        buf.extend_from_slice(&(s.session_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(s.session_id.as_bytes());
        put_u64(&mut buf, s.encoder.geometry().n_channels as u64);
        for tensor in s.encoder.params().slices() {
            put_u64(&mut buf, tensor.len() as u64);
            for &v in tensor {
                put_f64(&mut buf, v);
            }
        }
    }
    put_u64(&mut buf, model.loss_history.len() as u64);
    for &v in &model.loss_history {
        put_f64(&mut buf, v);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse("checkpoint", "truncated"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::parse("checkpoint", "count overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EmbedderModel> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 {
        return Err(Error::parse("checkpoint", "truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::parse("checkpoint", "digest mismatch"));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::parse("checkpoint", "bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse("checkpoint", format!("unsupported version {version}")));
    }
    let mut config = EncoderConfig {
        receptive_field: r.usize()?,
        hidden_units: r.usize()?,
        out_dim: r.usize()?,
        batch_size: r.usize()?,
        iterations: r.usize()?,
        learning_rate: r.f64()?,
        temperature: r.f64()?,
        seed: r.u64()?,
        ..EncoderConfig::default()
    };
    config.hybrid = r.u8()? != 0;
    config.optimizer = match r.u8()? {
        0 => Optimizer::Sgd,
        1 => Optimizer::Adam,
        other => return Err(Error::parse("checkpoint", format!("unknown optimizer tag {other}"))),
    };
    let n_sessions = r.u32()? as usize;
    let mut sessions = Vec::with_capacity(n_sessions);
    for _ in 0..n_sessions {
        let id_len = r.u32()? as usize;
        let session_id = String::from_utf8(r.take(id_len)?.to_vec())
            .map_err(|_| Error::parse("checkpoint", "session id is not UTF-8"))?;
        let n_channels = r.usize()?;
        let geometry = config.geometry(n_channels);
        let mut params = EncoderParams::zeros(&geometry);
        for tensor in params.slices_mut() {
            let len = r.usize()?;
            if len != tensor.len() {
                return Err(Error::parse("checkpoint", "tensor length does not match config"));
            }
            for v in tensor.iter_mut() {
                *v = r.f64()?;
            }
        }
        sessions.push(SessionEncoder {
            session_id,
            encoder: Encoder::from_params(geometry, params)?,
        });
    }
    let loss_len = r.usize()?;
    let mut loss_history = Vec::with_capacity(loss_len.min(1 << 20));
    for _ in 0..loss_len {
        loss_history.push(r.f64()?);
    }
    if r.pos != body.len() {
        return Err(Error::parse("checkpoint", "trailing bytes"));
    }
    Ok(EmbedderModel {
        config,
        sessions,
        loss_history,
    })
}

pub fn write_checkpoint(model: &EmbedderModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<EmbedderModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
