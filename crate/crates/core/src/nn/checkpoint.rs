//! Binary model container.
//!
//! Layout (little-endian): magic `FSEGCKPT`, `u32` version, four `u32` config
//! fields (levels, base features, input channels, classes), `u64` optimizer
//! step, `u32` blob count, then per blob a `u32` name length, UTF-8 name,
//! five `u64` dims and the `f64` payload. A SHA-256 digest of everything
//! before it closes the file.

use sha2::{Digest, Sha256};

use super::unet::{UNetConfig, UNetModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FSEGCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_blob(out: &mut Vec<u8>, name: &str, shape: [usize; 5], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    for d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Blob {
    name: String,
    shape: [usize; 5],
    data: Vec<f64>,
}

fn blobs(model: &UNetModel) -> Vec<Blob> {
    let mut out = Vec::new();
    for (name, p) in model.param_names().iter().zip(model.params()) {
        out.push(Blob { name: format!("param/{name}"), shape: p.shape(), data: p.data().to_vec() });
    }
    for (name, s) in model.stat_names().iter().zip(model.running_stats()) {
        let c = s.mean.len();
        out.push(Blob { name: format!("bn_mean/{name}"), shape: [c, 1, 1, 1, 1], data: s.mean.clone() });
        out.push(Blob { name: format!("bn_var/{name}"), shape: [c, 1, 1, 1, 1], data: s.var.clone() });
        out.push(Blob { name: format!("bn_tracked/{name}"), shape: [1, 1, 1, 1, 1], data: vec![s.tracked as f64] });
    }
    for ((name, p), m) in model.param_names().iter().zip(model.params()).zip(model.moments()) {
        out.push(Blob { name: format!("adam_m/{name}"), shape: p.shape(), data: m.m.clone() });
        out.push(Blob { name: format!("adam_v/{name}"), shape: p.shape(), data: m.v.clone() });
    }
    out
}

pub fn save(model: &UNetModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let c = model.config();
    for v in [c.levels, c.base_features, c.in_channels, c.out_classes] {
        put_u32(&mut out, v as u32);
    }
    put_u64(&mut out, model.step());
    let all = blobs(model);
    put_u32(&mut out, all.len() as u32);
    for b in &all {
        put_blob(&mut out, &b.name, b.shape, &b.data);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Configuration stored in a checkpoint header, without reading the payload.
pub fn peek_config(bytes: &[u8]) -> Result<UNetConfig> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    Ok(UNetConfig {
        levels: r.u32()? as usize,
        base_features: r.u32()? as usize,
        in_channels: r.u32()? as usize,
        out_classes: r.u32()? as usize,
    })
}

pub fn load(bytes: &[u8]) -> Result<UNetModel> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if body.get(..8) != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch".into()));
    }
    let config = peek_config(body)?;
    config.validate().map_err(|e| Error::Checkpoint(format!("stored configuration invalid: {e}")))?;
    let mut model = UNetModel::new(config, 0)?;
    let mut r = Reader { buf: body, pos: 8 + 4 + 16 };
    model.set_step(r.u64()?);
    let expected = blobs(&model);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!("expected {} blobs, found {count}", expected.len())));
    }
    let mut seen = vec![false; expected.len()];
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?
            .to_string();
        let mut shape = [0usize; 5];
        for d in &mut shape {
            *d = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
        }
        let k = expected
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected blob {name}")))?;
        if seen[k] {
            return Err(Error::Checkpoint(format!("duplicate blob {name}")));
        }
        seen[k] = true;
        if shape != expected[k].shape {
            return Err(Error::Checkpoint(format!(
                "blob {name} has shape {shape:?}, model expects {:?}",
                expected[k].shape
            )));
        }
        let n = expected[k].data.len();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        assign(&mut model, &name, data)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last blob".into()));
    }
    Ok(model)
}

fn assign(model: &mut UNetModel, name: &str, data: Vec<f64>) -> Result<()> {
    let (kind, key) = name.split_once('/').ok_or_else(|| Error::Checkpoint(format!("malformed blob name {name}")))?;
    let param = || model.param_names().iter().position(|n| n == key);
    let stat = || model.stat_names().iter().position(|n| n == key);
    match kind {
        "param" => {
            let i = param().expect("validated name");
            model.params_mut()[i].data_mut().copy_from_slice(&data);
        }
        "adam_m" => {
            let i = param().expect("validated name");
            model.moments_mut()[i].m = data;
        }
        "adam_v" => {
            let i = param().expect("validated name");
            model.moments_mut()[i].v = data;
        }
        "bn_mean" => {
            let i = stat().expect("validated name");
            model.running_stats_mut()[i].mean = data;
        }
        "bn_var" => {
            let i = stat().expect("validated name");
            if data.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Checkpoint(format!("negative running variance in {key}")));
            }
            model.running_stats_mut()[i].var = data;
        }
        "bn_tracked" => {
            let i = stat().expect("validated name");
            let t = data[0];
            if !(t >= 0.0 && t.fract() == 0.0) {
                return Err(Error::Checkpoint(format!("invalid tracked count {t} in {key}")));
            }
            model.running_stats_mut()[i].tracked = t as u64;
        }
        _ => return Err(Error::Checkpoint(format!("unknown blob kind {kind}"))),
    }
    Ok(())
}
