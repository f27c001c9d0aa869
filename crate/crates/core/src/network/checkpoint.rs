//! Checkpoint container: `"CDNW"`, `u32 version`, 32-byte SHA-256 of the
//! backbone config, `u32 tensor count`, then per tensor `u32 name length`,
//! UTF-8 name, `u32 rank`, `rank x u32` dims and `f64` little-endian data.
//! Folded layers store their effective kernel under `.kernel` and no
//! `.modulator`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Backbone, BackboneConfig, Real, RegularizedConv, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CDNW";
pub const VERSION: u32 = 1;

fn digest_bytes(config: &BackboneConfig) -> Vec<u8> {
    let hex = config.digest();
    (0..32).map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap()).collect()
}

pub fn encode_checkpoint<T: Real>(net: &Backbone<T>) -> Vec<u8> {
    let mut tensors: Vec<(String, Tensor<T>)> = Vec::new();
    for (prefix, conv) in net.convs() {
        tensors.push((format!("{prefix}.kernel"), conv.effective_kernel_if_folded()));
        if !conv.is_folded() {
            tensors.push((format!("{prefix}.modulator"), conv.modulator().clone()));
        }
        if let Some(b) = conv.bias() {
            tensors.push((format!("{prefix}.bias"), b.clone()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&digest_bytes(net.config()));
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

impl<T: Real> RegularizedConv<T> {
    fn effective_kernel_if_folded(&self) -> Tensor<T> {
        if self.is_folded() {
            self.effective_kernel()
        } else {
            self.kernel().clone()
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Rebuild a network for `config` from checkpoint bytes. Refuses files whose
/// config digest differs from `config`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], config: &BackboneConfig, path: &Path) -> Result<Backbone<T>> {
    let mut c = Cursor { buf: bytes, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(Error::format(path, "bad checkpoint magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("checkpoint version {version}")));
    }
    if c.take(32)? != digest_bytes(config).as_slice() {
        return Err(Error::Config(format!(
            "checkpoint {} was written for a different model config (expected digest {})",
            path.display(),
            config.digest()
        )));
    }
    let count = c.u32()? as usize;
    let mut named = BTreeMap::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format(path, "tensor name not UTF-8"))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| T::cast(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        named.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }

    let mut net = Backbone::<T>::init(config, 0)?;
    let layout: Vec<(String, (usize, usize), (usize, usize))> = net
        .convs()
        .into_iter()
        .map(|(n, conv)| (n, conv.stride(), conv.padding()))
        .collect();
    for (prefix, stride, padding) in layout {
        let kernel = named
            .remove(&format!("{prefix}.kernel"))
            .ok_or_else(|| Error::format(path, format!("missing {prefix}.kernel")))?;
        let bias = named.remove(&format!("{prefix}.bias"));
        let conv = match named.remove(&format!("{prefix}.modulator")) {
            Some(m) => RegularizedConv::with_modulator(kernel, m, bias, stride, padding)?,
            None => RegularizedConv::prefolded(kernel, bias, stride, padding)?,
        };
        net.replace_conv(&prefix, conv)?;
    }
    if let Some(extra) = named.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {extra}")));
    }
    Ok(net)
}

pub fn write_checkpoint<T: Real>(path: &Path, net: &Backbone<T>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path, config: &BackboneConfig) -> Result<Backbone<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, config, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BackboneConfig {
        BackboneConfig::desk(4, 8, 3).with_channels([2, 2, 3, 3, 4, 4, 4])
    }

    #[test]
    fn roundtrip_unfolded_and_folded() {
        let net = Backbone::<f64>::init(&cfg(), 5).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(&bytes[..4], b"CDNW");
        let back: Backbone<f64> = decode_checkpoint(&bytes, &cfg(), Path::new("mem")).unwrap();
        assert_eq!(back, net);

        let mut folded = net.clone();
        folded.fold().unwrap();
        let back: Backbone<f64> = decode_checkpoint(&encode_checkpoint(&folded), &cfg(), Path::new("mem")).unwrap();
        assert!(back.is_folded());
        assert_eq!(back.parameter_count(), folded.parameter_count());
    }

    #[test]
    fn digest_mismatch_refused() {
        let net = Backbone::<f64>::init(&cfg(), 5).unwrap();
        let other = BackboneConfig { num_classes: 4, ..cfg() };
        let err = decode_checkpoint::<f64>(&encode_checkpoint(&net), &other, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
