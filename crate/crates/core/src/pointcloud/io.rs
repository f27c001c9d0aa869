//! Little-endian binary containers.
//!
//! Point files: `"PCRV"`, `u32 version = 1`, `u32 count`, `u8 has_labels`,
//! then per point `4 x f32 (x, y, z, intensity)` followed by a `u16` label
//! when labels are present (`0xFFFF` = IGNORE).
//!
//! Grid files: `"PCRV"`, `u32 version = 2`, then one or more grid records
//! `u32 h, u32 w, u32 channels, u8 element` (0 = f32, 1 = u16, 2 = u32) and
//! `h * w * channels` channel-major values. A range image is an f32 record
//! with 6 channels, a u32 point-index record, then `f64 fov_up, f64 fov_down`;
//! a label map is a single u16 record.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LabelMap, Point, PointCloud, Projection, RangeImage, RV_CHANNELS};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCRV";
pub const POINTS_VERSION: u32 = 1;
pub const GRID_VERSION: u32 = 2;

const ELEM_F32: u8 = 0;
const ELEM_U16: u8 = 1;
const ELEM_U32: u8 = 2;

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let labels = cloud.labels();
    let stride = 16 + if labels.is_some() { 2 } else { 0 };
    let mut out = Vec::with_capacity(13 + cloud.len() * stride);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&POINTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.push(labels.is_some() as u8);
    for (i, p) in cloud.points().iter().enumerate() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = labels {
            out.extend_from_slice(&l[i].to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, version: u32) -> Result<()> {
        if self.take(4)? != MAGIC {
            return Err(Error::format(self.path, "bad magic"));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::format(self.path, format!("version {v}, expected {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

pub fn decode_cloud(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(POINTS_VERSION)?;
    let count = r.u32()? as usize;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::format(path, format!("has_labels byte {other}"))),
    };
    let mut points = Vec::with_capacity(count);
    let mut labels = has_labels.then(|| Vec::with_capacity(count));
    for _ in 0..count {
        points.push(Point::new(r.f32()?, r.f32()?, r.f32()?, r.f32()?));
        if let Some(l) = labels.as_mut() {
            l.push(r.u16()?);
        }
    }
    r.finish()?;
    match labels {
        Some(l) => PointCloud::with_labels(points, l),
        None => PointCloud::new(points),
    }
}

fn grid_header(out: &mut Vec<u8>, h: usize, w: usize, channels: usize, elem: u8) {
    for v in [h as u32, w as u32, channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(elem);
}

fn file_header(out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
}

pub fn encode_range_image(ri: &RangeImage) -> Vec<u8> {
    let (h, w) = (ri.height(), ri.width());
    let mut out = Vec::new();
    file_header(&mut out);
    grid_header(&mut out, h, w, RV_CHANNELS, ELEM_F32);
    for v in ri.channels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    grid_header(&mut out, h, w, 1, ELEM_U32);
    for v in ri.point_index() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ri.projection().fov_up.to_le_bytes());
    out.extend_from_slice(&ri.projection().fov_down.to_le_bytes());
    out
}

fn expect_grid(r: &mut Reader, channels: usize, elem: u8) -> Result<(usize, usize)> {
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let c = r.u32()? as usize;
    let e = r.u8()?;
    if c != channels || e != elem {
        return Err(Error::format(
            r.path,
            format!("grid record has {c} channels of type {e}, expected {channels} of type {elem}"),
        ));
    }
    Ok((h, w))
}

pub fn decode_range_image(bytes: &[u8], path: &Path) -> Result<RangeImage> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(GRID_VERSION)?;
    let (h, w) = expect_grid(&mut r, RV_CHANNELS, ELEM_F32)?;
    let channels = (0..RV_CHANNELS * h * w).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let (h2, w2) = expect_grid(&mut r, 1, ELEM_U32)?;
    if (h2, w2) != (h, w) {
        return Err(Error::format(path, "index grid shape differs from channel grid"));
    }
    let index = (0..h * w).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let fov_up = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let fov_down = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
    r.finish()?;
    let projection = Projection::new(h, w, fov_up, fov_down)?;
    RangeImage::from_parts(projection, channels, index)
}

pub fn encode_label_map(lm: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + lm.as_slice().len() * 2);
    file_header(&mut out);
    grid_header(&mut out, lm.height(), lm.width(), 1, ELEM_U16);
    for v in lm.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_label_map(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.header(GRID_VERSION)?;
    let (h, w) = expect_grid(&mut r, 1, ELEM_U16)?;
    let data = (0..h * w).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    LabelMap::from_vec(h, w, data)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, &encode_cloud(cloud))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    decode_cloud(&read_bytes(path)?, path)
}

pub fn write_range_image(path: &Path, ri: &RangeImage) -> Result<()> {
    write_bytes(path, &encode_range_image(ri))
}

pub fn read_range_image(path: &Path) -> Result<RangeImage> {
    decode_range_image(&read_bytes(path)?, path)
}

pub fn write_label_map(path: &Path, lm: &LabelMap) -> Result<()> {
    write_bytes(path, &encode_label_map(lm))
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    decode_label_map(&read_bytes(path)?, path)
}
