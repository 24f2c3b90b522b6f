//! On-disk formats.
//!
//! Three formats, all little-endian:
//!
//! * PQUAD ("PQD1"): one polarization quad as raw 32-bit floats. Chosen over
//!   image stacks so that synthetic data round-trips bit-exactly.
//! * Checkpoint ("PCKPT1"): a parameter set as named records, EOF-delimited.
//! * PNG16: lossy export of single fields for viewing. Values are clamped to
//!   [0, 1] and quantized to 16 bits, so a round trip is exact only to
//!   0.5 / 65535.
//!
//! Every writer goes through a temp file and an atomic rename: a crash mid-write
//! leaves any previous file intact.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, ImageBuffer, ImageOutputFormat, Luma, Rgb};

use crate::error::{Error, Result};
use crate::polar::{Field, PolarQuad};
use crate::scalar::Scalar;
use crate::tensor::ParamSet;

const PQUAD_MAGIC: &[u8; 4] = b"PQD1";
const CHECKPOINT_MAGIC: &[u8; 6] = b"PCKPT1";

/// Allocation guard for dimension fields read from files.
const MAX_VALUES_PER_PLANE: u64 = 1 << 28;

/// Writes `bytes` next to `path` and renames into place.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| {
        Error::Data(format!("renaming {} into place failed: {e}", tmp.display()))
    })
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Data(format!("{what}: file ends mid-record")))
}

/// Serializes a quad: magic, u32 height/width/channels, then the four angle
/// planes in order 0, 45, 90, 135, each channel-major row-major f32.
pub fn pquad_bytes<T: Scalar>(quad: &PolarQuad<T>) -> Vec<u8> {
    let (h, w, c) = (quad.height(), quad.width(), quad.channels());
    let mut out = Vec::with_capacity(16 + 16 * h * w * c);
    out.extend_from_slice(PQUAD_MAGIC);
    out.write_u32::<LittleEndian>(h as u32).unwrap();
    out.write_u32::<LittleEndian>(w as u32).unwrap();
    out.write_u32::<LittleEndian>(c as u32).unwrap();
    for plane in quad.planes() {
        for &v in plane.values() {
            out.write_f32::<LittleEndian>(v.to_f64() as f32).unwrap();
        }
    }
    out
}

pub fn write_pquad<T: Scalar>(path: impl AsRef<Path>, quad: &PolarQuad<T>) -> Result<()> {
    atomic_write(path, &pquad_bytes(quad))
}

pub fn read_pquad<T: Scalar>(path: impl AsRef<Path>) -> Result<PolarQuad<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let mut r = Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic, "PQUAD header")?;
    if &magic != PQUAD_MAGIC {
        return Err(Error::Data(format!(
            "{} is not a PQUAD file (bad magic)",
            path.display()
        )));
    }
    let h = r.read_u32::<LittleEndian>().map_err(|_| truncated("PQUAD header"))? as usize;
    let w = r.read_u32::<LittleEndian>().map_err(|_| truncated("PQUAD header"))? as usize;
    let c = r.read_u32::<LittleEndian>().map_err(|_| truncated("PQUAD header"))? as usize;
    if h == 0 || w == 0 {
        return Err(Error::Data(format!("PQUAD dimensions must be nonzero, got {h}x{w}")));
    }
    if c != 1 && c != 3 {
        return Err(Error::Data(format!("PQUAD channels must be 1 or 3, got {c}")));
    }
    let plane_len = (h as u64) * (w as u64) * (c as u64);
    if plane_len > MAX_VALUES_PER_PLANE {
        return Err(Error::Data(format!("PQUAD dimensions {h}x{w}x{c} are implausibly large")));
    }
    let expected = 16 + 16 * plane_len;
    if bytes.len() as u64 != expected {
        return Err(Error::Data(format!(
            "PQUAD payload is {} bytes, expected {expected} for {h}x{w}x{c}",
            bytes.len()
        )));
    }

    let mut planes = Vec::with_capacity(4);
    for _ in 0..4 {
        let mut data = Vec::with_capacity(plane_len as usize);
        for _ in 0..plane_len {
            let v = r.read_f32::<LittleEndian>().map_err(|_| truncated("PQUAD plane"))?;
            data.push(T::from_f64(v as f64));
        }
        planes.push(Field::new(h, w, c, data)?);
    }
    let planes: [Field<T>; 4] = planes.try_into().map_err(|_| truncated("PQUAD plane"))?;
    PolarQuad::new(planes)
}

fn truncated(what: &str) -> Error {
    Error::Data(format!("{what}: file ends mid-record"))
}

/// Serializes a parameter set: magic, then one record per parameter in
/// insertion order (u32 name length, name bytes, u32 rank = 4, u32 dims,
/// f32 values). The end of the file ends the record stream.
pub fn checkpoint_bytes<T: Scalar>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for (name, tensor) in params.iter() {
        out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.write_u32::<LittleEndian>(4).unwrap();
        for d in tensor.shape() {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        for v in tensor.to_vec() {
            out.write_f32::<LittleEndian>(v.to_f64() as f32).unwrap();
        }
    }
    out
}

pub fn write_checkpoint<T: Scalar>(path: impl AsRef<Path>, params: &ParamSet<T>) -> Result<()> {
    atomic_write(path, &checkpoint_bytes(params))
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamSet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let mut r = Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 6];
    read_exact_or_truncated(&mut r, &mut magic, "checkpoint header")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }

    let mut params = ParamSet::new();
    while let Some(name_len) = read_u32_or_eof(&mut r)? {
        if name_len == 0 || name_len > 4096 {
            return Err(Error::Data(format!("checkpoint record name length {name_len} is invalid")));
        }
        let mut name_bytes = vec![0u8; name_len as usize];
        read_exact_or_truncated(&mut r, &mut name_bytes, "checkpoint record name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Data("checkpoint record name is not UTF-8".into()))?;
        let rank = r
            .read_u32::<LittleEndian>()
            .map_err(|_| truncated("checkpoint record rank"))?;
        if rank != 4 {
            return Err(Error::Data(format!(
                "checkpoint record {name} has rank {rank}, expected 4"
            )));
        }
        let mut shape = [0usize; 4];
        let mut count: u64 = 1;
        for d in &mut shape {
            let v = r
                .read_u32::<LittleEndian>()
                .map_err(|_| truncated("checkpoint record dims"))?;
            *d = v as usize;
            count = count.saturating_mul(v as u64);
        }
        if count == 0 || count > MAX_VALUES_PER_PLANE {
            return Err(Error::Data(format!(
                "checkpoint record {name} has implausible shape {shape:?}"
            )));
        }
        let mut data = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let v = r
                .read_f32::<LittleEndian>()
                .map_err(|_| truncated("checkpoint record data"))?;
            data.push(T::from_f64(v as f64));
        }
        if params.contains(&name) {
            return Err(Error::Data(format!("checkpoint repeats parameter {name}")));
        }
        params.insert(&name, shape, data);
    }
    Ok(params)
}

/// Reads a u32 at a record boundary; clean EOF yields None, a partial value
/// is a truncation error.
fn read_u32_or_eof(r: &mut impl Read) -> Result<Option<u32>> {
    let mut buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut buf[got..])?;
        if n == 0 {
            return if got == 0 {
                Ok(None)
            } else {
                Err(truncated("checkpoint record length"))
            };
        }
        got += n;
    }
    Ok(Some(u32::from_le_bytes(buf)))
}

fn quantize<T: Scalar>(v: T) -> u16 {
    (v.to_f64().clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Exports a field as a 16-bit PNG (grayscale for 1 channel, RGB for 3).
/// Values are clamped to [0, 1] and quantized; this is for viewing, not for
/// lossless storage.
pub fn export_png16<T: Scalar>(path: impl AsRef<Path>, field: &Field<T>) -> Result<()> {
    let (h, w, c) = (field.height(), field.width(), field.channels());
    let image = match c {
        1 => {
            let data: Vec<u16> = field.values().iter().map(|&v| quantize(v)).collect();
            let buf: ImageBuffer<Luma<u16>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, data)
                    .expect("buffer length matches dimensions");
            DynamicImage::ImageLuma16(buf)
        }
        3 => {
            // Field planes are channel-major; PNG wants interleaved pixels.
            let vals = field.values();
            let mut data = Vec::with_capacity(3 * h * w);
            for px in 0..h * w {
                for ch in 0..3 {
                    data.push(quantize(vals[ch * h * w + px]));
                }
            }
            let buf: ImageBuffer<Rgb<u16>, _> =
                ImageBuffer::from_raw(w as u32, h as u32, data)
                    .expect("buffer length matches dimensions");
            DynamicImage::ImageRgb16(buf)
        }
        other => {
            return Err(Error::Data(format!("PNG export supports 1 or 3 channels, got {other}")))
        }
    };
    let mut bytes = Cursor::new(Vec::new());
    image
        .write_to(&mut bytes, ImageOutputFormat::Png)
        .map_err(|e| Error::Data(format!("encoding PNG failed: {e}")))?;
    atomic_write(path, &bytes.into_inner())
}

/// Imports a PNG as a field in [0, 1]. Accepts 8- or 16-bit grayscale or RGB.
pub fn import_png16(path: impl AsRef<Path>) -> Result<Field<f64>> {
    let path = path.as_ref();
    let image = image::open(path)
        .map_err(|e| Error::Data(format!("reading {}: {e}", path.display())))?;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let interleaved_to_field = |data: Vec<f64>, c: usize| -> Result<Field<f64>> {
        let mut planar = vec![0.0; data.len()];
        for px in 0..h * w {
            for ch in 0..c {
                planar[ch * h * w + px] = data[px * c + ch];
            }
        }
        Field::new(h, w, c, planar)
    };
    match image {
        DynamicImage::ImageLuma16(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            Field::new(h, w, 1, data)
        }
        DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Field::new(h, w, 1, data)
        }
        DynamicImage::ImageRgb16(buf) => {
            let data: Vec<f64> = buf.into_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            interleaved_to_field(data, 3)
        }
        DynamicImage::ImageRgb8(buf) => {
            let data: Vec<f64> = buf.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
            interleaved_to_field(data, 3)
        }
        other => Err(Error::Data(format!(
            "unsupported PNG layout {:?}; expected 8/16-bit grayscale or RGB",
            other.color()
        ))),
    }
}
