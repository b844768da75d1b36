//! Array container files and 16-bit graymaps.
//!
//! Container layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `DYNRTNSR` |
//! | 4     | format version (u32) |
//! | 4     | element type code (u32, 1 = f64) |
//! | 4     | mode count (u32) |
//! | 8 * d | extents (u64 each) |
//! | 8 * n | values, f64 little-endian, mode 0 fastest |

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mri::{CoilSensitivities, ComplexImageSeries, MaskKind, MultiCoilKSpace, SamplingMask};
use crate::tensor::{DenseTensor, MAX_MODES};

pub const MAGIC: [u8; 8] = *b"DYNRTNSR";
pub const FORMAT_VERSION: u32 = 1;
pub const TYPE_F64: u32 = 1;

pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * t.rank() + 8 * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&TYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &n in t.shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn truncated(what: &str) -> Error {
    Error::Io(std::io::Error::new(ErrorKind::UnexpectedEof, format!("truncated container: {what}")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let code = r.u32("type code")?;
    if code != TYPE_F64 {
        return Err(Error::Format(format!("unsupported element type code {code}")));
    }
    let rank = r.u32("mode count")? as usize;
    if rank == 0 || rank > MAX_MODES {
        return Err(Error::Format(format!("mode count {rank} outside 1..={MAX_MODES}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let n = usize::try_from(r.u64("extent")?).map_err(|_| Error::Format("extent overflows".into()))?;
        shape.push(n);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &n| a.checked_mul(n))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflows".into()))?, "values")?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    DenseTensor::from_vec(&shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_tensor(t: &DenseTensor, path: &Path) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    decode_tensor(&fs::read(path)?)
}

fn retag<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Format(m),
        other => other,
    })
}

pub fn load_image(path: &Path) -> Result<ComplexImageSeries> {
    retag(ComplexImageSeries::from_tensor(load_tensor(path)?))
}

pub fn load_kspace(path: &Path) -> Result<MultiCoilKSpace> {
    retag(MultiCoilKSpace::from_tensor(load_tensor(path)?))
}

pub fn load_sensitivities(path: &Path) -> Result<CoilSensitivities> {
    retag(CoilSensitivities::from_tensor(load_tensor(path)?))
}

/// Masks carry no nominal acceleration on disk; the achieved one is used.
pub fn load_mask(path: &Path, kind: MaskKind) -> Result<SamplingMask> {
    let pattern = load_tensor(path)?;
    let total = pattern.len() as f64;
    let ones = pattern.data().iter().filter(|&&v| v != 0.0).count() as f64;
    retag(SamplingMask::from_pattern(pattern, total / ones.max(1.0), kind))
}

/// Binary 16-bit graymap (`P5`, maxval 65535, big-endian samples).
/// `pixels` are row-major `height x width` values in `[0, 1]`, clamped.
pub fn encode_pgm16(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count");
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in pixels {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Parses a graymap written by [`encode_pgm16`] (or any 8/16-bit `P5`).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated graymap header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Format(format!("not a binary graymap: {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad header field `{s}`")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    let wide = maxval > 255;
    let body = bytes.get(pos..).unwrap_or(&[]);
    let need = w * h * if wide { 2 } else { 1 };
    if body.len() < need {
        return Err(truncated("graymap body"));
    }
    let px = if wide {
        body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body[..need].iter().map(|&b| b as u16).collect()
    };
    Ok((w, h, maxval as u16, px))
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm16(width, height, pixels))?;
    Ok(())
}
