//! Bit-exact raster file I/O (CHR1 format) and atomic file writing.
//!
//! Layout, little-endian throughout: magic "CHR1"; u8 dtype (0 = scalar f32,
//! 1 = complex f32 pairs); u8 reserved; u16 reserved; u32 width; u32 height;
//! payload of width*height samples; then width*height mask bytes (0 invalid,
//! 1 valid).

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::raster::{ComplexRaster, ScalarRaster, DIM_CAP};

pub const RASTER_MAGIC: &[u8; 4] = b"CHR1";

const DTYPE_SCALAR: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

/// Either raster flavor, as read back from disk.
#[derive(Debug, Clone)]
pub enum Raster {
    Scalar(ScalarRaster),
    Complex(ComplexRaster),
}

impl Raster {
    pub fn into_scalar(self) -> Result<ScalarRaster> {
        match self {
            Raster::Scalar(r) => Ok(r),
            Raster::Complex(_) => Err(Error::BadDtype(DTYPE_COMPLEX)),
        }
    }

    pub fn into_complex(self) -> Result<ComplexRaster> {
        match self {
            Raster::Complex(r) => Ok(r),
            Raster::Scalar(_) => Err(Error::BadDtype(DTYPE_SCALAR)),
        }
    }
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn header(dtype: u8, width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16);
    out.extend_from_slice(RASTER_MAGIC);
    out.push(dtype);
    out.push(0u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out
}

pub fn scalar_raster_bytes(raster: &ScalarRaster) -> Vec<u8> {
    let mut out = header(DTYPE_SCALAR, raster.width(), raster.height());
    for v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(raster.valid().iter().map(|&v| u8::from(v)));
    out
}

pub fn complex_raster_bytes(raster: &ComplexRaster) -> Vec<u8> {
    let mut out = header(DTYPE_COMPLEX, raster.width(), raster.height());
    for v in raster.data() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out.extend(raster.valid().iter().map(|&v| u8::from(v)));
    out
}

pub fn write_scalar_raster(raster: &ScalarRaster, path: &Path) -> Result<()> {
    write_atomic(path, &scalar_raster_bytes(raster))
}

pub fn write_complex_raster(raster: &ComplexRaster, path: &Path) -> Result<()> {
    write_atomic(path, &complex_raster_bytes(raster))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path)?;
    parse_raster(&bytes)
}

pub fn read_scalar_raster(path: &Path) -> Result<ScalarRaster> {
    read_raster(path)?.into_scalar()
}

pub fn read_complex_raster(path: &Path) -> Result<ComplexRaster> {
    read_raster(path)?.into_complex()
}

pub fn parse_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[0..4] != RASTER_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated);
    }
    let dtype = bytes[4];
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension);
    }
    if width > DIM_CAP || height > DIM_CAP {
        return Err(Error::DimensionCap { width, height, cap: DIM_CAP });
    }
    let n = width * height;
    let sample_bytes = match dtype {
        DTYPE_SCALAR => 4,
        DTYPE_COMPLEX => 8,
        other => return Err(Error::BadDtype(other)),
    };
    let want = 16 + n * sample_bytes + n;
    if bytes.len() < want {
        return Err(Error::Truncated);
    }
    let payload = &bytes[16..16 + n * sample_bytes];
    let mask = &bytes[16 + n * sample_bytes..want];
    let valid: Vec<bool> = mask.iter().map(|&b| b != 0).collect();
    match dtype {
        DTYPE_SCALAR => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Raster::Scalar(ScalarRaster::new(width, height, data, valid)?))
        }
        _ => {
            let data: Vec<Complex32> = payload
                .chunks_exact(8)
                .map(|c| {
                    Complex32::new(
                        f32::from_le_bytes(c[0..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..8].try_into().unwrap()),
                    )
                })
                .collect();
            Ok(Raster::Complex(ComplexRaster::new(width, height, data, valid)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_round_trip_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.chr");
        let mut r = ScalarRaster::new(
            3,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![true; 6],
        )
        .unwrap();
        r.set(1, 1, 5.0, false);
        write_scalar_raster(&r, &path).unwrap();
        let back = read_scalar_raster(&path).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn hand_assembled_3x2_fixture() {
        // byte-level oracle: 3x2 scalar, data 1..6, pixel (1,1) masked out
        let mut expect = Vec::new();
        expect.extend_from_slice(b"CHR1");
        expect.extend_from_slice(&[0u8, 0u8, 0u8, 0u8]); // dtype 0 + reserved
        expect.extend_from_slice(&3u32.to_le_bytes());
        expect.extend_from_slice(&2u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        expect.extend_from_slice(&[1, 1, 1, 1, 0, 1]);
        let r = ScalarRaster::new(
            3,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![true, true, true, true, false, true],
        )
        .unwrap();
        assert_eq!(scalar_raster_bytes(&r), expect);
        let back = parse_raster(&expect).unwrap().into_scalar().unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn complex_1x1_fixture() {
        // header + 8 payload bytes little-endian + 1 mask byte
        let r = ComplexRaster::filled(1, 1, Complex32::new(0.5, -0.5)).unwrap();
        let bytes = complex_raster_bytes(&r);
        assert_eq!(bytes.len(), 16 + 8 + 1);
        assert_eq!(&bytes[0..4], b"CHR1");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-0.5f32).to_le_bytes());
        assert_eq!(bytes[24], 1);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = scalar_raster_bytes(&ScalarRaster::filled(2, 2, 0.0).unwrap());
        bytes[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(parse_raster(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_rejected() {
        let bytes = scalar_raster_bytes(&ScalarRaster::filled(2, 2, 0.0).unwrap());
        assert!(matches!(parse_raster(&bytes[..bytes.len() - 1]), Err(Error::Truncated)));
        assert!(matches!(parse_raster(&bytes[..10]), Err(Error::Truncated)));
    }

    #[test]
    fn deterministic_bytes() {
        let r = ScalarRaster::filled(5, 4, 1.25).unwrap();
        assert_eq!(scalar_raster_bytes(&r), scalar_raster_bytes(&r));
    }
}
