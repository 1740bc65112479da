//! The HSC1/ABN1 container: a 4-byte ASCII magic, three little-endian `u32`
//! extents (height, width, channels), then `h·w·c` little-endian `f32`
//! values in channel-major order.
//!
//! Values are held as `f64` in memory and narrowed to `f32` on disk, so a
//! save/load cycle is bit-exact for any raster whose values are already
//! representable in `f32` (in particular, anything that was itself loaded).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{AbundanceMap, EndmemberMatrix, HsiCube, HsiError, Raster, Result};

pub const HSC_MAGIC: [u8; 4] = *b"HSC1";
pub const ABN_MAGIC: [u8; 4] = *b"ABN1";
const HEADER: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterKind {
    Cube,
    Abundance,
}

impl RasterKind {
    fn magic(self) -> [u8; 4] {
        match self {
            RasterKind::Cube => HSC_MAGIC,
            RasterKind::Abundance => ABN_MAGIC,
        }
    }
}

pub fn encode_raster(kind: RasterKind, r: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER + 4 * r.data().len());
    out.extend_from_slice(&kind.magic());
    for d in [r.height(), r.width(), r.channels()] {
        let d = u32::try_from(d).map_err(|_| HsiError::Dimension(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for (i, &v) in r.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(HsiError::NonFinite(i));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(b: &[u8], at: usize) -> usize {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes")) as usize
}

/// Parses a container, returning its kind and contents.
pub fn decode_raster(bytes: &[u8]) -> Result<(RasterKind, Raster)> {
    if bytes.len() < HEADER {
        return Err(HsiError::Truncated {
            expected: HEADER,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    let kind = match magic {
        HSC_MAGIC => RasterKind::Cube,
        ABN_MAGIC => RasterKind::Abundance,
        found => {
            return Err(HsiError::BadMagic {
                found,
                expected: "HSC1 or ABN1".into(),
            })
        }
    };
    let (h, w, c) = (read_u32(bytes, 4), read_u32(bytes, 8), read_u32(bytes, 12));
    let expected = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER))
        .ok_or_else(|| HsiError::Dimension(format!("{h}×{w}×{c} overflows")))?;
    if bytes.len() < expected {
        return Err(HsiError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(HsiError::TrailingBytes(bytes.len() - expected));
    }
    let mut data = Vec::with_capacity(h * w * c);
    for (i, chunk) in bytes[HEADER..].chunks_exact(4).enumerate() {
        let f = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !f.is_finite() {
            return Err(HsiError::NonFinite(i));
        }
        data.push(f as f64);
    }
    Ok((kind, Raster::new(h, w, c, data)?))
}

fn load_kind(path: &Path, want: RasterKind) -> Result<Raster> {
    let bytes = fs::read(path)?;
    if bytes.len() >= 4 && bytes[..4] != want.magic() {
        return Err(HsiError::BadMagic {
            found: bytes[..4].try_into().expect("4 bytes"),
            expected: String::from_utf8_lossy(&want.magic()).into_owned(),
        });
    }
    decode_raster(&bytes).map(|(_, r)| r)
}

pub fn save_hsc(path: impl AsRef<Path>, cube: &HsiCube) -> Result<()> {
    fs::write(path, encode_raster(RasterKind::Cube, cube)?)?;
    Ok(())
}

pub fn load_hsc(path: impl AsRef<Path>) -> Result<HsiCube> {
    load_kind(path.as_ref(), RasterKind::Cube).map(HsiCube::from_raster)
}

pub fn save_abn(path: impl AsRef<Path>, a: &AbundanceMap) -> Result<()> {
    fs::write(path, encode_raster(RasterKind::Abundance, a)?)?;
    Ok(())
}

pub fn load_abn(path: impl AsRef<Path>) -> Result<AbundanceMap> {
    load_kind(path.as_ref(), RasterKind::Abundance).map(AbundanceMap::from_raster)
}

/// Loads either container kind.
pub fn load_any(path: impl AsRef<Path>) -> Result<(RasterKind, Raster)> {
    decode_raster(&fs::read(path)?)
}

/// One endmember per line, comma-separated, 17 significant digits.
pub fn write_endmembers_csv(path: impl AsRef<Path>, m: &EndmemberMatrix) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_endmembers_csv(path: impl AsRef<Path>) -> Result<EndmemberMatrix> {
    let text = fs::read_to_string(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| HsiError::Csv(format!("{v:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    EndmemberMatrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> HsiCube {
        let data = (0..2 * 3 * 4).map(|i| (i as f32 * 0.037).sin() as f64).collect();
        HsiCube::new(2, 3, 4, data).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode_raster(RasterKind::Cube, &sample()).unwrap();
        assert_eq!(&bytes[..4], b"HSC1");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 4 * 24);
        let second = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
        assert_eq!(second as f64, sample().data()[1]);
    }

    #[test]
    fn roundtrip_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.hsc");
        save_hsc(&p, &sample()).unwrap();
        assert_eq!(load_hsc(&p).unwrap(), sample());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_raster(RasterKind::Cube, &sample()).unwrap();
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_raster(short), Err(HsiError::Truncated { .. })));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_raster(&bytes), Err(HsiError::BadMagic { .. })));
    }

    #[test]
    fn wrong_kind_is_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.abn");
        let a = AbundanceMap::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
        save_abn(&p, &a).unwrap();
        assert_eq!(load_abn(&p).unwrap(), a);
        assert!(matches!(load_hsc(&p), Err(HsiError::BadMagic { .. })));
    }

    #[test]
    fn non_finite_rejected() {
        let mut bytes = encode_raster(RasterKind::Cube, &sample()).unwrap();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_raster(&bytes), Err(HsiError::NonFinite(0))));
        let bad = HsiCube::new(1, 1, 1, vec![f64::INFINITY]).unwrap();
        assert!(matches!(encode_raster(RasterKind::Cube, &bad), Err(HsiError::NonFinite(0))));
    }

    #[test]
    fn endmember_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = EndmemberMatrix::new(2, 3, vec![0.1, 0.2, 1.0 / 3.0, 0.4, 0.5, 0.6]).unwrap();
        write_endmembers_csv(&p, &m).unwrap();
        assert_eq!(read_endmembers_csv(&p).unwrap(), m);
    }
}
