//! MVOL container: a minimal single-volume file format.
//!
//! Byte layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MVOL"
//!      4     4  version (u32, currently 1)
//!      8     4  dtype   (u32: 0 f32 scalar, 1 u8 labels, 2 i16 labels,
//!                        3 f32 3-vector per voxel)
//!     12    12  nx, ny, nz (u32 each)
//!     24    12  spacing sx, sy, sz (f32 each)
//!     36     -  payload, x fastest; vectors interleaved (ux, uy, uz)
//! ```
//!
//! Writers refuse non-finite payloads; readers validate magic, version,
//! dtype, and exact payload length, and reject non-finite or negative
//! label data, so every in-memory volume loaded from disk is well formed.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{AnyVolume, Dims, DisplacementField, LabelVolume, ScalarVolume, Spacing};

const MAGIC: [u8; 4] = *b"MVOL";
const VERSION: u32 = 1;

const DTYPE_F32_SCALAR: u32 = 0;
const DTYPE_U8_LABELS: u32 = 1;
const DTYPE_I16_LABELS: u32 = 2;
const DTYPE_F32_VECTOR3: u32 = 3;

const HEADER_LEN: usize = 36;

/// Largest label storable in the wider of the two label dtypes.
const MAX_LABEL: u16 = i16::MAX as u16;

fn payload_len(dtype: u32, nvox: usize) -> usize {
    match dtype {
        DTYPE_F32_SCALAR => 4 * nvox,
        DTYPE_U8_LABELS => nvox,
        DTYPE_I16_LABELS => 2 * nvox,
        DTYPE_F32_VECTOR3 => 12 * nvox,
        _ => unreachable!("validated dtype"),
    }
}

/// Writes any volume kind to an MVOL file.
///
/// Labels are stored as u8 when every value fits, i16 otherwise; reading
/// back always reproduces the in-memory object exactly.
pub fn write_mvol<P: AsRef<Path>>(path: P, object: &AnyVolume) -> Result<()> {
    let path = path.as_ref();
    let (dtype, dims, spacing) = match object {
        AnyVolume::Scalar(v) => {
            check_finite("scalar payload", &v.data)?;
            (DTYPE_F32_SCALAR, v.dims, v.spacing)
        }
        AnyVolume::Labels(v) => {
            let max = v.data.iter().copied().max().unwrap_or(0);
            if max > MAX_LABEL {
                return Err(Error::invalid(format!(
                    "label value {max} exceeds the storable maximum {MAX_LABEL}"
                )));
            }
            let dtype = if max <= u16::from(u8::MAX) {
                DTYPE_U8_LABELS
            } else {
                DTYPE_I16_LABELS
            };
            (dtype, v.dims, v.spacing)
        }
        AnyVolume::Field(v) => {
            check_finite("field payload", &v.data)?;
            (DTYPE_F32_VECTOR3, v.dims, v.spacing)
        }
    };

    let nvox = crate::volume::num_voxels(dims);
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload_len(dtype, nvox));
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&dtype.to_le_bytes());
    for n in [dims.0, dims.1, dims.2] {
        let n = u32::try_from(n)
            .map_err(|_| Error::invalid(format!("dimension {n} exceeds u32 range")))?;
        bytes.extend_from_slice(&n.to_le_bytes());
    }
    for s in [spacing.0, spacing.1, spacing.2] {
        bytes.extend_from_slice(&s.to_le_bytes());
    }

    match object {
        AnyVolume::Scalar(v) => {
            for &x in &v.data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        AnyVolume::Labels(v) => {
            if dtype == DTYPE_U8_LABELS {
                for &x in &v.data {
                    bytes.push(x as u8);
                }
            } else {
                for &x in &v.data {
                    bytes.extend_from_slice(&(x as i16).to_le_bytes());
                }
            }
        }
        AnyVolume::Field(v) => {
            for &x in &v.data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
    }

    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

/// Reads an MVOL file; the payload kind is tagged by the stored dtype.
pub fn read_mvol<P: AsRef<Path>>(path: P) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;

    if bytes.len() >= 4 && bytes[0..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }

    let version = u32_at(&bytes, 4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            found: version,
        });
    }
    let dtype = u32_at(&bytes, 8);
    if dtype > DTYPE_F32_VECTOR3 {
        return Err(Error::UnsupportedDtype {
            path: path.into(),
            found: dtype,
        });
    }

    let nx = u32_at(&bytes, 12) as usize;
    let ny = u32_at(&bytes, 16) as usize;
    let nz = u32_at(&bytes, 20) as usize;
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(malformed(path, "zero dimension in header"));
    }
    let dims: Dims = (nx, ny, nz);
    let nvox = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .ok_or_else(|| malformed(path, "dimension product overflows"))?;

    let spacing: Spacing = (f32_at(&bytes, 24), f32_at(&bytes, 28), f32_at(&bytes, 32));
    for s in [spacing.0, spacing.1, spacing.2] {
        if !(s.is_finite() && s > 0.0) {
            return Err(malformed(path, &format!("non-positive spacing {s}")));
        }
    }

    let expected = HEADER_LEN + payload_len(dtype, nvox);
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(malformed(
            path,
            &format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }

    let payload = &bytes[HEADER_LEN..];
    match dtype {
        DTYPE_F32_SCALAR => {
            let data = read_f32s(payload, nvox);
            check_finite_read(path, &data)?;
            Ok(AnyVolume::Scalar(ScalarVolume {
                dims,
                spacing,
                data,
            }))
        }
        DTYPE_U8_LABELS => {
            let data = payload.iter().map(|&b| u16::from(b)).collect();
            Ok(AnyVolume::Labels(LabelVolume {
                dims,
                spacing,
                data,
            }))
        }
        DTYPE_I16_LABELS => {
            let mut data = Vec::with_capacity(nvox);
            for i in 0..nvox {
                let v = i16::from_le_bytes([payload[2 * i], payload[2 * i + 1]]);
                if v < 0 {
                    return Err(malformed(path, &format!("negative label value {v}")));
                }
                data.push(v as u16);
            }
            Ok(AnyVolume::Labels(LabelVolume {
                dims,
                spacing,
                data,
            }))
        }
        DTYPE_F32_VECTOR3 => {
            let data = read_f32s(payload, 3 * nvox);
            check_finite_read(path, &data)?;
            Ok(AnyVolume::Field(DisplacementField {
                dims,
                spacing,
                data,
            }))
        }
        _ => unreachable!("validated dtype"),
    }
}

impl ScalarVolume {
    pub fn write_mvol<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        write_mvol(path, &AnyVolume::Scalar(self.clone()))
    }
}

impl LabelVolume {
    pub fn write_mvol<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        write_mvol(path, &AnyVolume::Labels(self.clone()))
    }
}

impl DisplacementField {
    pub fn write_mvol<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        write_mvol(path, &AnyVolume::Field(self.clone()))
    }
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn f32_at(bytes: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn read_f32s(payload: &[u8], n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| f32_at(payload, 4 * i))
        .collect()
}

fn check_finite(what: &str, data: &[f32]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: what.to_string(),
        });
    }
    Ok(())
}

fn check_finite_read(path: &Path, data: &[f32]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("payload of {}", path.display()),
        });
    }
    Ok(())
}

fn malformed(path: &Path, what: &str) -> Error {
    Error::MalformedFile {
        path: path.into(),
        what: what.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn roundtrip(obj: AnyVolume) -> AnyVolume {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        write_mvol(&p, &obj).unwrap();
        read_mvol(&p).unwrap()
    }

    #[test]
    fn scalar_2x2x2_file_is_68_bytes() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = ScalarVolume::from_vec(
            (2, 2, 2),
            (1.0, 1.0, 1.0),
            (0..8).map(|i| i as f32).collect(),
        )
        .unwrap();
        v.write_mvol(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        // 4 magic + 8 header words * 4 + 8 voxels * 4.
        assert_eq!(bytes.len(), 68);
        assert_eq!(&bytes[0..4], b"MVOL");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 0);
        assert_eq!(u32_at(&bytes, 12), 2);
        assert_eq!(f32_at(&bytes, 36), 0.0);
        assert_eq!(f32_at(&bytes, 64), 7.0);
    }

    #[test]
    fn roundtrip_scalar_exact() {
        let v = ScalarVolume::from_vec(
            (3, 2, 2),
            (0.5, 1.0, 2.5),
            (0..12).map(|i| i as f32 * 0.321 - 1.0).collect(),
        )
        .unwrap();
        assert_eq!(roundtrip(v.clone().into()), AnyVolume::Scalar(v));
    }

    #[test]
    fn roundtrip_labels_u8_and_i16() {
        let small = LabelVolume::from_vec((2, 2, 1), (1.0, 1.0, 1.0), vec![0, 1, 255, 3]).unwrap();
        assert_eq!(roundtrip(small.clone().into()), AnyVolume::Labels(small));
        let wide = LabelVolume::from_vec((2, 2, 1), (1.0, 1.0, 1.0), vec![0, 300, 32767, 3]).unwrap();
        assert_eq!(roundtrip(wide.clone().into()), AnyVolume::Labels(wide));
    }

    #[test]
    fn roundtrip_field_exact() {
        let f = DisplacementField::from_vec(
            (2, 2, 2),
            (1.0, 1.5, 1.0),
            (0..24).map(|i| (i as f32).sin()).collect(),
        )
        .unwrap();
        assert_eq!(roundtrip(f.clone().into()), AnyVolume::Field(f));
    }

    #[test]
    fn nan_payload_refused() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let mut v = ScalarVolume::new((2, 2, 2), (1.0, 1.0, 1.0));
        v.data[3] = f32::NAN;
        let err = v.write_mvol(&p).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        assert!(!p.exists());
    }

    #[test]
    fn label_above_i16_range_refused() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = LabelVolume::from_vec((1, 1, 1), (1.0, 1.0, 1.0), vec![40000]).unwrap();
        assert!(v.write_mvol(&p).is_err());
    }

    #[test]
    fn bad_magic_distinct_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        std::fs::write(&p, b"NOPE_____________________________________").unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn unknown_version_distinct_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = ScalarVolume::new((2, 2, 2), (1.0, 1.0, 1.0));
        v.write_mvol(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_mvol(&p),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn unknown_dtype_distinct_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = ScalarVolume::new((2, 2, 2), (1.0, 1.0, 1.0));
        v.write_mvol(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8] = 7;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_mvol(&p),
            Err(Error::UnsupportedDtype { found: 7, .. })
        ));
    }

    #[test]
    fn truncated_payload_distinct_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = ScalarVolume::new((2, 2, 2), (1.0, 1.0, 1.0));
        v.write_mvol(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        match read_mvol(&p) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 68);
                assert_eq!(found, 63);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = ScalarVolume::new((2, 2, 2), (1.0, 1.0, 1.0));
        v.write_mvol(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.push(0);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn negative_i16_label_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.mvol");
        let v = LabelVolume::from_vec((1, 1, 1), (1.0, 1.0, 1.0), vec![300]).unwrap();
        v.write_mvol(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[36] = 0xFF;
        bytes[37] = 0xFF;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_mvol(&p), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn write_is_deterministic() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.mvol");
        let b = dir.path().join("b.mvol");
        let v = ScalarVolume::from_vec(
            (4, 3, 2),
            (1.0, 1.0, 1.0),
            (0..24).map(|i| (i as f32).cos()).collect(),
        )
        .unwrap();
        v.write_mvol(&a).unwrap();
        v.write_mvol(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
