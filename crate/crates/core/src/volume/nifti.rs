//! Read-only NIfTI-1 ingestion for uncompressed single-file volumes.
//!
//! Only the fields this engine needs are parsed: dims, pixdim, datatype,
//! vox_offset, and the scl_slope/scl_inter intensity transform. Supported
//! datatypes are uint8 (2), int16 (4), and float32 (16), 3-D only,
//! little-endian. Integer volumes without a nontrivial scale transform
//! load as labels; everything else loads as a scalar image with
//! `v = raw * scl_slope + scl_inter` applied when `scl_slope != 0`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{AnyVolume, LabelVolume, ScalarVolume};

const HEADER_LEN: usize = 348;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

/// Reads an uncompressed `.nii` file.
pub fn read_nifti1<P: AsRef<Path>>(path: P) -> Result<AnyVolume> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }

    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_LEN as i32 {
        return Err(malformed(
            path,
            &format!("header size mismatch: sizeof_hdr = {sizeof_hdr}, expected 348"),
        ));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        if magic == b"ni1\0" {
            return Err(malformed(path, "two-file NIfTI (hdr/img pairs) unsupported"));
        }
        return Err(Error::BadMagic { path: path.into() });
    }

    let ndim = i16_at(&bytes, 40);
    if ndim != 3 {
        return Err(malformed(
            path,
            &format!("unsupported dimensionality: dim[0] = {ndim}, expected 3"),
        ));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let v = i16_at(&bytes, 42 + 2 * i);
        if v < 1 {
            return Err(malformed(path, &format!("non-positive dim[{}] = {v}", i + 1)));
        }
        *d = v as usize;
    }
    let nvox = dims[0] * dims[1] * dims[2];

    let datatype = i16_at(&bytes, 70);
    let bitpix = i16_at(&bytes, 72);
    let expected_bitpix = match datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        DT_FLOAT32 => 32,
        other => {
            return Err(Error::UnsupportedDtype {
                path: path.into(),
                found: other as u32,
            })
        }
    };
    if bitpix != expected_bitpix {
        return Err(malformed(
            path,
            &format!("bitpix {bitpix} inconsistent with datatype {datatype}"),
        ));
    }

    // Unset pixdim entries (0 or garbage) fall back to unit spacing.
    let mut spacing = [1.0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let v = f32_at(&bytes, 80 + 4 * i);
        if v.is_finite() && v > 0.0 {
            *s = v;
        }
    }

    let vox_offset = f32_at(&bytes, 108);
    if !vox_offset.is_finite() || vox_offset < HEADER_LEN as f32 || vox_offset.fract() != 0.0 {
        return Err(malformed(path, &format!("bad vox_offset {vox_offset}")));
    }
    let data_start = vox_offset as usize;

    let scl_slope = f32_at(&bytes, 112);
    let scl_inter = f32_at(&bytes, 116);
    if !scl_slope.is_finite() || !scl_inter.is_finite() {
        return Err(malformed(path, "non-finite scl_slope/scl_inter"));
    }

    let bytes_per = expected_bitpix as usize / 8;
    let expected_len = data_start + nvox * bytes_per;
    if bytes.len() < expected_len {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected_len as u64,
            found: bytes.len() as u64,
        });
    }
    let payload = &bytes[data_start..expected_len];

    let raw: Vec<f64> = match datatype {
        DT_UINT8 => payload.iter().map(|&b| f64::from(b)).collect(),
        DT_INT16 => (0..nvox)
            .map(|i| f64::from(i16::from_le_bytes([payload[2 * i], payload[2 * i + 1]])))
            .collect(),
        DT_FLOAT32 => (0..nvox).map(|i| f64::from(f32_at(payload, 4 * i))).collect(),
        _ => unreachable!("validated datatype"),
    };

    let dims = (dims[0], dims[1], dims[2]);
    let spacing = (spacing[0], spacing[1], spacing[2]);
    let scaled = scl_slope != 0.0;
    let plain_identity = !scaled || (scl_slope == 1.0 && scl_inter == 0.0);

    if (datatype == DT_UINT8 || datatype == DT_INT16) && plain_identity {
        let mut data = Vec::with_capacity(nvox);
        for &v in &raw {
            if v < 0.0 {
                return Err(malformed(path, &format!("negative label value {v}")));
            }
            data.push(v as u16);
        }
        return Ok(AnyVolume::Labels(LabelVolume {
            dims,
            spacing,
            data,
        }));
    }

    let data: Vec<f32> = raw
        .iter()
        .map(|&v| {
            if scaled {
                (v * f64::from(scl_slope) + f64::from(scl_inter)) as f32
            } else {
                v as f32
            }
        })
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("payload of {}", path.display()),
        });
    }
    Ok(AnyVolume::Scalar(ScalarVolume {
        dims,
        spacing,
        data,
    }))
}

fn i16_at(bytes: &[u8], off: usize) -> i16 {
    i16::from_le_bytes(bytes[off..off + 2].try_into().unwrap())
}

fn f32_at(bytes: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
}

fn malformed(path: &Path, what: &str) -> Error {
    Error::MalformedFile {
        path: path.into(),
        what: what.to_string(),
    }
}
