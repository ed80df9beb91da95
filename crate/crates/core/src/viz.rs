//! Slice renderings as binary portable graymaps (P5).
//!
//! Every function returns the complete file bytes for one 2D slice of a
//! volume: `P5\n<w> <h>\n255\n` followed by one byte per pixel, top row
//! first. Slices follow array order (no radiological flipping): a
//! z-slice is the (x, y) plane with x across and y down, a y-slice is
//! (x, z), an x-slice is (y, z).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::DirectionalWeights;
use crate::volume::{Dims, DisplacementField, ScalarVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::invalid(format!(
                "unknown axis {other:?} (expected x, y, or z)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Slice geometry: width, height, and the linear index of pixel (a, b).
struct SlicePlane {
    width: usize,
    height: usize,
    dims: Dims,
    axis: Axis,
    k: usize,
}

impl SlicePlane {
    fn new(dims: Dims, axis: Axis, k: usize) -> Result<Self> {
        let extent = match axis {
            Axis::X => dims.0,
            Axis::Y => dims.1,
            Axis::Z => dims.2,
        };
        if k >= extent {
            return Err(Error::invalid(format!(
                "slice {k} out of range for axis {axis} of extent {extent}"
            )));
        }
        let (width, height) = match axis {
            Axis::X => (dims.1, dims.2),
            Axis::Y => (dims.0, dims.2),
            Axis::Z => (dims.0, dims.1),
        };
        Ok(SlicePlane {
            width,
            height,
            dims,
            axis,
            k,
        })
    }

    #[inline]
    fn index(&self, a: usize, b: usize) -> usize {
        let (nx, ny, _) = self.dims;
        match self.axis {
            Axis::X => (b * ny + a) * nx + self.k,
            Axis::Y => (b * ny + self.k) * nx + a,
            Axis::Z => (self.k * ny + b) * nx + a,
        }
    }

    /// Indices of the two displacement components lying in the plane.
    fn inplane_components(&self) -> (usize, usize) {
        match self.axis {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }
}

fn pgm(width: usize, height: usize, pixels: Vec<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

fn to_byte(t: f32) -> u8 {
    (f64::from(t) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// One slice of a scalar volume, min-max normalized over the whole
/// volume so different slices of one volume share a gray scale.
pub fn scalar_slice_pgm(vol: &ScalarVolume, axis: Axis, k: usize) -> Result<Vec<u8>> {
    let plane = SlicePlane::new(vol.dims, axis, k)?;
    let (lo, hi) = vol.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pixels = Vec::with_capacity(plane.width * plane.height);
    for b in 0..plane.height {
        for a in 0..plane.width {
            let v = vol.data[plane.index(a, b)];
            pixels.push(to_byte((v - lo) / span));
        }
    }
    Ok(pgm(plane.width, plane.height, pixels))
}

/// One slice of the direction-averaged weights, mapped linearly from
/// [0, 1] to [0, 255]; a neutral gate renders mid-gray.
pub fn weights_slice_pgm(weights: &DirectionalWeights, axis: Axis, k: usize) -> Result<Vec<u8>> {
    let dims = weights.wx.dims;
    let plane = SlicePlane::new(dims, axis, k)?;
    let mut pixels = Vec::with_capacity(plane.width * plane.height);
    for b in 0..plane.height {
        for a in 0..plane.width {
            let i = plane.index(a, b);
            let mean = (weights.wx.data[i] + weights.wy.data[i] + weights.wz.data[i]) / 3.0;
            pixels.push(to_byte(mean));
        }
    }
    Ok(pgm(plane.width, plane.height, pixels))
}

/// Deformation rendered as displaced gridlines: every in-plane voxel on
/// a gridline (either in-plane coordinate divisible by `stride`) is
/// moved by the slice's in-plane displacement and drawn black on white.
/// A zero field draws straight, evenly spaced lines.
pub fn grid_slice_pgm(
    field: &DisplacementField,
    axis: Axis,
    k: usize,
    stride: usize,
) -> Result<Vec<u8>> {
    if stride == 0 {
        return Err(Error::invalid("grid stride must be positive"));
    }
    let plane = SlicePlane::new(field.dims, axis, k)?;
    let (ca, cb) = plane.inplane_components();
    let mut pixels = vec![255u8; plane.width * plane.height];
    for b in 0..plane.height {
        for a in 0..plane.width {
            if a % stride != 0 && b % stride != 0 {
                continue;
            }
            let i = plane.index(a, b);
            let ua = f64::from(field.data[3 * i + ca]);
            let ub = f64::from(field.data[3 * i + cb]);
            let ta = (a as f64 + ua).round();
            let tb = (b as f64 + ub).round();
            if ta >= 0.0 && tb >= 0.0 && (ta as usize) < plane.width && (tb as usize) < plane.height
            {
                pixels[tb as usize * plane.width + ta as usize] = 0;
            }
        }
    }
    Ok(pgm(plane.width, plane.height, pixels))
}
