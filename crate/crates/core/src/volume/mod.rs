//! Volume containers and creation.
//!
//! All grids are dense, row-major with x fastest, and carry a physical
//! voxel spacing in millimetres. Scalar and displacement payloads are
//! `f32`; labels are small non-negative integers stored as `u16`.
//! Displacement vectors are in voxel units of their own grid.

mod mvol;
mod nifti;
mod synth;

pub use mvol::{read_mvol, write_mvol};
pub use nifti::read_nifti1;
pub use synth::{make_phantom, make_smooth_field, PhantomKind};

use crate::error::{Error, Result};

/// Grid dimensions as (nx, ny, nz).
pub type Dims = (usize, usize, usize);

/// Physical voxel size as (sx, sy, sz) in millimetres.
pub type Spacing = (f32, f32, f32);

pub(crate) fn num_voxels(dims: Dims) -> usize {
    dims.0 * dims.1 * dims.2
}

pub(crate) fn check_dims(what: &str, found: Dims, expected: Dims) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::DimsMismatch {
            what: what.to_string(),
            found,
            expected,
        })
    }
}

/// Dense 3-D scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub dims: Dims,
    pub spacing: Spacing,
    /// nx*ny*nz values, x fastest.
    pub data: Vec<f32>,
}

/// Dense 3-D label image. Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub dims: Dims,
    pub spacing: Spacing,
    /// nx*ny*nz labels, x fastest.
    pub data: Vec<u16>,
}

/// Dense 3-D displacement field, one vector per voxel in voxel units.
///
/// A displacement `u` acts by pull-back: the warped image at voxel `p`
/// samples the source at `p + u(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub dims: Dims,
    pub spacing: Spacing,
    /// 3*nx*ny*nz values, x fastest, (ux, uy, uz) interleaved per voxel.
    pub data: Vec<f32>,
}

/// Stationary velocity field; same layout as a displacement field, but
/// interpreted as a flow to be integrated rather than applied directly.
pub type VelocityField = DisplacementField;

impl ScalarVolume {
    /// All-zero volume.
    pub fn new(dims: Dims, spacing: Spacing) -> Self {
        ScalarVolume {
            dims,
            spacing,
            data: vec![0.0; num_voxels(dims)],
        }
    }

    /// Wraps an existing buffer; the length must match the dims.
    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != num_voxels(dims) {
            return Err(Error::invalid(format!(
                "scalar buffer length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(ScalarVolume {
            dims,
            spacing,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.0 + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.idx(x, y, z);
        self.data[i] = v;
    }

    pub fn num_voxels(&self) -> usize {
        num_voxels(self.dims)
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Min-max rescale to [0, 1]; a constant image maps to all zeros.
    pub fn normalized(&self) -> ScalarVolume {
        let (lo, hi) = self.min_max();
        let mut out = self.clone();
        if hi > lo {
            let inv = 1.0 / (hi - lo);
            for v in &mut out.data {
                *v = (*v - lo) * inv;
            }
        } else {
            out.data.fill(0.0);
        }
        out
    }
}

impl LabelVolume {
    pub fn new(dims: Dims, spacing: Spacing) -> Self {
        LabelVolume {
            dims,
            spacing,
            data: vec![0; num_voxels(dims)],
        }
    }

    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<u16>) -> Result<Self> {
        if data.len() != num_voxels(dims) {
            return Err(Error::invalid(format!(
                "label buffer length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(LabelVolume {
            dims,
            spacing,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.0 + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u16 {
        self.data[self.idx(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u16) {
        let i = self.idx(x, y, z);
        self.data[i] = v;
    }

    pub fn num_voxels(&self) -> usize {
        num_voxels(self.dims)
    }

    /// Sorted distinct nonzero labels present in the volume.
    pub fn present_labels(&self) -> Vec<u16> {
        let mut seen = vec![false; usize::from(u16::MAX) + 1];
        for &v in &self.data {
            seen[usize::from(v)] = true;
        }
        (1..=u16::MAX).filter(|&l| seen[usize::from(l)]).collect()
    }

    /// View of the labels as f32 intensities.
    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }
}

impl DisplacementField {
    /// All-zero (identity) field.
    pub fn new(dims: Dims, spacing: Spacing) -> Self {
        DisplacementField {
            dims,
            spacing,
            data: vec![0.0; 3 * num_voxels(dims)],
        }
    }

    pub fn from_vec(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * num_voxels(dims) {
            return Err(Error::invalid(format!(
                "field buffer length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(DisplacementField {
            dims,
            spacing,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.0 + x
    }

    #[inline]
    pub fn vec_at(&self, x: usize, y: usize, z: usize) -> [f32; 3] {
        let i = 3 * self.idx(x, y, z);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_vec(&mut self, x: usize, y: usize, z: usize, v: [f32; 3]) {
        let i = 3 * self.idx(x, y, z);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// Component d of the vector at a voxel (d in 0..3).
    #[inline]
    pub fn comp(&self, x: usize, y: usize, z: usize, d: usize) -> f32 {
        self.data[3 * self.idx(x, y, z) + d]
    }

    pub fn num_voxels(&self) -> usize {
        num_voxels(self.dims)
    }

    pub fn max_abs_component(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()))
    }

    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let s: f64 = self.data.iter().map(|&v| f64::from(v.abs())).sum();
        s / self.data.len() as f64
    }
}

/// A volume of any payload kind, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume),
    Labels(LabelVolume),
    Field(DisplacementField),
}

impl AnyVolume {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyVolume::Scalar(_) => "scalar",
            AnyVolume::Labels(_) => "labels",
            AnyVolume::Field(_) => "field",
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            AnyVolume::Scalar(v) => v.dims,
            AnyVolume::Labels(v) => v.dims,
            AnyVolume::Field(v) => v.dims,
        }
    }

    /// Exact scalar payload; anything else is a type error.
    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            other => Err(Error::invalid(format!(
                "expected a scalar volume, found {}",
                other.kind()
            ))),
        }
    }

    /// Scalar view, casting labels to intensities if needed.
    pub fn into_scalar_cast(self) -> Result<ScalarVolume> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            AnyVolume::Labels(v) => Ok(v.to_scalar()),
            other => Err(Error::invalid(format!(
                "expected a scalar volume, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Labels(v) => Ok(v),
            other => Err(Error::invalid(format!(
                "expected a label volume, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_field(self) -> Result<DisplacementField> {
        match self {
            AnyVolume::Field(v) => Ok(v),
            other => Err(Error::invalid(format!(
                "expected a displacement field, found {}",
                other.kind()
            ))),
        }
    }
}

impl From<ScalarVolume> for AnyVolume {
    fn from(v: ScalarVolume) -> Self {
        AnyVolume::Scalar(v)
    }
}

impl From<LabelVolume> for AnyVolume {
    fn from(v: LabelVolume) -> Self {
        AnyVolume::Labels(v)
    }
}

impl From<DisplacementField> for AnyVolume {
    fn from(v: DisplacementField) -> Self {
        AnyVolume::Field(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(ScalarVolume::from_vec((2, 2, 2), (1.0, 1.0, 1.0), vec![0.0; 7]).is_err());
        assert!(LabelVolume::from_vec((2, 2, 2), (1.0, 1.0, 1.0), vec![0; 9]).is_err());
        assert!(DisplacementField::from_vec((2, 2, 2), (1.0, 1.0, 1.0), vec![0.0; 8]).is_err());
    }

    #[test]
    fn indexing_is_x_fastest() {
        let mut v = ScalarVolume::new((3, 4, 5), (1.0, 1.0, 1.0));
        v.set(1, 2, 3, 7.0);
        assert_eq!(v.data[3 * 12 + 2 * 3 + 1], 7.0);
        assert_eq!(v.at(1, 2, 3), 7.0);
    }

    #[test]
    fn normalized_maps_to_unit_range_and_constant_to_zero() {
        let v = ScalarVolume::from_vec((2, 1, 1), (1.0, 1.0, 1.0), vec![2.0, 6.0]).unwrap();
        let n = v.normalized();
        assert_eq!(n.data, vec![0.0, 1.0]);
        let c = ScalarVolume::from_vec((2, 1, 1), (1.0, 1.0, 1.0), vec![5.0, 5.0]).unwrap();
        assert_eq!(c.normalized().data, vec![0.0, 0.0]);
    }

    #[test]
    fn present_labels_sorted_distinct() {
        let v = LabelVolume::from_vec((2, 2, 1), (1.0, 1.0, 1.0), vec![0, 3, 1, 3]).unwrap();
        assert_eq!(v.present_labels(), vec![1, 3]);
    }

    #[test]
    fn any_volume_type_errors() {
        let s: AnyVolume = ScalarVolume::new((2, 2, 2), (1.0, 1.0, 1.0)).into();
        assert!(s.clone().into_labels().is_err());
        assert!(s.into_scalar().is_ok());
        let l: AnyVolume = LabelVolume::new((2, 2, 2), (1.0, 1.0, 1.0)).into();
        assert!(l.clone().into_scalar().is_err());
        assert!(l.into_scalar_cast().is_ok());
    }
}
