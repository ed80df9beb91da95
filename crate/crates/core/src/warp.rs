//! Resampling and displacement-field algebra.
//!
//! Warping follows the pull-back convention: the output at voxel `p`
//! samples the source at `p + u(p)`, with sample coordinates clamped to
//! the volume bounds (border replication). Scalars use trilinear
//! interpolation, labels nearest neighbor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    check_dims, Dims, DisplacementField, LabelVolume, ScalarVolume, VelocityField,
};

/// Strided view of one scalar lattice (an image, or one component of a
/// vector field) supporting clamped trilinear sampling.
pub(crate) struct Lattice<'a> {
    data: &'a [f32],
    dims: Dims,
    stride: usize,
    offset: usize,
}

impl<'a> Lattice<'a> {
    pub(crate) fn scalar(v: &'a ScalarVolume) -> Self {
        Lattice {
            data: &v.data,
            dims: v.dims,
            stride: 1,
            offset: 0,
        }
    }

    pub(crate) fn component(f: &'a DisplacementField, d: usize) -> Self {
        Lattice {
            data: &f.data,
            dims: f.dims,
            stride: 3,
            offset: d,
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        let i = (z * self.dims.1 + y) * self.dims.0 + x;
        f64::from(self.data[self.offset + self.stride * i])
    }

    /// Trilinear sample at clamped continuous coordinates.
    #[inline]
    pub(crate) fn sample(&self, x: f64, y: f64, z: f64) -> f64 {
        self.sample_impl(x, y, z).0
    }

    /// Sample plus the derivative of the interpolant with respect to
    /// each coordinate. The derivative is zero in directions where the
    /// coordinate fell outside the volume and was clamped, matching the
    /// locally constant sampled value.
    #[inline]
    pub(crate) fn sample_with_grad(&self, x: f64, y: f64, z: f64) -> (f64, [f64; 3]) {
        let (v, mut g) = self.sample_impl(x, y, z);
        let (nx, ny, nz) = self.dims;
        if x < 0.0 || x > (nx - 1) as f64 {
            g[0] = 0.0;
        }
        if y < 0.0 || y > (ny - 1) as f64 {
            g[1] = 0.0;
        }
        if z < 0.0 || z > (nz - 1) as f64 {
            g[2] = 0.0;
        }
        (v, g)
    }

    #[inline]
    fn sample_impl(&self, x: f64, y: f64, z: f64) -> (f64, [f64; 3]) {
        let (nx, ny, nz) = self.dims;
        let cx = x.clamp(0.0, (nx - 1) as f64);
        let cy = y.clamp(0.0, (ny - 1) as f64);
        let cz = z.clamp(0.0, (nz - 1) as f64);

        let x0 = cx.floor() as usize;
        let y0 = cy.floor() as usize;
        let z0 = cz.floor() as usize;
        let x1 = (x0 + 1).min(nx - 1);
        let y1 = (y0 + 1).min(ny - 1);
        let z1 = (z0 + 1).min(nz - 1);
        let fx = cx - x0 as f64;
        let fy = cy - y0 as f64;
        let fz = cz - z0 as f64;

        let c000 = self.at(x0, y0, z0);
        let c100 = self.at(x1, y0, z0);
        let c010 = self.at(x0, y1, z0);
        let c110 = self.at(x1, y1, z0);
        let c001 = self.at(x0, y0, z1);
        let c101 = self.at(x1, y0, z1);
        let c011 = self.at(x0, y1, z1);
        let c111 = self.at(x1, y1, z1);

        let c00 = c000 + (c100 - c000) * fx;
        let c10 = c010 + (c110 - c010) * fx;
        let c01 = c001 + (c101 - c001) * fx;
        let c11 = c011 + (c111 - c011) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        let v = c0 + (c1 - c0) * fz;

        let gx = {
            let d00 = c100 - c000;
            let d10 = c110 - c010;
            let d01 = c101 - c001;
            let d11 = c111 - c011;
            let d0 = d00 + (d10 - d00) * fy;
            let d1 = d01 + (d11 - d01) * fy;
            d0 + (d1 - d0) * fz
        };
        let gy = (c10 - c00) + ((c11 - c01) - (c10 - c00)) * fz;
        let gz = c1 - c0;

        (v, [gx, gy, gz])
    }
}

/// Warps a scalar image by a displacement field on the same grid.
///
/// A zero field reproduces the input bit for bit.
pub fn warp_scalar(image: &ScalarVolume, field: &DisplacementField) -> Result<ScalarVolume> {
    check_dims("displacement field", field.dims, image.dims)?;
    let (nx, ny, nz) = image.dims;
    let lat = Lattice::scalar(image);
    let mut out = ScalarVolume::new(image.dims, image.spacing);
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = &field.data[3 * i..3 * i + 3];
                let v = lat.sample(
                    x as f64 + f64::from(u[0]),
                    y as f64 + f64::from(u[1]),
                    z as f64 + f64::from(u[2]),
                );
                out.data[i] = v as f32;
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Warps a label image by nearest-neighbor lookup at `p + u(p)`.
pub fn warp_labels(labels: &LabelVolume, field: &DisplacementField) -> Result<LabelVolume> {
    check_dims("displacement field", field.dims, labels.dims)?;
    let (nx, ny, nz) = labels.dims;
    let mut out = LabelVolume::new(labels.dims, labels.spacing);
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = &field.data[3 * i..3 * i + 3];
                let sx = (x as f64 + f64::from(u[0])).clamp(0.0, (nx - 1) as f64);
                let sy = (y as f64 + f64::from(u[1])).clamp(0.0, (ny - 1) as f64);
                let sz = (z as f64 + f64::from(u[2])).clamp(0.0, (nz - 1) as f64);
                let q = (sz.round() as usize * ny + sy.round() as usize) * nx + sx.round() as usize;
                out.data[i] = labels.data[q];
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Composes an accumulated field with a new increment: the result moves
/// each point by the increment, then by the prior field evaluated where
/// the increment landed. Given pull-back warping this makes
/// `warp(img, compose(prev, inc))` agree with warping by `prev` then by
/// `inc`.
pub fn compose_fields(
    prev: &DisplacementField,
    inc: &DisplacementField,
) -> Result<DisplacementField> {
    check_dims("increment field", inc.dims, prev.dims)?;
    let (nx, ny, nz) = prev.dims;
    let lats = [
        Lattice::component(prev, 0),
        Lattice::component(prev, 1),
        Lattice::component(prev, 2),
    ];
    let mut out = DisplacementField::new(prev.dims, inc.spacing);
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = &inc.data[3 * i..3 * i + 3];
                let px = x as f64 + f64::from(u[0]);
                let py = y as f64 + f64::from(u[1]);
                let pz = z as f64 + f64::from(u[2]);
                for d in 0..3 {
                    out.data[3 * i + d] = (lats[d].sample(px, py, pz) + f64::from(u[d])) as f32;
                }
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Trilinearly upsamples a field to roughly doubled dimensions and
/// doubles the vectors, converting coarse-grid voxel units to fine-grid
/// ones. Each target axis must be `2n` or `2n - 1` for a source axis of
/// `n` (the inverse of ceil-halving).
pub fn upsample_field(field: &DisplacementField, target: Dims) -> Result<DisplacementField> {
    let src = field.dims;
    for (t, s) in [
        (target.0, src.0),
        (target.1, src.1),
        (target.2, src.2),
    ] {
        if t.div_ceil(2) != s {
            return Err(Error::invalid(format!(
                "upsample target {target:?} is not a doubling of source dims {src:?}"
            )));
        }
    }
    let lats = [
        Lattice::component(field, 0),
        Lattice::component(field, 1),
        Lattice::component(field, 2),
    ];
    let scale = |t: usize, s: usize| -> f64 {
        if t > 1 {
            (s - 1) as f64 / (t - 1) as f64
        } else {
            0.0
        }
    };
    let (kx, ky, kz) = (
        scale(target.0, src.0),
        scale(target.1, src.1),
        scale(target.2, src.2),
    );
    let spacing = (
        field.spacing.0 * 0.5,
        field.spacing.1 * 0.5,
        field.spacing.2 * 0.5,
    );
    let mut out = DisplacementField::new(target, spacing);
    let mut i = 0usize;
    for z in 0..target.2 {
        for y in 0..target.1 {
            for x in 0..target.0 {
                let px = x as f64 * kx;
                let py = y as f64 * ky;
                let pz = z as f64 * kz;
                for d in 0..3 {
                    out.data[3 * i + d] = (2.0 * lats[d].sample(px, py, pz)) as f32;
                }
                i += 1;
            }
        }
    }
    Ok(out)
}

/// Downsamples by non-overlapping 2x2x2 block averaging; output dims are
/// ceil-halved and odd trailing slabs replicate. Spacing doubles.
pub fn downsample_avg(image: &ScalarVolume) -> ScalarVolume {
    let (nx, ny, nz) = image.dims;
    let out_dims = (nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2));
    let spacing = (
        image.spacing.0 * 2.0,
        image.spacing.1 * 2.0,
        image.spacing.2 * 2.0,
    );
    let mut out = ScalarVolume::new(out_dims, spacing);
    for z in 0..out_dims.2 {
        for y in 0..out_dims.1 {
            for x in 0..out_dims.0 {
                let mut sum = 0.0f64;
                let mut count = 0u32;
                for dz in 0..2 {
                    let sz = 2 * z + dz;
                    if sz >= nz {
                        continue;
                    }
                    for dy in 0..2 {
                        let sy = 2 * y + dy;
                        if sy >= ny {
                            continue;
                        }
                        for dx in 0..2 {
                            let sx = 2 * x + dx;
                            if sx >= nx {
                                continue;
                            }
                            sum += f64::from(image.at(sx, sy, sz));
                            count += 1;
                        }
                    }
                }
                out.set(x, y, z, (sum / f64::from(count)) as f32);
            }
        }
    }
    out
}

/// Integrates a stationary velocity field by scaling and squaring:
/// scale by 2^-steps, then compose the result with itself `steps` times.
/// The output approximates the flow of the velocity for unit time and is
/// diffeomorphic for smooth inputs.
pub fn integrate_velocity(velocity: &VelocityField, steps: u32) -> DisplacementField {
    let mut u = velocity.clone();
    let scale = 0.5f32.powi(steps as i32);
    for v in &mut u.data {
        *v *= scale;
    }
    for _ in 0..steps {
        u = compose_fields(&u, &u).expect("self-composition dims always match");
    }
    u
}

/// Histogram of Jacobian determinant values over uniform bins on
/// [lo, hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

/// Summary of the local volume change induced by a displacement field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    /// Smallest determinant of I + grad(u) over all voxels.
    pub min_det: f64,
    /// Fraction of voxels (all voxels, borders included) whose
    /// determinant is <= 0, i.e. where the map folds.
    pub frac_nonpositive: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<DetHistogram>,
}

/// Determinant stats of I + grad(u), with central differences in the
/// interior and one-sided differences at borders.
pub fn jacobian_det_stats(field: &DisplacementField) -> JacobianStats {
    stats_impl(field, None)
}

/// Same as [`jacobian_det_stats`] but also fills a histogram with the
/// given number of bins spanning the observed determinant range.
pub fn jacobian_det_stats_binned(field: &DisplacementField, bins: usize) -> JacobianStats {
    stats_impl(field, Some(bins.max(1)))
}

fn stats_impl(field: &DisplacementField, bins: Option<usize>) -> JacobianStats {
    let dets = determinants(field);
    let mut min_det = f64::INFINITY;
    let mut max_det = f64::NEG_INFINITY;
    let mut nonpos = 0usize;
    for &d in &dets {
        min_det = min_det.min(d);
        max_det = max_det.max(d);
        if d <= 0.0 {
            nonpos += 1;
        }
    }
    let histogram = bins.map(|nb| {
        let lo = min_det;
        let hi = if max_det > min_det {
            max_det
        } else {
            min_det + 1.0
        };
        let mut counts = vec![0u64; nb];
        let w = (hi - lo) / nb as f64;
        for &d in &dets {
            let b = (((d - lo) / w) as usize).min(nb - 1);
            counts[b] += 1;
        }
        DetHistogram { lo, hi, counts }
    });
    JacobianStats {
        min_det,
        frac_nonpositive: nonpos as f64 / dets.len() as f64,
        histogram,
    }
}

fn determinants(field: &DisplacementField) -> Vec<f64> {
    let (nx, ny, nz) = field.dims;
    let mut dets = Vec::with_capacity(field.num_voxels());
    // d(component i)/d(axis j) via the shared difference stencil.
    let deriv = |x: usize, y: usize, z: usize, i: usize, j: usize| -> f64 {
        let n = [nx, ny, nz][j];
        if n < 2 {
            return 0.0;
        }
        let c = [x, y, z][j];
        let fetch = |v: usize| -> f64 {
            let mut q = [x, y, z];
            q[j] = v;
            f64::from(field.comp(q[0], q[1], q[2], i))
        };
        if c == 0 {
            fetch(1) - fetch(0)
        } else if c == n - 1 {
            fetch(n - 1) - fetch(n - 2)
        } else {
            (fetch(c + 1) - fetch(c - 1)) * 0.5
        }
    };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut j = [[0.0f64; 3]; 3];
                for (i, row) in j.iter_mut().enumerate() {
                    for (a, entry) in row.iter_mut().enumerate() {
                        *entry = deriv(x, y, z, i, a) + if i == a { 1.0 } else { 0.0 };
                    }
                }
                let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                    - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                    + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
                dets.push(det);
            }
        }
    }
    dets
}
