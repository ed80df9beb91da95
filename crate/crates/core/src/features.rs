//! Image pyramids, spatial gradients, and directional weighting.
//!
//! The weighting compares the local gradient structure of the two images
//! and produces one gate volume per displacement direction. Where the
//! images already agree the gate sits at sigmoid(bias); where they
//! disagree along a direction it swings toward 0 or 1, emphasising that
//! direction's update during optimization.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, Dims, ScalarVolume};
use crate::warp::downsample_avg;

/// Coarse-to-fine stack of images; `levels[0]` is full resolution and
/// every deeper level is the 2x2x2 block average of the previous one.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<ScalarVolume>,
}

impl FeaturePyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level by 0-based index; 0 is full resolution.
    pub fn level(&self, l: usize) -> &ScalarVolume {
        &self.levels[l]
    }
}

/// Builds a pyramid of the given depth. Every axis must measure at least
/// 2^(depth-1) voxels so the coarsest level keeps at least one voxel per
/// axis of true signal.
pub fn build_pyramid(image: &ScalarVolume, depth: usize) -> Result<FeaturePyramid> {
    if depth == 0 {
        return Err(Error::invalid("pyramid depth must be at least 1"));
    }
    let need = 1usize << (depth - 1);
    let (nx, ny, nz) = image.dims;
    if nx < need || ny < need || nz < need {
        return Err(Error::invalid(format!(
            "dims {:?} too small for pyramid depth {depth}; every axis must be >= {need}",
            image.dims
        )));
    }
    let mut levels = Vec::with_capacity(depth);
    levels.push(image.clone());
    for _ in 1..depth {
        let next = downsample_avg(levels.last().unwrap());
        levels.push(next);
    }
    Ok(FeaturePyramid { levels })
}

/// Per-axis spatial gradient: central differences in the interior,
/// one-sided at borders, zero along axes of extent 1. The same stencil
/// backs the Jacobian and smoothness computations.
pub fn spatial_gradient(image: &ScalarVolume) -> [ScalarVolume; 3] {
    let (nx, ny, nz) = image.dims;
    let mut out = [
        ScalarVolume::new(image.dims, image.spacing),
        ScalarVolume::new(image.dims, image.spacing),
        ScalarVolume::new(image.dims, image.spacing),
    ];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x, y, z];
                let i = image.idx(x, y, z);
                for axis in 0..3 {
                    let n = [nx, ny, nz][axis];
                    if n < 2 {
                        continue;
                    }
                    let c = p[axis];
                    let fetch = |v: usize| -> f32 {
                        let mut q = p;
                        q[axis] = v;
                        image.at(q[0], q[1], q[2])
                    };
                    let g = if c == 0 {
                        fetch(1) - fetch(0)
                    } else if c == n - 1 {
                        fetch(n - 1) - fetch(n - 2)
                    } else {
                        (fetch(c + 1) - fetch(c - 1)) * 0.5
                    };
                    out[axis].data[i] = g;
                }
            }
        }
    }
    out
}

/// How the per-direction gates are derived from the image pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingMode {
    /// Signed difference of directional gradients; the default.
    Full,
    /// Signed intensity difference, shared across directions.
    Intensity,
    /// Unsigned gradient magnitude sum, emphasising edges of either image.
    Gradient,
    /// Constant sigmoid(bias) everywhere; disables the data term.
    None,
}

impl FromStr for WeightingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(WeightingMode::Full),
            "intensity" => Ok(WeightingMode::Intensity),
            "gradient" => Ok(WeightingMode::Gradient),
            "none" => Ok(WeightingMode::None),
            other => Err(Error::invalid(format!(
                "unknown weighting mode {other:?} (expected full, intensity, gradient, or none)"
            ))),
        }
    }
}

impl std::fmt::Display for WeightingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WeightingMode::Full => "full",
            WeightingMode::Intensity => "intensity",
            WeightingMode::Gradient => "gradient",
            WeightingMode::None => "none",
        };
        f.write_str(s)
    }
}

/// One gate volume per displacement direction, all values strictly
/// inside (0, 1).
#[derive(Debug, Clone)]
pub struct DirectionalWeights {
    pub wx: ScalarVolume,
    pub wy: ScalarVolume,
    pub wz: ScalarVolume,
}

impl DirectionalWeights {
    pub fn by_dir(&self, d: usize) -> &ScalarVolume {
        match d {
            0 => &self.wx,
            1 => &self.wy,
            2 => &self.wz,
            _ => panic!("direction index {d} out of range"),
        }
    }
}

/// Computes directional gates for a fixed/moving pair.
///
/// For the default mode the input to the gate along direction d is the
/// 3x3x3 box mean of the signed gradient difference, so swapping the
/// arguments flips its sign; gates are computed so that at bias 0 the
/// two orders sum to exactly 1 at every voxel.
pub fn diff_weights(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    mode: WeightingMode,
    gain: f64,
    bias: f64,
) -> Result<DirectionalWeights> {
    check_dims("moving image", moving.dims, fixed.dims)?;
    if !gain.is_finite() || !bias.is_finite() {
        return Err(Error::invalid(format!(
            "weighting gain/bias must be finite, got {gain}/{bias}"
        )));
    }
    let dims = fixed.dims;
    let nvox = fixed.num_voxels();

    let gate = |raw: &[f64]| -> ScalarVolume {
        let mut smoothed = box3_mean(raw, dims);
        for v in &mut smoothed {
            *v = f64::from(sigmoid_complementary(gain * *v + bias));
        }
        ScalarVolume {
            dims,
            spacing: fixed.spacing,
            data: smoothed.iter().map(|&v| v as f32).collect(),
        }
    };

    let [wx, wy, wz] = match mode {
        WeightingMode::Full => {
            let fg = spatial_gradient(fixed);
            let mg = spatial_gradient(moving);
            let mut gates = Vec::with_capacity(3);
            for d in 0..3 {
                let raw: Vec<f64> = (0..nvox)
                    .map(|i| f64::from(fg[d].data[i]) - f64::from(mg[d].data[i]))
                    .collect();
                gates.push(gate(&raw));
            }
            let wz = gates.pop().unwrap();
            let wy = gates.pop().unwrap();
            let wx = gates.pop().unwrap();
            [wx, wy, wz]
        }
        WeightingMode::Intensity => {
            let raw: Vec<f64> = (0..nvox)
                .map(|i| f64::from(fixed.data[i]) - f64::from(moving.data[i]))
                .collect();
            let w = gate(&raw);
            [w.clone(), w.clone(), w]
        }
        WeightingMode::Gradient => {
            let fg = spatial_gradient(fixed);
            let mg = spatial_gradient(moving);
            let mut gates = Vec::with_capacity(3);
            for d in 0..3 {
                let raw: Vec<f64> = (0..nvox)
                    .map(|i| f64::from(fg[d].data[i].abs()) + f64::from(mg[d].data[i].abs()))
                    .collect();
                gates.push(gate(&raw));
            }
            let wz = gates.pop().unwrap();
            let wy = gates.pop().unwrap();
            let wx = gates.pop().unwrap();
            [wx, wy, wz]
        }
        WeightingMode::None => {
            let w = ScalarVolume {
                dims,
                spacing: fixed.spacing,
                data: vec![sigmoid_complementary(bias); nvox],
            };
            [w.clone(), w.clone(), w]
        }
    };
    Ok(DirectionalWeights { wx, wy, wz })
}

/// 3x3x3 box mean with replicated borders (27 taps everywhere).
fn box3_mean(data: &[f64], dims: Dims) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let mut out = vec![0.0f64; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let mut sum = 0.0f64;
                for dz in -1i64..=1 {
                    let zz = (z as i64 + dz).clamp(0, nz as i64 - 1) as usize;
                    for dy in -1i64..=1 {
                        let yy = (y as i64 + dy).clamp(0, ny as i64 - 1) as usize;
                        for dx in -1i64..=1 {
                            let xx = (x as i64 + dx).clamp(0, nx as i64 - 1) as usize;
                            sum += data[idx(xx, yy, zz)];
                        }
                    }
                }
                out[idx(x, y, z)] = sum / 27.0;
            }
        }
    }
    out
}

/// Logistic gate returning f32 in the open interval (0, 1), built so
/// that sigmoid(t) + sigmoid(-t) == 1 holds bit-exactly: the positive
/// branch is computed once and the negative branch is its exact f32
/// complement.
fn sigmoid_complementary(t: f64) -> f32 {
    let e = (-t.abs()).exp();
    let q = (1.0 / (1.0 + e)) as f32;
    // Keep strictly below 1 so the complement stays strictly above 0.
    let q = q.clamp(0.5, 1.0 - f32::EPSILON / 2.0);
    if t >= 0.0 {
        q
    } else {
        1.0 - q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_phantom, PhantomKind};
    use proptest::prelude::*;

    fn unit() -> (f32, f32, f32) {
        (1.0, 1.0, 1.0)
    }

    #[test]
    fn pyramid_halves_dims_with_ceil() {
        let img = ScalarVolume::new((32, 32, 32), unit());
        let p = build_pyramid(&img, 4).unwrap();
        let dims: Vec<Dims> = p.levels.iter().map(|l| l.dims).collect();
        assert_eq!(dims, vec![(32, 32, 32), (16, 16, 16), (8, 8, 8), (4, 4, 4)]);

        let odd = ScalarVolume::new((9, 12, 7), unit());
        let p = build_pyramid(&odd, 3).unwrap();
        let dims: Vec<Dims> = p.levels.iter().map(|l| l.dims).collect();
        assert_eq!(dims, vec![(9, 12, 7), (5, 6, 4), (3, 3, 2)]);
    }

    #[test]
    fn pyramid_depth_limits() {
        let img = ScalarVolume::new((8, 8, 8), unit());
        assert!(build_pyramid(&img, 4).is_ok());
        assert!(build_pyramid(&img, 5).is_err());
        assert!(build_pyramid(&img, 0).is_err());
        let one = build_pyramid(&img, 1).unwrap();
        assert_eq!(one.depth(), 1);
        assert_eq!(one.level(0).data, img.data);
    }

    #[test]
    fn pyramid_levels_match_repeated_downsampling() {
        let (img, _) = make_phantom((20, 18, 16), PhantomKind::Blobs, 3).unwrap();
        let p = build_pyramid(&img, 3).unwrap();
        let d1 = downsample_avg(&img);
        let d2 = downsample_avg(&d1);
        assert_eq!(p.levels[1].data, d1.data);
        assert_eq!(p.levels[2].data, d2.data);
    }

    #[test]
    fn pyramid_preserves_constants() {
        let mut img = ScalarVolume::new((16, 16, 16), unit());
        img.data.fill(0.625);
        let p = build_pyramid(&img, 4).unwrap();
        for l in &p.levels {
            assert!(l.data.iter().all(|&v| v == 0.625));
        }
    }

    #[test]
    fn gradient_of_affine_image_is_exact() {
        let mut img = ScalarVolume::new((8, 7, 6), unit());
        for z in 0..6 {
            for y in 0..7 {
                for x in 0..8 {
                    img.set(x, y, z, x as f32 + 2.0 * y as f32 + 3.0 * z as f32);
                }
            }
        }
        let [gx, gy, gz] = spatial_gradient(&img);
        assert!(gx.data.iter().all(|&v| v == 1.0));
        assert!(gy.data.iter().all(|&v| v == 2.0));
        assert!(gz.data.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn identical_images_gate_at_half() {
        let (img, _) = make_phantom((12, 12, 12), PhantomKind::Spheres, 1).unwrap();
        let w = diff_weights(&img, &img, WeightingMode::Full, 10.0, 0.0).unwrap();
        for d in 0..3 {
            assert!(w.by_dir(d).data.iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn step_edge_boosts_x_gate_only() {
        let dims = (16, 16, 16);
        let mut fixed = ScalarVolume::new(dims, unit());
        for z in 0..16 {
            for y in 0..16 {
                for x in 8..16 {
                    fixed.set(x, y, z, 1.0);
                }
            }
        }
        let mut moving = ScalarVolume::new(dims, unit());
        moving.data.fill(0.5);
        let w = diff_weights(&fixed, &moving, WeightingMode::Full, 10.0, 0.0).unwrap();
        // At the edge the box mean of the gradient difference is 1/3.
        let expect = 1.0 / (1.0 + (-10.0f64 / 3.0).exp());
        assert!((f64::from(w.wx.at(7, 8, 8)) - expect).abs() < 1e-6);
        assert!(w.wx.at(7, 8, 8) > 0.9);
        assert!(w.wx.at(8, 8, 8) > 0.9);
        assert_eq!(w.wx.at(2, 8, 8), 0.5);
        assert!(w.wy.data.iter().all(|&v| v == 0.5));
        assert!(w.wz.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn none_mode_ignores_gain_and_images() {
        let (a, _) = make_phantom((10, 10, 10), PhantomKind::Spheres, 1).unwrap();
        let (b, _) = make_phantom((10, 10, 10), PhantomKind::Spheres, 2).unwrap();
        let w1 = diff_weights(&a, &b, WeightingMode::None, 1.0, 0.25).unwrap();
        let w2 = diff_weights(&a, &b, WeightingMode::None, 1000.0, 0.25).unwrap();
        assert_eq!(w1.wx.data, w2.wx.data);
        let expect = sigmoid_complementary(0.25);
        assert!(w1.wx.data.iter().all(|&v| v == expect));
    }

    #[test]
    fn gradient_mode_is_swap_invariant() {
        let (a, _) = make_phantom((10, 10, 10), PhantomKind::Spheres, 1).unwrap();
        let (b, _) = make_phantom((10, 10, 10), PhantomKind::Blobs, 2).unwrap();
        let w_ab = diff_weights(&a, &b, WeightingMode::Gradient, 10.0, 0.0).unwrap();
        let w_ba = diff_weights(&b, &a, WeightingMode::Gradient, 10.0, 0.0).unwrap();
        for d in 0..3 {
            assert_eq!(w_ab.by_dir(d).data, w_ba.by_dir(d).data);
        }
    }

    #[test]
    fn huge_gain_stays_inside_open_interval() {
        let dims = (8, 8, 8);
        let mut fixed = ScalarVolume::new(dims, unit());
        for z in 0..8 {
            for y in 0..8 {
                for x in 4..8 {
                    fixed.set(x, y, z, 1.0);
                }
            }
        }
        let moving = ScalarVolume::new(dims, unit());
        for mode in [
            WeightingMode::Full,
            WeightingMode::Intensity,
            WeightingMode::Gradient,
        ] {
            let w = diff_weights(&fixed, &moving, mode, 1e9, 0.0).unwrap();
            for d in 0..3 {
                for &v in &w.by_dir(d).data {
                    assert!(v > 0.0 && v < 1.0, "mode {mode:?} dir {d}: {v}");
                }
            }
        }
    }

    proptest! {
        /// Swapping the inputs flips the gate input's sign, so at bias 0
        /// the two gate volumes must sum to exactly 1 voxel-wise.
        #[test]
        fn swapped_full_weights_sum_to_one(
            seed_a in 0u64..1000,
            seed_b in 0u64..1000,
            gain in 0.5f64..50.0,
        ) {
            let (a, _) = make_phantom((9, 8, 10), PhantomKind::Blobs, seed_a).unwrap();
            let (b, _) = make_phantom((9, 8, 10), PhantomKind::Spheres, seed_b).unwrap();
            let w_ab = diff_weights(&a, &b, WeightingMode::Full, gain, 0.0).unwrap();
            let w_ba = diff_weights(&b, &a, WeightingMode::Full, gain, 0.0).unwrap();
            for d in 0..3 {
                for (p, q) in w_ab.by_dir(d).data.iter().zip(w_ba.by_dir(d).data.iter()) {
                    prop_assert_eq!(p + q, 1.0f32);
                }
            }
        }
    }
}
