//! Synthetic phantoms and ground-truth deformations.
//!
//! Everything here is deterministic in the seed: two calls with equal
//! arguments produce byte-identical volumes, which the CLI relies on for
//! reproducible end-to-end runs.

use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::{Dims, DisplacementField, LabelVolume, ScalarVolume, Spacing};

/// Phantom families: discrete bright spheres, soft overlapping bumps, or
/// a blurred checkerboard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Spheres,
    Blobs,
    Checker,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spheres" => Ok(PhantomKind::Spheres),
            "blobs" => Ok(PhantomKind::Blobs),
            "checker" => Ok(PhantomKind::Checker),
            other => Err(Error::invalid(format!(
                "unknown phantom kind {other:?} (expected spheres, blobs, or checker)"
            ))),
        }
    }
}

impl std::fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PhantomKind::Spheres => "spheres",
            PhantomKind::Blobs => "blobs",
            PhantomKind::Checker => "checker",
        };
        f.write_str(s)
    }
}

const MIN_DIM: usize = 8;

/// Builds a deterministic intensity/label phantom pair.
///
/// Intensities lie in [0, 1] and are mildly smoothed so similarity
/// gradients carry information; labels are crisp, nonzero on at least
/// two distinct structures, and share the intensity image's geometry.
pub fn make_phantom(dims: Dims, kind: PhantomKind, seed: u64) -> Result<(ScalarVolume, LabelVolume)> {
    if dims.0 < MIN_DIM || dims.1 < MIN_DIM || dims.2 < MIN_DIM {
        return Err(Error::invalid(format!(
            "phantom dims {dims:?} too small; every axis must be at least {MIN_DIM}"
        )));
    }
    let spacing: Spacing = (1.0, 1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut image, labels) = match kind {
        PhantomKind::Spheres => spheres(dims, spacing, &mut rng),
        PhantomKind::Blobs => blobs(dims, spacing, &mut rng),
        PhantomKind::Checker => checker(dims, spacing),
    };
    let blur_sigma = if kind == PhantomKind::Blobs { 0.0 } else { 1.1 };
    if blur_sigma > 0.0 {
        gaussian_blur_scalar(&mut image.data, dims, blur_sigma);
    }
    for v in &mut image.data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok((image, labels))
}

struct Sphere {
    center: [f64; 3],
    radius: f64,
    intensity: f32,
}

fn spheres(dims: Dims, spacing: Spacing, rng: &mut ChaCha8Rng) -> (ScalarVolume, LabelVolume) {
    let min_dim = dims.0.min(dims.1).min(dims.2) as f64;
    let target = (2 + min_dim as usize / 16).min(5);
    let mut placed: Vec<Sphere> = Vec::new();

    for _ in 0..target {
        'tries: for _ in 0..200 {
            // Compact structures: small spheres make overlap scores
            // sensitive to residual misalignment, which is what a
            // registration benchmark needs. The floor keeps them a few
            // voxels wide on tiny volumes.
            let radius = (rng.gen_range(0.05..0.08) * min_dim).max(1.6);
            let mut center = [0.0f64; 3];
            for (c, &n) in center.iter_mut().zip([dims.0, dims.1, dims.2].iter()) {
                let lo = radius + 1.0;
                let hi = n as f64 - 1.0 - radius - 1.0;
                if hi <= lo {
                    continue 'tries;
                }
                *c = rng.gen_range(lo..hi);
            }
            let ok = placed.iter().all(|s| {
                let d2: f64 = s
                    .center
                    .iter()
                    .zip(center.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() > s.radius + radius + 1.5
            });
            if ok {
                let intensity = rng.gen_range(0.35..0.95);
                placed.push(Sphere {
                    center,
                    radius,
                    intensity,
                });
                break;
            }
        }
    }
    if placed.len() < 2 {
        placed.clear();
        for (i, f) in [0.32, 0.68].iter().enumerate() {
            placed.push(Sphere {
                center: [f * dims.0 as f64, f * dims.1 as f64, f * dims.2 as f64],
                radius: (0.08 * min_dim).max(1.6),
                intensity: 0.5 + 0.3 * i as f32,
            });
        }
    }

    let mut image = ScalarVolume::new(dims, spacing);
    let mut labels = LabelVolume::new(dims, spacing);
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                // Faint intensity ramp so even empty regions correlate.
                let ramp = 0.05
                    + 0.08
                        * (x as f32 / dims.0 as f32
                            + y as f32 / dims.1 as f32
                            + z as f32 / dims.2 as f32)
                        / 3.0;
                let mut v = ramp;
                let mut l = 0u16;
                for (k, s) in placed.iter().enumerate() {
                    let dx = x as f64 - s.center[0];
                    let dy = y as f64 - s.center[1];
                    let dz = z as f64 - s.center[2];
                    if dx * dx + dy * dy + dz * dz <= s.radius * s.radius {
                        v = s.intensity;
                        l = (k + 1) as u16;
                    }
                }
                image.set(x, y, z, v);
                labels.set(x, y, z, l);
            }
        }
    }
    (image, labels)
}

fn blobs(dims: Dims, spacing: Spacing, rng: &mut ChaCha8Rng) -> (ScalarVolume, LabelVolume) {
    let min_dim = dims.0.min(dims.1).min(dims.2) as f64;
    let count = if min_dim < 16.0 { 3 } else { 5 };
    let mut centers: Vec<[f64; 3]> = Vec::new();
    for _ in 0..count {
        for _ in 0..200 {
            let c = [
                rng.gen_range(0.18..0.82) * dims.0 as f64,
                rng.gen_range(0.18..0.82) * dims.1 as f64,
                rng.gen_range(0.18..0.82) * dims.2 as f64,
            ];
            let ok = centers.iter().all(|o| {
                let d2: f64 = o.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() > 0.28 * min_dim
            });
            if ok {
                centers.push(c);
                break;
            }
        }
    }
    if centers.len() < 2 {
        centers = vec![
            [0.3 * dims.0 as f64, 0.3 * dims.1 as f64, 0.3 * dims.2 as f64],
            [0.7 * dims.0 as f64, 0.7 * dims.1 as f64, 0.7 * dims.2 as f64],
        ];
    }
    let params: Vec<(f64, f64)> = centers
        .iter()
        .map(|_| {
            (
                rng.gen_range(0.09..0.15) * min_dim,
                rng.gen_range(0.6..1.0),
            )
        })
        .collect();

    let mut image = ScalarVolume::new(dims, spacing);
    let mut labels = LabelVolume::new(dims, spacing);
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let mut total = 0.0f64;
                let mut best = 0.0f64;
                let mut best_k = 0usize;
                for (k, (c, (sg, amp))) in centers.iter().zip(params.iter()).enumerate() {
                    let dx = x as f64 - c[0];
                    let dy = y as f64 - c[1];
                    let dz = z as f64 - c[2];
                    let g = amp * (-(dx * dx + dy * dy + dz * dz) / (2.0 * sg * sg)).exp();
                    total += g;
                    if g > best {
                        best = g;
                        best_k = k;
                    }
                }
                image.set(x, y, z, total.min(1.0) as f32);
                if best >= 0.25 {
                    labels.set(x, y, z, (best_k + 1) as u16);
                }
            }
        }
    }
    (image, labels)
}

fn checker(dims: Dims, spacing: Spacing) -> (ScalarVolume, LabelVolume) {
    let min_dim = dims.0.min(dims.1).min(dims.2);
    let cell = (min_dim / 6).max(2);
    let mut image = ScalarVolume::new(dims, spacing);
    let mut labels = LabelVolume::new(dims, spacing);
    // Cells with index in [1, n/cell - 2] are complete and border-free;
    // only those carry labels.
    let interior = |c: usize, n: usize| {
        let ci = c / cell;
        ci >= 1 && ci + 2 <= n / cell
    };
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let parity = (x / cell + y / cell + z / cell) % 2;
                image.set(x, y, z, if parity == 0 { 0.25 } else { 0.75 });
                if interior(x, dims.0) && interior(y, dims.1) && interior(z, dims.2) {
                    labels.set(x, y, z, (parity + 1) as u16);
                }
            }
        }
    }
    (image, labels)
}

/// Builds a deterministic smooth random displacement field: white noise
/// blurred with an isotropic Gaussian of the given sigma (voxels), then
/// rescaled so the largest |component| equals `amplitude` (voxels).
pub fn make_smooth_field(
    dims: Dims,
    amplitude: f64,
    sigma: f64,
    seed: u64,
) -> Result<DisplacementField> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "field smoothness sigma must be positive, got {sigma}"
        )));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::invalid(format!(
            "field amplitude must be non-negative, got {amplitude}"
        )));
    }
    let spacing: Spacing = (1.0, 1.0, 1.0);
    let mut field = DisplacementField::new(dims, spacing);
    if amplitude == 0.0 {
        return Ok(field);
    }

    let nvox = field.num_voxels();
    // Blur noise on a lattice padded by the kernel radius and crop the
    // center: every kept voxel then sees a full neighbourhood of real
    // noise, so the field is statistically uniform. Blurring in place
    // would let border clamping reuse edge samples with huge weight,
    // putting variance spikes at the corners.
    let pad = (3.0 * sigma).ceil() as usize;
    let pdims = (dims.0 + 2 * pad, dims.1 + 2 * pad, dims.2 + 2 * pad);
    let pvox = pdims.0 * pdims.1 * pdims.2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps: Vec<Vec<f32>> = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut padded: Vec<f32> = (0..pvox).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        gaussian_blur_scalar(&mut padded, pdims, sigma);
        let mut c = Vec::with_capacity(nvox);
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    c.push(padded[((z + pad) * pdims.1 + y + pad) * pdims.0 + x + pad]);
                }
            }
        }
        comps.push(c);
    }

    let mut max_abs = 0.0f64;
    for c in &comps {
        for &v in c {
            max_abs = max_abs.max(f64::from(v.abs()));
        }
    }
    if max_abs > 0.0 {
        let scale = amplitude / max_abs;
        let cap = amplitude as f32;
        for d in 0..3 {
            for i in 0..nvox {
                let v = (f64::from(comps[d][i]) * scale) as f32;
                field.data[3 * i + d] = v.clamp(-cap, cap);
            }
        }
    }
    Ok(field)
}

/// In-place separable Gaussian blur with replicated borders.
pub(crate) fn gaussian_blur_scalar(data: &mut Vec<f32>, dims: Dims, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0f64;
    for i in -radius..=radius {
        let w = (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    for w in &mut weights {
        *w /= sum;
    }

    let (nx, ny, nz) = dims;
    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let mut tmp = vec![0.0f32; data.len()];

    for axis in 0..3 {
        let n = [nx, ny, nz][axis];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let c = [x, y, z][axis] as isize;
                    let mut acc = 0.0f64;
                    for (k, w) in weights.iter().enumerate() {
                        let o = (c + k as isize - radius).clamp(0, n as isize - 1) as usize;
                        let mut q = [x, y, z];
                        q[axis] = o;
                        acc += w * f64::from(data[idx(q[0], q[1], q[2])]);
                    }
                    tmp[idx(x, y, z)] = acc as f32;
                }
            }
        }
        std::mem::swap(data, &mut tmp);
    }
}
