//! Similarity, regularity, and their gradients.
//!
//! The data term is negated normalized cross-correlation: global Pearson
//! correlation for `window == 0`, otherwise the mean over all voxels of
//! the correlation inside an odd cubic window centred there (windows are
//! truncated at the volume border). Variances in denominators are
//! guarded by a fixed epsilon so constant patches contribute correlation
//! zero instead of dividing by zero.
//!
//! The regularity term is the plain sum over voxels of the squared
//! difference-stencil gradients of all three field components. Its
//! gradient is the exact adjoint of the stencil, so analytic and
//! finite-difference derivatives agree to rounding error.
//!
//! Every reduction runs in a fixed order (x-fastest voxel scan;
//! windowed sums via per-axis prefix sums, x then y then z), keeping
//! results bit-reproducible run to run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, Dims, DisplacementField, ScalarVolume};
use crate::warp::Lattice;

/// Variance guard added to both centred second moments in correlation
/// denominators.
pub const NCC_EPS: f64 = 1e-5;

/// One evaluation of the registration objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Negated correlation of fixed vs warped moving.
    pub sim: f64,
    /// Sum of squared stencil gradients of the field.
    pub reg: f64,
    pub lambda: f64,
    /// Exactly sim + lambda * reg as computed.
    pub total: f64,
}

fn validate_window(window: usize) -> Result<()> {
    if window == 0 || window % 2 == 1 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "ncc window must be 0 (global) or odd, got {window}"
        )))
    }
}

/// Normalized cross-correlation of two images.
///
/// `window == 0` is global Pearson correlation; an odd `window` averages
/// the windowed correlation over all voxels. Either way the result lies
/// in [-1, 1] up to rounding and is symmetric in its arguments.
pub fn ncc(a: &ScalarVolume, b: &ScalarVolume, window: usize) -> Result<f64> {
    check_dims("second image", b.dims, a.dims)?;
    validate_window(window)?;
    let g64: Vec<f64> = b.data.iter().map(|&v| f64::from(v)).collect();
    Ok(corr_value(&a.data, &g64, a.dims, window))
}

fn corr_value(f: &[f32], g: &[f64], dims: Dims, window: usize) -> f64 {
    if window == 0 {
        return global_corr(f, g);
    }
    let stats = WindowStats::new(f, g, dims, window);
    let mut acc = 0.0f64;
    for i in 0..f.len() {
        acc += stats.corr(i);
    }
    acc / f.len() as f64
}

fn global_corr(f: &[f32], g: &[f64]) -> f64 {
    let n = f.len() as f64;
    let mut sf = 0.0f64;
    let mut sg = 0.0f64;
    for i in 0..f.len() {
        sf += f64::from(f[i]);
        sg += g[i];
    }
    let mf = sf / n;
    let mg = sg / n;
    let mut a = 0.0f64;
    let mut b = 0.0f64;
    let mut c = 0.0f64;
    for i in 0..f.len() {
        let df = f64::from(f[i]) - mf;
        let dg = g[i] - mg;
        a += df * dg;
        b += df * df;
        c += dg * dg;
    }
    a / ((b + NCC_EPS) * (c + NCC_EPS)).sqrt()
}

/// Per-voxel windowed first and second moments of an image pair, plus
/// the derived correlation quantities, built from truncated box sums.
struct WindowStats {
    count: Vec<f64>,
    sf: Vec<f64>,
    sg: Vec<f64>,
    /// Centred cross term per window.
    a: Vec<f64>,
    /// Centred second moments per window, clamped at zero.
    b: Vec<f64>,
    c: Vec<f64>,
}

impl WindowStats {
    fn new(f: &[f32], g: &[f64], dims: Dims, window: usize) -> Self {
        let radius = window / 2;
        let nvox = f.len();
        let f64s: Vec<f64> = f.iter().map(|&x| f64::from(x)).collect();
        let ff: Vec<f64> = f.iter().map(|&x| f64::from(x) * f64::from(x)).collect();
        let gg: Vec<f64> = g.iter().map(|&x| x * x).collect();
        let fg: Vec<f64> = (0..nvox).map(|i| f64::from(f[i]) * g[i]).collect();

        let sf = box_sum(&f64s, dims, radius);
        let sg = box_sum(g, dims, radius);
        let sff = box_sum(&ff, dims, radius);
        let sgg = box_sum(&gg, dims, radius);
        let sfg = box_sum(&fg, dims, radius);
        let count = window_counts(dims, radius);

        let mut a = vec![0.0f64; nvox];
        let mut b = vec![0.0f64; nvox];
        let mut c = vec![0.0f64; nvox];
        for i in 0..nvox {
            let n = count[i];
            a[i] = sfg[i] - sf[i] * sg[i] / n;
            b[i] = (sff[i] - sf[i] * sf[i] / n).max(0.0);
            c[i] = (sgg[i] - sg[i] * sg[i] / n).max(0.0);
        }
        WindowStats {
            count,
            sf,
            sg,
            a,
            b,
            c,
        }
    }

    #[inline]
    fn denom(&self, i: usize) -> f64 {
        ((self.b[i] + NCC_EPS) * (self.c[i] + NCC_EPS)).sqrt()
    }

    #[inline]
    fn corr(&self, i: usize) -> f64 {
        self.a[i] / self.denom(i)
    }
}

/// Sum of squared difference-stencil gradients of every field component
/// (central differences inside, one-sided at borders), totalled over all
/// voxels.
pub fn smoothness(field: &DisplacementField) -> f64 {
    let (nx, ny, nz) = field.dims;
    let mut acc = 0.0f64;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                for comp in 0..3 {
                    for axis in 0..3 {
                        let g = stencil(field, [x, y, z], comp, axis);
                        acc += g * g;
                    }
                }
            }
        }
    }
    acc
}

#[inline]
fn stencil(field: &DisplacementField, p: [usize; 3], comp: usize, axis: usize) -> f64 {
    let n = [field.dims.0, field.dims.1, field.dims.2][axis];
    if n < 2 {
        return 0.0;
    }
    let c = p[axis];
    let fetch = |v: usize| -> f64 {
        let mut q = p;
        q[axis] = v;
        f64::from(field.comp(q[0], q[1], q[2], comp))
    };
    if c == 0 {
        fetch(1) - fetch(0)
    } else if c == n - 1 {
        fetch(n - 1) - fetch(n - 2)
    } else {
        (fetch(c + 1) - fetch(c - 1)) * 0.5
    }
}

/// Gradient of [`smoothness`] with respect to every field component: the
/// exact adjoint of the difference stencil. Layout matches the field
/// buffer (3 interleaved components per voxel).
pub fn smoothness_gradient(field: &DisplacementField) -> Vec<f64> {
    let (nx, ny, nz) = field.dims;
    let mut grad = vec![0.0f64; field.data.len()];
    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                for comp in 0..3 {
                    for axis in 0..3 {
                        let n = [nx, ny, nz][axis];
                        if n < 2 {
                            continue;
                        }
                        let g = stencil(field, [x, y, z], comp, axis);
                        let c = [x, y, z][axis];
                        let mut hi = [x, y, z];
                        let mut lo = [x, y, z];
                        // d(g^2) spreads onto the stencil's two taps.
                        let w = if c == 0 {
                            hi[axis] = 1;
                            lo[axis] = 0;
                            2.0 * g
                        } else if c == n - 1 {
                            hi[axis] = n - 1;
                            lo[axis] = n - 2;
                            2.0 * g
                        } else {
                            hi[axis] = c + 1;
                            lo[axis] = c - 1;
                            g
                        };
                        grad[3 * idx(hi[0], hi[1], hi[2]) + comp] += w;
                        grad[3 * idx(lo[0], lo[1], lo[2]) + comp] -= w;
                    }
                }
            }
        }
    }
    grad
}

/// Evaluates the full objective for a candidate field:
/// `-ncc(fixed, warp(moving, field), window) + lambda * smoothness(field)`.
pub fn total_loss(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    field: &DisplacementField,
    lambda: f64,
    window: usize,
) -> Result<LossBreakdown> {
    if !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite, got {lambda}")));
    }
    check_dims("moving image", moving.dims, fixed.dims)?;
    check_dims("field", field.dims, fixed.dims)?;
    validate_window(window)?;
    // The warp is sampled in double precision inside the loss, keeping
    // it a smooth function of the field for derivative checks.
    let warped = warp_to_f64(moving, field);
    let sim = -corr_value(&fixed.data, &warped, fixed.dims, window);
    let reg = smoothness(field);
    Ok(LossBreakdown {
        sim,
        reg,
        lambda,
        total: sim + lambda * reg,
    })
}

fn warp_to_f64(moving: &ScalarVolume, field: &DisplacementField) -> Vec<f64> {
    let (nx, ny, nz) = field.dims;
    let lat = Lattice::scalar(moving);
    let mut out = Vec::with_capacity(field.data.len() / 3);
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = &field.data[3 * i..3 * i + 3];
                out.push(lat.sample(
                    x as f64 + f64::from(u[0]),
                    y as f64 + f64::from(u[1]),
                    z as f64 + f64::from(u[2]),
                ));
                i += 1;
            }
        }
    }
    out
}

/// Analytic gradient of [`total_loss`] with respect to every
/// displacement component, same layout as the field buffer.
///
/// The similarity part chains the correlation derivative through the
/// trilinear interpolant (zero in clamped directions); the regularity
/// part is the stencil adjoint scaled by lambda.
pub fn loss_gradient(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    field: &DisplacementField,
    lambda: f64,
    window: usize,
) -> Result<DisplacementField> {
    if !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be finite, got {lambda}")));
    }
    check_dims("moving image", moving.dims, fixed.dims)?;
    check_dims("field", field.dims, fixed.dims)?;
    validate_window(window)?;

    let (nx, ny, nz) = fixed.dims;
    let nvox = fixed.num_voxels();
    let lat = Lattice::scalar(moving);

    let mut warped = vec![0.0f64; nvox];
    let mut dw = vec![[0.0f64; 3]; nvox];
    let mut i = 0usize;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let u = &field.data[3 * i..3 * i + 3];
                let (v, g) = lat.sample_with_grad(
                    x as f64 + f64::from(u[0]),
                    y as f64 + f64::from(u[1]),
                    z as f64 + f64::from(u[2]),
                );
                warped[i] = v;
                dw[i] = g;
                i += 1;
            }
        }
    }

    let gsim = if window == 0 {
        global_corr_gradient(&fixed.data, &warped)
    } else {
        local_corr_gradient(&fixed.data, &warped, fixed.dims, window)
    };

    let greg = smoothness_gradient(field);

    let mut out = DisplacementField::new(field.dims, field.spacing);
    for i in 0..nvox {
        for d in 0..3 {
            out.data[3 * i + d] = (gsim[i] * dw[i][d] + lambda * greg[3 * i + d]) as f32;
        }
    }
    Ok(out)
}

/// d(-corr)/d(warped value) for the global variant.
fn global_corr_gradient(f: &[f32], g: &[f64]) -> Vec<f64> {
    let n = f.len() as f64;
    let mut sf = 0.0f64;
    let mut sg = 0.0f64;
    for i in 0..f.len() {
        sf += f64::from(f[i]);
        sg += g[i];
    }
    let mf = sf / n;
    let mg = sg / n;
    let mut a = 0.0f64;
    let mut b = 0.0f64;
    let mut c = 0.0f64;
    for i in 0..f.len() {
        let df = f64::from(f[i]) - mf;
        let dg = g[i] - mg;
        a += df * dg;
        b += df * df;
        c += dg * dg;
    }
    let d = ((b + NCC_EPS) * (c + NCC_EPS)).sqrt();
    let k2 = a / (d * (c + NCC_EPS));
    (0..f.len())
        .map(|i| -((f64::from(f[i]) - mf) / d - (g[i] - mg) * k2))
        .collect()
}

/// d(-mean windowed corr)/d(warped value). For each window centre p the
/// correlation depends on the warped values inside the window; the sum
/// over centres containing a voxel is itself a box sum because window
/// membership is symmetric.
fn local_corr_gradient(f: &[f32], g: &[f64], dims: Dims, window: usize) -> Vec<f64> {
    let radius = window / 2;
    let nvox = f.len();
    let stats = WindowStats::new(f, g, dims, window);

    let mut alpha = vec![0.0f64; nvox];
    let mut beta = vec![0.0f64; nvox];
    let mut gamma = vec![0.0f64; nvox];
    let mut delta = vec![0.0f64; nvox];
    for p in 0..nvox {
        let d = stats.denom(p);
        let n = stats.count[p];
        alpha[p] = 1.0 / d;
        beta[p] = stats.sf[p] / n / d;
        gamma[p] = stats.a[p] / (d * (stats.c[p] + NCC_EPS));
        delta[p] = stats.sg[p] / n * stats.a[p] / (d * (stats.c[p] + NCC_EPS));
    }
    let balpha = box_sum(&alpha, dims, radius);
    let bbeta = box_sum(&beta, dims, radius);
    let bgamma = box_sum(&gamma, dims, radius);
    let bdelta = box_sum(&delta, dims, radius);

    let inv_v = 1.0 / nvox as f64;
    (0..nvox)
        .map(|r| {
            let term =
                f64::from(f[r]) * balpha[r] - bbeta[r] - g[r] * bgamma[r] + bdelta[r];
            -inv_v * term
        })
        .collect()
}

/// Sliding-window sum over the cube of the given radius, truncated at
/// the volume border, computed per axis with prefix sums.
fn box_sum(data: &[f64], dims: Dims, radius: usize) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let mut cur = data.to_vec();
    let mut out = vec![0.0f64; data.len()];
    for axis in 0..3 {
        let n = [nx, ny, nz][axis];
        let (outer1, outer2) = match axis {
            0 => (ny, nz),
            1 => (nx, nz),
            _ => (nx, ny),
        };
        let mut prefix = vec![0.0f64; n + 1];
        for o2 in 0..outer2 {
            for o1 in 0..outer1 {
                let at = |i: usize| -> usize {
                    match axis {
                        0 => (o2 * ny + o1) * nx + i,
                        1 => (o2 * ny + i) * nx + o1,
                        _ => (i * ny + o2) * nx + o1,
                    }
                };
                prefix[0] = 0.0;
                for i in 0..n {
                    prefix[i + 1] = prefix[i] + cur[at(i)];
                }
                for i in 0..n {
                    let lo = i.saturating_sub(radius);
                    let hi = (i + radius).min(n - 1);
                    out[at(i)] = prefix[hi + 1] - prefix[lo];
                }
            }
        }
        std::mem::swap(&mut cur, &mut out);
    }
    cur
}

/// Number of in-volume voxels inside each truncated window.
fn window_counts(dims: Dims, radius: usize) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let extent = |i: usize, n: usize| -> f64 {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        (hi - lo + 1) as f64
    };
    let cx: Vec<f64> = (0..nx).map(|i| extent(i, nx)).collect();
    let cy: Vec<f64> = (0..ny).map(|i| extent(i, ny)).collect();
    let cz: Vec<f64> = (0..nz).map(|i| extent(i, nz)).collect();
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                out.push(cx[x] * cy[y] * cz[z]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{make_phantom, make_smooth_field, PhantomKind};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> (f32, f32, f32) {
        (1.0, 1.0, 1.0)
    }

    /// Uniform noise in [0, 1]: variance well above the correlation
    /// guard in every window.
    fn noise_volume(dims: Dims, seed: u64) -> ScalarVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.0 * dims.1 * dims.2;
        ScalarVolume::from_vec(
            dims,
            unit(),
            (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ncc_of_image_with_itself_is_one() {
        let (img, _) = make_phantom((16, 16, 16), PhantomKind::Blobs, 3).unwrap();
        let g = ncc(&img, &img, 0).unwrap();
        assert!((g - 1.0).abs() < 1e-4, "global {g}");
        let noisy = noise_volume((16, 16, 16), 9);
        let l = ncc(&noisy, &noisy, 9).unwrap();
        assert!((l - 1.0).abs() < 1e-4, "local {l}");
    }

    #[test]
    fn ncc_of_negated_image_is_minus_one_globally() {
        let (img, _) = make_phantom((16, 16, 16), PhantomKind::Blobs, 3).unwrap();
        let mut neg = img.clone();
        for v in &mut neg.data {
            *v = -*v;
        }
        let g = ncc(&img, &neg, 0).unwrap();
        assert!((g + 1.0).abs() < 1e-4, "{g}");
    }

    #[test]
    fn ncc_is_symmetric_bitwise() {
        let (a, _) = make_phantom((12, 12, 12), PhantomKind::Blobs, 1).unwrap();
        let (b, _) = make_phantom((12, 12, 12), PhantomKind::Spheres, 2).unwrap();
        for window in [0, 3, 9] {
            assert_eq!(
                ncc(&a, &b, window).unwrap(),
                ncc(&b, &a, window).unwrap(),
                "window {window}"
            );
        }
    }

    #[test]
    fn ncc_invariant_under_positive_affine_intensity_map() {
        let (a, _) = make_phantom((16, 16, 16), PhantomKind::Blobs, 5).unwrap();
        let (b, _) = make_phantom((16, 16, 16), PhantomKind::Spheres, 6).unwrap();
        let mut b2 = b.clone();
        for v in &mut b2.data {
            *v = 2.0 * *v + 0.25;
        }
        let base = ncc(&a, &b, 0).unwrap();
        let mapped = ncc(&a, &b2, 0).unwrap();
        assert!((base - mapped).abs() < 1e-5, "{base} vs {mapped}");
    }

    #[test]
    fn ncc_of_constant_image_is_zero() {
        let mut c = ScalarVolume::new((10, 10, 10), unit());
        c.data.fill(0.7);
        let (img, _) = make_phantom((10, 10, 10), PhantomKind::Blobs, 1).unwrap();
        // Only rounding noise survives the zero centred cross term.
        assert!(ncc(&c, &img, 0).unwrap().abs() < 1e-9);
        assert!(ncc(&c, &img, 3).unwrap().abs() < 1e-9);
    }

    #[test]
    fn ncc_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..20 {
            let dims = (7, 6, 8);
            let n = 7 * 6 * 8;
            let a = ScalarVolume::from_vec(
                dims,
                unit(),
                (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let b = ScalarVolume::from_vec(
                dims,
                unit(),
                (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            for window in [0, 3, 5] {
                let v = ncc(&a, &b, window).unwrap();
                assert!(v.abs() <= 1.0 + 1e-6, "window {window}: {v}");
            }
        }
    }

    #[test]
    fn even_window_rejected() {
        let a = ScalarVolume::new((8, 8, 8), unit());
        assert!(ncc(&a, &a, 2).is_err());
        assert!(ncc(&a, &a, 4).is_err());
        assert!(ncc(&a, &a, 3).is_ok());
    }

    #[test]
    fn smoothness_of_unit_ramp_counts_voxels() {
        // u_x = x: the stencil sees slope 1 everywhere, including the
        // one-sided borders, so each voxel contributes exactly 1.
        let dims = (5, 5, 5);
        let mut f = DisplacementField::new(dims, unit());
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    f.set_vec(x, y, z, [x as f32, 0.0, 0.0]);
                }
            }
        }
        assert_eq!(smoothness(&f), 125.0);
        assert_eq!(smoothness(&DisplacementField::new(dims, unit())), 0.0);
    }

    #[test]
    fn smoothness_scales_quadratically() {
        let f = make_smooth_field((10, 9, 8), 1.5, 2.0, 7).unwrap();
        let mut s = f.clone();
        for v in &mut s.data {
            *v *= 2.5;
        }
        let r1 = smoothness(&f);
        let r2 = smoothness(&s);
        assert!((r2 / r1 - 6.25).abs() < 1e-4, "{}", r2 / r1);
    }

    #[test]
    fn total_loss_identity_pair_is_minus_one() {
        let (img, _) = make_phantom((12, 12, 12), PhantomKind::Blobs, 9).unwrap();
        let zero = DisplacementField::new(img.dims, unit());
        let l = total_loss(&img, &img, &zero, 1.0, 0).unwrap();
        assert!((l.total + 1.0).abs() < 1e-4, "{}", l.total);
        assert_eq!(l.reg, 0.0);
    }

    #[test]
    fn total_is_exactly_sim_plus_lambda_reg() {
        let (a, _) = make_phantom((10, 10, 10), PhantomKind::Spheres, 3).unwrap();
        let (b, _) = make_phantom((10, 10, 10), PhantomKind::Blobs, 4).unwrap();
        let f = make_smooth_field((10, 10, 10), 1.0, 2.0, 5).unwrap();
        for lambda in [0.0, 0.5, 2.0] {
            let l = total_loss(&a, &b, &f, lambda, 3).unwrap();
            assert_eq!(l.total, l.sim + lambda * l.reg);
            if lambda == 0.0 {
                assert_eq!(l.total, l.sim);
            }
        }
    }

    /// Central finite difference of the black-box total loss with
    /// respect to one displacement component.
    fn fd_component(
        fixed: &ScalarVolume,
        moving: &ScalarVolume,
        field: &DisplacementField,
        lambda: f64,
        window: usize,
        index: usize,
        h: f64,
    ) -> f64 {
        let mut plus = field.clone();
        plus.data[index] += h as f32;
        let mut minus = field.clone();
        minus.data[index] -= h as f32;
        let lp = total_loss(fixed, moving, &plus, lambda, window).unwrap().total;
        let lm = total_loss(fixed, moving, &minus, lambda, window)
            .unwrap()
            .total;
        (lp - lm) / (2.0 * h)
    }

    /// True when nudging component `index` by +-h keeps the sample point
    /// of its voxel inside one interpolation cell and away from the
    /// clamping boundary, so the loss is smooth across the probe.
    fn probe_is_safe(field: &DisplacementField, index: usize, h: f64) -> bool {
        let voxel = index / 3;
        let d = index % 3;
        let (nx, ny, _) = field.dims;
        let x = voxel % nx;
        let y = (voxel / nx) % ny;
        let z = voxel / (nx * ny);
        let p = [x as f64, y as f64, z as f64];
        let u = [
            f64::from(field.data[3 * voxel]),
            f64::from(field.data[3 * voxel + 1]),
            f64::from(field.data[3 * voxel + 2]),
        ];
        let pos = p[d] + u[d];
        let n = [field.dims.0, field.dims.1, field.dims.2][d] as f64;
        let margin = 4.0 * h;
        if pos - margin <= 0.0 || pos + margin >= n - 1.0 {
            return false;
        }
        (pos - margin).floor() == (pos + margin).floor()
    }

    /// The mandatory derivative check: analytic gradient vs central
    /// finite differences on random smooth instances. A failure here
    /// means the similarity chain rule or the stencil adjoint is wrong.
    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for case in 0..10 {
            let window = if case % 2 == 0 { 0 } else { 5 };
            let lambda = 0.01;
            let dims = (9, 9, 9);
            let (fixed, _) = make_phantom(dims, PhantomKind::Blobs, 100 + case).unwrap();
            let (moving, _) = make_phantom(dims, PhantomKind::Blobs, 200 + case).unwrap();
            let field = make_smooth_field(dims, 1.2, 2.0, 300 + case).unwrap();
            let grad = loss_gradient(&fixed, &moving, &field, lambda, window).unwrap();

            let mut checked = 0usize;
            let mut guard = 0usize;
            while checked < 30 {
                guard += 1;
                assert!(guard < 20000, "could not find safe probe components");
                let index = rng.gen_range(0..field.data.len());
                if !probe_is_safe(&field, index, h) {
                    continue;
                }
                let fd = fd_component(&fixed, &moving, &field, lambda, window, index, h);
                let an = f64::from(grad.data[index]);
                if fd.abs() < 1e-6 && an.abs() < 1e-6 {
                    continue;
                }
                let rel = (an - fd).abs() / an.abs().max(fd.abs());
                assert!(
                    rel < 1e-3,
                    "case {case} window {window} index {index}: analytic {an} vs fd {fd} (rel {rel})"
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn similarity_gradient_vanishes_at_alignment() {
        // Needs real variance in every window: near-constant windows sit
        // in the correlation guard's regime, where even a perfectly
        // aligned pair has a genuine variance-seeking gradient.
        let img = noise_volume((12, 12, 12), 17);
        let zero = DisplacementField::new(img.dims, unit());
        for window in [0, 5] {
            let g = loss_gradient(&img, &img, &zero, 0.0, window).unwrap();
            let max = g.data.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
            assert!(max < 1e-6, "window {window}: max {max}");
        }
    }

    #[test]
    fn regularity_gradient_is_zero_inside_affine_fields() {
        // Affine fields have constant stencil gradients, so the adjoint
        // telescopes to zero away from the borders. Dyadic coefficients
        // keep the field values exact in f32, making the cancellation
        // exact too.
        let dims = (8, 8, 8);
        let mut f = DisplacementField::new(dims, unit());
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    f.set_vec(
                        x,
                        y,
                        z,
                        [
                            0.125 * x as f32 + 0.0625 * y as f32,
                            -0.03125 * z as f32,
                            0.25 * x as f32,
                        ],
                    );
                }
            }
        }
        let g = smoothness_gradient(&f);
        let idx = |x: usize, y: usize, z: usize| (z * 8 + y) * 8 + x;
        for z in 2..6 {
            for y in 2..6 {
                for x in 2..6 {
                    for c in 0..3 {
                        let v = g[3 * idx(x, y, z) + c];
                        assert!(v.abs() < 1e-12, "interior adjoint {v} at ({x},{y},{z},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn dims_mismatch_rejected() {
        let a = ScalarVolume::new((8, 8, 8), unit());
        let b = ScalarVolume::new((8, 8, 9), unit());
        let f = DisplacementField::new((8, 8, 8), unit());
        assert!(ncc(&a, &b, 0).is_err());
        assert!(total_loss(&a, &b, &f, 1.0, 0).is_err());
        assert!(loss_gradient(&a, &b, &f, 1.0, 0).is_err());
        let f2 = DisplacementField::new((8, 8, 9), unit());
        assert!(total_loss(&a, &a, &f2, 1.0, 0).is_err());
    }
}
