//! Overlap and surface-distance metrics for labelled volumes.
//!
//! Surfaces are voxel sets: a voxel belongs to the surface of a label
//! when it carries the label and at least one of its six face
//! neighbours does not (the volume border counts as outside). Distances
//! between surfaces are Euclidean in millimetres, computed with an
//! exact parabolic-envelope distance transform that handles anisotropic
//! spacing; surface voxels are always enumerated in x-fastest scan
//! order so derived statistics are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{check_dims, Dims, DisplacementField, LabelVolume, Spacing};
use crate::warp::{jacobian_det_stats, JacobianStats};

/// Dice overlap of one label between two volumes: `2|A∩B| / (|A|+|B|)`.
/// Two empty sets coincide, so the score is 1 when the label is absent
/// from both volumes.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<f64> {
    check_dims("second label volume", b.dims, a.dims)?;
    let mut na = 0u64;
    let mut nb = 0u64;
    let mut inter = 0u64;
    for i in 0..a.data.len() {
        let ia = a.data[i] == label;
        let ib = b.data[i] == label;
        na += u64::from(ia);
        nb += u64::from(ib);
        inter += u64::from(ia && ib);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

fn surface_mask(vol: &LabelVolume, label: u16) -> Vec<bool> {
    let (nx, ny, nz) = vol.dims;
    let idx = |x: usize, y: usize, z: usize| (z * ny + y) * nx + x;
    let mut out = vec![false; vol.data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if vol.data[idx(x, y, z)] != label {
                    continue;
                }
                let exposed = x == 0
                    || y == 0
                    || z == 0
                    || x == nx - 1
                    || y == ny - 1
                    || z == nz - 1
                    || vol.data[idx(x - 1, y, z)] != label
                    || vol.data[idx(x + 1, y, z)] != label
                    || vol.data[idx(x, y - 1, z)] != label
                    || vol.data[idx(x, y + 1, z)] != label
                    || vol.data[idx(x, y, z - 1)] != label
                    || vol.data[idx(x, y, z + 1)] != label;
                out[idx(x, y, z)] = exposed;
            }
        }
    }
    out
}

/// Directed surface-to-surface distances for one label, in millimetres:
/// for each surface voxel of `a` the distance to the nearest surface
/// voxel of `b`, and vice versa. Errors if the label has no surface in
/// either volume or the volumes disagree on geometry.
pub fn surface_distances(
    a: &LabelVolume,
    b: &LabelVolume,
    label: u16,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims("second label volume", b.dims, a.dims)?;
    if a.spacing != b.spacing {
        return Err(Error::invalid(format!(
            "voxel spacing mismatch: {:?} vs {:?}",
            a.spacing, b.spacing
        )));
    }
    let sa = surface_mask(a, label);
    let sb = surface_mask(b, label);
    if !sa.iter().any(|&v| v) || !sb.iter().any(|&v| v) {
        return Err(Error::invalid(format!(
            "label {label} has no surface in one of the volumes"
        )));
    }
    let to_b = edt_squared(&sb, a.dims, a.spacing);
    let to_a = edt_squared(&sa, a.dims, a.spacing);
    let gather = |surface: &[bool], dist_sq: &[f64]| -> Vec<f64> {
        surface
            .iter()
            .enumerate()
            .filter(|&(_, &on)| on)
            .map(|(i, _)| dist_sq[i].sqrt())
            .collect()
    };
    Ok((gather(&sa, &to_b), gather(&sb, &to_a)))
}

/// 95th-percentile symmetric surface distance: the larger of the two
/// directed nearest-rank 95th percentiles.
pub fn hd95(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<f64> {
    let (ab, ba) = surface_distances(a, b, label)?;
    Ok(percentile_nearest_rank(ab, 95).max(percentile_nearest_rank(ba, 95)))
}

/// Average symmetric surface distance: the mean of the pooled directed
/// distance multisets.
pub fn assd(a: &LabelVolume, b: &LabelVolume, label: u16) -> Result<f64> {
    let (ab, ba) = surface_distances(a, b, label)?;
    let n = ab.len() + ba.len();
    let sum: f64 = ab.iter().sum::<f64>() + ba.iter().sum::<f64>();
    Ok(sum / n as f64)
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
pub(crate) fn percentile_nearest_rank(mut values: Vec<f64>, p: u64) -> f64 {
    assert!(!values.is_empty() && p >= 1 && p <= 100);
    values.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    // Integer ceiling keeps the rank immune to float rounding.
    let rank = (p * values.len() as u64).div_ceil(100).max(1) as usize;
    values[rank - 1]
}

/// Per-label scores for one registered pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: u16,
    pub dice: f64,
    /// None when the label is missing from the warped volume.
    pub hd95: Option<f64>,
    pub assd: Option<f64>,
}

/// Full evaluation of warped labels against fixed labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_label: Vec<LabelMetrics>,
    /// Mean dice over every nonzero label of the fixed volume; labels
    /// missing from the warped volume count as zero.
    pub mean_dice: f64,
    /// Means over labels present in both volumes; None if there are none.
    pub mean_hd95: Option<f64>,
    pub mean_assd: Option<f64>,
    pub missing_labels: Vec<u16>,
    pub jacobian: JacobianStats,
}

/// Scores every nonzero label of the fixed volume against the warped
/// labels and summarises the deformation's Jacobian determinant.
pub fn evaluate_all(
    fixed: &LabelVolume,
    warped: &LabelVolume,
    field: &DisplacementField,
) -> Result<MetricReport> {
    check_dims("warped label volume", warped.dims, fixed.dims)?;
    check_dims("field", field.dims, fixed.dims)?;
    let labels: Vec<u16> = fixed
        .present_labels()
        .into_iter()
        .filter(|&l| l != 0)
        .collect();
    if labels.is_empty() {
        return Err(Error::invalid("fixed volume contains no nonzero labels"));
    }
    let warped_present = warped.present_labels();

    let mut per_label = Vec::with_capacity(labels.len());
    let mut missing = Vec::new();
    let mut dice_sum = 0.0f64;
    let mut hd_sum = 0.0f64;
    let mut assd_sum = 0.0f64;
    let mut matched = 0usize;
    for &label in &labels {
        let d = dice(fixed, warped, label)?;
        dice_sum += d;
        if warped_present.contains(&label) {
            let h = hd95(fixed, warped, label)?;
            let s = assd(fixed, warped, label)?;
            hd_sum += h;
            assd_sum += s;
            matched += 1;
            per_label.push(LabelMetrics {
                label,
                dice: d,
                hd95: Some(h),
                assd: Some(s),
            });
        } else {
            missing.push(label);
            per_label.push(LabelMetrics {
                label,
                dice: d,
                hd95: None,
                assd: None,
            });
        }
    }
    let mean = |sum: f64| {
        if matched > 0 {
            Some(sum / matched as f64)
        } else {
            None
        }
    };
    Ok(MetricReport {
        per_label,
        mean_dice: dice_sum / labels.len() as f64,
        mean_hd95: mean(hd_sum),
        mean_assd: mean(assd_sum),
        missing_labels: missing,
        jacobian: jacobian_det_stats(field),
    })
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest
/// marked voxel, or +inf if the mask is empty. Exact: each output is
/// the true minimum over marked voxels of `dx^2 + dy^2 + dz^2` with the
/// per-axis terms scaled by spacing.
fn edt_squared(mask: &[bool], dims: Dims, spacing: Spacing) -> Vec<f64> {
    let (nx, ny, nz) = dims;
    let mut dist: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();
    let spacings = [
        f64::from(spacing.0),
        f64::from(spacing.1),
        f64::from(spacing.2),
    ];
    let mut line = vec![0.0f64; nx.max(ny).max(nz)];
    let mut out_line = vec![0.0f64; line.len()];
    for axis in 0..3 {
        let n = [nx, ny, nz][axis];
        let (outer1, outer2) = match axis {
            0 => (ny, nz),
            1 => (nx, nz),
            _ => (nx, ny),
        };
        for o2 in 0..outer2 {
            for o1 in 0..outer1 {
                let at = |i: usize| -> usize {
                    match axis {
                        0 => (o2 * ny + o1) * nx + i,
                        1 => (o2 * ny + i) * nx + o1,
                        _ => (i * ny + o2) * nx + o1,
                    }
                };
                for i in 0..n {
                    line[i] = dist[at(i)];
                }
                dt_line(&line[..n], spacings[axis], &mut out_line[..n]);
                for i in 0..n {
                    dist[at(i)] = out_line[i];
                }
            }
        }
    }
    dist
}

/// One-dimensional lower envelope of parabolas `(x - i*w)^2 + f[i]`
/// sampled at `x = q*w`, skipping infinite sources.
fn dt_line(f: &[f64], w: f64, out: &mut [f64]) {
    let n = f.len();
    let mut verts: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    let coord = |i: usize| i as f64 * w;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        while let Some(&p) = verts.last() {
            // x where the parabola at q overtakes the one at p.
            let s = ((f[q] + coord(q) * coord(q)) - (f[p] + coord(p) * coord(p)))
                / (2.0 * w * (q - p) as f64);
            if s <= *bounds.last().unwrap() {
                verts.pop();
                bounds.pop();
            } else {
                verts.push(q);
                bounds.push(s);
                break;
            }
        }
        if verts.is_empty() {
            verts.push(q);
            bounds.push(f64::NEG_INFINITY);
        }
    }
    if verts.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        while k + 1 < verts.len() && bounds[k + 1] < coord(q) {
            k += 1;
        }
        let p = verts[k];
        let d = coord(q) - coord(p);
        out[q] = d * d + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Spacing {
        (1.0, 1.0, 1.0)
    }

    fn vol_with(dims: Dims, spacing: Spacing, voxels: &[(usize, usize, usize)]) -> LabelVolume {
        let mut v = LabelVolume::new(dims, spacing);
        for &(x, y, z) in voxels {
            v.set(x, y, z, 1);
        }
        v
    }

    #[test]
    fn dice_known_cases() {
        let dims = (6, 6, 6);
        let a = vol_with(dims, unit(), &[(1, 1, 1), (2, 1, 1)]);
        let same = a.clone();
        assert_eq!(dice(&a, &same, 1).unwrap(), 1.0);
        let disjoint = vol_with(dims, unit(), &[(4, 4, 4), (5, 4, 4)]);
        assert_eq!(dice(&a, &disjoint, 1).unwrap(), 0.0);
        // |A| = |B| = 2 with one shared voxel: 2*1/(2+2).
        let half = vol_with(dims, unit(), &[(2, 1, 1), (3, 1, 1)]);
        assert_eq!(dice(&a, &half, 1).unwrap(), 0.5);
        // Absent from both volumes vs absent from one.
        assert_eq!(dice(&a, &half, 9).unwrap(), 1.0);
        let empty = LabelVolume::new(dims, unit());
        assert_eq!(dice(&a, &empty, 1).unwrap(), 0.0);
    }

    #[test]
    fn surface_of_solid_cube_excludes_its_core() {
        let mut v = LabelVolume::new((5, 5, 5), unit());
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    v.set(x, y, z, 1);
                }
            }
        }
        let s = surface_mask(&v, 1);
        let count = s.iter().filter(|&&b| b).count();
        assert_eq!(count, 26); // 27 cube voxels minus the single core voxel
        assert!(!s[(2 * 5 + 2) * 5 + 2]);
    }

    #[test]
    fn volume_border_counts_as_outside() {
        // A label filling the whole volume is all border shell: interior
        // voxels have six same-label neighbours, shell voxels touch the
        // volume boundary.
        let mut v = LabelVolume::new((4, 5, 6), unit());
        v.data.fill(3);
        let s = surface_mask(&v, 3);
        let count = s.iter().filter(|&&b| b).count();
        assert_eq!(count, 4 * 5 * 6 - 2 * 3 * 4);
    }

    /// Brute-force nearest-surface distances: every pair, same scan
    /// order and same arithmetic shape as the transform under test.
    fn brute_distances(a: &LabelVolume, b: &LabelVolume, label: u16) -> (Vec<f64>, Vec<f64>) {
        let coords = |v: &LabelVolume| -> Vec<(usize, usize, usize)> {
            let (nx, ny, nz) = v.dims;
            let s = surface_mask(v, label);
            let mut out = Vec::new();
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        if s[(z * ny + y) * nx + x] {
                            out.push((x, y, z));
                        }
                    }
                }
            }
            out
        };
        let ca = coords(a);
        let cb = coords(b);
        let (sx, sy, sz) = a.spacing;
        let dist = |from: &[(usize, usize, usize)], to: &[(usize, usize, usize)]| -> Vec<f64> {
            from.iter()
                .map(|&(px, py, pz)| {
                    let mut best = f64::INFINITY;
                    for &(qx, qy, qz) in to {
                        let dx = (px as f64 - qx as f64) * f64::from(sx);
                        let dy = (py as f64 - qy as f64) * f64::from(sy);
                        let dz = (pz as f64 - qz as f64) * f64::from(sz);
                        let d2 = dx * dx + dy * dy + dz * dz;
                        if d2 < best {
                            best = d2;
                        }
                    }
                    best.sqrt()
                })
                .collect()
        };
        (dist(&ca, &cb), dist(&cb, &ca))
    }

    fn random_label_volume(rng: &mut ChaCha8Rng, dims: Dims) -> LabelVolume {
        let mut v = LabelVolume::new(dims, unit());
        let balls = rng.gen_range(1..4);
        for _ in 0..balls {
            let cx = rng.gen_range(1..dims.0 - 1) as i64;
            let cy = rng.gen_range(1..dims.1 - 1) as i64;
            let cz = rng.gen_range(1..dims.2 - 1) as i64;
            let r = rng.gen_range(1..4) as i64;
            for z in 0..dims.2 as i64 {
                for y in 0..dims.1 as i64 {
                    for x in 0..dims.0 as i64 {
                        let d2 = (x - cx).pow(2) + (y - cy).pow(2) + (z - cz).pow(2);
                        if d2 <= r * r {
                            v.set(x as usize, y as usize, z as usize, 1);
                        }
                    }
                }
            }
        }
        v
    }

    #[test]
    fn transform_matches_all_pairs_exactly_at_unit_spacing() {
        // At unit spacing every squared distance is an exact integer in
        // f64, so the envelope transform and the quadratic scan must
        // agree bit for bit, as must everything derived from them.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut tested = 0;
        while tested < 25 {
            let dims = (
                rng.gen_range(8..15usize),
                rng.gen_range(8..15usize),
                rng.gen_range(8..15usize),
            );
            let a = random_label_volume(&mut rng, dims);
            let b = random_label_volume(&mut rng, dims);
            if !a.data.iter().any(|&v| v == 1) || !b.data.iter().any(|&v| v == 1) {
                continue;
            }
            let n_surface = surface_mask(&a, 1).iter().filter(|&&s| s).count()
                + surface_mask(&b, 1).iter().filter(|&&s| s).count();
            assert!(n_surface <= 1500, "oracle would be too slow: {n_surface}");

            let (lib_ab, lib_ba) = surface_distances(&a, &b, 1).unwrap();
            let (ora_ab, ora_ba) = brute_distances(&a, &b, 1);
            assert_eq!(lib_ab, ora_ab);
            assert_eq!(lib_ba, ora_ba);

            let lib_hd = hd95(&a, &b, 1).unwrap();
            let ora_hd = percentile_nearest_rank(ora_ab.clone(), 95)
                .max(percentile_nearest_rank(ora_ba.clone(), 95));
            assert_eq!(lib_hd, ora_hd);

            let lib_assd = assd(&a, &b, 1).unwrap();
            let ora_assd = (ora_ab.iter().sum::<f64>() + ora_ba.iter().sum::<f64>())
                / (ora_ab.len() + ora_ba.len()) as f64;
            assert_eq!(lib_assd, ora_assd);
            tested += 1;
        }
    }

    #[test]
    fn anisotropic_spacing_scales_distances() {
        let dims = (8, 8, 8);
        let sp = (0.5f32, 2.0f32, 3.0f32);
        let a = vol_with(dims, sp, &[(1, 1, 1)]);
        let b = vol_with(dims, sp, &[(4, 1, 1)]);
        // Pure x offset of 3 voxels at 0.5 mm each.
        assert!((hd95(&a, &b, 1).unwrap() - 1.5).abs() < 1e-12);
        assert!((assd(&a, &b, 1).unwrap() - 1.5).abs() < 1e-12);

        let c = vol_with(dims, sp, &[(2, 3, 1)]);
        let expect = (0.5f64.powi(2) + 4.0f64.powi(2)).sqrt();
        assert!((hd95(&a, &c, 1).unwrap() - expect).abs() < 1e-12);

        let (brute_ab, brute_ba) = brute_distances(&a, &c, 1);
        let (lib_ab, lib_ba) = surface_distances(&a, &c, 1).unwrap();
        for (l, o) in lib_ab.iter().zip(&brute_ab).chain(lib_ba.iter().zip(&brute_ba)) {
            assert!((l - o).abs() < 1e-9);
        }
    }

    #[test]
    fn percentile_uses_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(v, 95), 95.0);
        // ceil(0.95 * 5) = 5: the maximum.
        assert_eq!(percentile_nearest_rank(vec![1.0, 2.0, 3.0, 4.0, 10.0], 95), 10.0);
        // ceil(0.95 * 20) = 19.
        let w: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(w, 95), 19.0);
        let u: Vec<f64> = (1..=105).map(f64::from).collect();
        assert_eq!(percentile_nearest_rank(u, 95), 100.0);
    }

    #[test]
    fn missing_label_rules_in_full_evaluation() {
        let dims = (8, 8, 8);
        let mut fixed = LabelVolume::new(dims, unit());
        let mut warped = LabelVolume::new(dims, unit());
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    fixed.set(x, y, z, 1);
                    warped.set(x, y, z, 1);
                }
            }
        }
        fixed.set(6, 6, 6, 2); // label 2 exists only in fixed
        let field = DisplacementField::new(dims, unit());
        let report = evaluate_all(&fixed, &warped, &field).unwrap();
        assert_eq!(report.missing_labels, vec![2]);
        assert_eq!(report.per_label.len(), 2);
        assert_eq!(report.per_label[0].label, 1);
        assert_eq!(report.per_label[0].dice, 1.0);
        assert_eq!(report.per_label[1].dice, 0.0);
        assert!(report.per_label[1].hd95.is_none());
        // Mean dice averages over fixed labels, counting the missing one
        // as zero; distance means skip it.
        assert_eq!(report.mean_dice, 0.5);
        assert_eq!(report.mean_hd95, Some(0.0));
        assert_eq!(report.mean_assd, Some(0.0));
        assert_eq!(report.jacobian.frac_nonpositive, 0.0);
    }

    #[test]
    fn evaluation_requires_nonzero_labels() {
        let dims = (6, 6, 6);
        let empty = LabelVolume::new(dims, unit());
        let field = DisplacementField::new(dims, unit());
        assert!(evaluate_all(&empty, &empty, &field).is_err());
    }

    #[test]
    fn distances_require_surfaces_on_both_sides() {
        let dims = (6, 6, 6);
        let a = vol_with(dims, unit(), &[(2, 2, 2)]);
        let empty = LabelVolume::new(dims, unit());
        assert!(surface_distances(&a, &empty, 1).is_err());
        assert!(hd95(&empty, &a, 1).is_err());
    }

    #[test]
    fn spacing_mismatch_rejected() {
        let a = vol_with((6, 6, 6), (1.0, 1.0, 1.0), &[(2, 2, 2)]);
        let b = vol_with((6, 6, 6), (2.0, 1.0, 1.0), &[(2, 2, 2)]);
        assert!(surface_distances(&a, &b, 1).is_err());
    }
}
