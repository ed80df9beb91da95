//! Coarse-to-fine registration driver.
//!
//! A pair is registered by walking an image pyramid from its coarsest
//! level to full resolution. Each stage estimates a displacement
//! increment for the current residual misalignment with per-direction
//! weighted gradient descent, then fuses it into the running composite
//! field; the coarsest level runs twice (once from scratch, once on the
//! prewarped pair), so `depth` levels yield `depth + 1` stages.
//!
//! The per-stage objective is `-ncc + lambda_eff * smoothness` where
//! `lambda_eff` divides the configured lambda by the level's voxel
//! count. The similarity term is already a mean, so normalizing the
//! regularity sum the same way keeps one lambda meaningful at every
//! pyramid level and volume size.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_pyramid, diff_weights, WeightingMode};
use crate::metrics::dice;
use crate::similarity::{loss_gradient, total_loss};
use crate::volume::{check_dims, Dims, DisplacementField, LabelVolume, ScalarVolume};
use crate::warp::{
    compose_fields, integrate_velocity, jacobian_det_stats, upsample_field, warp_labels,
    warp_scalar, JacobianStats,
};

/// Window used for every level that has no explicit entry in
/// [`RegistrationConfig::ncc_window`].
pub const DEFAULT_NCC_WINDOW: usize = 9;

/// All knobs of the pipeline. `Default` gives the standard configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    /// Pyramid levels; level 1 is full resolution.
    pub depth: usize,
    /// Descent iterations per stage.
    pub iters_per_level: usize,
    /// Largest voxel displacement applied per iteration (decays over
    /// the iteration budget).
    pub step_init: f64,
    /// Weight of the smoothness term.
    pub lambda: f64,
    /// How gradients are gated per direction.
    pub weighting_mode: WeightingMode,
    /// Sigmoid slope of the weighting gate.
    pub gain: f64,
    /// Sigmoid offset of the weighting gate.
    pub bias: f64,
    /// Integrate each increment as a stationary velocity field.
    pub diff: bool,
    /// Scaling-and-squaring steps used when `diff` is set.
    pub squaring_steps: u32,
    /// Correlation window per level, finest first; 0 means global.
    /// Missing entries repeat the last one; empty uses the default.
    pub ncc_window: Vec<usize>,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            depth: 4,
            iters_per_level: 60,
            step_init: 0.1,
            lambda: 1.0,
            weighting_mode: WeightingMode::Full,
            gain: 10.0,
            bias: 0.0,
            diff: false,
            squaring_steps: 7,
            ncc_window: vec![DEFAULT_NCC_WINDOW],
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if self.iters_per_level < 1 {
            return Err(Error::invalid("iters_per_level must be at least 1"));
        }
        if !(self.step_init.is_finite() && self.step_init > 0.0) {
            return Err(Error::invalid(format!(
                "step_init must be positive, got {}",
                self.step_init
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !self.gain.is_finite() || !self.bias.is_finite() {
            return Err(Error::invalid("gain and bias must be finite"));
        }
        if self.squaring_steps > 32 {
            return Err(Error::invalid("squaring_steps must be at most 32"));
        }
        for &w in &self.ncc_window {
            if w != 0 && w % 2 == 0 {
                return Err(Error::invalid(format!(
                    "ncc window must be 0 (global) or odd, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// One window per level, index 0 = finest. Short lists repeat their
    /// last entry; an empty list uses [`DEFAULT_NCC_WINDOW`].
    pub fn resolved_windows(&self) -> Vec<usize> {
        let base: &[usize] = if self.ncc_window.is_empty() {
            &[DEFAULT_NCC_WINDOW]
        } else {
            &self.ncc_window
        };
        (0..self.depth)
            .map(|l| *base.get(l).unwrap_or(base.last().unwrap()))
            .collect()
    }
}

/// Step size at iteration `e` of `n`: `step_init * ((n - e)/n)^0.9`.
pub fn step_schedule(step_init: f64, e: usize, n: usize) -> Result<f64> {
    if n == 0 || e >= n {
        return Err(Error::invalid(format!(
            "iteration {e} outside schedule of length {n}"
        )));
    }
    Ok(step_init * (((n - e) as f64) / (n as f64)).powf(0.9))
}

/// Increment estimated at one stage plus the objective value after
/// every iteration (entry 0 is the starting loss).
#[derive(Debug, Clone)]
pub struct IncrementTrace {
    pub field: DisplacementField,
    pub loss_trace: Vec<f64>,
}

/// Estimates the displacement increment aligning `moving` (already
/// warped by the composite so far) to `fixed` at pyramid level `level`
/// (0 = finest). See [`estimate_increment_traced`] for the loss trace.
pub fn estimate_increment(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    config: &RegistrationConfig,
    level: usize,
) -> Result<DisplacementField> {
    Ok(estimate_increment_traced(fixed, moving, config, level)?.field)
}

/// Like [`estimate_increment`], also returning the per-iteration loss.
///
/// Directional weights are computed once from the input pair. The
/// descent direction for displacement component d comes from the
/// gradient of the pair gated by that direction's weight; the step is
/// scaled so the largest voxel moves by the scheduled amount, and is
/// halved up to five times whenever the (unweighted) objective would
/// increase, so the trace never increases. With `diff` set, the
/// accumulated increment is integrated as a stationary velocity before
/// being returned.
pub fn estimate_increment_traced(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    config: &RegistrationConfig,
    level: usize,
) -> Result<IncrementTrace> {
    config.validate()?;
    check_dims("moving image", moving.dims, fixed.dims)?;
    if level >= config.depth {
        return Err(Error::invalid(format!(
            "level {level} out of range for depth {}",
            config.depth
        )));
    }
    let window = config.resolved_windows()[level];
    let lambda_eff = config.lambda / fixed.num_voxels() as f64;

    let weights = diff_weights(fixed, moving, config.weighting_mode, config.gain, config.bias)?;
    let gate = |img: &ScalarVolume, w: &ScalarVolume| -> ScalarVolume {
        let data = img
            .data
            .iter()
            .zip(&w.data)
            .map(|(&v, &g)| v * g)
            .collect();
        ScalarVolume::from_vec(img.dims, img.spacing, data).expect("same dims")
    };
    // Intensity and none modes use one weight volume for all directions,
    // so a single gradient evaluation serves every component.
    let shared = matches!(
        config.weighting_mode,
        WeightingMode::Intensity | WeightingMode::None
    );
    let dirs = if shared { 1 } else { 3 };
    let pairs: Vec<(ScalarVolume, ScalarVolume)> = (0..dirs)
        .map(|d| {
            let w = weights.by_dir(d);
            (gate(fixed, w), gate(moving, w))
        })
        .collect();

    let mut phi = DisplacementField::new(fixed.dims, fixed.spacing);
    let mut current = total_loss(fixed, moving, &phi, lambda_eff, window)?.total;
    let mut trace = Vec::with_capacity(config.iters_per_level + 1);
    trace.push(current);

    let mut grad = vec![0.0f32; phi.data.len()];
    for e in 0..config.iters_per_level {
        let step = step_schedule(config.step_init, e, config.iters_per_level)?;
        if shared {
            let g = loss_gradient(&pairs[0].0, &pairs[0].1, &phi, lambda_eff, window)?;
            grad.copy_from_slice(&g.data);
        } else {
            for (d, (wf, wm)) in pairs.iter().enumerate() {
                let g = loss_gradient(wf, wm, &phi, lambda_eff, window)?;
                for i in 0..phi.data.len() / 3 {
                    grad[3 * i + d] = g.data[3 * i + d];
                }
            }
        }
        let gmax = grad.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        if f64::from(gmax) <= 1e-12 {
            trace.push(current);
            continue;
        }
        let mut scale = step / f64::from(gmax);
        for _ in 0..=5 {
            let mut cand = phi.clone();
            for i in 0..cand.data.len() {
                cand.data[i] -= (scale * f64::from(grad[i])) as f32;
            }
            let loss = total_loss(fixed, moving, &cand, lambda_eff, window)?.total;
            if loss <= current {
                phi = cand;
                current = loss;
                break;
            }
            scale *= 0.5;
        }
        trace.push(current);
    }

    if config.diff {
        phi = integrate_velocity(&phi, config.squaring_steps);
    }
    Ok(IncrementTrace {
        field: phi,
        loss_trace: trace,
    })
}

/// What happened at one pipeline stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    /// 1-based stage index.
    pub stage: usize,
    /// Pyramid level of the stage; 1 is full resolution.
    pub level: usize,
    pub dims: Dims,
    pub ncc_window: usize,
    /// Objective after every iteration; entry 0 is the starting value.
    pub loss_trace: Vec<f64>,
    /// Mean dice over the fixed volume's nonzero labels after warping
    /// the moving labels by the composite field so far.
    pub mean_dice: Option<f64>,
    /// Jacobian statistics of the full-resolution composite so far.
    pub jacobian: JacobianStats,
    /// Measured, never serialized: reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Full record of one registration run. The JSON serialization is
/// deterministic for fixed inputs and config; the field itself is
/// carried in memory only.
#[derive(Debug, Clone, Serialize)]
pub struct RegistrationReport {
    /// Configuration with every default and per-level window materialized.
    pub config: RegistrationConfig,
    pub dims: Dims,
    /// Full-resolution objective (at the optimizer's per-voxel lambda)
    /// with the zero field and with the final field.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_mean_dice: Option<f64>,
    pub final_mean_dice: Option<f64>,
    pub stages: Vec<StageReport>,
    pub final_jacobian: JacobianStats,
    /// Mean absolute displacement component of the final field, voxels.
    pub final_mean_abs_u: f64,
    #[serde(skip)]
    pub field: DisplacementField,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Registers `moving` onto `fixed` and returns the report carrying the
/// final full-resolution field.
///
/// Intensities are min-max normalized before the pyramids are built so
/// the weighting gain and correlation guard operate on a known scale.
/// When a `(fixed_labels, moving_labels)` pair is supplied, mean dice
/// over the fixed volume's nonzero labels is recorded before
/// registration and after every stage.
pub fn register_pair(
    fixed: &ScalarVolume,
    moving: &ScalarVolume,
    config: &RegistrationConfig,
    labels: Option<(&LabelVolume, &LabelVolume)>,
) -> Result<RegistrationReport> {
    config.validate()?;
    check_dims("moving image", moving.dims, fixed.dims)?;
    let label_set: Option<Vec<u16>> = match labels {
        Some((fl, ml)) => {
            check_dims("fixed label volume", fl.dims, fixed.dims)?;
            check_dims("moving label volume", ml.dims, fixed.dims)?;
            let set: Vec<u16> = fl
                .present_labels()
                .into_iter()
                .filter(|&l| l != 0)
                .collect();
            if set.is_empty() {
                return Err(Error::invalid(
                    "fixed label volume contains no nonzero labels",
                ));
            }
            Some(set)
        }
        None => None,
    };
    let t0 = Instant::now();

    let fixed_n = fixed.normalized();
    let moving_n = moving.normalized();
    let pf = build_pyramid(&fixed_n, config.depth)?;
    let pm = build_pyramid(&moving_n, config.depth)?;
    let windows = config.resolved_windows();
    let mut resolved = config.clone();
    resolved.ncc_window = windows.clone();

    let mean_dice_of = |field: Option<&DisplacementField>| -> Result<Option<f64>> {
        let (Some((fl, ml)), Some(set)) = (labels, &label_set) else {
            return Ok(None);
        };
        let warped;
        let cand = match field {
            Some(f) => {
                warped = warp_labels(ml, f)?;
                &warped
            }
            None => ml,
        };
        let mut acc = 0.0f64;
        for &label in set {
            acc += dice(fl, cand, label)?;
        }
        Ok(Some(acc / set.len() as f64))
    };

    let initial_mean_dice = mean_dice_of(None)?;

    // Level index per stage, 0-based with 0 = finest: the coarsest level
    // twice, then every finer level once.
    let mut plan = vec![config.depth - 1, config.depth - 1];
    plan.extend((0..config.depth - 1).rev());

    let mut phi: Option<DisplacementField> = None;
    let mut stages: Vec<StageReport> = Vec::with_capacity(plan.len());
    for (s, &li) in plan.iter().enumerate() {
        let stage_start = Instant::now();
        let fl = pf.level(li);
        let ml = pm.level(li);
        let prewarped;
        let pair_moving = match &mut phi {
            None => ml,
            Some(f) => {
                if f.dims != fl.dims {
                    *f = upsample_field(f, fl.dims)?;
                }
                prewarped = warp_scalar(ml, f)?;
                &prewarped
            }
        };
        let inc = estimate_increment_traced(fl, pair_moving, config, li)?;
        phi = Some(match phi {
            None => inc.field,
            Some(f) => compose_fields(&f, &inc.field)?,
        });

        // Everything reported per stage is measured at full resolution.
        let mut full = phi.clone().unwrap();
        for finer in (0..li).rev() {
            full = upsample_field(&full, pf.level(finer).dims)?;
        }
        stages.push(StageReport {
            stage: s + 1,
            level: li + 1,
            dims: fl.dims,
            ncc_window: windows[li],
            loss_trace: inc.loss_trace,
            mean_dice: mean_dice_of(Some(&full))?,
            jacobian: jacobian_det_stats(&full),
            wall_time_secs: stage_start.elapsed().as_secs_f64(),
        });
    }

    let field = phi.expect("at least two stages");
    debug_assert_eq!(field.dims, fixed.dims);
    let lambda_eff = config.lambda / fixed.num_voxels() as f64;
    let zero = DisplacementField::new(fixed.dims, fixed.spacing);
    let initial_loss = total_loss(&fixed_n, &moving_n, &zero, lambda_eff, windows[0])?.total;
    let final_loss = total_loss(&fixed_n, &moving_n, &field, lambda_eff, windows[0])?.total;
    let final_mean_dice = stages.last().unwrap().mean_dice;
    let final_jacobian = stages.last().unwrap().jacobian.clone();

    Ok(RegistrationReport {
        config: resolved,
        dims: fixed.dims,
        initial_loss,
        final_loss,
        initial_mean_dice,
        final_mean_dice,
        stages,
        final_jacobian,
        final_mean_abs_u: field.mean_abs(),
        field,
        wall_time_secs: t0.elapsed().as_secs_f64(),
    })
}
