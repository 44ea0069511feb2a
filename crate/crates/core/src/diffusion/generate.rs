use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{code_array, denoise_tensor, noise_array, NoisePredictor, VarianceSchedule};
use crate::error::{Error, Result};
use crate::frequency::{build_masks, condition_code, fuse, CondensedMotion, Dct2Plan};
use crate::motion_data::MotionSequence;
use crate::perturbation::{perturb_tensor, PerturbationGenerator};
use crate::tensor::{stack_arrays, unstack_arrays};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// Inference perturbation intensity.
    pub lambda_p: f64,
    pub lambda_dct: f64,
    pub k: usize,
    pub record_intermediates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub generated: MotionSequence,
    /// Fused motions `x_t^c` for `t = T, ..., 1` when recorded.
    pub per_step_fused: Option<Vec<Array3<f64>>>,
}

/// Independent generator stream for window `index` under `seed`, so a
/// window's draws do not depend on how windows are batched.
pub fn window_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn standard_normal(rng: &mut impl Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.sample(rand_distr::StandardNormal))
}

/// Reconstructs one observed window. Draws come from `rng` in this order:
/// the initial `x_T^g`, then one noise array per step for `t = T, ..., 2`.
/// The step noise both corrupts the observation and enters the reverse
/// update.
pub fn frequency_guided_generate(
    x_o: &MotionSequence,
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    sched: &VarianceSchedule,
    cfg: &GenerationConfig,
    rng: &mut impl Rng,
) -> Result<GenerationResult> {
    let mut out = frequency_guided_generate_batch(
        std::slice::from_ref(x_o),
        predictor,
        generator,
        sched,
        cfg,
        std::slice::from_mut(rng),
    )?;
    Ok(out.remove(0))
}

/// Batched form of [`frequency_guided_generate`]: window `b` draws only
/// from `rngs[b]`.
pub fn frequency_guided_generate_batch<R: Rng>(
    windows: &[MotionSequence],
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    sched: &VarianceSchedule,
    cfg: &GenerationConfig,
    rngs: &mut [R],
) -> Result<Vec<GenerationResult>> {
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    if rngs.len() != windows.len() {
        return Err(Error::invalid(format!(
            "{} windows but {} random streams",
            windows.len(),
            rngs.len()
        )));
    }
    let dim = first.dims();
    if let Some(w) = windows.iter().find(|w| w.dims() != dim) {
        let d = w.dims();
        return Err(Error::ShapeMismatch {
            expected: vec![dim.0, dim.1, dim.2],
            got: vec![d.0, d.1, d.2],
        });
    }
    let dtype = predictor.dtype();
    let (n, c, j) = dim;
    let plan = Dct2Plan::new(n, c * j);
    let codes = windows
        .iter()
        .map(|w| code_array(&condition_code(w, cfg.k)?, c))
        .collect::<Result<Vec<_>>>()?;
    let cond = stack_arrays(&codes.iter().collect::<Vec<_>>(), dtype)?;

    let mut x_g: Vec<Array3<f64>> = rngs.iter_mut().map(|r| standard_normal(r, dim)).collect();
    let mut fused_log: Vec<Vec<Array3<f64>>> = vec![Vec::new(); windows.len()];
    for t in (1..=sched.steps()).rev() {
        let eps: Vec<Array3<f64>> = rngs
            .iter_mut()
            .map(|r| if t > 1 { standard_normal(r, dim) } else { Array3::zeros(dim) })
            .collect();
        let x_o: Vec<Array3<f64>> = windows
            .iter()
            .zip(&eps)
            .map(|(w, e)| noise_array(&w.data, t, e, sched))
            .collect::<Result<_>>()?;

        let (x_o, x_gp) = match generator {
            Some(g) => {
                let ts = vec![t; windows.len()];
                let o = stack_arrays(&x_o.iter().collect::<Vec<_>>(), dtype)?;
                let gt = stack_arrays(&x_g.iter().collect::<Vec<_>>(), dtype)?;
                (
                    unstack_arrays(&perturb_tensor(&o, &ts, g, cfg.lambda_p, false)?)?,
                    unstack_arrays(&perturb_tensor(&gt, &ts, g, cfg.lambda_p, false)?)?,
                )
            }
            None => (x_o, x_g.clone()),
        };

        let mut fused = Vec::with_capacity(windows.len());
        for (o, g) in x_o.iter().zip(&x_gp) {
            let y_o = plan.forward(&CondensedMotion::from_array(o))?;
            let y_g = plan.forward(&CondensedMotion::from_array(g))?;
            let mask = build_masks(&y_o, cfg.lambda_dct)?;
            let y_c = fuse(&y_o, &y_g, &mask)?;
            fused.push(plan.inverse(&y_c)?.to_array(c)?);
        }
        if cfg.record_intermediates {
            for (log, f) in fused_log.iter_mut().zip(&fused) {
                log.push(f.clone());
            }
        }

        let x_c = stack_arrays(&fused.iter().collect::<Vec<_>>(), dtype)?;
        let eps_t = stack_arrays(&eps.iter().collect::<Vec<_>>(), dtype)?;
        let next = denoise_tensor(&x_c, t, &cond, predictor, sched, Some(&eps_t))?;
        x_g = unstack_arrays(&next)?;
        if x_g.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("generation step t={t}")));
        }
    }

    Ok(windows
        .iter()
        .zip(x_g)
        .zip(fused_log)
        .map(|((w, g), log)| GenerationResult {
            generated: w.with_data(g),
            per_step_fused: cfg.record_intermediates.then_some(log),
        })
        .collect())
}
