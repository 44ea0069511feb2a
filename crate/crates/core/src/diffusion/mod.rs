//! Variance schedule, forward noising, the noise-prediction loss and the
//! frequency-guided reverse process.

mod generate;
mod schedule;

use candle_core::{DType, Tensor};
use ndarray::Array3;
use rand::Rng;

pub use generate::{
    frequency_guided_generate, frequency_guided_generate_batch, window_rng, GenerationConfig, GenerationResult,
};
pub use schedule::{make_schedule, ScheduleConfig, VarianceSchedule};

use crate::error::{Error, Result};
use crate::frequency::{condition_code, CondensedMotion, ConditionCode};
use crate::motion_data::MotionSequence;
use crate::perturbation::{perturb_tensor, PerturbationGenerator};
use crate::tensor::{gaussian, per_sample, stack_arrays, unstack_arrays};

/// A noise estimator `eps_theta(x_t, t, c)`. Inputs and output are
/// `[B][N][C][J]`; `cond` holds the dense conditioning code in the same
/// layout. Timesteps are 1-based.
pub trait NoisePredictor {
    fn predict(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor>;

    /// Element type the predictor computes in.
    fn dtype(&self) -> DType {
        DType::F32
    }
}

/// `sqrt(abar_t) * x + sqrt(1 - abar_t) * eps`.
pub fn forward_noise(x: &MotionSequence, t: usize, eps: &Array3<f64>, sched: &VarianceSchedule) -> Result<Array3<f64>> {
    sched.check_t(t)?;
    noise_array(&x.data, t, eps, sched)
}

pub(crate) fn noise_array(x: &Array3<f64>, t: usize, eps: &Array3<f64>, sched: &VarianceSchedule) -> Result<Array3<f64>> {
    if x.dim() != eps.dim() {
        let (a, b) = (x.dim(), eps.dim());
        return Err(Error::ShapeMismatch {
            expected: vec![a.0, a.1, a.2],
            got: vec![b.0, b.1, b.2],
        });
    }
    let ab = sched.alpha_bar(t);
    Ok(x * ab.sqrt() + eps * (1.0 - ab).sqrt())
}

/// The conditioning code as a motion-shaped array (zero-padded dense
/// coefficients, reshaped like the motion).
pub fn code_array(code: &ConditionCode, channels: usize) -> Result<Array3<f64>> {
    CondensedMotion::new(code.dense()).to_array(channels)
}

/// Clean windows with their conditioning codes, stacked for the network.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub x0: Tensor,
    pub cond: Tensor,
}

impl TrainingBatch {
    pub fn new(windows: &[&MotionSequence], k: usize, dtype: DType) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let channels = windows[0].channels();
        let codes = windows
            .iter()
            .map(|w| code_array(&condition_code(w, k)?, channels))
            .collect::<Result<Vec<_>>>()?;
        let data: Vec<&Array3<f64>> = windows.iter().map(|w| &w.data).collect();
        let code_refs: Vec<&Array3<f64>> = codes.iter().collect();
        Ok(Self {
            x0: stack_arrays(&data, dtype)?,
            cond: stack_arrays(&code_refs, dtype)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of both tensors.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
        let ids = Tensor::new(ids.as_slice(), self.x0.device())?;
        Ok(Self {
            x0: self.x0.index_select(&ids, 0)?,
            cond: self.cond.index_select(&ids, 0)?,
        })
    }
}

/// Timesteps and noise for one loss evaluation. Draw order: all timesteps
/// first, then the noise tensor in row-major order.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: Vec<usize>,
    pub eps: Tensor,
}

impl NoiseDraw {
    pub fn sample(batch: &TrainingBatch, sched: &VarianceSchedule, rng: &mut impl Rng) -> Result<Self> {
        let (b, n, c, j) = batch.x0.dims4()?;
        let t = (0..b).map(|_| rng.random_range(1..=sched.steps())).collect();
        let eps = gaussian(rng, (b, n, c, j), batch.x0.dtype())?;
        Ok(Self { t, eps })
    }
}

/// Batched forward noising with per-sample timesteps.
pub fn noise_tensor(x0: &Tensor, t: &[usize], eps: &Tensor, sched: &VarianceSchedule) -> Result<Tensor> {
    for &ti in t {
        sched.check_t(ti)?;
    }
    let a: Vec<f64> = t.iter().map(|&ti| sched.alpha_bar(ti).sqrt()).collect();
    let s: Vec<f64> = t.iter().map(|&ti| (1.0 - sched.alpha_bar(ti)).sqrt()).collect();
    let dtype = x0.dtype();
    Ok((x0.broadcast_mul(&per_sample(&a, dtype)?)? + eps.broadcast_mul(&per_sample(&s, dtype)?)?)?)
}

/// How the perturbation generator takes part in a loss evaluation.
#[derive(Clone, Copy)]
pub struct PerturbationUse<'a> {
    pub generator: &'a dyn PerturbationGenerator,
    pub lambda_p: f64,
    /// Whether gradients should reach the generator.
    pub trainable: bool,
}

/// Mean squared error between the drawn noise and the prediction on the
/// (optionally perturbed) noised batch, averaged over every entry.
pub fn loss_on_draw(
    batch: &TrainingBatch,
    draw: &NoiseDraw,
    predictor: &dyn NoisePredictor,
    perturbation: Option<PerturbationUse<'_>>,
    sched: &VarianceSchedule,
) -> Result<Tensor> {
    let x_t = noise_tensor(&batch.x0, &draw.t, &draw.eps, sched)?;
    let input = match perturbation {
        Some(p) => perturb_tensor(&x_t, &draw.t, p.generator, p.lambda_p, p.trainable)?,
        None => x_t,
    };
    let pred = predictor.predict(&input, &draw.t, &batch.cond)?;
    Ok((pred - &draw.eps)?.sqr()?.mean_all()?)
}

/// Noise-prediction loss on a batch of normalized windows, conditioning on
/// each window's top-`k` code and sampling timesteps uniformly in `[1, T]`.
pub fn diffusion_loss(
    batch: &[MotionSequence],
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    lambda_p: f64,
    sched: &VarianceSchedule,
    k: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let refs: Vec<&MotionSequence> = batch.iter().collect();
    let tb = TrainingBatch::new(&refs, k, predictor.dtype())?;
    let draw = NoiseDraw::sample(&tb, sched, rng)?;
    let pert = generator.map(|g| PerturbationUse {
        generator: g,
        lambda_p,
        trainable: false,
    });
    let loss = loss_on_draw(&tb, &draw, predictor, pert, sched)?;
    Ok(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// One reverse step on a batch:
/// `(x_c - (1 - a_t) / sqrt(1 - abar_t) * eps_theta) / sqrt(a_t) + (1 - a_t) * eps`,
/// with the noise term dropped at `t = 1`.
pub fn denoise_tensor(
    x_c: &Tensor,
    t: usize,
    cond: &Tensor,
    predictor: &dyn NoisePredictor,
    sched: &VarianceSchedule,
    eps: Option<&Tensor>,
) -> Result<Tensor> {
    sched.check_t(t)?;
    let b = x_c.dims()[0];
    let pred = predictor.predict(x_c, &vec![t; b], cond)?;
    let (a, ab) = (sched.alpha(t), sched.alpha_bar(t));
    let coef = (1.0 - a) / (1.0 - ab).sqrt();
    let mean = ((x_c - (pred * coef)?)? * (1.0 / a.sqrt()))?;
    match eps {
        Some(e) if t > 1 => Ok((mean + (e * (1.0 - a))?)?),
        _ => Ok(mean),
    }
}

/// Single-motion reverse step; `eps` is ignored at `t = 1`.
pub fn denoise_step(
    x_c: &Array3<f64>,
    t: usize,
    cond: &ConditionCode,
    predictor: &dyn NoisePredictor,
    sched: &VarianceSchedule,
    eps: &Array3<f64>,
) -> Result<Array3<f64>> {
    let dtype = predictor.dtype();
    let channels = x_c.dim().1;
    let code = code_array(cond, channels)?;
    let out = denoise_tensor(
        &stack_arrays(&[x_c], dtype)?,
        t,
        &stack_arrays(&[&code], dtype)?,
        predictor,
        sched,
        Some(&stack_arrays(&[eps], dtype)?),
    )?;
    Ok(unstack_arrays(&out)?.remove(0))
}
