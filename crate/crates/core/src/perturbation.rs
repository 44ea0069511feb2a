//! Bounded sign perturbations: the gradient-sign oracle, the learned
//! generator path and the bound checks that guard every emitted offset.

use std::sync::atomic::{AtomicU64, Ordering};

use candle_core::{DType, Tensor};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::diffusion::{diffusion_loss, noise_tensor, NoiseDraw, NoisePredictor, TrainingBatch, VarianceSchedule};
use crate::error::{Error, Result};
use crate::motion_data::MotionSequence;
use crate::tensor::{stack_arrays, unstack_arrays};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub lambda_p: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { lambda_p: 0.1 }
    }
}

impl PerturbationConfig {
    pub fn new(lambda_p: f64) -> Result<Self> {
        let cfg = Self { lambda_p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda_p.is_finite() || self.lambda_p < 0.0 {
            return Err(Error::invalid(format!(
                "lambda_p must be finite and non-negative, got {}",
                self.lambda_p
            )));
        }
        Ok(())
    }
}

/// A shape-preserving field `G(x_t, t)` whose sign sets the perturbation
/// direction. Inputs are `[B][N][C][J]`, timesteps 1-based.
pub trait PerturbationGenerator {
    fn field(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor>;
}

/// Three-valued elementwise sign; `sign(0) = 0`.
pub fn sign_map(v: &Array3<f64>) -> Array3<f64> {
    v.mapv(|x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `x + lambda_p * sign(grad)`.
pub fn fgsm_perturb(x: &Array3<f64>, grad: &Array3<f64>, cfg: &PerturbationConfig) -> Result<Array3<f64>> {
    if x.dim() != grad.dim() {
        return Err(shape_err(x, grad));
    }
    cfg.validate()?;
    Ok(x + &(sign_map(grad) * cfg.lambda_p))
}

fn shape_err(a: &Array3<f64>, b: &Array3<f64>) -> Error {
    let (n, c, j) = a.dim();
    let (n2, c2, j2) = b.dim();
    Error::ShapeMismatch {
        expected: vec![n, c, j],
        got: vec![n2, c2, j2],
    }
}

static BOUND_CHECKS: AtomicU64 = AtomicU64::new(0);

/// Number of perturbation offsets verified by [`check_bound`] so far in
/// this process.
pub fn bound_checks() -> u64 {
    BOUND_CHECKS.load(Ordering::Relaxed)
}

/// Verifies `|delta|_inf <= lambda_p` and `|delta|_2 <= sqrt(d) * lambda_p`
/// for each sample of a flattened batch of offsets (`d` entries each).
pub fn check_bound(delta: &[f64], d: usize, lambda_p: f64) -> Result<()> {
    if d == 0 || delta.len() % d != 0 {
        return Err(Error::invalid("offset length is not a multiple of the sample size"));
    }
    // the L2 check allows for rounding in the sum of squares
    let l2_cap = (d as f64).sqrt() * lambda_p * (1.0 + 1e-12);
    for (i, sample) in delta.chunks_exact(d).enumerate() {
        let linf = sample.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if linf.is_nan() || linf > lambda_p || sample.iter().any(|v| v.is_nan()) {
            return Err(Error::BoundViolation(format!(
                "sample {i}: L-inf norm {linf} exceeds {lambda_p}"
            )));
        }
        let l2 = sample.iter().map(|v| v * v).sum::<f64>().sqrt();
        if l2 > l2_cap {
            return Err(Error::BoundViolation(format!(
                "sample {i}: L2 norm {l2} exceeds {l2_cap}"
            )));
        }
        BOUND_CHECKS.fetch_add(1, Ordering::Relaxed);
    }
    Ok(())
}

/// `lambda_p` as it is represented in `dtype`, widened back to f64.
pub fn lambda_in(dtype: DType, lambda_p: f64) -> f64 {
    match dtype {
        DType::F32 => lambda_p as f32 as f64,
        _ => lambda_p,
    }
}

/// Tensor form of `x_t + lambda_p * sign(G(x_t, t))`.
///
/// With `trainable` set the offset carries a straight-through gradient to
/// the generator through `tanh(G)`; its forward value is unchanged. Every
/// offset is bound-checked before it is applied.
pub fn perturb_tensor(
    x_t: &Tensor,
    t: &[usize],
    gen: &dyn PerturbationGenerator,
    lambda_p: f64,
    trainable: bool,
) -> Result<Tensor> {
    let field = gen.field(x_t, t)?;
    if field.dims() != x_t.dims() {
        return Err(Error::ShapeMismatch {
            expected: x_t.dims().to_vec(),
            got: field.dims().to_vec(),
        });
    }
    let sign = field.sign()?;
    let raw: Vec<f64> = field.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("perturbation generator output".into()));
    }
    let direction = if trainable {
        let soft = field.tanh()?;
        (sign + (&soft - soft.detach())?)?
    } else {
        sign
    };
    let delta = (direction * lambda_p)?;
    let (b, rest) = (x_t.dim(0)?, x_t.elem_count() / x_t.dim(0)?.max(1));
    let values: Vec<f64> = delta.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    debug_assert_eq!(values.len(), b * rest);
    check_bound(&values, rest, lambda_in(x_t.dtype(), lambda_p))?;
    Ok((x_t + delta)?)
}

/// `x_t + lambda_p * sign(G(x_t, t))` on a single motion.
pub fn generate_perturbed(
    x_t: &Array3<f64>,
    t: usize,
    gen: &dyn PerturbationGenerator,
    cfg: &PerturbationConfig,
) -> Result<Array3<f64>> {
    cfg.validate()?;
    let input = stack_arrays(&[x_t], DType::F64)?;
    let out = perturb_tensor(&input, &[t], gen, cfg.lambda_p, false)?;
    Ok(unstack_arrays(&out)?.remove(0))
}

/// The generator's objective: the diffusion loss on generator-perturbed
/// noised inputs, to be maximized. Draws from `rng` exactly as
/// [`diffusion_loss`] does.
pub fn generator_objective(
    batch: &[MotionSequence],
    predictor: &dyn NoisePredictor,
    gen: &dyn PerturbationGenerator,
    cfg: &PerturbationConfig,
    sched: &VarianceSchedule,
    k: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    cfg.validate()?;
    diffusion_loss(batch, predictor, Some(gen), cfg.lambda_p, sched, k, rng)
}

/// Gradient-sign reference for the learned generator: perturbs each noised
/// input along the sign of the loss gradient with respect to that input.
/// Returns the clean noised batch and its perturbed copy, `[B][N][C][J]`.
pub fn fgsm_on_loss(
    batch: &TrainingBatch,
    draw: &NoiseDraw,
    predictor: &dyn NoisePredictor,
    cfg: &PerturbationConfig,
    sched: &VarianceSchedule,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let x_t = noise_tensor(&batch.x0, &draw.t, &draw.eps, sched)?;
    let var = candle_core::Var::from_tensor(&x_t)?;
    let pred = predictor.predict(var.as_tensor(), &draw.t, &batch.cond)?;
    let loss = (pred - &draw.eps)?.sqr()?.mean_all()?;
    let grads = loss.backward()?;
    let grad = grads
        .get(var.as_tensor())
        .cloned()
        .unwrap_or(x_t.zeros_like()?);
    let delta = (grad.sign()? * cfg.lambda_p)?;
    let d = x_t.elem_count() / x_t.dim(0)?.max(1);
    let values: Vec<f64> = delta.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    check_bound(&values, d, lambda_in(x_t.dtype(), cfg.lambda_p))?;
    let perturbed = (&x_t + delta)?;
    Ok((x_t, perturbed))
}

/// Loss on an explicit (already perturbed) noised input.
pub fn loss_on_input(
    batch: &TrainingBatch,
    draw: &NoiseDraw,
    input: &Tensor,
    predictor: &dyn NoisePredictor,
) -> Result<f64> {
    let pred = predictor.predict(input, &draw.t, &batch.cond)?;
    Ok((pred - &draw.eps)?
        .sqr()?
        .mean_all()?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    struct Constant(f64);

    impl PerturbationGenerator for Constant {
        fn field(&self, x_t: &Tensor, _t: &[usize]) -> Result<Tensor> {
            Ok((x_t.zeros_like()? + self.0)?)
        }
    }

    struct Echo;

    impl PerturbationGenerator for Echo {
        fn field(&self, x_t: &Tensor, _t: &[usize]) -> Result<Tensor> {
            Ok(x_t.clone())
        }
    }

    struct Nan;

    impl PerturbationGenerator for Nan {
        fn field(&self, x_t: &Tensor, _t: &[usize]) -> Result<Tensor> {
            Ok((x_t.zeros_like()? + f64::NAN)?)
        }
    }

    fn arr(v: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn sign_values() {
        assert_eq!(sign_map(&arr(&[2.0, -3.5, 0.0])), arr(&[1.0, -1.0, 0.0]));
        let z = Array3::<f64>::zeros((2, 2, 2));
        assert_eq!(sign_map(&z), z);
    }

    #[test]
    fn fgsm_examples() {
        let cfg = PerturbationConfig::new(0.1).unwrap();
        let x = arr(&[0.0, 0.0]);
        assert_eq!(fgsm_perturb(&x, &arr(&[2.0, -3.0]), &cfg).unwrap(), arr(&[0.1, -0.1]));
        let y = arr(&[0.3, -0.7]);
        assert_eq!(fgsm_perturb(&y, &arr(&[0.0, 0.0]), &cfg).unwrap(), y);
        assert!(fgsm_perturb(&y, &arr(&[0.0]), &cfg).is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(PerturbationConfig::new(-0.1).is_err());
        assert!(PerturbationConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn zero_lambda_is_identity() {
        let x = array![[[0.5, -0.25]], [[0.0, 1.0]]];
        let cfg = PerturbationConfig::new(0.0).unwrap();
        assert_eq!(generate_perturbed(&x, 3, &Echo, &cfg).unwrap(), x);
    }

    #[test]
    fn constant_field_shifts_uniformly() {
        let x = array![[[0.5, -0.25]], [[0.0, 1.0]]];
        let cfg = PerturbationConfig::new(0.1).unwrap();
        let out = generate_perturbed(&x, 1, &Constant(1.0), &cfg).unwrap();
        assert_eq!(out, x.mapv(|v| v + 0.1));
    }

    #[test]
    fn non_finite_field_rejected() {
        let x = Array3::zeros((2, 1, 2));
        let cfg = PerturbationConfig::new(0.1).unwrap();
        assert!(matches!(generate_perturbed(&x, 1, &Nan, &cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn bound_check_catches_violations() {
        assert!(check_bound(&[0.1, -0.1, 0.0], 3, 0.1).is_ok());
        assert!(check_bound(&[0.1, -0.2, 0.0], 3, 0.1).is_err());
        assert!(check_bound(&[0.1, f64::NAN], 2, 0.1).is_err());
        assert!(check_bound(&[0.1, 0.1, 0.1], 2, 0.1).is_err());
    }

    #[test]
    fn straight_through_gradient_reaches_generator() {
        use candle_core::{Device, Var};
        let w = Var::new(&[0.5f64], &Device::Cpu).unwrap();
        struct Scaled(Tensor);
        impl PerturbationGenerator for Scaled {
            fn field(&self, x_t: &Tensor, _t: &[usize]) -> Result<Tensor> {
                Ok(x_t.broadcast_mul(&self.0)?)
            }
        }
        let gen = Scaled(w.as_tensor().reshape((1, 1, 1, 1)).unwrap());
        let x = Tensor::new(&[0.3f64, -0.2], &Device::Cpu).unwrap().reshape((1, 1, 1, 2)).unwrap();
        let out = perturb_tensor(&x, &[1], &gen, 0.1, true).unwrap();
        let expected: Vec<f64> = vec![0.3 + 0.1, -0.2 - 0.1];
        assert_eq!(out.flatten_all().unwrap().to_vec1::<f64>().unwrap(), expected);
        let grads = out.sum_all().unwrap().backward().unwrap();
        let g = grads.get(&w).unwrap().to_vec1::<f64>().unwrap()[0];
        assert!(g.abs() > 0.0 && g.is_finite());
    }

    proptest! {
        #[test]
        fn sign_is_odd(v in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
            let a = arr(&v);
            prop_assert_eq!(sign_map(&a.mapv(|x| -x)), sign_map(&a).mapv(|x| -x));
        }

        #[test]
        fn fgsm_respects_bound(
            v in proptest::collection::vec(-2.0f64..2.0, 1..40),
            g in proptest::collection::vec(-2.0f64..2.0, 40),
            lambda in 0.0f64..0.5,
        ) {
            let x = arr(&v);
            let grad = arr(&g[..v.len()]);
            let cfg = PerturbationConfig::new(lambda).unwrap();
            let out = fgsm_perturb(&x, &grad, &cfg).unwrap();
            let delta = &out - &x;
            let linf = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            prop_assert!(linf <= lambda + 1e-15);
        }

        #[test]
        fn generator_offsets_are_exact(
            v in proptest::collection::vec(-1.0f64..1.0, 1..40),
            lambda in 0.0f64..0.5,
        ) {
            let x = arr(&v);
            let cfg = PerturbationConfig::new(lambda).unwrap();
            let out = generate_perturbed(&x, 1, &Echo, &cfg).unwrap();
            let d = x.len() as f64;
            let mut l2 = 0.0;
            for (o, i) in out.iter().zip(x.iter()) {
                let expected = i + lambda * if *i > 0.0 { 1.0 } else if *i < 0.0 { -1.0 } else { 0.0 };
                prop_assert_eq!(*o, expected);
                l2 += (o - i) * (o - i);
            }
            prop_assert!(l2.sqrt() <= d.sqrt() * lambda + 1e-12);
            prop_assert!(out.iter().all(|o| o.abs() <= 1.0 + lambda));
        }
    }

    mod objective {
        use super::*;
        use crate::diffusion::ScheduleConfig;
        use crate::motion_data::MotionSequence;
        use crate::networks::{build_generator, build_predictor, MotionShape, NetConfig, Precision, SkeletonGraph};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn windows(n: usize) -> Vec<MotionSequence> {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..n)
                .map(|i| {
                    let data = Array3::from_shape_fn((6, 2, 4), |(f, c, j)| {
                        ((f as f64 * 0.4 + j as f64 + c as f64).sin() * 0.5 + rng.random_range(-0.1..0.1)).clamp(-1.0, 1.0)
                    });
                    MotionSequence::new(data, format!("v{i}"), "0", 0).unwrap()
                })
                .collect()
        }

        fn nets() -> (crate::networks::GcnPredictor, crate::networks::GcnGenerator) {
            let graph = SkeletonGraph::chain(4).unwrap();
            let shape = MotionShape::new(6, 2, 4);
            let cfg = NetConfig {
                width: 8,
                depth: 1,
                precision: Precision::F64,
            };
            (
                build_predictor(&graph, shape, cfg, 1).unwrap(),
                build_generator(&graph, shape, NetConfig { width: 4, ..cfg }, 2).unwrap(),
            )
        }

        #[test]
        fn zero_lambda_matches_clean_loss() {
            let (p, g) = nets();
            let sched = ScheduleConfig::default().build().unwrap();
            let w = windows(5);
            let cfg = PerturbationConfig::new(0.0).unwrap();
            let obj = generator_objective(&w, &p, &g, &cfg, &sched, 12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let clean = diffusion_loss(&w, &p, None, 0.0, &sched, 12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(obj, clean);
        }

        #[test]
        fn objective_is_loss_with_generator() {
            let (p, g) = nets();
            let sched = ScheduleConfig::default().build().unwrap();
            let w = windows(5);
            let cfg = PerturbationConfig::new(0.1).unwrap();
            let obj = generator_objective(&w, &p, &g, &cfg, &sched, 12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let with = diffusion_loss(&w, &p, Some(&g), 0.1, &sched, 12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let clean = diffusion_loss(&w, &p, None, 0.0, &sched, 12, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(obj, with);
            assert_ne!(obj, clean);
        }

        #[test]
        fn gradient_sign_oracle_raises_loss() {
            let (p, _) = nets();
            let sched = ScheduleConfig::default().build().unwrap();
            let w = windows(8);
            let refs: Vec<&MotionSequence> = w.iter().collect();
            let batch = TrainingBatch::new(&refs, 12, DType::F64).unwrap();
            let draw = NoiseDraw::sample(&batch, &sched, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let cfg = PerturbationConfig::new(1e-3).unwrap();
            let (clean, adv) = fgsm_on_loss(&batch, &draw, &p, &cfg, &sched).unwrap();
            let delta: Vec<f64> = (&adv - &clean).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            assert!(delta.iter().all(|d| d.abs() <= 1e-3 + 1e-12));
            let l_clean = loss_on_input(&batch, &draw, &clean, &p).unwrap();
            let l_adv = loss_on_input(&batch, &draw, &adv, &p).unwrap();
            assert!(l_adv > l_clean, "{l_adv} <= {l_clean}");
        }
    }
}
