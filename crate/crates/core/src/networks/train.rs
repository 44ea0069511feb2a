use candle_core::backprop::GradStore;
use candle_core::{DType, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_generator, build_predictor, GcnGenerator, GcnPredictor, MotionShape, NetConfig, SkeletonGraph};
use crate::diffusion::{loss_on_draw, NoiseDraw, PerturbationUse, ScheduleConfig, TrainingBatch, VarianceSchedule};
use crate::error::{Error, Result};
use crate::frequency::default_k;
use crate::motion_data::{MotionSequence, TrajectoryCorpus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub batch_size: usize,
    pub lr_base: f64,
    pub lr_decay: f64,
    pub lambda_p: f64,
    pub schedule: ScheduleConfig,
    /// Conditioning size; a quarter of the coefficients when unset.
    pub k: Option<usize>,
    pub seed: u64,
    pub generator_update_period: usize,
    /// When false the generator is left out entirely.
    pub adversarial: bool,
    pub predictor: NetConfig,
    pub generator: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            batch_size: 128,
            lr_base: 0.01,
            lr_decay: 0.99,
            lambda_p: 0.1,
            schedule: ScheduleConfig::default(),
            k: None,
            seed: 0,
            generator_update_period: 1,
            adversarial: true,
            predictor: NetConfig::predictor_default(),
            generator: NetConfig::generator_default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_iters == 0 || self.batch_size == 0 || self.generator_update_period == 0 {
            return bad("max_iters, batch_size and generator_update_period must be positive".into());
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return bad(format!("lr_base must be positive, got {}", self.lr_base));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return bad(format!("lambda_p must be finite and non-negative, got {}", self.lambda_p));
        }
        if self.k == Some(0) {
            return bad("k must be positive".into());
        }
        self.predictor.validate()?;
        self.generator.validate()?;
        self.schedule.build().map(|_| ())
    }

    pub fn k_for(&self, shape: MotionShape) -> usize {
        self.k
            .unwrap_or_else(|| default_k(shape.frames, shape.channels, shape.joints))
    }

    pub fn generator_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss_theta: f64,
    /// Generator objective before its update, when one happened.
    pub loss_phi: Option<f64>,
    pub lr: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterRecord>,
}

impl TrainHistory {
    /// One line per iteration: `iter,loss_theta,loss_phi,lr`.
    pub fn to_log(&self) -> String {
        let mut out = String::from("iter,loss_theta,loss_phi,lr\n");
        for r in &self.records {
            let phi = r.loss_phi.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.iter, r.loss_theta, phi, r.lr));
        }
        out
    }

    pub fn theta_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_theta).collect()
    }
}

pub struct TrainOutcome {
    pub predictor: GcnPredictor,
    pub generator: GcnGenerator,
    pub history: TrainHistory,
    pub schedule: VarianceSchedule,
    pub k: usize,
}

fn grad_norm(grads: &GradStore, vars: &[Var]) -> Result<f64> {
    let mut total = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}

/// Alternating optimizer state. The predictor and generator draw batches and
/// noise from separate streams, so removing the generator leaves the
/// predictor's draws unchanged.
pub struct Trainer {
    pub predictor: GcnPredictor,
    pub generator: GcnGenerator,
    cfg: TrainConfig,
    sched: VarianceSchedule,
    data: TrainingBatch,
    theta_vars: Vec<Var>,
    phi_vars: Vec<Var>,
    opt_theta: AdamW,
    opt_phi: AdamW,
    rng_theta: ChaCha8Rng,
    rng_phi: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iter: usize,
    history: TrainHistory,
}

impl Trainer {
    /// Prepares training on already normalized windows.
    pub fn new(windows: &[MotionSequence], graph: &SkeletonGraph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let first = windows.first().ok_or_else(|| Error::invalid("no training windows"))?;
        let (n, c, j) = first.dims();
        let shape = MotionShape::new(n, c, j);
        let predictor = build_predictor(graph, shape, cfg.predictor, cfg.seed)?;
        let generator = build_generator(graph, shape, cfg.generator, cfg.generator_seed())?;
        Self::with_models(windows, predictor, generator, cfg)
    }

    /// Continues from existing models (for example a frozen predictor).
    pub fn with_models(
        windows: &[MotionSequence],
        predictor: GcnPredictor,
        generator: GcnGenerator,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if windows.is_empty() {
            return Err(Error::invalid("no training windows"));
        }
        let sched = cfg.schedule.build()?;
        let k = cfg.k_for(predictor.shape());
        let refs: Vec<&MotionSequence> = windows.iter().collect();
        let data = TrainingBatch::new(&refs, k, predictor.params().dtype())?;
        let adam = |vars: Vec<Var>| {
            AdamW::new(
                vars,
                ParamsAdamW {
                    lr: cfg.lr_base,
                    weight_decay: 0.0,
                    ..ParamsAdamW::default()
                },
            )
        };
        let theta_vars = predictor.params().vars();
        let phi_vars = generator.params().vars();
        let opt_theta = adam(theta_vars.clone())?;
        let opt_phi = adam(phi_vars.clone())?;
        let mut rng_theta = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_theta.set_stream(1);
        let mut rng_phi = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_phi.set_stream(2);
        Ok(Self {
            predictor,
            generator,
            sched,
            data,
            theta_vars,
            phi_vars,
            opt_theta,
            opt_phi,
            rng_theta,
            rng_phi,
            order: Vec::new(),
            cursor: 0,
            iter: 0,
            history: TrainHistory::default(),
            cfg,
        })
    }

    pub fn schedule(&self) -> &VarianceSchedule {
        &self.sched
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    fn batch_len(&self) -> usize {
        self.cfg.batch_size.min(self.data.len())
    }

    /// Passes over the data completed before iteration `iter` (0-based).
    pub fn epoch_at(&self, iter: usize) -> usize {
        iter * self.batch_len() / self.data.len()
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        self.cfg.lr_base * self.cfg.lr_decay.powi(self.epoch_at(iter) as i32)
    }

    fn next_theta_batch(&mut self) -> Vec<usize> {
        let b = self.batch_len();
        if self.cursor + b > self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng_theta);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        idx
    }

    fn perturbation(&self, trainable: bool) -> Option<PerturbationUse<'_>> {
        self.cfg.adversarial.then_some(PerturbationUse {
            generator: &self.generator,
            lambda_p: self.cfg.lambda_p,
            trainable,
        })
    }

    /// One predictor update with the generator frozen. Returns the loss
    /// before the update and the gradient norm.
    pub fn theta_step(&mut self) -> Result<(f64, f64)> {
        let idx = self.next_theta_batch();
        let batch = self.data.select(&idx)?;
        let draw = NoiseDraw::sample(&batch, &self.sched, &mut self.rng_theta)?;
        let loss = loss_on_draw(&batch, &draw, &self.predictor, self.perturbation(false), &self.sched)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let grads = loss.backward()?;
        let norm = grad_norm(&grads, &self.theta_vars)?;
        if !value.is_finite() || !norm.is_finite() {
            return Err(Error::Divergence {
                iter: self.iter + 1,
                detail: format!("predictor loss {value}, gradient norm {norm}"),
            });
        }
        self.opt_theta.step(&grads)?;
        Ok((value, norm))
    }

    /// One generator update ascending the loss with the predictor frozen.
    pub fn phi_step(&mut self) -> Result<(f64, f64)> {
        let b = self.batch_len();
        let idx = index::sample(&mut self.rng_phi, self.data.len(), b).into_vec();
        let batch = self.data.select(&idx)?;
        let draw = NoiseDraw::sample(&batch, &self.sched, &mut self.rng_phi)?;
        let loss = loss_on_draw(&batch, &draw, &self.predictor, self.perturbation(true), &self.sched)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let grads = loss.neg()?.backward()?;
        let norm = grad_norm(&grads, &self.phi_vars)?;
        if !value.is_finite() || !norm.is_finite() {
            return Err(Error::Divergence {
                iter: self.iter + 1,
                detail: format!("generator objective {value}, gradient norm {norm}"),
            });
        }
        self.opt_phi.step(&grads)?;
        Ok((value, norm))
    }

    /// One iteration: a predictor update, then a generator update on every
    /// `generator_update_period`-th iteration.
    pub fn step(&mut self) -> Result<&IterRecord> {
        let lr = self.lr_at(self.iter);
        self.opt_theta.set_learning_rate(lr);
        self.opt_phi.set_learning_rate(lr);
        let (loss_theta, grad_norm_theta) = self.theta_step()?;
        let (loss_phi, grad_norm_phi) =
            if self.cfg.adversarial && (self.iter + 1) % self.cfg.generator_update_period == 0 {
                let (l, g) = self.phi_step()?;
                (Some(l), Some(g))
            } else {
                (None, None)
            };
        self.iter += 1;
        self.history.records.push(IterRecord {
            iter: self.iter,
            loss_theta,
            loss_phi,
            lr,
            grad_norm_theta,
            grad_norm_phi,
        });
        Ok(self.history.records.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while self.iter < self.cfg.max_iters {
            self.step()?;
        }
        if !self.predictor.params().all_finite()? || !self.generator.params().all_finite()? {
            return Err(Error::Divergence {
                iter: self.iter,
                detail: "non-finite parameters after training".into(),
            });
        }
        let k = self.cfg.k_for(self.predictor.shape());
        Ok(TrainOutcome {
            predictor: self.predictor,
            generator: self.generator,
            history: self.history,
            schedule: self.sched,
            k,
        })
    }
}

/// Trains on the normalized windows of a normal-only corpus.
pub fn train(corpus: &TrajectoryCorpus, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if corpus.windows.is_empty() {
        return Err(Error::invalid("training corpus has no windows"));
    }
    let windows: Vec<MotionSequence> = corpus.normalized_windows()?.into_iter().map(|(w, _)| w).collect();
    let joints = windows[0].joints();
    let graph = SkeletonGraph::default_for(joints)?;
    Trainer::new(&windows, &graph, cfg.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_data::{synth_corpus, SynthConfig};

    fn small_config() -> TrainConfig {
        TrainConfig {
            max_iters: 6,
            batch_size: 8,
            predictor: NetConfig::new(8, 1),
            generator: NetConfig::new(4, 1),
            ..TrainConfig::default()
        }
    }

    fn windows(count: usize) -> Vec<MotionSequence> {
        let cfg = SynthConfig {
            n_videos: 6,
            anomaly_ratio: 0.0,
            frames_per_video: 48,
            ..SynthConfig::default()
        };
        let corpus = synth_corpus(&cfg, 3).unwrap();
        corpus
            .normalized_windows()
            .unwrap()
            .into_iter()
            .map(|(w, _)| w)
            .take(count)
            .collect()
    }

    fn trainer(cfg: TrainConfig) -> Trainer {
        Trainer::new(&windows(40), &SkeletonGraph::chain(8).unwrap(), cfg).unwrap()
    }

    #[test]
    fn freeze_discipline() {
        let mut t = trainer(small_config());
        for _ in 0..3 {
            let (p0, g0) = (t.predictor.params().snapshot().unwrap(), t.generator.params().snapshot().unwrap());
            t.theta_step().unwrap();
            let (p1, g1) = (t.predictor.params().snapshot().unwrap(), t.generator.params().snapshot().unwrap());
            assert_ne!(p0, p1);
            assert_eq!(g0, g1);
            t.phi_step().unwrap();
            let (p2, g2) = (t.predictor.params().snapshot().unwrap(), t.generator.params().snapshot().unwrap());
            assert_eq!(p1, p2);
            assert_ne!(g1, g2);
        }
    }

    #[test]
    fn learning_rate_sequence() {
        let cfg = TrainConfig {
            max_iters: 12,
            batch_size: 16,
            ..small_config()
        };
        let mut t = trainer(cfg.clone());
        for _ in 0..12 {
            t.step().unwrap();
        }
        for (i, r) in t.history().records.iter().enumerate() {
            let epoch = i * 16 / 40;
            assert_eq!(r.lr, cfg.lr_base * cfg.lr_decay.powi(epoch as i32));
        }
    }

    #[test]
    fn zero_lambda_matches_plain_training() {
        let base = TrainConfig {
            lambda_p: 0.0,
            ..small_config()
        };
        let plain = TrainConfig {
            adversarial: false,
            ..base.clone()
        };
        let a = trainer(base).run().unwrap();
        let b = trainer(plain).run().unwrap();
        let (la, lb) = (a.history.theta_losses(), b.history.theta_losses());
        assert!((la.last().unwrap() - lb.last().unwrap()).abs() < 1e-6);
        assert_eq!(a.predictor.params().snapshot().unwrap(), b.predictor.params().snapshot().unwrap());
        assert!(a.history.records.iter().all(|r| r.loss_phi.is_some()));
        assert!(b.history.records.iter().all(|r| r.loss_phi.is_none()));
    }

    #[test]
    fn generator_update_period_is_respected() {
        let cfg = TrainConfig {
            generator_update_period: 3,
            ..small_config()
        };
        let out = trainer(cfg).run().unwrap();
        let phi: Vec<bool> = out.history.records.iter().map(|r| r.loss_phi.is_some()).collect();
        assert_eq!(phi, vec![false, false, true, false, false, true]);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = trainer(small_config()).run().unwrap();
        let b = trainer(small_config()).run().unwrap();
        assert_eq!(a.history.to_log(), b.history.to_log());
        assert!(a.history.records.iter().all(|r| r.grad_norm_theta.is_finite()));
    }

    #[test]
    fn empty_input_and_bad_config_rejected() {
        let graph = SkeletonGraph::chain(8).unwrap();
        assert!(Trainer::new(&[], &graph, small_config()).is_err());
        let bad = TrainConfig {
            lr_decay: 1.5,
            ..small_config()
        };
        assert!(Trainer::new(&windows(4), &graph, bad).is_err());
        assert!(train(&TrajectoryCorpus::default(), &small_config()).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let cfg = TrainConfig {
            lr_base: 1e30,
            max_iters: 50,
            ..small_config()
        };
        match trainer(cfg).run() {
            Err(Error::Divergence { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
            Ok(out) => panic!("training survived: {:?}", out.history.theta_losses().last()),
        }
    }
}
