//! Space-time graph networks for the noise predictor and the perturbation
//! generator, and the alternating training loop.

mod graph;
mod model;
mod params;
mod train;

use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use graph::{SkeletonGraph, HUMAN17_EDGES};
pub use model::{MotionShape, NetConfig};
pub use params::{ParamSet, ParamTensor, Precision};
pub use train::{train, IterRecord, TrainConfig, TrainHistory, TrainOutcome, Trainer};

use crate::diffusion::NoisePredictor;
use crate::error::Result;
use crate::perturbation::PerturbationGenerator;
use model::StGcn;

/// Graph-convolutional noise predictor `eps_theta(x_t, t, c)`.
pub struct GcnPredictor {
    net: StGcn,
    params: ParamSet,
    pub graph: SkeletonGraph,
}

/// Lightweight graph-convolutional perturbation field `G_phi(x_t, t)`.
pub struct GcnGenerator {
    net: StGcn,
    params: ParamSet,
    pub graph: SkeletonGraph,
}

/// Builds a noise predictor; initial parameters depend only on `seed`.
pub fn build_predictor(graph: &SkeletonGraph, shape: MotionShape, config: NetConfig, seed: u64) -> Result<GcnPredictor> {
    let mut params = ParamSet::new(config.precision.dtype());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = StGcn::build(&mut params, graph, shape, config, true, &mut rng)?;
    Ok(GcnPredictor {
        net,
        params,
        graph: graph.clone(),
    })
}

/// Builds a perturbation generator; initial parameters depend only on `seed`.
pub fn build_generator(graph: &SkeletonGraph, shape: MotionShape, config: NetConfig, seed: u64) -> Result<GcnGenerator> {
    let mut params = ParamSet::new(config.precision.dtype());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = StGcn::build(&mut params, graph, shape, config, false, &mut rng)?;
    Ok(GcnGenerator {
        net,
        params,
        graph: graph.clone(),
    })
}

macro_rules! handle_accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn params(&self) -> &ParamSet {
                &self.params
            }

            pub fn param_count(&self) -> usize {
                self.params.count()
            }

            pub fn shape(&self) -> MotionShape {
                self.net.shape
            }

            pub fn config(&self) -> NetConfig {
                self.net.config
            }
        }
    };
}

handle_accessors!(GcnPredictor);
handle_accessors!(GcnGenerator);

impl NoisePredictor for GcnPredictor {
    fn predict(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor> {
        self.net.forward(x_t, t, Some(cond))
    }

    fn dtype(&self) -> DType {
        self.params.dtype()
    }
}

impl PerturbationGenerator for GcnGenerator {
    fn field(&self, x_t: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.net.forward(x_t, t, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian;

    fn shape() -> MotionShape {
        MotionShape::new(24, 2, 8)
    }

    #[test]
    fn default_budget_and_ratio() {
        for (joints, graph) in [(8, SkeletonGraph::chain(8).unwrap()), (17, SkeletonGraph::human17())] {
            let s = MotionShape::new(24, 2, joints);
            let p = build_predictor(&graph, s, NetConfig::predictor_default(), 0).unwrap();
            let g = build_generator(&graph, s, NetConfig::generator_default(), 0).unwrap();
            let (np, ng) = (p.param_count(), g.param_count());
            assert!(np + ng <= 1_000_000, "{np} + {ng}");
            assert!(ng as f64 / np as f64 <= 0.2, "{ng} / {np}");
        }
    }

    #[test]
    fn shapes_are_preserved() {
        let graph = SkeletonGraph::chain(8).unwrap();
        let p = build_predictor(&graph, shape(), NetConfig::new(8, 2), 1).unwrap();
        let g = build_generator(&graph, shape(), NetConfig::new(4, 1), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = (gaussian(&mut rng, (3, 24, 2, 8), DType::F32).unwrap() * 2.0).unwrap().clamp(-2.0, 2.0).unwrap();
        let out = p.predict(&x, &[1, 5, 10], &x).unwrap();
        assert_eq!(out.dims(), x.dims());
        let field = g.field(&x, &[1, 2, 3]).unwrap();
        assert_eq!(field.dims(), x.dims());
        assert!(crate::tensor::all_finite(&field).unwrap());
        assert!(p.predict(&x, &[1, 2], &x).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let graph = SkeletonGraph::chain(8).unwrap();
        let a = build_predictor(&graph, shape(), NetConfig::new(8, 2), 5).unwrap();
        let b = build_predictor(&graph, shape(), NetConfig::new(8, 2), 5).unwrap();
        let c = build_predictor(&graph, shape(), NetConfig::new(8, 2), 6).unwrap();
        assert_eq!(a.params().snapshot().unwrap(), b.params().snapshot().unwrap());
        assert_ne!(a.params().snapshot().unwrap(), c.params().snapshot().unwrap());
    }

    #[test]
    fn invalid_sizes_rejected() {
        let graph = SkeletonGraph::chain(8).unwrap();
        assert!(build_predictor(&graph, shape(), NetConfig::new(0, 2), 0).is_err());
        assert!(build_generator(&graph, shape(), NetConfig::new(4, 0), 0).is_err());
        assert!(build_predictor(&graph, MotionShape::new(24, 2, 9), NetConfig::new(4, 1), 0).is_err());
    }
}
