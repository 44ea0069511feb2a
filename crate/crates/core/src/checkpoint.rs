//! Single-file JSON checkpoints holding both networks, the schedule and the
//! inference constants.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::networks::{
    build_generator, build_predictor, GcnGenerator, GcnPredictor, MotionShape, NetConfig, ParamTensor,
    SkeletonGraph,
};

pub const FORMAT: &str = "fgdiff-checkpoint";
pub const VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub config: NetConfig,
    pub params: Vec<ParamTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: String,
    pub shape: MotionShape,
    pub graph: SkeletonGraph,
    pub schedule: ScheduleConfig,
    pub lambda_p: f64,
    pub lambda_dct: f64,
    pub k: usize,
    pub predictor: NetworkState,
    pub generator: NetworkState,
    /// Resolved run configuration that produced the checkpoint.
    #[serde(default)]
    pub config_echo: serde_json::Value,
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<String>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn from_models(
        predictor: &GcnPredictor,
        generator: &GcnGenerator,
        schedule: ScheduleConfig,
        lambda_p: f64,
        lambda_dct: f64,
        k: usize,
        config_echo: serde_json::Value,
    ) -> Result<Self> {
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION.into(),
            shape: predictor.shape(),
            graph: predictor.graph.clone(),
            schedule,
            lambda_p,
            lambda_dct,
            k,
            predictor: NetworkState {
                config: predictor.config(),
                params: predictor.params().export()?,
            },
            generator: NetworkState {
                config: generator.config(),
                params: generator.params().export()?,
            },
            config_echo,
        })
    }

    /// Rebuilds both networks with the stored parameters.
    pub fn models(&self) -> Result<(GcnPredictor, GcnGenerator)> {
        let p = build_predictor(&self.graph, self.shape, self.predictor.config, 0)?;
        p.params().import(&self.predictor.params)?;
        let g = build_generator(&self.graph, self.shape, self.generator.config, 0)?;
        g.params().import(&self.generator.params)?;
        Ok((p, g))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, rejecting other formats and versions.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if header.format.as_deref() != Some(FORMAT) {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
        }
        let found = header.version.unwrap_or_default();
        if found != VERSION {
            return Err(Error::CheckpointVersion {
                found,
                expected: VERSION.into(),
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
