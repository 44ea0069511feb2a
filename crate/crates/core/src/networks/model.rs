use candle_core::{DType, Device, Tensor, D};
use candle_nn::{Linear, Module};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::SkeletonGraph;
use super::params::{ParamSet, Precision};
use crate::error::{Error, Result};

/// Size of a space-time graph network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub precision: Precision,
}

impl NetConfig {
    pub fn new(width: usize, depth: usize) -> Self {
        Self {
            width,
            depth,
            precision: Precision::F32,
        }
    }

    pub fn predictor_default() -> Self {
        Self::new(32, 4)
    }

    pub fn generator_default() -> Self {
        Self::new(16, 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::invalid(format!(
                "width and depth must be positive, got {} and {}",
                self.width, self.depth
            )));
        }
        Ok(())
    }
}

/// Shape of the motions a network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionShape {
    pub frames: usize,
    pub channels: usize,
    pub joints: usize,
}

impl MotionShape {
    pub fn new(frames: usize, channels: usize, joints: usize) -> Self {
        Self {
            frames,
            channels,
            joints,
        }
    }

    pub fn size(&self) -> usize {
        self.frames * self.channels * self.joints
    }
}

/// Applies a linear layer to the last axis as one 2-D matmul; candle would
/// otherwise split 4-D inputs into one small matmul per leading index.
fn apply(layer: &Linear, x: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let last = dims[dims.len() - 1];
    let rows = x.elem_count() / last.max(1);
    let y = layer.forward(&x.reshape((rows, last))?)?;
    let mut out = dims;
    let n = out.len();
    out[n - 1] = y.dim(1)?;
    Ok(y.reshape(out)?)
}

struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    fn new(params: &mut ParamSet, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            weight: params.constant(&format!("{name}.weight"), &[width], 1.0)?,
            bias: params.constant(&format!("{name}.bias"), &[width], 0.0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Graph convolution over joints followed by a width-3 temporal
/// convolution, with a pre-norm residual connection. Activations are laid
/// out `[N][B][J][W]` so frame shifts are contiguous slices.
struct Block {
    norm: LayerNorm,
    spatial: Linear,
    embed: Linear,
    temporal: [Linear; 3],
}

impl Block {
    fn forward(&self, h: &Tensor, adj_t: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let (n, b, j, w) = h.dims4()?;
        let x = self.norm.forward(h)?;
        let mixed = x
            .transpose(2, 3)?
            .contiguous()?
            .reshape((n * b * w, j))?
            .matmul(adj_t)?
            .reshape((n, b, w, j))?
            .transpose(2, 3)?
            .contiguous()?;
        let e = apply(&self.embed, emb)?.reshape((1, b, 1, w))?;
        let s = candle_nn::ops::silu(&apply(&self.spatial, &mixed)?.broadcast_add(&e)?)?;
        let padded = s.pad_with_zeros(0, 1, 1)?;
        let mut conv = apply(&self.temporal[0], &padded.narrow(0, 0, n)?)?;
        for k in 1..3 {
            conv = (conv + apply(&self.temporal[k], &padded.narrow(0, k, n)?)?)?;
        }
        Ok((h + candle_nn::ops::silu(&conv)?)?)
    }
}

/// Space-time graph network mapping `[B][N][C][J]` motions to a field of the
/// same shape, conditioned on the timestep and optionally on a dense code.
pub(crate) struct StGcn {
    pub shape: MotionShape,
    pub config: NetConfig,
    adj_t: Tensor,
    input: Linear,
    /// Learned joint and frame identities, `[1][1][J][W]` and `[N][1][1][W]`;
    /// without them a weight-shared network cannot map a global code to
    /// joint-specific output.
    joint_embed: Tensor,
    frame_embed: Tensor,
    time_in: Linear,
    time_out: Linear,
    code: Option<Linear>,
    blocks: Vec<Block>,
    out_norm: LayerNorm,
    output: Linear,
}

/// Sinusoidal features of the timestep, `[B][width]`.
pub(crate) fn timestep_embedding(t: &[usize], width: usize, dtype: DType) -> Result<Tensor> {
    let half = width / 2;
    let mut values = Vec::with_capacity(t.len() * width);
    for &ti in t {
        for i in 0..width {
            let k = i % half.max(1);
            let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
            let arg = ti as f64 * freq;
            values.push(if i < half { arg.sin() } else { arg.cos() });
        }
    }
    Ok(Tensor::from_vec(values, (t.len(), width), &Device::Cpu)?.to_dtype(dtype)?)
}

impl StGcn {
    pub fn build(
        params: &mut ParamSet,
        graph: &SkeletonGraph,
        shape: MotionShape,
        config: NetConfig,
        conditioned: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if graph.num_joints != shape.joints {
            return Err(Error::invalid(format!(
                "graph has {} joints but motions have {}",
                graph.num_joints, shape.joints
            )));
        }
        if shape.frames == 0 || shape.channels == 0 {
            return Err(Error::invalid("motion shape must be non-empty"));
        }
        let w = config.width;
        let adj = graph.adjacency().reversed_axes();
        let adj_t = Tensor::from_vec(adj.iter().copied().collect::<Vec<_>>(), adj.dim(), &Device::Cpu)?
            .to_dtype(params.dtype())?;
        let input = params.linear("input", shape.channels, w, 1.0, rng)?;
        let joint_embed = params
            .uniform("joint_embed", &[shape.joints, w], 0.5, rng)?
            .reshape((1, 1, shape.joints, w))?;
        let frame_embed = params
            .uniform("frame_embed", &[shape.frames, w], 0.5, rng)?
            .reshape((shape.frames, 1, 1, w))?;
        let time_in = params.linear("time_in", w, w, 1.0, rng)?;
        let time_out = params.linear("time_out", w, w, 1.0, rng)?;
        let code = if conditioned {
            Some(params.linear("code", shape.size(), w, 1.0, rng)?)
        } else {
            None
        };
        let blocks = (0..config.depth)
            .map(|i| {
                Ok(Block {
                    norm: LayerNorm::new(params, &format!("block{i}.norm"), w)?,
                    spatial: params.linear(&format!("block{i}.spatial"), w, w, 1.0, rng)?,
                    embed: params.linear(&format!("block{i}.embed"), w, w, 1.0, rng)?,
                    temporal: [
                        params.linear(&format!("block{i}.temporal0"), w, w, 0.5 / 3f64.sqrt(), rng)?,
                        params.linear(&format!("block{i}.temporal1"), w, w, 0.5 / 3f64.sqrt(), rng)?,
                        params.linear(&format!("block{i}.temporal2"), w, w, 0.5 / 3f64.sqrt(), rng)?,
                    ],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out_norm = LayerNorm::new(params, "out_norm", w)?;
        let output = params.linear("output", w, shape.channels, 0.1, rng)?;
        Ok(Self {
            shape,
            config,
            adj_t,
            input,
            joint_embed,
            frame_embed,
            time_in,
            time_out,
            code,
            blocks,
            out_norm,
            output,
        })
    }

    pub fn forward(&self, x: &Tensor, t: &[usize], cond: Option<&Tensor>) -> Result<Tensor> {
        let (b, n, c, j) = x.dims4()?;
        let s = self.shape;
        if (n, c, j) != (s.frames, s.channels, s.joints) || t.len() != b {
            return Err(Error::ShapeMismatch {
                expected: vec![t.len(), s.frames, s.channels, s.joints],
                got: vec![b, n, c, j],
            });
        }
        let w = self.config.width;
        let h = apply(&self.input, &x.permute((1, 0, 3, 2))?.contiguous()?)?
            .broadcast_add(&self.joint_embed)?
            .broadcast_add(&self.frame_embed)?;
        let te = timestep_embedding(t, w, x.dtype())?;
        let mut emb = self.time_out.forward(&candle_nn::ops::silu(&self.time_in.forward(&te)?)?)?;
        if let (Some(code), Some(c)) = (&self.code, cond) {
            emb = (emb + code.forward(&c.reshape((b, s.size()))?)?)?;
        }
        let mut h = h;
        for block in &self.blocks {
            h = block.forward(&h, &self.adj_t, &emb)?;
        }
        let out = apply(&self.output, &self.out_norm.forward(&h)?)?;
        Ok(out.permute((1, 0, 3, 2))?.contiguous()?)
    }
}
