//! Conversions between `ndarray` motions and batched candle tensors laid out
//! as `[B][N][C][J]`.

use candle_core::{DType, Device, Tensor};
use ndarray::Array3;

use crate::error::{Error, Result};

pub fn stack_arrays(items: &[&Array3<f64>], dtype: DType) -> Result<Tensor> {
    let first = items.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (n, c, j) = first.dim();
    let mut flat = Vec::with_capacity(items.len() * n * c * j);
    for a in items {
        if a.dim() != (n, c, j) {
            return Err(Error::ShapeMismatch {
                expected: vec![n, c, j],
                got: vec![a.dim().0, a.dim().1, a.dim().2],
            });
        }
        flat.extend(a.iter().copied());
    }
    let t = Tensor::from_vec(flat, (items.len(), n, c, j), &Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

pub fn unstack_arrays(t: &Tensor) -> Result<Vec<Array3<f64>>> {
    let (b, n, c, j) = t.dims4()?;
    let flat: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(flat
        .chunks_exact(n * c * j)
        .take(b)
        .map(|chunk| Array3::from_shape_vec((n, c, j), chunk.to_vec()).expect("chunk length"))
        .collect())
}

/// Per-sample scalars as a `[B, 1, 1, 1]` tensor for broadcasting.
pub fn per_sample(values: &[f64], dtype: DType) -> Result<Tensor> {
    let t = Tensor::from_vec(values.to_vec(), (values.len(), 1, 1, 1), &Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Standard normal draws taken from `rng` in row-major order.
pub fn gaussian(rng: &mut impl rand::Rng, shape: (usize, usize, usize, usize), dtype: DType) -> Result<Tensor> {
    let count = shape.0 * shape.1 * shape.2 * shape.3;
    let v: Vec<f64> = (0..count).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn all_finite(t: &Tensor) -> Result<bool> {
    let v: Vec<f64> = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    Ok(v.iter().all(|x| x.is_finite()))
}
