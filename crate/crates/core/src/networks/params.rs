use candle_core::{DType, Device, Tensor, Var};
use candle_nn::Linear;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric precision of a network's parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

/// Serialized form of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Named trainable tensors, created in a fixed order from a seeded stream.
#[derive(Debug, Clone)]
pub struct ParamSet {
    vars: Vec<(String, Var)>,
    dtype: DType,
}

impl ParamSet {
    pub fn new(dtype: DType) -> Self {
        Self { vars: Vec::new(), dtype }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.push((name, var));
        Ok(out)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut impl Rng) -> Result<Tensor> {
        let count = shape.iter().product();
        let values = (0..count).map(|_| rng.random_range(-bound..=bound)).collect();
        self.push(name.to_string(), shape.to_vec(), values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let count = shape.iter().product();
        self.push(name.to_string(), shape.to_vec(), vec![value; count])
    }

    /// Dense layer with weights and bias uniform in `+-1/sqrt(fan_in)`,
    /// weights scaled by `gain`.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut impl Rng) -> Result<Linear> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), &[fan_out, fan_in], bound * gain, rng)?;
        let b = self.uniform(&format!("{name}.bias"), &[fan_out], bound, rng)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.vars.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn count(&self) -> usize {
        self.vars.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Current values of every parameter, in creation order.
    pub fn export(&self) -> Result<Vec<ParamTensor>> {
        self.vars
            .iter()
            .map(|(name, v)| {
                Ok(ParamTensor {
                    name: name.clone(),
                    shape: v.dims().to_vec(),
                    values: v.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1()?,
                })
            })
            .collect()
    }

    /// Overwrites parameters from an export with matching names and shapes.
    pub fn import(&self, params: &[ParamTensor]) -> Result<()> {
        if params.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.vars.len(),
                params.len()
            )));
        }
        for ((name, var), p) in self.vars.iter().zip(params) {
            if *name != p.name || var.dims() != p.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    p.name,
                    p.shape,
                    name,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(p.values.clone(), p.shape.clone(), &Device::Cpu)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// Flat copy of all values, for bit-level comparisons.
    pub fn snapshot(&self) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(self.count());
        for p in self.export()? {
            out.extend(p.values.iter().map(|v| v.to_bits()));
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> Result<bool> {
        Ok(self.export()?.iter().all(|p| p.values.iter().all(|v| v.is_finite())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn export_import_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParamSet::new(DType::F32);
        a.linear("l", 3, 2, 1.0, &mut rng).unwrap();
        a.constant("g", &[2], 1.0).unwrap();
        assert_eq!(a.count(), 3 * 2 + 2 + 2);
        let exported = a.export().unwrap();

        let mut b = ParamSet::new(DType::F32);
        b.linear("l", 3, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        b.constant("g", &[2], 0.0).unwrap();
        b.import(&exported).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());

        let mut c = ParamSet::new(DType::F32);
        c.constant("other", &[2], 0.0).unwrap();
        assert!(c.import(&exported).is_err());
    }
}
