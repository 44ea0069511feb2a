//! Orthonormal 2D DCT over condensed motion matrices, magnitude-ranked
//! frequency masks, coefficient fusion and top-k conditioning codes.
//!
//! A motion `[N][C][J]` is condensed to an `N x (C*J)` matrix with temporal
//! rows. Column `j * C + c` holds channel `c` of joint `j` (joint-major).

use ndarray::{Array2, Array3, Zip};

use crate::error::{Error, Result};
use crate::motion_data::MotionSequence;

/// Time-by-space matrix view of a motion window.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedMotion {
    pub matrix: Array2<f64>,
}

impl CondensedMotion {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    pub fn from_array(data: &Array3<f64>) -> Self {
        let (n, c, j) = data.dim();
        let matrix = Array2::from_shape_fn((n, c * j), |(i, col)| data[[i, col % c, col / c]]);
        Self { matrix }
    }

    pub fn from_motion(m: &MotionSequence) -> Self {
        Self::from_array(&m.data)
    }

    /// Inverse of [`CondensedMotion::from_array`].
    pub fn to_array(&self, channels: usize) -> Result<Array3<f64>> {
        let (n, cols) = self.matrix.dim();
        if channels == 0 || cols % channels != 0 {
            return Err(Error::invalid(format!(
                "{cols} columns cannot be split into {channels} channels"
            )));
        }
        let joints = cols / channels;
        Ok(Array3::from_shape_fn((n, channels, joints), |(i, c, j)| {
            self.matrix[[i, j * channels + c]]
        }))
    }

    pub fn dim(&self) -> (usize, usize) {
        self.matrix.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients {
    pub coeffs: Array2<f64>,
}

impl DctCoefficients {
    pub fn new(coeffs: Array2<f64>) -> Self {
        Self { coeffs }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.coeffs.dim()
    }
}

/// Orthonormal DCT-II basis: row `u` is `a(u) cos(pi (2i+1) u / 2n)`.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(u, i)| {
        let a = if u == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        a * (std::f64::consts::PI * (2 * i + 1) as f64 * u as f64 / (2.0 * nf)).cos()
    })
}

/// Precomputed separable transform for one `rows x cols` shape.
#[derive(Debug, Clone)]
pub struct Dct2Plan {
    rows: Array2<f64>,
    cols: Array2<f64>,
}

impl Dct2Plan {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows: dct_matrix(rows),
            cols: dct_matrix(cols),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.nrows(), self.cols.nrows())
    }

    fn check(&self, m: &Array2<f64>, what: &str) -> Result<()> {
        if m.dim() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.rows.nrows(), self.cols.nrows()],
                got: vec![m.nrows(), m.ncols()],
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what.into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &CondensedMotion) -> Result<DctCoefficients> {
        self.check(&x.matrix, "dct2 input")?;
        Ok(DctCoefficients::new(self.rows.dot(&x.matrix).dot(&self.cols.t())))
    }

    pub fn inverse(&self, y: &DctCoefficients) -> Result<CondensedMotion> {
        self.check(&y.coeffs, "idct2 input")?;
        Ok(CondensedMotion::new(self.rows.t().dot(&y.coeffs).dot(&self.cols)))
    }
}

pub fn dct2(x: &CondensedMotion) -> Result<DctCoefficients> {
    let (r, c) = x.dim();
    Dct2Plan::new(r, c).forward(x)
}

pub fn idct2(y: &DctCoefficients) -> Result<CondensedMotion> {
    let (r, c) = y.dim();
    Dct2Plan::new(r, c).inverse(y)
}

/// Flat row-major indices sorted by decreasing magnitude; equal magnitudes
/// keep row-major order.
fn magnitude_order(y: &Array2<f64>) -> Vec<usize> {
    let flat: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    let mut idx: Vec<usize> = (0..flat.len()).collect();
    idx.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    idx
}

/// The `k` largest-magnitude DCT coefficients of a motion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCode {
    pub values: Vec<f64>,
    pub positions: Vec<(usize, usize)>,
    /// Shape of the coefficient matrix the code was taken from.
    pub shape: (usize, usize),
}

impl ConditionCode {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Coefficient matrix holding the retained values, zero elsewhere.
    pub fn dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape);
        for (&v, &(r, c)) in self.values.iter().zip(&self.positions) {
            out[[r, c]] = v;
        }
        out
    }
}

/// Default conditioning size: a quarter of all coefficients.
pub fn default_k(n: usize, c: usize, j: usize) -> usize {
    ((0.25 * (n * c * j) as f64).round() as usize).max(1)
}

pub fn condition_code(x: &MotionSequence, k: usize) -> Result<ConditionCode> {
    let y = dct2(&CondensedMotion::from_motion(x))?;
    condition_code_from_coeffs(&y, k)
}

pub fn condition_code_from_coeffs(y: &DctCoefficients, k: usize) -> Result<ConditionCode> {
    let total = y.coeffs.len();
    if k == 0 || k > total {
        return Err(Error::invalid(format!("k must lie in [1, {total}], got {k}")));
    }
    let cols = y.coeffs.ncols();
    let order = magnitude_order(&y.coeffs);
    let positions: Vec<(usize, usize)> = order[..k].iter().map(|&i| (i / cols, i % cols)).collect();
    let values = positions.iter().map(|&p| y.coeffs[p]).collect();
    Ok(ConditionCode {
        values,
        positions,
        shape: y.dim(),
    })
}

/// Complementary low/high selectors over a coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    /// 1 on the retained large-magnitude (global, low-frequency) entries.
    pub low: Array2<u8>,
    pub high: Array2<u8>,
    pub lambda_dct: f64,
    /// Smallest magnitude admitted to `low`; `+inf` when `low` is empty.
    pub tau: f64,
}

impl FrequencyMask {
    pub fn low_count(&self) -> usize {
        self.low.iter().filter(|&&v| v == 1).count()
    }
}

/// Number of entries kept in the low mask for a given fraction.
pub fn low_mask_size(lambda_dct: f64, total: usize) -> usize {
    ((lambda_dct * total as f64).round() as usize).min(total)
}

/// Marks the `round(lambda_dct * size)` largest-magnitude coefficients as
/// low-frequency; ties at the threshold go to the earlier row-major entry.
pub fn build_masks(y: &DctCoefficients, lambda_dct: f64) -> Result<FrequencyMask> {
    if !(0.0..=1.0).contains(&lambda_dct) {
        return Err(Error::invalid(format!("lambda_dct must lie in [0, 1], got {lambda_dct}")));
    }
    let total = y.coeffs.len();
    let keep = low_mask_size(lambda_dct, total);
    let cols = y.coeffs.ncols();
    let order = magnitude_order(&y.coeffs);
    let mut low = Array2::<u8>::zeros(y.dim());
    for &i in &order[..keep] {
        low[[i / cols, i % cols]] = 1;
    }
    let tau = if keep == 0 {
        f64::INFINITY
    } else {
        let i = order[keep - 1];
        y.coeffs[[i / cols, i % cols]].abs()
    };
    let high = low.mapv(|v| 1 - v);
    Ok(FrequencyMask {
        low,
        high,
        lambda_dct,
        tau,
    })
}

/// Takes observed coefficients on high positions and generated ones on low
/// positions.
pub fn fuse(y_o: &DctCoefficients, y_g: &DctCoefficients, mask: &FrequencyMask) -> Result<DctCoefficients> {
    if y_o.dim() != y_g.dim() || y_o.dim() != mask.low.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![y_o.dim().0, y_o.dim().1],
            got: vec![y_g.dim().0, y_g.dim().1, mask.low.dim().0, mask.low.dim().1],
        });
    }
    let mut out = y_o.coeffs.clone();
    Zip::from(&mut out)
        .and(&y_g.coeffs)
        .and(&mask.low)
        .for_each(|o, &g, &l| {
            if l == 1 {
                *o = g;
            }
        });
    Ok(DctCoefficients::new(out))
}

/// Share of total energy held by the coefficients outside the top
/// `lambda_dct` fraction by magnitude. Zero for an all-zero matrix.
pub fn high_frequency_energy_fraction(y: &DctCoefficients, lambda_dct: f64) -> f64 {
    let total: f64 = y.coeffs.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 0.0;
    }
    let Ok(mask) = build_masks(y, lambda_dct) else {
        return 0.0;
    };
    let high: f64 = y
        .coeffs
        .iter()
        .zip(mask.high.iter())
        .filter(|(_, &h)| h == 1)
        .map(|(v, _)| v * v)
        .sum();
    high / total
}
