//! Dense numeric arrays and the small set of primitives every other module uses.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major array of 32-bit floats.
///
/// The flat data length always equals the product of the shape, and all values
/// are finite after every public operation. Accumulations (norms, dot
/// products) run in 64-bit and are rounded on output.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/data contract and finiteness.
    ///
    /// Zero-sized shapes are representable (so that the error paths of the
    /// numeric operations are reachable) but rejected by every operation that
    /// needs at least one element.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "tensor construction",
            });
        }
        Ok(Self { shape, data })
    }

    /// 1-D tensor wrapping `data`.
    pub fn from_vec(data: Vec<f32>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elementwise scaling `c * self`.
    pub fn scale(&self, c: f32) -> Result<Tensor> {
        let data: Vec<f32> = self
            .data
            .iter()
            .map(|&v| ((c as f64) * v as f64) as f32)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "scale" });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }
}

/// Norm order used for budgets and projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    LInf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L2 => write!(f, "2"),
            Norm::LInf => write!(f, "inf"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" => Ok(Norm::L2),
            "inf" | "Inf" | "INF" => Ok(Norm::LInf),
            other => Err(Error::InvalidParameter(format!(
                "norm must be \"2\" or \"inf\", got {other:?}"
            ))),
        }
    }
}

/// The l2 or l-infinity norm of `t`, accumulated in 64-bit.
pub fn lp_norm(t: &Tensor, norm: Norm) -> Result<f64> {
    if t.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let value = match norm {
        Norm::L2 => t
            .data()
            .iter()
            .map(|&v| {
                let v = v as f64;
                v * v
            })
            .sum::<f64>()
            .sqrt(),
        Norm::LInf => t
            .data()
            .iter()
            .map(|&v| (v as f64).abs())
            .fold(0.0, f64::max),
    };
    Ok(value)
}

/// `alpha * x + y`, elementwise. Shapes must match.
pub fn axpy(alpha: f32, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let a = alpha as f64;
    let data: Vec<f32> = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&xi, &yi)| (a * xi as f64 + yi as f64) as f32)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "axpy" });
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Tensor of i.i.d. standard normal samples.
pub fn gaussian_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.standard_normal()).collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}
