//! Dense row-major tensor over `f64`.
//!
//! Every value flowing through the layers lives in one of these. Shapes are
//! explicit, indexing is total, and all arithmetic is 64-bit so that central
//! finite differences stay meaningful at step 1e-5.

use std::fmt;

/// Errors raised by tensor construction and the layer contracts built on top.
#[derive(Debug, Clone, PartialEq)]
pub enum NumError {
    /// An operation received a tensor whose shape does not match its contract.
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    /// A shape with a zero-sized dimension or the wrong rank.
    InvalidShape { context: String, shape: Vec<usize> },
    /// Backing data length does not equal the product of the dimensions.
    DataLength { expected: usize, actual: usize },
    /// A non-finite value surfaced during a numeric check.
    NonFinite { context: String, param_index: usize },
}

impl fmt::Display for NumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumError::ShapeMismatch {
                context,
                expected,
                actual,
            } => write!(
                f,
                "{context}: shape mismatch, expected {expected:?}, got {actual:?}"
            ),
            NumError::InvalidShape { context, shape } => {
                write!(f, "{context}: invalid shape {shape:?}")
            }
            NumError::DataLength { expected, actual } => write!(
                f,
                "data length {actual} does not match shape product {expected}"
            ),
            NumError::NonFinite {
                context,
                param_index,
            } => write!(f, "non-finite value in {context} (parameter {param_index})"),
        }
    }
}

impl std::error::Error for NumError {}

/// Dense multi-dimensional array, row-major, 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and backing data.
    ///
    /// Fails if any dimension is zero or the data length does not equal the
    /// product of the dimensions.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(NumError::InvalidShape {
                context: "Tensor::new".to_string(),
                shape,
            });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NumError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape. Panics on a degenerate shape;
    /// callers pass shapes already validated by their own contracts.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "zeros: degenerate shape {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Checks that `self` has exactly the given shape.
    pub fn expect_shape(&self, context: &str, shape: &[usize]) -> Result<(), NumError> {
        if self.shape != shape {
            return Err(NumError::ShapeMismatch {
                context: context.to_string(),
                expected: shape.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Checks that `self` has the given rank and returns the dimensions.
    pub fn expect_rank(&self, context: &str, rank: usize) -> Result<&[usize], NumError> {
        if self.shape.len() != rank {
            return Err(NumError::InvalidShape {
                context: format!("{context}: expected rank {rank}"),
                shape: self.shape.clone(),
            });
        }
        Ok(&self.shape)
    }

    #[inline]
    pub fn offset4(&self, n: usize, i: usize, j: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + i) * self.shape[2] + j) * self.shape[3] + c
    }

    #[inline]
    pub fn at4(&self, n: usize, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.offset4(n, i, j, c)]
    }

    #[inline]
    pub fn at4_mut(&mut self, n: usize, i: usize, j: usize, c: usize) -> &mut f64 {
        let k = self.offset4(n, i, j, c);
        &mut self.data[k]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert_eq!(self.shape.len(), 2);
        let k = i * self.shape[1] + j;
        &mut self.data[k]
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self[k] += scale * other[k]`; shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<(), NumError> {
        other.expect_shape("Tensor::add_scaled", &self.shape)?;
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// Stacks equally-shaped tensors along a new leading dimension.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, NumError> {
        let first = items.first().ok_or_else(|| NumError::InvalidShape {
            context: "Tensor::stack: empty input".to_string(),
            shape: vec![],
        })?;
        let mut shape = Vec::with_capacity(first.rank() + 1);
        shape.push(items.len());
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            item.expect_shape("Tensor::stack", first.shape())?;
            data.extend_from_slice(item.data());
        }
        Tensor::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_product() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(
            err,
            NumError::DataLength {
                expected: 6,
                actual: 5
            }
        );
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn new_rejects_zero_dims() {
        assert!(matches!(
            Tensor::new(vec![2, 0], vec![]),
            Err(NumError::InvalidShape { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![], vec![]),
            Err(NumError::InvalidShape { .. })
        ));
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::new(vec![1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at4(0, 0, 0, 0), 0.0);
        assert_eq!(t.at4(0, 0, 0, 1), 1.0);
        assert_eq!(t.at4(0, 0, 1, 0), 2.0);
        assert_eq!(t.at4(0, 1, 0, 0), 4.0);
        assert_eq!(t.at4(0, 1, 1, 1), 7.0);
    }

    #[test]
    fn stack_adds_leading_dim() {
        let a = Tensor::filled(&[2, 2, 1], 1.0);
        let b = Tensor::filled(&[2, 2, 1], 2.0);
        let s = Tensor::stack(&[a, b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 1]);
        assert_eq!(s.at4(0, 0, 0, 0), 1.0);
        assert_eq!(s.at4(1, 1, 1, 0), 2.0);
    }

    #[test]
    fn stack_rejects_mixed_shapes() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            Tensor::stack(&[a, b]),
            Err(NumError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a = Tensor::filled(&[3], 1.0);
        let b = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(a.data(), &[1.5, 2.0, 2.5]);
    }
}
