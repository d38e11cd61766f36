//! Dense row-major multi-dimensional arrays.
//!
//! Construction validates that the element count matches the shape and that
//! every entry is finite; non-finite values arising later (e.g. a diverging
//! training loss) are caught at the loss/gradient boundary by the trainer.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ArrayError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("shape dimensions must be positive, got {shape:?}")]
    ZeroDimension { shape: Vec<usize> },
}

/// Dense array of scalars in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Array<S> {
    /// Build an array, rejecting shape/length mismatches and non-finite entries.
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self, ArrayError> {
        if shape.contains(&0) {
            return Err(ArrayError::ZeroDimension { shape });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ArrayError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ArrayError::NonFinite {
                    index,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for op outputs; skips the finite scan.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); n],
        }
    }

    pub fn scalar(value: S) -> Result<Self, ArrayError> {
        Self::from_vec(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for the shapes `backward` accepts as a root: `[1]` or `[]`.
    pub fn is_scalar_shaped(&self) -> bool {
        self.shape.is_empty() || self.shape == [1]
    }

    /// Value of a single-element array.
    pub fn item(&self) -> S {
        assert!(
            self.data.len() == 1,
            "item() on array of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    /// Row-major element at a 2-D position.
    pub fn at2(&self, row: usize, col: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Array::from_vec(vec![2, 2], vec![1.0f64, 2.0, 3.0]).unwrap_err();
        assert!(matches!(
            err,
            ArrayError::LengthMismatch {
                expected: 4,
                actual: 3,
                ..
            }
        ));
    }

    #[test]
    fn rejects_non_finite() {
        let err = Array::from_vec(vec![3], vec![1.0f64, f64::NAN, 3.0]).unwrap_err();
        assert!(matches!(err, ArrayError::NonFinite { index: 1, .. }));
        let err = Array::from_vec(vec![2], vec![f64::INFINITY, 0.0]).unwrap_err();
        assert!(matches!(err, ArrayError::NonFinite { index: 0, .. }));
    }

    #[test]
    fn rejects_zero_dimension() {
        let err = Array::<f64>::from_vec(vec![0, 3], vec![]).unwrap_err();
        assert!(matches!(err, ArrayError::ZeroDimension { .. }));
    }

    #[test]
    fn scalar_shapes() {
        assert!(Array::scalar(1.5f64).unwrap().is_scalar_shaped());
        assert!(!Array::<f64>::zeros(vec![2]).is_scalar_shaped());
    }
}
