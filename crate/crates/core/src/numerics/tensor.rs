use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Dense tensor: a shape plus flat row-major storage.
///
/// Values are immutable once a tensor leaves the op that produced it; clones
/// share storage, so handing tensors to backward closures is cheap.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let count: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        if count != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} wants {count} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![E::zero(); count]) }
    }

    pub fn filled(shape: &[usize], value: E) -> Self {
        let count = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: Arc::new(vec![value; count]) }
    }

    pub fn scalar(value: E) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let count = shape.iter().product();
        let data = (0..count).map(|i| f(i)).collect();
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
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

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable view of the storage; copies only when the storage is shared.
    pub(crate) fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data)
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Same storage under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let count: usize = shape.iter().product();
        if count != self.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} ({} values) cannot become {shape:?} ({count} values)", self.shape, self.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor<E>) {
        debug_assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        let dst = self.data_mut();
        for (d, s) in dst.iter_mut().zip(other.data.iter()) {
            *d += *s;
        }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Cast the element type; used when loading f32 files into f64 mode.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|v| T::of(v.to_f64())).collect()),
        }
    }
}

/// Row-major offset of a 2-d index.
#[inline]
pub fn idx2(cols: usize, r: usize, c: usize) -> usize {
    r * cols + c
}

/// Row-major offset of a 3-d index (h, w, c order).
#[inline]
pub fn idx3(w: usize, c: usize, y: usize, x: usize, ch: usize) -> usize {
    (y * w + x) * c + ch
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_count_mismatch() {
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(err.to_string().contains("6 values"));
    }

    #[test]
    fn new_rejects_zero_extent() {
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64);
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn finite_check_sees_nan() {
        let t = Tensor::<f32>::new(vec![2], vec![1.0, f32::NAN]).unwrap();
        assert!(!t.is_all_finite());
        assert!(Tensor::<f32>::zeros(&[4]).is_all_finite());
    }
}
