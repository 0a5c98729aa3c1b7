//! Dense row-major tensors with exact reverse-mode differentiation.
//!
//! The [`Tape`] records every primitive applied to its nodes and replays the
//! chain rule backwards on demand. Graphs are define-by-run: build, call
//! [`Tape::backward`], read gradients, drop the tape.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_difference_check, FdCheckConfig};
pub use tape::{NodeId, Tape};

use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },
}

pub type Result<V> = std::result::Result<V, TensorError>;

/// Dense real array in row-major order. `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::one(); n],
        }
    }

    pub fn scalar(x: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Self {
        Tensor::new(shape, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64_()).collect()
    }
}

/// Broadcast-compatible output shape, numpy rules: align trailing axes,
/// a size-1 axis stretches to match its partner.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Dimension `i` counted from the last axis; 1 when the shape is shorter.
#[inline]
fn dim_from_right(shape: &[usize], i: usize) -> usize {
    if i < shape.len() {
        shape[shape.len() - 1 - i]
    } else {
        1
    }
}

/// Row-major strides, with stride 0 on axes broadcast from size 1.
pub(crate) fn broadcast_strides(shape: &[usize], out_rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; out_rank];
    let mut acc = 1usize;
    for i in 0..shape.len() {
        let axis = shape.len() - 1 - i;
        strides[out_rank - 1 - i] = if shape[axis] == 1 { 0 } else { acc };
        acc *= shape[axis];
    }
    strides
}

/// Fold a flat index in `out_shape` onto a (possibly broadcast) operand.
#[inline]
pub(crate) fn project_index(flat: usize, out_shape: &[usize], strides: &[usize]) -> usize {
    let mut rem = flat;
    let mut idx = 0usize;
    for d in (0..out_shape.len()).rev() {
        let c = rem % out_shape[d];
        rem /= out_shape[d];
        idx += c * strides[d];
    }
    idx
}

/// Accumulate `grad` (shaped `out_shape`) into a buffer of `in_shape`,
/// summing over axes the input was broadcast along.
pub(crate) fn reduce_broadcast_grad<T: Real>(
    grad: &[T],
    out_shape: &[usize],
    in_shape: &[usize],
    into: &mut [T],
) {
    if out_shape == in_shape {
        for (a, g) in into.iter_mut().zip(grad) {
            *a += *g;
        }
        return;
    }
    let strides = broadcast_strides(in_shape, out_shape.len());
    for (flat, g) in grad.iter().enumerate() {
        into[project_index(flat, out_shape, &strides)] += *g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes_align_trailing() {
        assert_eq!(
            broadcast_shape("t", &[3, 1, 4], &[2, 4]).unwrap(),
            vec![3, 2, 4]
        );
        assert_eq!(broadcast_shape("t", &[5], &[2, 5]).unwrap(), vec![2, 5]);
        assert!(broadcast_shape("t", &[3], &[4]).is_err());
    }

    #[test]
    fn reduce_grad_sums_broadcast_axes() {
        // out [2,3] reduced to in [1,3]: column sums
        let grad = [1.0f64, 2.0, 3.0, 10.0, 20.0, 30.0];
        let mut into = vec![0.0f64; 3];
        reduce_broadcast_grad(&grad, &[2, 3], &[1, 3], &mut into);
        assert_eq!(into, vec![11.0, 22.0, 33.0]);
    }
}
