//! Dense tensors, the recorded compute graph, and gradient verification.
//!
//! Maps use the `N×C×H×W` layout throughout. Values are stored as `f64`;
//! the on-disk format narrows them to `f32`.

pub mod gradcheck;
mod graph;
pub mod kernels;

pub use graph::{Graph, Unary, Var};

use crate::error::{Error, Result};

/// Dense row-major array of real values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel = numel_of(shape)?;
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor with {} elements",
                self.data.len()
            )));
        }
        Ok(self.data[0])
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!(
                "expected an N×C×H×W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cs, hs, ws) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape)? != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Copy of image `n` of a batched tensor, with a leading extent of 1.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        if self.shape.is_empty() || n >= self.shape[0] {
            return Err(Error::shape(format!(
                "batch index {n} out of range for shape {:?}",
                self.shape
            )));
        }
        let per = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor {
            shape,
            data: self.data[n * per..(n + 1) * per].to_vec(),
        })
    }

    /// Concatenate along the leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let inner = &first.shape;
        let mut data = Vec::with_capacity(inner.iter().product::<usize>() * items.len());
        for t in items {
            if &t.shape != inner {
                return Err(Error::shape(format!(
                    "stack: shape {:?} differs from {:?}",
                    t.shape, inner
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(inner);
        Ok(Tensor { shape, data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("extent product of {shape:?} overflows")))
}

/// Decompose `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn scalar_has_one_element() {
        let s = Tensor::scalar(4.0);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item().unwrap(), 4.0);
    }

    #[test]
    fn stack_and_batch_item_invert() {
        let a = Tensor::from_fn(&[2, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 2], |i| 10.0 + i as f64);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.batch_item(1).unwrap().data(), b.data());
    }
}
