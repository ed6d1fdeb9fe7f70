//! Dense row-major `f64` arrays.

use std::fmt;

use crate::autodiff::GraphError;

/// A dense, row-major array of `f64` values.
///
/// Every dimension is positive and `data.len()` equals the product of
/// `shape`. Scalars use shape `[1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GraphError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(GraphError::Shape(format!("invalid shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(GraphError::Shape(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GraphError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows and columns of a rank-2 tensor; rank-1 tensors are a single row.
    pub fn dims2(&self) -> Result<(usize, usize), GraphError> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            s => Err(GraphError::Shape(format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap();
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Fails on the first NaN or infinite entry.
    pub fn validate(&self) -> Result<(), GraphError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(GraphError::NonFinite(format!(
                "entry {i} of tensor {:?} is {}",
                self.shape, self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// Numerically stable softmax of `v` along `axis`.
///
/// Each slice along `axis` is shifted by its maximum before exponentiation.
pub fn softmax(v: &Tensor, axis: usize) -> Result<Tensor, GraphError> {
    if axis >= v.rank() {
        return Err(GraphError::Shape(format!(
            "softmax axis {axis} out of range for shape {:?}",
            v.shape()
        )));
    }
    v.validate()?;
    let mut out = v.clone();
    for_each_lane(v.shape(), axis, |idx| {
        softmax_lane(&mut out.data, idx);
    });
    Ok(out)
}

/// In-place softmax over the positions in `idx`.
fn softmax_lane(data: &mut [f64], idx: impl Iterator<Item = usize> + Clone) {
    let max = idx
        .clone()
        .map(|i| data[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for i in idx.clone() {
        let e = (data[i] - max).exp();
        data[i] = e;
        total += e;
    }
    for i in idx {
        data[i] /= total;
    }
}

/// Calls `f` once per lane along `axis`, passing the flat indices of the lane.
pub(crate) fn for_each_lane(
    shape: &[usize],
    axis: usize,
    mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>),
) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let start = o * len * inner + i;
            f((start..start + len * inner).step_by(inner));
        }
    }
}
