use crate::error::{invalid_arg, Result};

pub const MAX_RANK: usize = 3;

/// Dense row-major `f64` tensor of rank 1 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(invalid_arg(format!("tensor rank {} outside 1..={MAX_RANK}", dims.len())));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(invalid_arg(format!("zero-sized dimension in {dims:?}")));
        }
        let count: usize = dims.iter().product();
        if count != values.len() {
            return Err(invalid_arg(format!(
                "dims {dims:?} need {count} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), values })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let count = dims.iter().product();
        Self::new(dims, vec![0.0; count]).expect("valid dims")
    }

    pub fn vector(values: Vec<f64>) -> Self {
        let n = values.len();
        Self::new(&[n], values).expect("non-empty vector")
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], values)
    }

    pub fn scalar(value: f64) -> Self {
        Self { dims: vec![1], values: vec![value] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Rows and columns of a rank-2 tensor; a vector is one row.
    pub fn shape2(&self) -> (usize, usize) {
        match self.dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            [a, b, c] => (a * b, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.shape2();
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(&[], vec![]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn rows_are_contiguous() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(t.shape2(), (2, 3));
    }
}
