//! Dense row-major f64 arrays: the storage type for maps, weights and samples.
//!
//! All heavy math runs in 64-bit; on-disk formats narrow to f32 at the
//! boundary. Rank-4 tensors are indexed (batch, channel, row, col).

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} implies {} elements, data has {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// Kernel initialization: uniform in [-a, a] with a = 1/sqrt(fan_in).
    pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
        Tensor { shape: shape.to_vec(), data }
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

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Flat offset for rank-4 (b, c, y, x) indexing.
    pub fn at4(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        self.data[((b * cs + c) * h + y) * w + x]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Max |a - b| over two equally-shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn at4_is_row_major() {
        let t = Tensor::new(vec![1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at4(0, 1, 1, 0), 6.0);
        assert_eq!(t.at4(0, 0, 1, 1), 3.0);
    }

    #[test]
    fn fan_in_init_is_bounded() {
        let mut rng = crate::rng::stream(3, "t");
        let t = Tensor::uniform_fan_in(&[4, 4, 3, 3], 4 * 9, &mut rng);
        let a = 1.0 / (36.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < a));
    }
}
