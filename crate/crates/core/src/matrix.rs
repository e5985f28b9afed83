//! Dense row-major matrices.

use serde::{Deserialize, Serialize};

use crate::error::{AbftError, Result};
use crate::numeric::Element;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AbftError::ShapeMismatch(format!("matrix dims must be positive, got {rows}x{cols}")));
        }
        if rows * cols != data.len() {
            return Err(AbftError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Matrix { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AbftError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Copy of the `rows x cols` block starting at (`r0`, `c0`).
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix<T> {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Matrix::from_fn(rows, cols, |r, c| self.get(r0 + r, c0 + c))
    }

    /// Zero-extend to at least `rows x cols`.
    pub fn zero_padded(&self, rows: usize, cols: usize) -> Matrix<T> {
        assert!(rows >= self.rows && cols >= self.cols, "padding cannot shrink a matrix");
        if rows == self.rows && cols == self.cols {
            return self.clone();
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..self.rows {
            out.data[r * cols..r * cols + self.cols].copy_from_slice(self.row(r));
        }
        out
    }
}

impl<E: Element> Matrix<E> {
    /// Widen every element to the accumulator type.
    pub fn widened(&self) -> Matrix<E::Acc> {
        self.map(E::widen)
    }

    /// Round an accumulator matrix back to storage precision.
    pub fn narrowed(acc: &Matrix<E::Acc>) -> Matrix<E> {
        acc.map(E::narrow)
    }
}

/// Reference `A * B` in accumulator precision: one inner product per output
/// element, summed in increasing k order.
pub fn gemm_acc<E: Element>(a: &Matrix<E>, b: &Matrix<E>) -> Result<Matrix<E::Acc>> {
    if a.cols() != b.rows() {
        return Err(AbftError::ShapeMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let bw = b.widened();
    let mut c = Matrix::<E::Acc>::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let arow: Vec<E::Acc> = a.row(i).iter().map(|&x| x.widen()).collect();
        for j in 0..b.cols() {
            let mut acc = E::Acc::default();
            for (kk, &av) in arow.iter().enumerate() {
                acc = E::acc_mul_add(acc, av, bw.get(kk, j))?;
            }
            c.set(i, j, acc);
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Matrix::<i64>::new(2, 2, vec![1, 2, 3]).is_err());
        assert!(Matrix::<i64>::new(0, 2, vec![]).is_err());
        assert!(Matrix::<i64>::from_rows(&[vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn small_product() {
        let a = Matrix::from_rows(&[vec![1i64, 2], vec![3, 4]]).unwrap();
        let b = Matrix::from_rows(&[vec![5i64, 6], vec![7, 8]]).unwrap();
        let c = gemm_acc(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[19, 22, 43, 50]);
        assert!(gemm_acc(&a, &Matrix::<i64>::zeros(3, 1)).is_err());
    }

    #[test]
    fn padding_and_blocks() {
        let a = Matrix::from_rows(&[vec![1i64, 2], vec![3, 4]]).unwrap();
        let p = a.zero_padded(3, 4);
        assert_eq!(p.row(0), &[1, 2, 0, 0]);
        assert_eq!(p.row(2), &[0, 0, 0, 0]);
        assert_eq!(p.block(0, 0, 2, 2), a);
        assert_eq!(p.block(1, 1, 1, 2).as_slice(), &[4, 0]);
    }
}
