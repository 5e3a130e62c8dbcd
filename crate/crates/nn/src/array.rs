use crate::error::shape_err;
use crate::{NnError, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Option<Shape> {
        match *dims {
            [n] => Some(Shape::Vector(n)),
            [r, c] => Some(Shape::Matrix(r, c)),
            _ => None,
        }
    }
}

/// Row-major dense array of rank one or two.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> DenseArray<T> {
    pub fn zeros(shape: Shape) -> Self {
        DenseArray {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(shape_err(
                "from_vec",
                format!("{:?} needs {} elements, got {}", shape, shape.numel(), data.len()),
            ));
        }
        Ok(DenseArray { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape::Matrix(rows, cols), data)
    }

    pub fn vector(data: Vec<T>) -> Self {
        DenseArray {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn scalar(x: T) -> Self {
        Self::vector(vec![x])
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape {
            Shape::Vector(_) => 1,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape {
            Shape::Vector(n) => n,
            Shape::Matrix(_, c) => c,
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn scalar_value(&self) -> T {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(NnError::NonFinite(op))
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseArray {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DenseArray<T>) {
        debug_assert_eq!(self.len(), other.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn cast<U: Real>(&self) -> DenseArray<U> {
        DenseArray {
            shape: self.shape,
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    /// Plain matrix product `self (m x k) * rhs (k x n)`.
    pub fn matmul(&self, rhs: &DenseArray<T>) -> Result<DenseArray<T>> {
        let (m, k) = match self.shape {
            Shape::Matrix(m, k) => (m, k),
            s => return Err(shape_err("matmul", format!("lhs must be a matrix, got {s:?}"))),
        };
        let (k2, n) = match rhs.shape {
            Shape::Matrix(k2, n) => (k2, n),
            s => return Err(shape_err("matmul", format!("rhs must be a matrix, got {s:?}"))),
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = DenseArray::zeros(Shape::Matrix(m, n));
        gemm_into(false, self, false, rhs, T::one(), T::zero(), &mut out);
        Ok(out)
    }
}

/// `out <- alpha * op(a) op(b) + beta * out`, where `op` optionally transposes.
/// Shapes are assumed already validated.
pub(crate) fn gemm_into<T: Real>(
    trans_a: bool,
    a: &DenseArray<T>,
    trans_b: bool,
    b: &DenseArray<T>,
    alpha: T,
    beta: T,
    out: &mut DenseArray<T>,
) {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in out.data.iter_mut() {
            *x = beta * *x;
        }
        return;
    }
    // SAFETY: dimensions and strides derive from the arrays' own shapes and
    // `out` is a distinct allocation.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = DenseArray::<f64>::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = DenseArray::<f64>::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn transposed_gemm() {
        let a = DenseArray::<f64>::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut out = DenseArray::zeros(Shape::Matrix(3, 3));
        gemm_into(true, &a, false, &a, 1.0, 0.0, &mut out);
        assert_eq!(out.data(), &[17., 22., 27., 22., 29., 36., 27., 36., 45.]);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(DenseArray::<f32>::matrix(2, 2, vec![0.0; 3]).is_err());
        let a = DenseArray::<f64>::zeros(Shape::Matrix(2, 3));
        assert!(a.matmul(&a).is_err());
    }
}
