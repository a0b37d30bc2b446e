//! Dense `f64` tensors and a bounds-checked strided GEMM.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }
}

/// A strided 2-D view into a slice.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` matrix.
    pub fn mat(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs, ..self }
    }

    /// Column block `[c0, c0 + n)`.
    pub fn cols(self, c0: usize, n: usize) -> Self {
        assert!(c0 + n <= self.cols);
        Self { offset: self.offset + c0 * self.cs, cols: n, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

/// Mutable counterpart of [`View`].
pub struct ViewMut<'a> {
    pub data: &'a mut [f64],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn mat(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        Self { data, offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    pub fn cols(self, c0: usize, n: usize) -> Self {
        assert!(c0 + n <= self.cols);
        Self { offset: self.offset + c0 * self.cs, cols: n, ..self }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

/// `c = alpha · a · b + beta · c`.
pub fn gemm(alpha: f64, a: View, b: View, beta: f64, c: ViewMut) {
    assert_eq!(a.cols, b.rows, "inner dimension mismatch");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape mismatch");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: all three views were bounds-checked above; `c` is uniquely
    // borrowed and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// `x (n × in) · w (in × out) + bias`, row-major.
pub fn linear(x: &[f64], n: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (i, o) = (w.shape[0], w.shape[1]);
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(&b.data);
    }
    gemm(1.0, View::mat(x, n, i), View::mat(&w.data, i, o), 1.0, ViewMut::mat(&mut out, n, o));
    out
}

/// Accumulates gradients of [`linear`]: `dw += xᵀ dy`, `db += Σ dy`, returns `dx = dy wᵀ`.
pub fn linear_backward(
    x: &[f64],
    n: usize,
    w: &Tensor,
    dy: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
    want_dx: bool,
) -> Vec<f64> {
    let (i, o) = (w.shape[0], w.shape[1]);
    gemm(1.0, View::mat(x, n, i).t(), View::mat(dy, n, o), 1.0, ViewMut::mat(&mut dw.data, i, o));
    for row in dy.chunks_exact(o) {
        for (g, d) in db.data.iter_mut().zip(row) {
            *g += d;
        }
    }
    if !want_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; n * i];
    gemm(1.0, View::mat(dy, n, o), View::mat(&w.data, i, o).t(), 0.0, ViewMut::mat(&mut dx, n, i));
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5 - 1.0).collect(); // 3×4
        let mut c = vec![0.0; 8];
        gemm(1.0, View::mat(&a, 2, 3), View::mat(&b, 3, 4), 0.0, ViewMut::mat(&mut c, 2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let e: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], e);
            }
        }
        // aᵀ a via a transposed view
        let mut g = vec![0.0; 9];
        gemm(1.0, View::mat(&a, 2, 3).t(), View::mat(&a, 2, 3), 0.0, ViewMut::mat(&mut g, 3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = (0..2).map(|p| a[p * 3 + i] * a[p * 3 + j]).sum();
                assert_eq!(g[i * 3 + j], e);
            }
        }
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn view_bounds_are_checked() {
        let a = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        gemm(1.0, View::mat(&a, 2, 3), View::mat(&a, 3, 2), 0.0, ViewMut::mat(&mut c, 2, 2));
    }
}
