//! Minimal dense row-major matrix.
//!
//! All products are plain sequential loops, so a row's result never depends
//! on which other rows share the matrix (batch composition cannot change a
//! prediction bit-for-bit).

use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Element-wise product in place.
    pub fn hadamard_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a *= b;
        }
    }

    /// `self · xᵀ` for each row of `x`: returns `x.rows × self.rows`.
    /// `self` is `out × in`, each row of `x` has length `in`.
    pub fn apply_rows(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.cols, self.cols, "apply_rows: inner dimension");
        let mut out = Matrix::zeros(x.rows, self.rows);
        for b in 0..x.rows {
            let xb = x.row(b);
            let ob = out.row_mut(b);
            for (o, w) in ob.iter_mut().zip(self.data.chunks_exact(self.cols)) {
                *o = dot(w, xb);
            }
        }
        out
    }

    /// `g · self` for each row of `g`: returns `g.rows × self.cols`.
    pub fn back_rows(&self, g: &Matrix) -> Matrix {
        assert_eq!(g.cols, self.rows, "back_rows: inner dimension");
        let mut out = Matrix::zeros(g.rows, self.cols);
        for b in 0..g.rows {
            let gb = g.row(b);
            let ob = out.row_mut(b);
            for (gi, w) in gb.iter().zip(self.data.chunks_exact(self.cols)) {
                axpy(*gi, w, ob);
            }
        }
        out
    }

    /// Accumulates `Σ_b g_bᵀ x_b` (shape `g.cols × x.cols`) into `self`.
    pub fn add_outer_rows(&mut self, g: &Matrix, x: &Matrix) {
        assert_eq!(g.rows, x.rows);
        assert_eq!((self.rows, self.cols), (g.cols, x.cols));
        for b in 0..g.rows {
            let xb = x.row(b);
            for (gi, row) in g.row(b).iter().zip(self.data.chunks_exact_mut(x.cols)) {
                axpy(*gi, xb, row);
            }
        }
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rows of a tall matrix materialized only where touched, kept in
/// first-touch order so iteration is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    width: usize,
    slots: HashMap<usize, usize>,
    ids: Vec<usize>,
    data: Vec<f64>,
}

impl SparseRows {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            slots: HashMap::new(),
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Zero-initialized on first access.
    pub fn row_mut(&mut self, id: usize) -> &mut [f64] {
        let slot = match self.slots.get(&id) {
            Some(&s) => s,
            None => {
                let s = self.ids.len();
                self.slots.insert(id, s);
                self.ids.push(id);
                self.data.resize(self.data.len() + self.width, 0.0);
                s
            }
        };
        &mut self.data[slot * self.width..(slot + 1) * self.width]
    }

    pub fn get(&self, id: usize) -> Option<&[f64]> {
        self.slots
            .get(&id)
            .map(|&s| &self.data[s * self.width..(s + 1) * self.width])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.ids
            .iter()
            .copied()
            .zip(self.data.chunks_exact(self.width.max(1)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut [f64])> + '_ {
        self.ids
            .iter()
            .copied()
            .zip(self.data.chunks_exact_mut(self.width.max(1)))
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}
