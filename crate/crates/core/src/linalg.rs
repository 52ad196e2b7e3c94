//! Small dense linear algebra: row-major `f64` matrices, vectors and a
//! ridge-regularised least-squares solver.
//!
//! Problem sizes in this crate are tiny (at most a few dozen columns), so
//! everything is plain loops over contiguous slices.

use crate::error::{Error, Result};

/// Default ridge used by callers that want a conditioning guard without
/// noticeably biasing the solution.
pub const DEFAULT_RIDGE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::rejected(format!(
                "matrix data has {} entries, expected {}x{}={}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::rejected(format!(
                "matrix entry ({}, {}) is not finite",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::rejected(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
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

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::rejected(format!("vector entry {i} is not finite")));
        }
        Ok(Self(data))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn mat_vec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::rejected(format!(
            "mat_vec: matrix is {}x{}, vector has length {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    let mut out = vec![0.0; m.rows];
    gemv(m, v.as_slice(), &mut out);
    Ok(Vector(out))
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::rejected(format!(
            "mat_mul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Solves `min ‖aX − b‖²_F + ridge·‖X‖²_F` through the normal equations
/// `(aᵀa + ridge·I) X = aᵀb` and an LDLᵀ factorisation.
pub fn solve_least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::rejected(format!(
            "least squares: a has {} rows, b has {}",
            a.rows, b.rows
        )));
    }
    if a.rows < a.cols {
        return Err(Error::rejected(format!(
            "least squares: underdetermined system ({} rows < {} columns)",
            a.rows, a.cols
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::rejected(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let n = a.cols;
    let k = b.cols;

    let mut normal = Matrix::zeros(n, n);
    let mut rhs = Matrix::zeros(n, k);
    for r in 0..a.rows {
        let arow = a.row(r);
        let brow = b.row(r);
        for i in 0..n {
            let ai = arow[i];
            for j in 0..=i {
                normal.data[i * n + j] += ai * arow[j];
            }
            for (c, &bv) in brow.iter().enumerate() {
                rhs.data[i * k + c] += ai * bv;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            normal.data[j * n + i] = normal.data[i * n + j];
        }
        normal.data[i * n + i] += ridge;
    }

    let (l, d) = ldl(&normal, ridge)?;

    // L z = rhs, D y = z, Lᵀ x = y, column by column.
    let mut x = rhs;
    for c in 0..k {
        for i in 0..n {
            let mut s = x.data[i * k + c];
            for j in 0..i {
                s -= l.data[i * n + j] * x.data[j * k + c];
            }
            x.data[i * k + c] = s;
        }
        for i in 0..n {
            x.data[i * k + c] /= d[i];
        }
        for i in (0..n).rev() {
            let mut s = x.data[i * k + c];
            for j in i + 1..n {
                s -= l.data[j * n + i] * x.data[j * k + c];
            }
            x.data[i * k + c] = s;
        }
    }
    Ok(x)
}

/// `m = L D Lᵀ` with unit lower-triangular `L`.
fn ldl(m: &Matrix, ridge: f64) -> Result<(Matrix, Vec<f64>)> {
    let n = m.rows;
    let max_diag = (0..n).map(|i| m.get(i, i).abs()).fold(0.0, f64::max);
    // Without a ridge, a pivot at roundoff level means a rank-deficient
    // design matrix.
    let tol = if ridge > 0.0 { 0.0 } else { 1e-12 * max_diag };
    let mut l = Matrix::identity(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = m.get(j, j);
        for p in 0..j {
            dj -= l.get(j, p) * l.get(j, p) * d[p];
        }
        if !(dj > tol) || !dj.is_finite() {
            return Err(Error::Singular(format!(
                "normal matrix is rank deficient: pivot {} of {n} vanished (pivot {dj:e}, rank < {n})",
                j + 1
            )));
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = m.get(i, j);
            for p in 0..j {
                s -= l.get(i, p) * l.get(j, p) * d[p];
            }
            l.set(i, j, s / dj);
        }
    }
    Ok((l, d))
}

/// `out = m · x` without shape checks (callers guarantee them).
#[inline]
pub(crate) fn gemv(m: &Matrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *o = dot(row, x);
    }
}

/// `out += m · x`.
#[inline]
pub(crate) fn gemv_acc(m: &Matrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, x.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        *o += dot(row, x);
    }
}

/// `out += mᵀ · y`.
#[inline]
pub(crate) fn gemv_t_acc(m: &Matrix, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, y.len());
    debug_assert_eq!(m.cols, out.len());
    for (&yi, row) in y.iter().zip(m.data.chunks_exact(m.cols.max(1))) {
        if yi != 0.0 {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
    }
}

/// `g += y ⊗ x` for a row-major gradient buffer shaped `y.len() × x.len()`.
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    debug_assert_eq!(g.len(), y.len() * x.len());
    for (&yi, grow) in y.iter().zip(g.chunks_exact_mut(x.len().max(1))) {
        if yi != 0.0 {
            for (gv, &xv) in grow.iter_mut().zip(x) {
                *gv += yi * xv;
            }
        }
    }
}

/// Four independent partial sums, combined pairwise.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mat_vec_examples() {
        let v = Vector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mat_vec(&Matrix::identity(3), &v).unwrap(), v);

        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let r = mat_vec(&m, &Vector::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(r.as_slice(), &[3.0, 7.0]);

        let r = mat_vec(&Matrix::zeros(2, 2), &Vector::new(vec![5.0, 7.0]).unwrap()).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn mat_vec_rejects_mismatch() {
        let err = mat_vec(&Matrix::zeros(2, 3), &Vector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::RejectedInput(_)));
    }

    #[test]
    fn mat_mul_examples() {
        let b = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(mat_mul(&Matrix::identity(2), &b).unwrap(), b);

        let a = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let c = Matrix::from_rows(&[[2.0], [3.0]]).unwrap();
        assert_eq!(mat_mul(&a, &c).unwrap().as_slice(), &[5.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = random_matrix(&mut rng, 2, 5);
        assert_eq!(mat_mul(&Matrix::zeros(2, 2), &k).unwrap(), Matrix::zeros(2, 5));

        assert!(mat_mul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn constructor_rejects_bad_data() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn least_squares_examples() {
        let b = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let x = solve_least_squares(&Matrix::identity(3), &b, 0.0).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);

        // (2) x = 4 by hand.
        let a = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let b = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let x = solve_least_squares(&a, &b, 0.0).unwrap();
        assert_eq!(x.as_slice(), &[2.0]);

        // Exact line y = 2t + 1.
        let ts: Vec<f64> = (0..20).map(|i| -3.0 + 0.37 * i as f64).collect();
        let a = Matrix::from_rows(&ts.iter().map(|&t| [1.0, t]).collect::<Vec<_>>()).unwrap();
        let b = Matrix::new(ts.len(), 1, ts.iter().map(|t| 2.0 * t + 1.0).collect()).unwrap();
        let x = solve_least_squares(&a, &b, 0.0).unwrap();
        assert!((x.get(0, 0) - 1.0).abs() < 1e-9);
        assert!((x.get(1, 0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn least_squares_reports_rank_deficiency() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let b = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        match solve_least_squares(&a, &b, 0.0) {
            Err(Error::Singular(msg)) => assert!(msg.contains("rank deficient"), "{msg}"),
            other => panic!("expected singular error, got {other:?}"),
        }
        // A ridge makes the same system solvable.
        assert!(solve_least_squares(&a, &b, 1e-6).is_ok());
    }

    #[test]
    fn least_squares_rejects_bad_shapes() {
        assert!(solve_least_squares(&Matrix::zeros(3, 2), &Matrix::zeros(2, 1), 0.0).is_err());
        assert!(solve_least_squares(&Matrix::identity(3), &Matrix::zeros(3, 1), -1.0).is_err());
        assert!(solve_least_squares(&Matrix::zeros(1, 2), &Matrix::zeros(1, 1), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn least_squares_residual_is_orthogonal(seed in any::<u64>(), ridge in prop_oneof![Just(0.0), 0.0..1.0f64]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 50, 6);
            let b = random_matrix(&mut rng, 50, 2);
            let x = solve_least_squares(&a, &b, ridge).unwrap();
            let at = a.transpose();
            let resid = mat_mul(&a, &x).unwrap();
            let diff = Matrix::new(50, 2, resid.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p - q).collect()).unwrap();
            let g = mat_mul(&at, &diff).unwrap();
            let atb = mat_mul(&at, &b).unwrap();
            let scale = 1.0 + atb.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (gv, xv) in g.as_slice().iter().zip(x.as_slice()) {
                prop_assert!((gv + ridge * xv).abs() <= 1e-8 * scale);
            }
        }

        #[test]
        fn mat_mul_is_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            let c = random_matrix(&mut rng, 4, 4);
            let l = mat_mul(&mat_mul(&a, &b).unwrap(), &c).unwrap();
            let r = mat_mul(&a, &mat_mul(&b, &c).unwrap()).unwrap();
            for (x, y) in l.as_slice().iter().zip(r.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn operations_are_pure(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 10, 3);
            let b = random_matrix(&mut rng, 10, 1);
            let x1 = solve_least_squares(&a, &b, DEFAULT_RIDGE).unwrap();
            let x2 = solve_least_squares(&a, &b, DEFAULT_RIDGE).unwrap();
            prop_assert_eq!(x1.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            x2.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
