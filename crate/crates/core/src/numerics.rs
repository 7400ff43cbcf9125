//! Dense linear-algebra kernel shared by the other modules: row-major
//! matrices, Cholesky factorization with triangular solves, power iteration,
//! pivoted LU, cyclic Jacobi eigenvalues, and a central-difference gradient.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
}

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
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
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, f(r, c));
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Aᵀ x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            let row = self.row(r);
            for c in 0..self.cols {
                out[c] += row[c] * xr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let row_k = other.row(k);
                let out_row = &mut out.data[r * out.cols..(r + 1) * out.cols];
                for c in 0..row_k.len() {
                    out_row[c] += a * row_k[c];
                }
            }
        }
        out
    }

    /// `Aᵀ B`; pass `self` twice for a Gram matrix.
    pub fn tr_matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "tr_matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let left = self.row(k);
            let right = other.row(k);
            for r in 0..self.cols {
                let a = left[r];
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[r * out.cols..(r + 1) * out.cols];
                for c in 0..right.len() {
                    out_row[c] += a * right[c];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, factor: f64) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.data.iter_mut() {
            *a *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `max |A - Aᵀ|` for square matrices.
    pub fn symmetry_error(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Cached Cholesky factorization `A = L Lᵀ` of a symmetric positive-definite
/// matrix. Keeps a copy of `A` so residuals can be reported.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    lower: DenseMatrix,
    matrix: DenseMatrix,
}

pub fn spd_factorize(a: &DenseMatrix) -> Result<SpdFactorization, NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::NotSpd(format!(
            "matrix is {}x{}, not square",
            a.rows(),
            a.cols()
        )));
    }
    let scale = a.max_abs().max(1.0);
    let sym = a.symmetry_error();
    if sym > 1e-10 * scale {
        return Err(NumericsError::NotSpd(format!(
            "symmetry defect {sym:.3e} exceeds tolerance"
        )));
    }
    let mut lower = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            let v = lower.get(j, k);
            diag -= v * v;
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(NumericsError::NotSpd(format!(
                "nonpositive pivot {diag:.3e} at column {j}"
            )));
        }
        let pivot = diag.sqrt();
        lower.set(j, j, pivot);
        for i in (j + 1)..n {
            let mut v = a.get(i, j);
            for k in 0..j {
                v -= lower.get(i, k) * lower.get(j, k);
            }
            lower.set(i, j, v / pivot);
        }
    }
    Ok(SpdFactorization {
        lower,
        matrix: a.clone(),
    })
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Solve `A x = b` by forward/backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "solve dimension mismatch");
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.lower.get(i, k) * y[k];
            }
            y[i] /= self.lower.get(i, i);
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.lower.get(k, i) * y[k];
            }
            y[i] /= self.lower.get(i, i);
        }
        y
    }

    /// `‖A x - b‖₂` for a candidate solution.
    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.matrix.matvec(x);
        let diff: Vec<f64> = ax.iter().zip(b).map(|(a, v)| a - v).collect();
        norm2(&diff)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Largest-eigenvalue estimate for a symmetric PSD matrix via power
/// iteration (1000 steps, deterministic pseudo-random start). The returned
/// Rayleigh quotient never exceeds the true value.
pub fn operator_norm_estimate(h: &DenseMatrix) -> f64 {
    let n = h.rows();
    assert_eq!(h.cols(), n);
    if n == 0 {
        return 0.0;
    }
    let mut seed = 0x5eed_1234_abcd_u64;
    let mut x: Vec<f64> = (0..n)
        .map(|_| splitmix64(&mut seed) as f64 / u64::MAX as f64 - 0.5)
        .collect();
    let nx = norm2(&x);
    if nx == 0.0 {
        return 0.0;
    }
    x.iter_mut().for_each(|v| *v /= nx);
    for _ in 0..1000 {
        let y = h.matvec(&x);
        let ny = norm2(&y);
        if ny < 1e-300 {
            return 0.0;
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    let hx = h.matvec(&x);
    dot(&x, &hx).max(0.0)
}

/// Eigenvalues of a symmetric matrix (ascending) by cyclic Jacobi sweeps.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut m = a.clone();
    let scale = m.max_abs().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m.get(p, q).abs());
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                m.set(p, p, app - t * apq);
                m.set(q, q, aqq + t * apq);
                m.set(p, q, 0.0);
                m.set(q, p, 0.0);
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = m.get(i, p);
                    let aiq = m.get(i, q);
                    let new_ip = aip - s * (aiq + tau * aip);
                    let new_iq = aiq + s * (aip - tau * aiq);
                    m.set(i, p, new_ip);
                    m.set(p, i, new_ip);
                    m.set(i, q, new_iq);
                    m.set(q, i, new_iq);
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eigs.sort_by(|a, b| a.total_cmp(b));
    eigs
}

/// Solve a square system by LU with partial pivoting; `None` if (numerically)
/// singular.
pub fn lu_solve(a: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m.max_abs().max(1.0);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot = m.get(col, col).abs();
        for r in (col + 1)..n {
            let v = m.get(r, col).abs();
            if v > pivot {
                pivot = v;
                pivot_row = r;
            }
        }
        if pivot <= 1e-13 * scale {
            return None;
        }
        if pivot_row != col {
            for c in 0..n {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(pivot_row, c));
                m.set(pivot_row, c, tmp);
            }
            rhs.swap(col, pivot_row);
        }
        let inv = 1.0 / m.get(col, col);
        for r in (col + 1)..n {
            let factor = m.get(r, col) * inv;
            if factor == 0.0 {
                continue;
            }
            m.set(r, col, 0.0);
            for c in (col + 1)..n {
                let v = m.get(r, c) - factor * m.get(col, c);
                m.set(r, c, v);
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            rhs[i] -= m.get(i, k) * rhs[k];
        }
        rhs[i] /= m.get(i, i);
    }
    Some(rhs)
}

/// Central-difference gradient, exact for quadratics up to roundoff.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, seed: u64) -> DenseMatrix {
        let mut state = seed;
        DenseMatrix::from_fn(n, n, |_, _| {
            splitmix64(&mut state) as f64 / u64::MAX as f64 - 0.5
        })
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let x = random_matrix(n, seed);
        let mut a = x.tr_matmul(&x);
        for i in 0..n {
            a.set(i, i, a.get(i, i) + 1.0);
        }
        a
    }

    #[test]
    fn factorize_identity() {
        let fact = spd_factorize(&DenseMatrix::identity(5)).unwrap();
        assert_eq!(fact.lower(), &DenseMatrix::identity(5));
    }

    #[test]
    fn factorize_scaled_identity() {
        let mut a = DenseMatrix::identity(4);
        a.scale(0.01);
        let fact = spd_factorize(&a).unwrap();
        for i in 0..4 {
            assert!((fact.lower().get(i, i) - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn factorize_reconstructs_random_spd() {
        for seed in 0..5 {
            let a = random_spd(12, 1000 + seed);
            let fact = spd_factorize(&a).unwrap();
            let rebuilt = fact.lower().matmul(&fact.lower().transpose());
            let mut worst = 0.0f64;
            for r in 0..12 {
                for c in 0..12 {
                    worst = worst.max((rebuilt.get(r, c) - a.get(r, c)).abs());
                }
            }
            assert!(worst <= 1e-10 * a.max_abs(), "reconstruction error {worst}");
        }
    }

    #[test]
    fn factorize_rejects_indefinite() {
        let mut a = DenseMatrix::identity(3);
        a.set(2, 2, -1.0);
        assert!(matches!(spd_factorize(&a), Err(NumericsError::NotSpd(_))));
    }

    #[test]
    fn factorize_rejects_asymmetric() {
        let mut a = DenseMatrix::identity(3);
        a.set(0, 1, 0.5);
        assert!(spd_factorize(&a).is_err());
    }

    #[test]
    fn solve_zero_rhs_and_identity() {
        let fact = spd_factorize(&DenseMatrix::identity(6)).unwrap();
        assert_eq!(fact.solve(&[0.0; 6]), vec![0.0; 6]);
        let b = [1.0, -2.0, 3.0, 0.5, 0.0, 4.0];
        assert_eq!(fact.solve(&b), b.to_vec());
    }

    #[test]
    fn solve_random_system_residual() {
        for seed in 0..5 {
            let a = random_spd(15, 77 + seed);
            let fact = spd_factorize(&a).unwrap();
            let mut state = 4242 + seed;
            let b: Vec<f64> = (0..15)
                .map(|_| splitmix64(&mut state) as f64 / u64::MAX as f64 - 0.5)
                .collect();
            let x = fact.solve(&b);
            let res = fact.residual_norm(&x, &b);
            assert!(res <= 1e-10 * (1.0 + norm2(&b)), "residual {res}");
        }
    }

    #[test]
    fn norm_estimate_identity_and_diagonal() {
        assert!((operator_norm_estimate(&DenseMatrix::identity(7)) - 1.0).abs() < 1e-10);
        let d = DenseMatrix::from_fn(5, 5, |r, c| if r == c { (r + 1) as f64 } else { 0.0 });
        let est = operator_norm_estimate(&d);
        assert!(est <= 5.0 + 1e-12);
        assert!(est >= 0.99 * 5.0);
    }

    #[test]
    fn norm_estimate_matches_jacobi_on_random_psd() {
        for seed in 0..8 {
            let x = random_matrix(6, 999 + seed);
            let a = x.tr_matmul(&x);
            let est = operator_norm_estimate(&a);
            let eigs = symmetric_eigenvalues(&a);
            let top = eigs[eigs.len() - 1];
            assert!(est <= top * (1.0 + 1e-10) + 1e-12);
            assert!(est >= 0.99 * top, "estimate {est} vs eigenvalue {top}");
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let d = DenseMatrix::from_fn(4, 4, |r, c| {
            if r == c {
                [4.0, -1.0, 2.5, 0.0][r]
            } else {
                0.0
            }
        });
        let eigs = symmetric_eigenvalues(&d);
        let expected = [-1.0, 0.0, 2.5, 4.0];
        for (e, x) in eigs.iter().zip(expected.iter()) {
            assert!((e - x).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_solves_and_detects_singular() {
        let a = DenseMatrix::from_fn(3, 3, |r, c| {
            [[0.0, 2.0, 1.0], [1.0, 0.0, 0.5], [3.0, 1.0, 0.0]][r][c]
        });
        let x = lu_solve(&a, &[3.0, 1.5, 4.0]).unwrap();
        let b = a.matvec(&x);
        assert!(
            (b[0] - 3.0).abs() < 1e-12 && (b[1] - 1.5).abs() < 1e-12 && (b[2] - 4.0).abs() < 1e-12
        );
        let singular = DenseMatrix::from_fn(2, 2, |r, _| if r == 0 { 1.0 } else { 2.0 });
        assert!(lu_solve(&singular, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn fd_gradient_on_quadratic_and_affine() {
        let half_sq = |x: &[f64]| 0.5 * dot(x, x);
        let mut e1 = vec![0.0; 4];
        e1[0] = 1.0;
        let g = fd_gradient(half_sq, &e1, 1e-5);
        for (gi, xi) in g.iter().zip(e1.iter()) {
            assert!((gi - xi).abs() < 1e-9);
        }
        let affine = |x: &[f64]| 3.0 * x[0] - 2.0 * x[1] + 7.0;
        let g = fd_gradient(affine, &[0.3, -0.4], 1e-5);
        assert!((g[0] - 3.0).abs() < 1e-9 && (g[1] + 2.0).abs() < 1e-9);
    }
}
