//! Dense complex matrices stored as separate real and imaginary parts.
//!
//! Products are routed through real `gemm` calls, which are considerably
//! faster than generic complex matrix products for the small dense
//! operators used throughout the crate. Real-valued operands (position
//! functions, ladder operators, diagonal Hamiltonians) skip the imaginary
//! half entirely.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            re: DMatrix::zeros(n, n),
            im: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            re: DMatrix::identity(n, n),
            im: DMatrix::zeros(n, n),
        }
    }

    pub fn from_real(re: DMatrix<f64>) -> Self {
        let (r, c) = re.shape();
        assert_eq!(r, c, "CMat must be square");
        Self {
            im: DMatrix::zeros(r, c),
            re,
        }
    }

    pub fn from_parts(re: DMatrix<f64>, im: DMatrix<f64>) -> Self {
        assert_eq!(re.shape(), im.shape());
        assert_eq!(re.nrows(), re.ncols(), "CMat must be square");
        Self { re, im }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Complex64>(n: usize, mut f: F) -> Self {
        let mut m = Self::zeros(n);
        for j in 0..n {
            for i in 0..n {
                let z = f(i, j);
                m.re[(i, j)] = z.re;
                m.im[(i, j)] = z.im;
            }
        }
        m
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n);
        for (i, v) in d.iter().enumerate() {
            m.re[(i, i)] = *v;
        }
        m
    }

    /// Projector |ψ⟩⟨ψ|.
    pub fn outer(psi: &[Complex64]) -> Self {
        let n = psi.len();
        Self::from_fn(n, |i, j| psi[i] * psi[j].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[(i, j)], self.im[(i, j)])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.re[(i, j)] = z.re;
        self.im[(i, j)] = z.im;
    }

    pub fn is_real(&self) -> bool {
        self.im.iter().all(|x| *x == 0.0)
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        for j in 0..n {
            for i in 0..n {
                if i != j && (self.re[(i, j)] != 0.0 || self.im[(i, j)] != 0.0) {
                    return false;
                }
            }
        }
        true
    }

    pub fn diagonal_re(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.re[(i, i)]).collect()
    }

    pub fn trace(&self) -> Complex64 {
        Complex64::new(self.re.trace(), self.im.trace())
    }

    pub fn adjoint(&self) -> Self {
        Self {
            re: self.re.transpose(),
            im: -self.im.transpose(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            re: &self.re * s,
            im: &self.im * s,
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.re *= s;
        self.im *= s;
    }

    /// Multiply by a complex scalar.
    pub fn cscale(&self, z: Complex64) -> Self {
        Self {
            re: &self.re * z.re - &self.im * z.im,
            im: &self.re * z.im + &self.im * z.re,
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &CMat) {
        axpy_mat(&mut self.re, s, &other.re);
        axpy_mat(&mut self.im, s, &other.im);
    }

    /// `self += z * other` for complex `z`.
    pub fn caxpy(&mut self, z: Complex64, other: &CMat) {
        axpy_mat(&mut self.re, z.re, &other.re);
        axpy_mat(&mut self.re, -z.im, &other.im);
        axpy_mat(&mut self.im, z.re, &other.im);
        axpy_mat(&mut self.im, z.im, &other.re);
    }

    pub fn add(&self, other: &CMat) -> CMat {
        CMat {
            re: &self.re + &other.re,
            im: &self.im + &other.im,
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        CMat {
            re: &self.re - &other.re,
            im: &self.im - &other.im,
        }
    }

    /// Matrix product; real operands skip the imaginary products.
    pub fn mul(&self, other: &CMat) -> CMat {
        let a_real = self.is_real();
        let b_real = other.is_real();
        match (a_real, b_real) {
            (true, true) => CMat::from_real(&self.re * &other.re),
            (true, false) => self.re_mul_left(other, &self.re),
            (false, true) => self.mul_real(&other.re),
            (false, false) => {
                let mut re = &self.re * &other.re;
                re.gemm(-1.0, &self.im, &other.im, 1.0);
                let mut im = &self.re * &other.im;
                im.gemm(1.0, &self.im, &other.re, 1.0);
                CMat { re, im }
            }
        }
    }

    fn re_mul_left(&self, other: &CMat, a: &DMatrix<f64>) -> CMat {
        CMat {
            re: a * &other.re,
            im: a * &other.im,
        }
    }

    /// `self * b` for real `b`.
    pub fn mul_real(&self, b: &DMatrix<f64>) -> CMat {
        CMat {
            re: &self.re * b,
            im: &self.im * b,
        }
    }

    /// `a * self` for real `a`.
    pub fn real_mul(a: &DMatrix<f64>, m: &CMat) -> CMat {
        CMat {
            re: a * &m.re,
            im: a * &m.im,
        }
    }

    /// `A ⊗ B` with row index `i_a * dim(B) + i_b`.
    pub fn kron(&self, other: &CMat) -> CMat {
        CMat {
            re: self.re.kronecker(&other.re) - self.im.kronecker(&other.im),
            im: self.re.kronecker(&other.im) + self.im.kronecker(&other.re),
        }
    }

    /// `(M + M†)/2`
    pub fn hermitize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in 0..=j {
                let re = 0.5 * (self.re[(i, j)] + self.re[(j, i)]);
                let im = 0.5 * (self.im[(i, j)] - self.im[(j, i)]);
                self.re[(i, j)] = re;
                self.re[(j, i)] = re;
                self.im[(i, j)] = im;
                self.im[(j, i)] = -im;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.re
            .iter()
            .zip(self.im.iter())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// max |M_ij − conj(M_ji)|
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                let dr = self.re[(i, j)] - self.re[(j, i)];
                let di = self.im[(i, j)] + self.im[(j, i)];
                worst = worst.max(dr.hypot(di));
            }
        }
        worst
    }

    /// Tr(A B) without forming the product.
    pub fn trace_product(&self, b: &CMat) -> Complex64 {
        let n = self.dim();
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..n {
            for k in 0..n {
                let (ar, ai) = (self.re[(i, k)], self.im[(i, k)]);
                let (br, bi) = (b.re[(k, i)], b.im[(k, i)]);
                re += ar * br - ai * bi;
                im += ar * bi + ai * br;
            }
        }
        Complex64::new(re, im)
    }

    /// Eigenvalues of a Hermitian matrix, ascending.
    ///
    /// Uses the real symmetric embedding `[[A, −B], [B, A]]`, whose spectrum
    /// is that of `A + iB` with every eigenvalue doubled.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let n = self.dim();
        let mut big = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for j in 0..n {
            for i in 0..n {
                let a = 0.5 * (self.re[(i, j)] + self.re[(j, i)]);
                let b = 0.5 * (self.im[(i, j)] - self.im[(j, i)]);
                big[(i, j)] = a;
                big[(i + n, j + n)] = a;
                big[(i + n, j)] = b;
                big[(i, j + n)] = -b;
            }
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(big).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev.into_iter().step_by(2).collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.hermitian_eigenvalues()[0]
    }
}

/// `y += a * x`
#[inline]
pub fn axpy_mat(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    if a == 0.0 {
        return;
    }
    y.zip_apply(x, |yv, xv| *yv += a * xv);
}
