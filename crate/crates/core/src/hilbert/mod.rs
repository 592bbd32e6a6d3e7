//! Truncated Hilbert spaces: bases, operators, density matrices and
//! quadrature-based matrix elements of position-dependent functions.
//!
//! Units are ħ = 1 throughout. Harmonic-oscillator bases carry their length
//! scale ℓ₀ = √(ħ/mω), so the mass implied by a basis and trap frequency ω is
//! `m = 1/(ω ℓ₀²)`.

pub mod quadrature;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, QscopeError, Result};
use crate::linalg::CMat;
pub use quadrature::{hermite_functions, GaussHermite, GaussLegendre};

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    HarmonicOscillator,
    CavityFock,
    TensorProduct(Vec<TruncatedBasis>),
    /// Occupation-number configurations of a many-fermion system.
    ManyBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBasis {
    pub kind: BasisKind,
    pub dimension: usize,
    pub length_scale: f64,
}

impl TruncatedBasis {
    pub fn harmonic_oscillator(dimension: usize, length_scale: f64) -> Result<Self> {
        Self::checked(BasisKind::HarmonicOscillator, dimension, length_scale)
    }

    pub fn cavity_fock(dimension: usize) -> Result<Self> {
        Self::checked(BasisKind::CavityFock, dimension, 1.0)
    }

    pub fn many_body(dimension: usize) -> Result<Self> {
        // A single configuration is a legitimate (trivial) many-body space.
        if dimension == 0 {
            return Err(QscopeError::InvalidBasis("empty many-body basis".into()));
        }
        Ok(Self {
            kind: BasisKind::ManyBody,
            dimension,
            length_scale: 1.0,
        })
    }

    /// Ordered tensor product; index of `|i_1, i_2, …⟩` is row-major in the
    /// factors (last factor fastest).
    pub fn tensor(factors: Vec<TruncatedBasis>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(QscopeError::InvalidBasis("tensor product needs at least two factors".into()));
        }
        let dimension = factors.iter().map(|f| f.dimension).product();
        let length_scale = factors[0].length_scale;
        Ok(Self {
            kind: BasisKind::TensorProduct(factors),
            dimension,
            length_scale,
        })
    }

    fn checked(kind: BasisKind, dimension: usize, length_scale: f64) -> Result<Self> {
        if dimension < 2 {
            return Err(QscopeError::InvalidBasis(format!("dimension {dimension} < 2")));
        }
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(QscopeError::InvalidBasis(format!("length scale {length_scale} must be positive")));
        }
        Ok(Self {
            kind,
            dimension,
            length_scale,
        })
    }

    pub fn factors(&self) -> Option<&[TruncatedBasis]> {
        match &self.kind {
            BasisKind::TensorProduct(f) => Some(f),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub basis: TruncatedBasis,
    pub entries: CMat,
    pub hermitian_hint: bool,
}

impl OperatorMatrix {
    pub fn new(basis: TruncatedBasis, entries: CMat, hermitian_hint: bool) -> Result<Self> {
        if entries.dim() != basis.dimension {
            return Err(QscopeError::BasisMismatch(format!(
                "matrix dimension {} vs basis dimension {}",
                entries.dim(),
                basis.dimension
            )));
        }
        if hermitian_hint {
            let scale = entries.max_abs().max(f64::MIN_POSITIVE);
            let defect = entries.hermiticity_defect();
            if defect > 1e-12 * scale {
                return Err(QscopeError::InvalidParameter {
                    name: "hermitian_hint",
                    reason: format!("matrix is not Hermitian (defect {defect:.3e})"),
                });
            }
        }
        Ok(Self {
            basis,
            entries,
            hermitian_hint,
        })
    }

    pub fn real(basis: TruncatedBasis, m: DMatrix<f64>, hermitian_hint: bool) -> Result<Self> {
        Self::new(basis, CMat::from_real(m), hermitian_hint)
    }

    pub fn identity(basis: &TruncatedBasis) -> Self {
        Self {
            basis: basis.clone(),
            entries: CMat::identity(basis.dimension),
            hermitian_hint: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            basis: self.basis.clone(),
            entries: self.entries.adjoint(),
            hermitian_hint: self.hermitian_hint,
        }
    }

    pub fn mul(&self, other: &OperatorMatrix) -> Result<Self> {
        same_basis(&self.basis, &other.basis)?;
        Ok(Self {
            basis: self.basis.clone(),
            entries: self.entries.mul(&other.entries),
            hermitian_hint: false,
        })
    }

    /// `self ⊗ other` on the product basis.
    pub fn kron(&self, other: &OperatorMatrix) -> Result<Self> {
        let mut factors = match &self.basis.kind {
            BasisKind::TensorProduct(f) => f.clone(),
            _ => vec![self.basis.clone()],
        };
        factors.push(other.basis.clone());
        Ok(Self {
            basis: TruncatedBasis::tensor(factors)?,
            entries: self.entries.kron(&other.entries),
            hermitian_hint: self.hermitian_hint && other.hermitian_hint,
        })
    }

    /// Commutator `[A, B]`.
    pub fn commutator(&self, other: &OperatorMatrix) -> Result<Self> {
        same_basis(&self.basis, &other.basis)?;
        let ab = self.entries.mul(&other.entries);
        let ba = other.entries.mul(&self.entries);
        Ok(Self {
            basis: self.basis.clone(),
            entries: ab.sub(&ba),
            hermitian_hint: false,
        })
    }
}

pub(crate) fn same_basis(a: &TruncatedBasis, b: &TruncatedBasis) -> Result<()> {
    if a.dimension != b.dimension || a.kind != b.kind {
        return Err(QscopeError::BasisMismatch(format!(
            "{:?}({}) vs {:?}({})",
            short_kind(&a.kind),
            a.dimension,
            short_kind(&b.kind),
            b.dimension
        )));
    }
    Ok(())
}

fn short_kind(k: &BasisKind) -> &'static str {
    match k {
        BasisKind::HarmonicOscillator => "harmonic_oscillator",
        BasisKind::CavityFock => "cavity_fock",
        BasisKind::TensorProduct(_) => "tensor_product",
        BasisKind::ManyBody => "many_body",
    }
}

#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub basis: TruncatedBasis,
    pub entries: CMat,
    pub time: f64,
}

/// Health report of a density matrix against the validity tolerances.
#[derive(Debug, Clone, Copy)]
pub struct DensityDiagnostics {
    pub trace_error: f64,
    pub hermiticity: f64,
    pub min_eigenvalue: f64,
}

impl DensityDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.trace_error <= 1e-8 && self.hermiticity <= 1e-10 && self.min_eigenvalue >= -1e-8
    }
}

impl DensityMatrix {
    pub fn from_entries(basis: TruncatedBasis, entries: CMat) -> Result<Self> {
        if entries.dim() != basis.dimension {
            return Err(QscopeError::BasisMismatch(format!(
                "density dimension {} vs basis {}",
                entries.dim(),
                basis.dimension
            )));
        }
        Ok(Self {
            basis,
            entries,
            time: 0.0,
        })
    }

    pub fn pure(basis: &TruncatedBasis, psi: &[Complex64]) -> Result<Self> {
        if psi.len() != basis.dimension {
            return Err(QscopeError::BasisMismatch("state vector length".into()));
        }
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(invalid("psi", "zero vector"));
        }
        let psi: Vec<Complex64> = psi.iter().map(|c| c / norm).collect();
        Self::from_entries(basis.clone(), CMat::outer(&psi))
    }

    pub fn fock(basis: &TruncatedBasis, n: usize) -> Result<Self> {
        if n >= basis.dimension {
            return Err(invalid("n", format!("level {n} outside basis of dimension {}", basis.dimension)));
        }
        let mut p = vec![0.0; basis.dimension];
        p[n] = 1.0;
        Self::diagonal(basis, &p)
    }

    /// Truncated coherent state |α⟩, renormalized to unit trace.
    pub fn coherent(basis: &TruncatedBasis, alpha: Complex64) -> Result<Self> {
        let mut psi = Vec::with_capacity(basis.dimension);
        let mut amp = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for n in 0..basis.dimension {
            if n > 0 {
                amp = amp * alpha / (n as f64).sqrt();
            }
            psi.push(amp);
        }
        Self::pure(basis, &psi)
    }

    /// Thermal state: geometric populations with mean `n_th`, truncated and
    /// renormalized.
    pub fn thermal(basis: &TruncatedBasis, n_th: f64) -> Result<Self> {
        Self::diagonal(basis, &thermal_populations(basis.dimension, n_th)?)
    }

    pub fn maximally_mixed(basis: &TruncatedBasis) -> Result<Self> {
        let d = basis.dimension;
        Self::diagonal(basis, &vec![1.0 / d as f64; d])
    }

    pub fn diagonal(basis: &TruncatedBasis, p: &[f64]) -> Result<Self> {
        if p.len() != basis.dimension {
            return Err(QscopeError::BasisMismatch("population vector length".into()));
        }
        Self::from_entries(basis.clone(), CMat::from_diagonal(p))
    }

    /// `self ⊗ other`
    pub fn kron(&self, other: &DensityMatrix) -> Result<Self> {
        let mut factors = match &self.basis.kind {
            BasisKind::TensorProduct(f) => f.clone(),
            _ => vec![self.basis.clone()],
        };
        factors.push(other.basis.clone());
        Ok(Self {
            basis: TruncatedBasis::tensor(factors)?,
            entries: self.entries.kron(&other.entries),
            time: self.time,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn trace(&self) -> f64 {
        self.entries.re.trace()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.entries.diagonal_re()
    }

    pub fn diagnostics(&self) -> DensityDiagnostics {
        let scale = self.entries.max_abs().max(f64::MIN_POSITIVE);
        DensityDiagnostics {
            trace_error: (self.trace() - 1.0).abs(),
            hermiticity: self.entries.hermiticity_defect() / scale,
            min_eigenvalue: self.entries.min_eigenvalue(),
        }
    }

    /// Reduced density matrix of factor `keep` of a two-factor product basis.
    pub fn partial_trace(&self, keep: usize) -> Result<DensityMatrix> {
        let factors = self
            .basis
            .factors()
            .ok_or_else(|| QscopeError::BasisMismatch("partial trace needs a tensor basis".into()))?;
        if factors.len() != 2 || keep > 1 {
            return Err(QscopeError::BasisMismatch("partial trace supports two factors".into()));
        }
        let (da, db) = (factors[0].dimension, factors[1].dimension);
        let out_basis = factors[keep].clone();
        let dk = out_basis.dimension;
        let mut out = CMat::zeros(dk);
        for i in 0..dk {
            for j in 0..dk {
                let mut s = Complex64::new(0.0, 0.0);
                if keep == 0 {
                    for b in 0..db {
                        s += self.entries.get(i * db + b, j * db + b);
                    }
                } else {
                    for a in 0..da {
                        s += self.entries.get(a * db + i, a * db + j);
                    }
                }
                out.set(i, j, s);
            }
        }
        Ok(DensityMatrix {
            basis: out_basis,
            entries: out,
            time: self.time,
        })
    }
}

pub fn thermal_populations(dimension: usize, n_th: f64) -> Result<Vec<f64>> {
    if !(n_th >= 0.0 && n_th.is_finite()) {
        return Err(invalid("n_th", "must be finite and non-negative"));
    }
    let q = n_th / (1.0 + n_th);
    let mut p: Vec<f64> = (0..dimension).map(|n| q.powi(n as i32)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok(p)
}

/// Harmonic-oscillator operators in the energy eigenbasis.
#[derive(Debug, Clone)]
pub struct HoOperators {
    pub h_sys: OperatorMatrix,
    pub z_op: OperatorMatrix,
    pub p_op: OperatorMatrix,
    pub mass: f64,
}

pub fn build_ho_operators(basis: &TruncatedBasis, omega: f64) -> Result<HoOperators> {
    if basis.kind != BasisKind::HarmonicOscillator {
        return Err(QscopeError::InvalidBasis("expected a harmonic-oscillator basis".into()));
    }
    if basis.dimension < 2 {
        return Err(QscopeError::InvalidBasis("dimension < 2".into()));
    }
    if !(omega > 0.0) {
        return Err(invalid("omega", "must be positive"));
    }
    let d = basis.dimension;
    let l0 = basis.length_scale;
    let a = annihilation(d);
    let h = DMatrix::from_fn(d, d, |i, j| if i == j { omega * (i as f64 + 0.5) } else { 0.0 });
    let z = (&a + a.transpose()) * (l0 / 2f64.sqrt());
    // p = i (a† − a) / (ℓ₀√2)
    let p_im = (a.transpose() - &a) * (1.0 / (l0 * 2f64.sqrt()));
    Ok(HoOperators {
        h_sys: OperatorMatrix::real(basis.clone(), h, true)?,
        z_op: OperatorMatrix::real(basis.clone(), z, true)?,
        p_op: OperatorMatrix::new(
            basis.clone(),
            CMat::from_parts(DMatrix::zeros(d, d), p_im),
            true,
        )?,
        mass: 1.0 / (omega * l0 * l0),
    })
}

/// Ladder operator `a` with `a|n⟩ = √n |n−1⟩`.
pub fn annihilation(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if j == i + 1 { (j as f64).sqrt() } else { 0.0 })
}

/// Cached Hermite-function values at Gauss–Hermite nodes for repeated
/// evaluation of `⟨m|f(ẑ)|n⟩`.
#[derive(Debug, Clone)]
pub struct HoQuadrature {
    pub dimension: usize,
    pub order: usize,
    pub length_scale: f64,
    nodes_z: Vec<f64>,
    weights: Vec<f64>,
    psi: DMatrix<f64>,
}

impl HoQuadrature {
    pub fn new(basis: &TruncatedBasis, order: usize) -> Self {
        let gh = GaussHermite::new(order);
        let d = basis.dimension;
        let l0 = basis.length_scale;
        let mut psi = DMatrix::zeros(order, d);
        for (i, &x) in gh.nodes.iter().enumerate() {
            for (n, v) in hermite_functions(x, d).into_iter().enumerate() {
                psi[(i, n)] = v;
            }
        }
        Self {
            dimension: d,
            order,
            length_scale: l0,
            nodes_z: gh.nodes.iter().map(|x| x * l0).collect(),
            weights: gh.scaled_weights,
            psi,
        }
    }

    /// Symmetrized `⟨m|f(ẑ)|n⟩` as a real matrix.
    pub fn elements<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let mut weighted = self.psi.clone();
        for i in 0..self.order {
            let w = self.weights[i] * f(self.nodes_z[i]);
            weighted.row_mut(i).scale_mut(w);
        }
        let m = self.psi.transpose() * weighted;
        (&m + m.transpose()) * 0.5
    }
}

/// Default Gauss–Hermite order for a basis.
pub fn default_quadrature_order(basis: &TruncatedBasis) -> usize {
    4 * basis.dimension
}

const QUADRATURE_TOL: f64 = 1e-9;

/// `⟨m|f(ẑ)|n⟩` in a harmonic-oscillator basis by Gauss–Hermite quadrature,
/// cross-checked against a rule of twice the order.
pub fn matrix_elements_of_function<F: Fn(f64) -> f64>(
    f: F,
    basis: &TruncatedBasis,
    quadrature_order: usize,
) -> Result<OperatorMatrix> {
    if basis.kind != BasisKind::HarmonicOscillator {
        return Err(QscopeError::InvalidBasis("expected a harmonic-oscillator basis".into()));
    }
    if quadrature_order < 2 * basis.dimension {
        return Err(QscopeError::QuadratureAccuracy {
            order: quadrature_order,
            doubled: 2 * basis.dimension,
            diff: f64::NAN,
            tol: QUADRATURE_TOL,
        });
    }
    let m1 = HoQuadrature::new(basis, quadrature_order).elements(&f);
    let m2 = HoQuadrature::new(basis, 2 * quadrature_order).elements(&f);
    let diff = (&m1 - &m2).amax();
    let tol = QUADRATURE_TOL * m2.amax().max(1.0);
    if diff > tol {
        return Err(QscopeError::QuadratureAccuracy {
            order: quadrature_order,
            doubled: 2 * quadrature_order,
            diff,
            tol,
        });
    }
    OperatorMatrix::real(basis.clone(), m2, true)
}

/// Like [`matrix_elements_of_function`], doubling the order from the default
/// until the cross-check passes (up to order 4096).
pub fn matrix_elements_adaptive<F: Fn(f64) -> f64>(f: F, basis: &TruncatedBasis) -> Result<(OperatorMatrix, usize)> {
    let mut order = default_quadrature_order(basis);
    loop {
        match matrix_elements_of_function(&f, basis, order) {
            Ok(m) => return Ok((m, order)),
            Err(e @ QscopeError::QuadratureAccuracy { .. }) => {
                if order >= 4096 {
                    return Err(e);
                }
                order *= 2;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Tr(O ρ).
pub fn expectation(op: &OperatorMatrix, rho: &DensityMatrix) -> Result<Complex64> {
    same_basis(&op.basis, &rho.basis)?;
    Ok(op.entries.trace_product(&rho.entries))
}

/// Tr(ρ²).
pub fn purity(rho: &DensityMatrix) -> f64 {
    let e = &rho.entries;
    e.re.iter().map(|x| x * x).sum::<f64>() + e.im.iter().map(|x| x * x).sum::<f64>()
}

/// Samples of a function on a uniform grid.
#[derive(Debug, Clone)]
pub struct WaveFunctionGrid {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub spacing: f64,
}

impl WaveFunctionGrid {
    pub fn uniform(start: f64, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(invalid("spacing", "must be positive"));
        }
        let points = (0..values.len()).map(|i| start + i as f64 * spacing).collect();
        Ok(Self {
            points,
            values,
            spacing,
        })
    }

    pub fn sample<F: Fn(f64) -> f64>(start: f64, end: f64, n: usize, f: F) -> Result<Self> {
        if n < 2 || !(end > start) {
            return Err(invalid("grid", "need n ≥ 2 points on a non-empty interval"));
        }
        let h = (end - start) / (n - 1) as f64;
        let values = (0..n).map(|i| f(start + i as f64 * h)).collect();
        Self::uniform(start, h, values)
    }

    /// Trapezoid-rule integral of the samples.
    pub fn integrate(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return 0.0;
        }
        let inner: f64 = self.values[1..n - 1].iter().sum();
        self.spacing * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
    }
}

/// Harmonic-oscillator eigenfunction ψ_n(z) in a basis of length scale ℓ₀.
pub fn ho_eigenfunction(n: usize, z: f64, length_scale: f64) -> f64 {
    hermite_functions(z / length_scale, n + 1)[n] / length_scale.sqrt()
}
