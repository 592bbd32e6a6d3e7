//! Superoperators and the generic Euler–Maruyama / RK4 steppers.
//!
//! All routines assume the density matrix is Hermitian, so `ρM† = (Mρ)†`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{QscopeError, Result};
use crate::linalg::CMat;

/// Operator with a structure-aware representation.
#[derive(Debug, Clone)]
pub enum SparseOp {
    Dense(CMat),
    /// Single band: `M[r, r + offset] = values[k]`, `r = k + max(0, −offset)`.
    Band {
        dim: usize,
        offset: isize,
        values: Vec<Complex64>,
    },
    /// Coordinate list `(row, col, value)`.
    Triplets {
        dim: usize,
        entries: Vec<(usize, usize, Complex64)>,
    },
}

impl SparseOp {
    pub fn diagonal(values: &[f64]) -> Self {
        SparseOp::Band {
            dim: values.len(),
            offset: 0,
            values: values.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
        }
    }

    pub fn band(dim: usize, offset: isize, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), dim - offset.unsigned_abs());
        SparseOp::Band { dim, offset, values }
    }

    pub fn dim(&self) -> usize {
        match self {
            SparseOp::Dense(m) => m.dim(),
            SparseOp::Band { dim, .. } | SparseOp::Triplets { dim, .. } => *dim,
        }
    }

    pub fn scaled(&self, z: Complex64) -> Self {
        match self {
            SparseOp::Dense(m) => SparseOp::Dense(m.cscale(z)),
            SparseOp::Band { dim, offset, values } => SparseOp::Band {
                dim: *dim,
                offset: *offset,
                values: values.iter().map(|v| v * z).collect(),
            },
            SparseOp::Triplets { dim, entries } => SparseOp::Triplets {
                dim: *dim,
                entries: entries.iter().map(|(i, j, v)| (*i, *j, v * z)).collect(),
            },
        }
    }

    pub fn to_dense(&self) -> CMat {
        match self {
            SparseOp::Dense(m) => m.clone(),
            _ => {
                let mut m = CMat::zeros(self.dim());
                self.for_each(|i, j, v| {
                    let old = m.get(i, j);
                    m.set(i, j, old + v);
                });
                m
            }
        }
    }

    fn for_each<F: FnMut(usize, usize, Complex64)>(&self, mut f: F) {
        match self {
            SparseOp::Dense(m) => {
                let n = m.dim();
                for j in 0..n {
                    for i in 0..n {
                        let v = m.get(i, j);
                        if v.re != 0.0 || v.im != 0.0 {
                            f(i, j, v);
                        }
                    }
                }
            }
            SparseOp::Band { offset, values, .. } => {
                let r0 = (-offset).max(0) as usize;
                for (k, v) in values.iter().enumerate() {
                    let r = k + r0;
                    f(r, (r as isize + offset) as usize, *v);
                }
            }
            SparseOp::Triplets { entries, .. } => {
                for (i, j, v) in entries {
                    f(*i, *j, *v);
                }
            }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        match self {
            SparseOp::Band { offset, .. } => *offset == 0,
            SparseOp::Dense(m) => m.is_diagonal(),
            SparseOp::Triplets { entries, .. } => entries.iter().all(|(i, j, _)| i == j),
        }
    }

    /// `M ρ`
    pub fn left(&self, rho: &CMat) -> CMat {
        match self {
            SparseOp::Dense(m) => m.mul(rho),
            _ => {
                let n = rho.dim();
                let mut out = CMat::zeros(n);
                self.for_each(|r, c, v| {
                    for j in 0..n {
                        let (xr, xi) = (rho.re[(c, j)], rho.im[(c, j)]);
                        out.re[(r, j)] += v.re * xr - v.im * xi;
                        out.im[(r, j)] += v.re * xi + v.im * xr;
                    }
                });
                out
            }
        }
    }

    /// `M ρ M†`
    pub fn sandwich(&self, rho: &CMat) -> CMat {
        let y = self.left(rho);
        self.left(&y.adjoint())
    }

    /// `M† M`
    pub fn dag_op(&self) -> SparseOp {
        match self {
            SparseOp::Dense(m) => SparseOp::Dense(m.adjoint().mul(m)),
            SparseOp::Band { dim, offset, values } => {
                let mut d = vec![0.0; *dim];
                let r0 = (-offset).max(0) as usize;
                for (k, v) in values.iter().enumerate() {
                    let c = (k as isize + r0 as isize + offset) as usize;
                    d[c] += v.norm_sqr();
                }
                SparseOp::diagonal(&d)
            }
            SparseOp::Triplets { dim, .. } => {
                let m = self.to_dense();
                let k = m.adjoint().mul(&m);
                let mut entries = Vec::new();
                for j in 0..*dim {
                    for i in 0..*dim {
                        let v = k.get(i, j);
                        if v.norm() > 0.0 {
                            entries.push((i, j, v));
                        }
                    }
                }
                SparseOp::Triplets { dim: *dim, entries }
            }
        }
    }

    /// Tr(M ρ)
    pub fn expectation(&self, rho: &CMat) -> Complex64 {
        match self {
            SparseOp::Dense(m) => m.trace_product(rho),
            _ => {
                let mut s = Complex64::new(0.0, 0.0);
                self.for_each(|i, j, v| s += v * rho.get(j, i));
                s
            }
        }
    }
}

/// `−i(X − X†)` with `X = Hρ`: the commutator term −i[H, ρ].
pub fn commutator_term(h: &SparseOp, rho: &CMat) -> CMat {
    let x = h.left(rho);
    let d = x.sub(&x.adjoint());
    CMat {
        re: d.im,
        im: -d.re,
    }
}

/// 𝒟[M]ρ = MρM† − ½{M†M, ρ}
pub fn dissipator(op: &SparseOp, op_dag_op: &SparseOp, rho: &CMat) -> CMat {
    let mut out = op.sandwich(rho);
    let k = op_dag_op.left(rho);
    out.axpy(-0.5, &k);
    out.axpy(-0.5, &k.adjoint());
    out
}

/// ℋ[M]ρ = Mρ + ρM† − 2Re⟨M⟩ρ; also returns ⟨M⟩.
pub fn measurement_term(op: &SparseOp, rho: &CMat) -> (CMat, Complex64) {
    let y = op.left(rho);
    let mean = y.trace();
    let mut out = y.add(&y.adjoint());
    out.axpy(-2.0 * mean.re, rho);
    (out, mean)
}

#[derive(Debug, Clone)]
pub struct Lindblad {
    pub rate: f64,
    pub op: SparseOp,
    pub op_dag_op: SparseOp,
}

impl Lindblad {
    pub fn new(rate: f64, op: SparseOp) -> Self {
        let op_dag_op = op.dag_op();
        Self { rate, op, op_dag_op }
    }
}

/// Monitored channel contributing `amplitude·ℋ[op]ρ dW` and the current
/// `amplitude·2Re⟨op⟩ dt + dW`.
#[derive(Debug, Clone)]
pub struct Monitor {
    pub op: SparseOp,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct StepGuards {
    pub max_trace_drift: f64,
    /// Check the minimum eigenvalue every this many steps.
    pub positivity_every: Option<usize>,
    pub positivity_tol: f64,
}

impl Default for StepGuards {
    fn default() -> Self {
        Self {
            max_trace_drift: 1e-4,
            positivity_every: None,
            positivity_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// |Tr ρ − 1| before renormalization.
    pub trace_drift: f64,
    /// Deterministic current rate on the pre-step state.
    pub signal: f64,
    pub min_eigenvalue: Option<f64>,
}

/// Exact propagator `ρ → e^{−iHdt} ρ e^{iHdt}` of a time-independent
/// Hermitian Hamiltonian.
#[derive(Debug, Clone)]
pub enum Propagator {
    /// Diagonal Hamiltonian with these energies.
    Phases(Vec<f64>),
    /// `H = V diag(E) V†`
    Eigen { vectors: CMat, energies: Vec<f64> },
}

impl Propagator {
    pub fn from_hamiltonian(h: &SparseOp) -> Self {
        if h.is_diagonal() {
            let m = h.to_dense();
            return Propagator::Phases(m.diagonal_re());
        }
        let m = h.to_dense();
        let n = m.dim();
        let z = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
        let eig = nalgebra::SymmetricEigen::new(z);
        let v = &eig.eigenvectors;
        Propagator::Eigen {
            vectors: CMat::from_fn(n, |i, j| v[(i, j)]),
            energies: eig.eigenvalues.iter().copied().collect(),
        }
    }

    pub fn apply(&self, rho: &mut CMat, dt: f64) {
        match self {
            Propagator::Phases(e) => rotate_phases(rho, e, dt),
            Propagator::Eigen { vectors, energies } => {
                let mut x = vectors.adjoint().mul(rho).mul(vectors);
                rotate_phases(&mut x, energies, dt);
                *rho = vectors.mul(&x).mul(&vectors.adjoint());
            }
        }
    }
}

fn rotate_phases(rho: &mut CMat, e: &[f64], dt: f64) {
    let n = rho.dim();
    for j in 0..n {
        for i in 0..n {
            if i == j {
                continue;
            }
            let (s, c) = ((e[j] - e[i]) * dt).sin_cos();
            let (re, im) = (rho.re[(i, j)], rho.im[(i, j)]);
            rho.re[(i, j)] = re * c - im * s;
            rho.im[(i, j)] = re * s + im * c;
        }
    }
}

/// Generator of a (stochastic) master equation in Lindblad form.
///
/// Stochastic steps apply the Hamiltonian exactly through `propagator`
/// (when present) and integrate the remaining terms with Euler–Maruyama.
#[derive(Debug, Clone, Default)]
pub struct SmeSystem {
    pub hamiltonian: Option<SparseOp>,
    pub dissipators: Vec<Lindblad>,
    pub monitor: Option<Monitor>,
    pub propagator: Option<Propagator>,
}

impl SmeSystem {
    pub fn new(hamiltonian: Option<SparseOp>, dissipators: Vec<Lindblad>, monitor: Option<Monitor>) -> Self {
        let propagator = hamiltonian.as_ref().map(Propagator::from_hamiltonian);
        Self {
            hamiltonian,
            dissipators,
            monitor,
            propagator,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.hamiltonian
            .as_ref()
            .map(|h| h.dim())
            .or_else(|| self.dissipators.first().map(|l| l.op.dim()))
            .or_else(|| self.monitor.as_ref().map(|m| m.op.dim()))
    }

    /// Deterministic part of dρ/dt.
    pub fn drift(&self, rho: &CMat) -> CMat {
        self.drift_terms(rho, true)
    }

    fn drift_terms(&self, rho: &CMat, with_hamiltonian: bool) -> CMat {
        let mut out = match (&self.hamiltonian, with_hamiltonian) {
            (Some(h), true) => commutator_term(h, rho),
            _ => CMat::zeros(rho.dim()),
        };
        for l in &self.dissipators {
            if l.rate != 0.0 {
                out.axpy(l.rate, &dissipator(&l.op, &l.op_dag_op, rho));
            }
        }
        out
    }

    /// Deterministic current rate `amplitude·2Re⟨op⟩`.
    pub fn signal(&self, rho: &CMat) -> f64 {
        match &self.monitor {
            Some(m) => 2.0 * m.amplitude * m.op.expectation(rho).re,
            None => 0.0,
        }
    }

    /// Euler–Maruyama step with explicit Wiener increment, followed by
    /// Hermitization and trace renormalization.
    pub fn em_step(&self, state: &mut CMat, dt: f64, dw: f64, step: usize, guards: &StepGuards) -> Result<StepReport> {
        let rotated;
        let rho: &CMat = match &self.propagator {
            Some(p) => {
                let mut r = state.clone();
                p.apply(&mut r, dt);
                rotated = r;
                &rotated
            }
            None => state,
        };
        let mut next = rho.clone();
        next.axpy(dt, &self.drift_terms(rho, self.propagator.is_none()));
        let mut signal = 0.0;
        if let Some(m) = &self.monitor {
            if m.amplitude != 0.0 {
                let (h, mean) = measurement_term(&m.op, rho);
                signal = 2.0 * m.amplitude * mean.re;
                next.axpy(m.amplitude * dw, &h);
            }
        }
        let (next, report) = finish_step_into(next, step, guards, signal)?;
        *state = next;
        Ok(report)
    }

    /// Classical RK4 step of the unconditional master equation.
    pub fn rk4_step(&self, rho: &mut CMat, dt: f64) {
        let k1 = self.drift(rho);
        let mut tmp = rho.clone();
        tmp.axpy(0.5 * dt, &k1);
        let k2 = self.drift(&tmp);
        let mut tmp = rho.clone();
        tmp.axpy(0.5 * dt, &k2);
        let k3 = self.drift(&tmp);
        let mut tmp = rho.clone();
        tmp.axpy(dt, &k3);
        let k4 = self.drift(&tmp);
        rho.axpy(dt / 6.0, &k1);
        rho.axpy(dt / 3.0, &k2);
        rho.axpy(dt / 3.0, &k3);
        rho.axpy(dt / 6.0, &k4);
        rho.hermitize();
    }
}

fn finish_step_into(mut next: CMat, step: usize, guards: &StepGuards, signal: f64) -> Result<(CMat, StepReport)> {
    let tr = next.re.trace();
    let trace_drift = (tr - 1.0).abs();
    if !(trace_drift <= guards.max_trace_drift) {
        return Err(QscopeError::StepSize {
            step,
            diagnostic: format!("trace drift {trace_drift:.3e} before renormalization"),
        });
    }
    next.hermitize();
    next.scale_mut(1.0 / tr);
    let mut min_eigenvalue = None;
    if let Some(every) = guards.positivity_every {
        if every > 0 && step % every == 0 {
            let ev = next.min_eigenvalue();
            if ev < -guards.positivity_tol {
                return Err(QscopeError::Positivity { step, min_eigenvalue: ev });
            }
            min_eigenvalue = Some(ev);
        }
    }
    Ok((
        next,
        StepReport {
            trace_drift,
            signal,
            min_eigenvalue,
        },
    ))
}

/// Real symmetric matrix split into its diagonals `ℓ ∈ [−(d−1), d−1]`.
pub fn band_of(m: &DMatrix<f64>, offset: isize) -> Vec<Complex64> {
    let d = m.nrows();
    let r0 = (-offset).max(0) as usize;
    (0..d - offset.unsigned_abs())
        .map(|k| {
            let r = k + r0;
            Complex64::new(m[(r, (r as isize + offset) as usize)], 0.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: u64) -> CMat {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMat::from_fn(n, |_, _| Complex64::new(next(), next()))
    }

    fn density(n: usize, seed: u64) -> CMat {
        let a = pseudo(n, seed);
        let mut r = a.mul(&a.adjoint());
        let t = r.re.trace();
        r.scale_mut(1.0 / t);
        r
    }

    #[test]
    fn band_and_triplet_match_dense() {
        let n = 6;
        let rho = density(n, 1);
        let vals: Vec<Complex64> = (0..4).map(|k| Complex64::new(k as f64 + 0.5, -0.3 * k as f64)).collect();
        for offset in [-2isize, 2] {
            let b = SparseOp::band(n, offset, vals.clone());
            let d = SparseOp::Dense(b.to_dense());
            let t = SparseOp::Triplets {
                dim: n,
                entries: {
                    let m = b.to_dense();
                    let mut e = vec![];
                    for i in 0..n {
                        for j in 0..n {
                            if m.get(i, j).norm() > 0.0 {
                                e.push((i, j, m.get(i, j)));
                            }
                        }
                    }
                    e
                },
            };
            for op in [&b, &t] {
                assert!(op.left(&rho).sub(&d.left(&rho)).max_abs() < 1e-14);
                assert!(op.sandwich(&rho).sub(&d.sandwich(&rho)).max_abs() < 1e-14);
                assert!(op.dag_op().to_dense().sub(&d.dag_op().to_dense()).max_abs() < 1e-14);
                assert!((op.expectation(&rho) - d.expectation(&rho)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn superoperators_are_traceless() {
        let n = 5;
        let rho = density(n, 2);
        let c = SparseOp::Dense(pseudo(n, 3));
        let d = dissipator(&c, &c.dag_op(), &rho);
        assert!(d.trace().norm() < 1e-14);
        assert!(d.hermiticity_defect() < 1e-14);
        let (h, _) = measurement_term(&c, &rho);
        assert!(h.trace().norm() < 1e-14);
        let mut herm = pseudo(n, 4);
        herm.hermitize();
        let com = commutator_term(&SparseOp::Dense(herm), &rho);
        assert!(com.trace().norm() < 1e-14);
    }

    #[test]
    fn measurement_of_identity_vanishes() {
        let rho = density(4, 5);
        let (h, mean) = measurement_term(&SparseOp::Dense(CMat::identity(4)), &rho);
        assert!(h.max_abs() < 1e-15);
        assert!((mean.re - 1.0).abs() < 1e-15);
        let d = dissipator(&SparseOp::diagonal(&[1.0; 4]), &SparseOp::diagonal(&[1.0; 4]), &rho);
        assert!(d.max_abs() < 1e-15);
    }

    #[test]
    fn trace_guard_triggers() {
        let rho = density(3, 6);
        let mut bad = rho.clone();
        bad.scale_mut(1.1);
        let err = finish_step_into(bad, 7, &StepGuards::default(), 0.0).unwrap_err();
        assert!(matches!(err, QscopeError::StepSize { step: 7, .. }));
    }
}
