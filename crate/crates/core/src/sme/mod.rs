//! Itô integrators for conditional and unconditional master equations:
//! the full atom–cavity model, the bad- and good-cavity eliminated models,
//! the stochastic rate equation and the emergent-QND projection.

pub mod ops;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, QscopeError, Result};
use crate::hilbert::{annihilation, same_basis, BasisKind, DensityMatrix, OperatorMatrix, TruncatedBasis};
use crate::linalg::CMat;
use crate::noise::NoiseSource;
pub use ops::{
    band_of, commutator_term, dissipator, measurement_term, Lindblad, Monitor, SmeSystem, SparseOp, StepGuards,
    StepReport,
};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CavityParams {
    pub kappa: f64,
    pub delta: f64,
    pub drive: f64,
    pub phi: f64,
}

impl CavityParams {
    pub fn new(kappa: f64, delta: f64, drive: f64, phi: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", "must be positive"));
        }
        if !delta.is_finite() || !drive.is_finite() || !phi.is_finite() {
            return Err(invalid("cavity", "parameters must be finite"));
        }
        Ok(Self {
            kappa,
            delta,
            drive,
            phi,
        })
    }

    /// Stationary field amplitude √κℰ/(iδ − κ/2) of the empty driven cavity.
    pub fn stationary_amplitude(&self) -> Complex64 {
        self.kappa.sqrt() * self.drive / Complex64::new(-0.5 * self.kappa, self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeasurementParams {
    pub gamma: f64,
    /// Linearized coupling ε = (𝒜ℰ)·{κ/(κ²/4 + δ²)}^{1/2}.
    pub coupling_amplitude: f64,
    pub omega: f64,
}

impl MeasurementParams {
    pub fn new(gamma: f64, omega: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be finite and non-negative"));
        }
        if !(omega > 0.0) {
            return Err(invalid("omega", "must be positive"));
        }
        Ok(Self {
            gamma,
            coupling_amplitude: f64::NAN,
            omega,
        })
    }

    /// Rate and coupling from the focusing amplitude 𝒜 and the drive ℰ.
    pub fn from_drive(amplitude: f64, drive: f64, kappa: f64, delta: f64, omega: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(invalid("kappa", "must be positive"));
        }
        let eps = amplitude * drive * (kappa / (0.25 * kappa * kappa + delta * delta)).sqrt();
        let gamma = eps * eps * kappa / (0.25 * kappa * kappa + delta * delta);
        Ok(Self {
            gamma,
            coupling_amplitude: eps,
            omega,
        })
    }

    /// ε such that `gamma = ε²κ/((κ/2)² + δ²)`.
    pub fn with_coupling_for(mut self, kappa: f64, delta: f64) -> Self {
        self.coupling_amplitude = (self.gamma * (0.25 * kappa * kappa + delta * delta) / kappa).sqrt();
        self
    }
}

/// Outcome of one stochastic step.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub dw: f64,
    /// Homodyne increment dX = signal·dt + dW.
    pub increment: f64,
    pub trace_drift: f64,
}

impl StepOutcome {
    fn from_report(r: StepReport, dt: f64, dw: f64) -> Self {
        Self {
            dw,
            increment: r.signal * dt + dw,
            trace_drift: r.trace_drift,
        }
    }
}

pub(crate) fn to_sparse(m: &CMat) -> SparseOp {
    if m.is_diagonal() {
        let d = m.dim();
        SparseOp::Band {
            dim: d,
            offset: 0,
            values: (0..d).map(|i| m.get(i, i)).collect(),
        }
    } else {
        SparseOp::Dense(m.clone())
    }
}

fn check_dt(step: usize, value: f64, bound: f64, what: &str) -> Result<()> {
    if value > bound * (1.0 + 1e-12) {
        return Err(QscopeError::StepSize {
            step,
            diagnostic: format!("{what} = {value:.3e} exceeds {bound}"),
        });
    }
    Ok(())
}

/// Frame of the full atom–cavity model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CavityFrame {
    /// `Ĥ = Ĥ_sys + 𝒜 f ĉ†ĉ + i√κℰ(ĉ − ĉ†) + δĉ†ĉ`
    Lab { amplitude: f64 },
    /// Linearized around the stationary field:
    /// `Ĥ = Ĥ_sys + ε f(d̂ + d̂†) + δd̂†d̂`
    Displaced { epsilon: f64 },
}

/// Atom ⊗ cavity model of the full SME.
#[derive(Debug, Clone)]
pub struct FullModel {
    pub basis: TruncatedBasis,
    pub cavity: CavityParams,
    pub frame: CavityFrame,
    pub atom_dim: usize,
    pub cavity_dim: usize,
    pub system: SmeSystem,
    /// `ĉ` on the joint space.
    pub c_op: CMat,
    /// `f ⊗ 1`
    pub f_joint: CMat,
    pub guards: StepGuards,
}

impl FullModel {
    pub fn new(
        h_sys: &OperatorMatrix,
        f_op: &OperatorMatrix,
        frame: CavityFrame,
        cavity: CavityParams,
        cavity_dim: usize,
    ) -> Result<Self> {
        same_basis(&h_sys.basis, &f_op.basis)?;
        let cav_basis = TruncatedBasis::cavity_fock(cavity_dim)?;
        let basis = TruncatedBasis::tensor(vec![h_sys.basis.clone(), cav_basis])?;
        let na = h_sys.dim();
        let a = CMat::from_real(annihilation(cavity_dim));
        let id_a = CMat::identity(na);
        let id_c = CMat::identity(cavity_dim);
        let c_op = id_a.kron(&a);
        let n_c = a.adjoint().mul(&a);
        let mut h = h_sys.entries.kron(&id_c);
        h.axpy(cavity.delta, &id_a.kron(&n_c));
        match frame {
            CavityFrame::Lab { amplitude } => {
                h.axpy(amplitude, &f_op.entries.kron(&n_c));
                // i√κℰ(c − c†)
                let drive = c_op.sub(&c_op.adjoint());
                h.caxpy(Complex64::new(0.0, cavity.kappa.sqrt() * cavity.drive), &drive);
            }
            CavityFrame::Displaced { epsilon } => {
                let x = a.add(&a.adjoint());
                h.axpy(epsilon, &f_op.entries.kron(&x));
            }
        }
        let measured = c_op.cscale(Complex64::from_polar(1.0, -cavity.phi));
        let system = SmeSystem::new(
            Some(SparseOp::Dense(h)),
            vec![Lindblad::new(cavity.kappa, SparseOp::Dense(c_op.clone()))],
            Some(Monitor {
                op: SparseOp::Dense(measured),
                amplitude: cavity.kappa.sqrt(),
            }),
        );
        Ok(Self {
            basis,
            cavity,
            frame,
            atom_dim: na,
            cavity_dim,
            system,
            c_op,
            f_joint: f_op.entries.kron(&id_c),
            guards: StepGuards::default(),
        })
    }

    pub fn hamiltonian(&self) -> OperatorMatrix {
        let h = match &self.system.hamiltonian {
            Some(SparseOp::Dense(m)) => m.clone(),
            Some(other) => other.to_dense(),
            None => CMat::zeros(self.basis.dimension),
        };
        OperatorMatrix {
            basis: self.basis.clone(),
            entries: h,
            hermitian_hint: true,
        }
    }

    pub fn step(&self, rho: &mut DensityMatrix, dt: f64, noise: &mut NoiseSource, step: usize) -> Result<StepOutcome> {
        let dw = noise.increment(dt);
        self.step_with_increment(rho, dt, dw, step)
    }

    pub fn step_with_increment(&self, rho: &mut DensityMatrix, dt: f64, dw: f64, step: usize) -> Result<StepOutcome> {
        same_basis(&self.basis, &rho.basis)?;
        check_dt(step, dt * self.cavity.kappa, 0.05, "dt·κ")?;
        let r = self.system.em_step(&mut rho.entries, dt, dw, step, &self.guards)?;
        rho.time += dt;
        Ok(StepOutcome::from_report(r, dt, dw))
    }

    /// Unconditional master equation (stochastic term dropped).
    pub fn master_equation(&self) -> SmeSystem {
        SmeSystem {
            monitor: None,
            ..self.system.clone()
        }
    }

    /// √κ⟨X̂_φ⟩ on the joint state.
    pub fn signal(&self, rho: &DensityMatrix) -> f64 {
        self.system.signal(&rho.entries)
    }

    pub fn cavity_mean(&self, rho: &DensityMatrix) -> Complex64 {
        self.c_op.trace_product(&rho.entries)
    }

    pub fn f_mean(&self, rho: &DensityMatrix) -> f64 {
        self.f_joint.trace_product(&rho.entries).re
    }
}

/// Full SME step: `dρ = −i[Ĥ,ρ]dt + κ𝒟[ĉ]ρdt + √κℋ[ĉe^{−iφ}]ρdW`.
pub fn step_full_sme(
    rho: &mut DensityMatrix,
    h_total: &OperatorMatrix,
    cavity: &CavityParams,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<StepOutcome> {
    let factors = rho
        .basis
        .factors()
        .ok_or_else(|| QscopeError::BasisMismatch("full SME needs an atom ⊗ cavity basis".into()))?;
    if factors.len() != 2 || factors[1].kind != BasisKind::CavityFock {
        return Err(QscopeError::BasisMismatch("second factor must be a cavity Fock basis".into()));
    }
    same_basis(&h_total.basis, &rho.basis)?;
    check_dt(0, dt * cavity.kappa, 0.05, "dt·κ")?;
    let (na, nc) = (factors[0].dimension, factors[1].dimension);
    let c = CMat::identity(na).kron(&CMat::from_real(annihilation(nc)));
    let system = SmeSystem::new(
        Some(SparseOp::Dense(h_total.entries.clone())),
        vec![Lindblad::new(cavity.kappa, SparseOp::Dense(c.clone()))],
        Some(Monitor {
            op: SparseOp::Dense(c.cscale(Complex64::from_polar(1.0, -cavity.phi))),
            amplitude: cavity.kappa.sqrt(),
        }),
    );
    let dw = noise.increment(dt);
    let r = system.em_step(&mut rho.entries, dt, dw, 0, &StepGuards::default())?;
    rho.time += dt;
    Ok(StepOutcome::from_report(r, dt, dw))
}

/// Atom-only model after eliminating a fast cavity (κ ≫ ω).
#[derive(Debug, Clone)]
pub struct BadCavityModel {
    pub basis: TruncatedBasis,
    pub meas: MeasurementParams,
    pub kappa: f64,
    pub delta: f64,
    pub system: SmeSystem,
    pub guards: StepGuards,
    /// Skip the dt·γ and dt·ω gates.
    pub allow_large_steps: bool,
}

impl BadCavityModel {
    pub fn new(
        h_sys: &OperatorMatrix,
        f_op: &OperatorMatrix,
        meas: MeasurementParams,
        kappa: f64,
        delta: f64,
    ) -> Result<Self> {
        same_basis(&h_sys.basis, &f_op.basis)?;
        let mut h = h_sys.entries.clone();
        if delta != 0.0 {
            let eps = meas.coupling_amplitude;
            if !eps.is_finite() {
                return Err(invalid("coupling_amplitude", "needed for the detuned effective Hamiltonian"));
            }
            let f2 = f_op.entries.mul(&f_op.entries);
            h.axpy(delta * eps * eps / (0.25 * kappa * kappa + delta * delta), &f2);
        }
        let f = to_sparse(&f_op.entries);
        let system = SmeSystem::new(
            Some(to_sparse(&h)),
            vec![Lindblad::new(meas.gamma, f.clone())],
            Some(Monitor {
                op: f,
                amplitude: meas.gamma.sqrt(),
            }),
        );
        Ok(Self {
            basis: h_sys.basis.clone(),
            meas,
            kappa,
            delta,
            system,
            guards: StepGuards::default(),
            allow_large_steps: false,
        })
    }

    pub fn step(&self, rho: &mut DensityMatrix, dt: f64, noise: &mut NoiseSource, step: usize) -> Result<StepOutcome> {
        let dw = noise.increment(dt);
        self.step_with_increment(rho, dt, dw, step)
    }

    pub fn step_with_increment(&self, rho: &mut DensityMatrix, dt: f64, dw: f64, step: usize) -> Result<StepOutcome> {
        same_basis(&self.basis, &rho.basis)?;
        if !self.allow_large_steps {
            check_dt(step, dt * self.meas.gamma, 0.01, "dt·γ")?;
            check_dt(step, dt * self.meas.omega, 0.01, "dt·ω")?;
        }
        let r = self.system.em_step(&mut rho.entries, dt, dw, step, &self.guards)?;
        rho.time += dt;
        Ok(StepOutcome::from_report(r, dt, dw))
    }

    pub fn master_equation(&self) -> SmeSystem {
        SmeSystem {
            monitor: None,
            ..self.system.clone()
        }
    }

    /// 2√γ⟨f⟩
    pub fn signal(&self, rho: &DensityMatrix) -> f64 {
        self.system.signal(&rho.entries)
    }
}

/// Bad-cavity SME step: `dρ = −i[Ĥ_sys,ρ]dt + γ𝒟[f]ρdt + √γℋ[f]ρdW`.
pub fn step_bad_cavity_sme(
    rho: &mut DensityMatrix,
    h_sys: &OperatorMatrix,
    f_op: &OperatorMatrix,
    meas: &MeasurementParams,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<StepOutcome> {
    let model = BadCavityModel::new(h_sys, f_op, *meas, f64::INFINITY, 0.0)?;
    model.step(rho, dt, noise, 0)
}

/// Diagonals f̂^(ℓ) = Σ_n f_{n,n+ℓ}|n⟩⟨n+ℓ| of an operator in the energy basis.
#[derive(Debug, Clone)]
pub struct SidebandDecomposition {
    pub operators: BTreeMap<isize, OperatorMatrix>,
    pub omega: f64,
}

impl SidebandDecomposition {
    pub fn reconstruct(&self) -> CMat {
        let d = self.operators.values().next().map(|o| o.dim()).unwrap_or(0);
        let mut out = CMat::zeros(d);
        for op in self.operators.values() {
            out.axpy(1.0, &op.entries);
        }
        out
    }

    /// Band representation of f̂^(ℓ).
    pub fn band(&self, ell: isize) -> Option<SparseOp> {
        self.operators.get(&ell).map(|op| {
            let d = op.dim();
            let r0 = (-ell).max(0) as usize;
            let values = (0..d - ell.unsigned_abs())
                .map(|k| op.entries.get(k + r0, (k as isize + r0 as isize + ell) as usize))
                .collect();
            SparseOp::Band {
                dim: d,
                offset: ell,
                values,
            }
        })
    }
}

pub fn sideband_decompose(f_op: &OperatorMatrix, omega: f64) -> Result<SidebandDecomposition> {
    if !(omega > 0.0) {
        return Err(invalid("omega", "must be positive"));
    }
    let d = f_op.dim() as isize;
    let mut operators = BTreeMap::new();
    for ell in -(d - 1)..d {
        let m = CMat::from_fn(d as usize, |i, j| {
            if j as isize - i as isize == ell {
                f_op.entries.get(i, j)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        operators.insert(
            ell,
            OperatorMatrix {
                basis: f_op.basis.clone(),
                entries: m,
                hermitian_hint: ell == 0 && f_op.hermitian_hint,
            },
        );
    }
    Ok(SidebandDecomposition { operators, omega })
}

/// Ô_eQND = Σ_n |n⟩⟨n|O|n⟩⟨n|
pub fn eqnd_projection(op: &OperatorMatrix) -> OperatorMatrix {
    let d = op.dim();
    let m = CMat::from_fn(d, |i, j| if i == j { op.entries.get(i, i) } else { Complex64::new(0.0, 0.0) });
    OperatorMatrix {
        basis: op.basis.clone(),
        entries: m,
        hermitian_hint: op.hermitian_hint,
    }
}

/// Sideband rate γ/(1 + (2ωℓ/κ)²).
pub fn sideband_rate(gamma: f64, omega: f64, kappa: f64, ell: isize) -> f64 {
    gamma / (1.0 + (2.0 * omega * ell as f64 / kappa).powi(2))
}

/// Good-cavity (QND) model built from the real matrix f_{mn}(z₀).
#[derive(Debug, Clone)]
pub struct GoodCavityModel {
    pub meas: MeasurementParams,
    pub kappa: f64,
    pub ell_max: usize,
    pub system: SmeSystem,
    pub guards: StepGuards,
    /// Energies E_n of the diagonal Ĥ_sys.
    pub energies: Vec<f64>,
    /// Diagonal f_nn.
    pub f_diag: Vec<f64>,
    /// |f_{n,n+ℓ}|² for ℓ = 1..=ell_max.
    pub band_weights: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
}

/// Regime check for the good-cavity equations (κ/ω < 1).
pub fn check_good_cavity_regime(kappa: f64, omega: f64) -> Result<()> {
    if !(kappa / omega < 1.0) {
        return Err(QscopeError::Guard(format!(
            "good-cavity SME needs κ/ω < 1 (got {:.3})",
            kappa / omega
        )));
    }
    Ok(())
}

impl GoodCavityModel {
    pub fn from_matrix(
        energies: &[f64],
        f: &DMatrix<f64>,
        meas: MeasurementParams,
        kappa: f64,
        ell_max: usize,
    ) -> Result<Self> {
        let d = energies.len();
        if f.nrows() != d || f.ncols() != d {
            return Err(QscopeError::BasisMismatch("f matrix vs energies".into()));
        }
        if ell_max < 1 {
            return Err(invalid("ell_max", "must be at least 1"));
        }
        if !(kappa > 0.0) {
            return Err(invalid("kappa", "must be positive"));
        }
        let ell_max = ell_max.min(d - 1);
        let f_diag: Vec<f64> = (0..d).map(|i| f[(i, i)]).collect();
        let mut dissipators = vec![Lindblad::new(meas.gamma, SparseOp::diagonal(&f_diag))];
        let mut band_weights = Vec::with_capacity(ell_max);
        let mut rates = Vec::with_capacity(ell_max);
        for ell in 1..=ell_max as isize {
            let rate = sideband_rate(meas.gamma, meas.omega, kappa, ell);
            rates.push(rate);
            let up = band_of(f, ell);
            band_weights.push(up.iter().map(|v| v.norm_sqr()).collect());
            dissipators.push(Lindblad::new(rate, SparseOp::band(d, ell, up)));
            dissipators.push(Lindblad::new(rate, SparseOp::band(d, -ell, band_of(f, -ell))));
        }
        let system = SmeSystem::new(
            Some(SparseOp::diagonal(energies)),
            dissipators,
            Some(Monitor {
                op: SparseOp::diagonal(&f_diag),
                amplitude: meas.gamma.sqrt(),
            }),
        );
        Ok(Self {
            meas,
            kappa,
            ell_max,
            system,
            guards: StepGuards::default(),
            energies: energies.to_vec(),
            f_diag,
            band_weights,
            rates,
        })
    }

    pub fn step(&self, rho: &mut DensityMatrix, dt: f64, noise: &mut NoiseSource, step: usize) -> Result<StepOutcome> {
        let dw = noise.increment(dt);
        self.step_with_increment(rho, dt, dw, step)
    }

    pub fn step_with_increment(&self, rho: &mut DensityMatrix, dt: f64, dw: f64, step: usize) -> Result<StepOutcome> {
        if rho.dim() != self.energies.len() {
            return Err(QscopeError::BasisMismatch("state vs model dimension".into()));
        }
        let r = self.system.em_step(&mut rho.entries, dt, dw, step, &self.guards)?;
        rho.time += dt;
        Ok(StepOutcome::from_report(r, dt, dw))
    }

    /// 2√γ⟨f̂^(0)⟩ for populations `p`.
    pub fn signal_diagonal(&self, p: &[f64]) -> f64 {
        2.0 * self.meas.gamma.sqrt() * p.iter().zip(&self.f_diag).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Exact restriction of the SME to diagonal states (coherences stay zero).
    pub fn step_diagonal(&self, p: &mut [f64], dt: f64, dw: f64, step: usize) -> Result<StepOutcome> {
        let signal = self.signal_diagonal(p);
        let mean_f = signal / (2.0 * self.meas.gamma.sqrt().max(f64::MIN_POSITIVE));
        let mut dp = rate_terms(p, &self.band_weights, &self.rates);
        let amp = 2.0 * self.meas.gamma.sqrt() * dw;
        for (i, x) in dp.iter_mut().enumerate() {
            *x = *x * dt + amp * p[i] * (self.f_diag[i] - mean_f);
        }
        let mut total = 0.0;
        for (pi, d) in p.iter_mut().zip(&dp) {
            *pi += d;
            total += *pi;
        }
        let drift = (total - 1.0).abs();
        if drift > self.guards.max_trace_drift {
            return Err(QscopeError::StepSize {
                step,
                diagnostic: format!("population drift {drift:.3e}"),
            });
        }
        p.iter_mut().for_each(|x| *x /= total);
        Ok(StepOutcome {
            dw,
            increment: signal * dt + dw,
            trace_drift: drift,
        })
    }
}

/// Σ_ℓ rate_ℓ (A⁺ p_{n+ℓ} + A⁻ p_{n−ℓ} − B p_n), per unit time.
fn rate_terms(p: &[f64], band_weights: &[Vec<f64>], rates: &[f64]) -> Vec<f64> {
    let d = p.len();
    let mut dp = vec![0.0; d];
    for (l, (w, rate)) in band_weights.iter().zip(rates).enumerate() {
        let ell = l + 1;
        // w[k] = |f_{k,k+ℓ}|²
        for (k, wk) in w.iter().enumerate() {
            let flow = rate * wk * (p[k + ell] - p[k]);
            dp[k] += flow;
            dp[k + ell] -= flow;
        }
    }
    dp
}

/// Good-cavity SME step (ℓ = 0 measured, |ℓ| ≤ ell_max dissipative sidebands).
#[allow(clippy::too_many_arguments)]
pub fn step_good_cavity_sme(
    rho: &mut DensityMatrix,
    h_sys: &OperatorMatrix,
    sidebands: &SidebandDecomposition,
    meas: &MeasurementParams,
    kappa: f64,
    dt: f64,
    noise: &mut NoiseSource,
    ell_max: usize,
) -> Result<StepOutcome> {
    check_good_cavity_regime(kappa, meas.omega)?;
    if !h_sys.entries.is_diagonal() {
        return Err(invalid("h_sys", "must be diagonal in the energy basis"));
    }
    let f = sidebands.reconstruct();
    let model = GoodCavityModel::from_matrix(&h_sys.entries.diagonal_re(), &f.re, *meas, kappa, ell_max)?;
    model.step(rho, dt, noise, 0)
}

#[derive(Debug, Clone, Copy)]
pub struct SreOutcome {
    pub dw: f64,
    pub increment: f64,
    /// |Σ p − 1| before clipping and renormalization.
    pub sum_error: f64,
    /// Total probability removed by clipping at zero.
    pub clipped: f64,
}

/// Stochastic rate equation for trap populations with nearest-neighbour
/// sideband transitions at rate γ/(1 + (2ω/κ)²).
#[derive(Debug, Clone)]
pub struct RateEquation {
    pub gamma: f64,
    pub f_diag: Vec<f64>,
    pub band_weights: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
}

impl RateEquation {
    pub fn from_matrix(f: &DMatrix<f64>, meas: &MeasurementParams, kappa: f64) -> Self {
        let d = f.nrows();
        Self {
            gamma: meas.gamma,
            f_diag: (0..d).map(|i| f[(i, i)]).collect(),
            band_weights: vec![band_of(f, 1).iter().map(|v| v.norm_sqr()).collect()],
            rates: vec![sideband_rate(meas.gamma, meas.omega, kappa, 1)],
        }
    }

    pub fn signal(&self, p: &[f64]) -> f64 {
        2.0 * self.gamma.sqrt() * p.iter().zip(&self.f_diag).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn step_with_increment(&self, p: &mut [f64], dt: f64, dw: f64, step: usize) -> Result<SreOutcome> {
        let mean_f: f64 = p.iter().zip(&self.f_diag).map(|(a, b)| a * b).sum();
        let signal = 2.0 * self.gamma.sqrt() * mean_f;
        let dp = rate_terms(p, &self.band_weights, &self.rates);
        let amp = 2.0 * self.gamma.sqrt() * dw;
        let mut total = 0.0;
        let mut clipped = 0.0;
        for i in 0..p.len() {
            p[i] += dp[i] * dt + amp * p[i] * (self.f_diag[i] - mean_f);
            total += p[i];
        }
        let sum_error = (total - 1.0).abs();
        for x in p.iter_mut() {
            if *x < 0.0 {
                if *x < -1e-6 {
                    return Err(QscopeError::StepSize {
                        step,
                        diagnostic: format!("population {x:.3e} below −1e−6 before clipping"),
                    });
                }
                clipped -= *x;
                *x = 0.0;
            }
        }
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        if clipped > 0.0 {
            log::debug!("step {step}: clipped {clipped:.3e}");
        }
        Ok(SreOutcome {
            dw,
            increment: signal * dt + dw,
            sum_error,
            clipped,
        })
    }
}

/// One stochastic-rate-equation step.
pub fn step_sre(
    p: &mut [f64],
    f_matrix: &OperatorMatrix,
    meas: &MeasurementParams,
    kappa: f64,
    dt: f64,
    noise: &mut NoiseSource,
) -> Result<SreOutcome> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-8 || p.iter().any(|x| *x < 0.0) {
        return Err(invalid("p", "must be a probability vector"));
    }
    if p.len() != f_matrix.dim() {
        return Err(QscopeError::BasisMismatch("population length vs f".into()));
    }
    let sre = RateEquation::from_matrix(&f_matrix.entries.re, meas, kappa);
    let dw = noise.increment(dt);
    sre.step_with_increment(p, dt, dw, 0)
}

/// Deterministic Lindblad step (RK4).
pub fn step_master_equation(
    rho: &mut DensityMatrix,
    h: &OperatorMatrix,
    lindblad_ops: &[(f64, OperatorMatrix)],
    dt: f64,
) -> Result<()> {
    same_basis(&h.basis, &rho.basis)?;
    let mut dissipators = Vec::with_capacity(lindblad_ops.len());
    for (rate, op) in lindblad_ops {
        if *rate < 0.0 {
            return Err(invalid("rate", "must be non-negative"));
        }
        same_basis(&op.basis, &rho.basis)?;
        dissipators.push(Lindblad::new(*rate, to_sparse(&op.entries)));
    }
    let system = SmeSystem {
        hamiltonian: Some(to_sparse(&h.entries)),
        dissipators,
        monitor: None,
        propagator: None,
    };
    system.rk4_step(&mut rho.entries, dt);
    rho.time += dt;
    Ok(())
}

impl GoodCavityModel {
    /// Copy with all ℓ ≠ 0 channels removed.
    pub fn without_sidebands(&self) -> Self {
        let mut m = self.clone();
        m.system.dissipators.truncate(1);
        m.rates.iter_mut().for_each(|r| *r = 0.0);
        m
    }
}
