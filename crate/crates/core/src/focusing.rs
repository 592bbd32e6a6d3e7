//! Subwavelength focusing functions from Λ-system dark states.
//!
//! Level ordering for the internal Hamiltonian is `(g, r, e)`.

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{invalid, QscopeError, Result};
use crate::hilbert::WaveFunctionGrid;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LambdaConfig {
    pub omega_c: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub k1: f64,
    pub z0: f64,
    pub delta_e: f64,
    pub gamma_e: f64,
    /// Optional Gaussian envelope on Ω₀ (single-peak variant).
    pub envelope_waist: Option<f64>,
}

impl LambdaConfig {
    pub fn new(epsilon: f64, beta: f64, k1: f64, z0: f64) -> Result<Self> {
        let c = Self {
            omega_c: 1.0,
            epsilon,
            beta,
            k1,
            z0,
            delta_e: 0.0,
            gamma_e: 0.0,
            envelope_waist: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_c > 0.0) {
            return Err(invalid("omega_c", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.3) {
            return Err(invalid("epsilon", format!("{} outside (0, 0.3]", self.epsilon)));
        }
        if self.epsilon > 0.1 {
            log::warn!("epsilon = {} above 0.1; small-epsilon closed forms degrade", self.epsilon);
        }
        if !(self.beta >= 0.0) {
            return Err(invalid("beta", "must be non-negative"));
        }
        if !(self.k1 > 0.0) {
            return Err(invalid("k1", "must be positive"));
        }
        if !self.z0.is_finite() || !self.delta_e.is_finite() {
            return Err(invalid("z0", "must be finite"));
        }
        if !(self.gamma_e >= 0.0) {
            return Err(invalid("gamma_e", "must be non-negative"));
        }
        if let Some(w) = self.envelope_waist {
            if !(w > 0.0) {
                return Err(invalid("envelope_waist", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.k1
    }

    pub fn with_z0(&self, z0: f64) -> Self {
        Self { z0, ..*self }
    }

    pub fn omega0(&self, z: f64) -> f64 {
        let base = self.epsilon * self.omega_c;
        match self.envelope_waist {
            Some(w) => base * (-((z - self.z0) / w).powi(2)).exp(),
            None => base,
        }
    }

    pub fn omega1(&self, z: f64) -> f64 {
        self.omega_c * (1.0 + self.beta - (self.k1 * (z - self.z0)).cos())
    }

    /// |⟨r|D(z)⟩|² = cos²θ(z).
    pub fn dark_overlap(&self, z: f64) -> f64 {
        let (o0, o1) = (self.omega0(z), self.omega1(z));
        let s = o0 * o0 + o1 * o1;
        if s == 0.0 {
            0.0
        } else {
            o0 * o0 / s
        }
    }

    /// Peak overlap (1 + β²/ε²)⁻¹ reached at z = z₀.
    pub fn peak_overlap(&self) -> f64 {
        1.0 / (1.0 + (self.beta / self.epsilon).powi(2))
    }

    /// Λ-system Hamiltonian (complex, non-Hermitian for Γ_e > 0).
    pub fn hamiltonian(&self, z: f64) -> [[Complex64; 3]; 3] {
        let o0 = Complex64::new(0.5 * self.omega0(z), 0.0);
        let o1 = Complex64::new(0.5 * self.omega1(z), 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let ee = -Complex64::new(self.delta_e, 0.5 * self.gamma_e);
        [[zero, zero, o0], [zero, zero, o1], [o0, o1, ee]]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LambdaEigen {
    pub theta: f64,
    /// Mixing angle −½ arctan(Ω/Δ̃_e), principal branch.
    pub chi: Complex64,
    pub e_plus: Complex64,
    pub e_minus: Complex64,
    /// |Ĥ_a |D⟩| in units of Ω_c.
    pub dark_residual: f64,
}

impl LambdaEigen {
    /// Dark state amplitudes in the (g, r, e) basis.
    pub fn dark_state(&self) -> [f64; 3] {
        [self.theta.sin(), -self.theta.cos(), 0.0]
    }
}

pub fn lambda_eigensystem(config: &LambdaConfig, z: f64) -> Result<LambdaEigen> {
    let (o0, o1) = (config.omega0(z), config.omega1(z));
    if o0 == 0.0 && o1 == 0.0 {
        return Err(QscopeError::DegenerateConfiguration { z });
    }
    let theta = o1.atan2(o0);
    let dt = Complex64::new(config.delta_e, 0.5 * config.gamma_e);
    let omega = (o0 * o0 + o1 * o1).sqrt();
    let root = (dt * dt + omega * omega).sqrt();
    let e_plus = -0.5 * (dt - root);
    let e_minus = -0.5 * (dt + root);
    let chi = if dt.norm() == 0.0 {
        Complex64::new(-PI / 4.0, 0.0)
    } else {
        -0.5 * (Complex64::new(omega, 0.0) / dt).atan()
    };

    let h = config.hamiltonian(z);
    let d = [theta.sin(), -theta.cos(), 0.0];
    let mut res = 0.0;
    for row in &h {
        let v: Complex64 = row.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
        res += v.norm_sqr();
    }
    Ok(LambdaEigen {
        theta,
        chi,
        e_plus,
        e_minus,
        dark_residual: res.sqrt() / config.omega_c,
    })
}

/// Dark-state overlap from a 3×3 numerical diagonalization (Γ_e = 0).
pub fn dark_overlap_numeric(config: &LambdaConfig, z: f64) -> f64 {
    let h = config.hamiltonian(z);
    let m = Matrix3::from_fn(|i, j| h[i][j].re);
    let eig = SymmetricEigen::new(m);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .unwrap();
    eig.eigenvectors[(1, k)].powi(2)
}

/// Spatial focusing function used by the dynamics: `f_{z0}(z)` with
/// `∫ f dz = norm_length`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum FocusFunction {
    /// Gaussian of standard deviation `sigma`.
    Gaussian { sigma: f64, norm_length: f64 },
    /// Dark-state profile cos²θ(z − z₀) times `scale`.
    DarkState { config: LambdaConfig, scale: f64 },
}

impl FocusFunction {
    pub fn gaussian(sigma: f64, norm_length: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma", "must be positive"));
        }
        if !(norm_length > 0.0) {
            return Err(invalid("norm_length", "must be positive"));
        }
        Ok(Self::Gaussian { sigma, norm_length })
    }

    pub fn eval(&self, z: f64, z0: f64) -> f64 {
        match self {
            Self::Gaussian { sigma, norm_length } => {
                let u = (z - z0) / sigma;
                norm_length / ((2.0 * PI).sqrt() * sigma) * (-0.5 * u * u).exp()
            }
            Self::DarkState { config, scale } => scale * config.with_z0(z0).dark_overlap(z),
        }
    }

    /// Characteristic width σ.
    pub fn width(&self) -> f64 {
        match self {
            Self::Gaussian { sigma, .. } => *sigma,
            Self::DarkState { config, .. } => fwhm_analytic(config),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FocusProfile {
    pub config: LambdaConfig,
    pub grid: WaveFunctionGrid,
    /// 𝒜 such that φ = 𝒜 f with the normalized f on the grid.
    pub amplitude: f64,
    pub norm_length: f64,
    /// Maximum of cos²θ before normalization.
    pub peak_overlap: f64,
    /// Factor applied to cos²θ·g²/g²(z₀) to reach the normalization.
    pub scale: f64,
}

impl FocusProfile {
    /// Linear interpolation of f on the grid; zero outside.
    pub fn value_at(&self, z: f64) -> f64 {
        let g = &self.grid;
        let x = (z - g.points[0]) / g.spacing;
        if x < 0.0 || x > (g.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(g.values.len() - 2);
        let t = x - i as f64;
        g.values[i] * (1.0 - t) + g.values[i + 1] * t
    }

    pub fn as_function(&self) -> FocusFunction {
        FocusFunction::DarkState {
            config: self.config,
            scale: self.scale,
        }
    }
}

/// Default grid spacing for profiles: λ₁/10⁴.
pub fn default_spacing(config: &LambdaConfig) -> f64 {
    config.wavelength() * 1e-4
}

pub fn focus_profile(
    config: &LambdaConfig,
    g_of_z: Option<&dyn Fn(f64) -> f64>,
    delta_t: f64,
    norm_length: f64,
    window: (f64, f64),
) -> Result<FocusProfile> {
    config.validate()?;
    if delta_t == 0.0 || !delta_t.is_finite() {
        return Err(invalid("delta_t", "must be finite and non-zero"));
    }
    if !(norm_length > 0.0) {
        return Err(invalid("norm_length", "normalization must be positive"));
    }
    let (a, b) = window;
    if config.envelope_waist.is_none() && !(b - a >= config.wavelength() * (1.0 - 1e-12)) {
        return Err(invalid("window", "must cover at least one standing-wave period"));
    }
    if !(b > a) {
        return Err(invalid("window", "empty interval"));
    }
    let n = ((b - a) / default_spacing(config)).round() as usize + 1;
    let g0 = g_of_z.map(|g| g(config.z0)).unwrap_or(1.0);
    if g0 == 0.0 {
        return Err(invalid("g_of_z", "vanishes at the focal point"));
    }
    let raw = WaveFunctionGrid::sample(a, b, n.max(3), |z| {
        let g2 = g_of_z.map(|g| (g(z) / g0).powi(2)).unwrap_or(1.0);
        g2 * config.dark_overlap(z)
    })?;
    let peak_overlap = raw.values.iter().cloned().fold(0.0, f64::max);
    let integral = raw.integrate();
    if !(integral > 0.0) {
        return Err(invalid("norm_length", "profile integrates to zero"));
    }
    let scale = norm_length / integral;
    let grid = WaveFunctionGrid {
        values: raw.values.iter().map(|v| v * scale).collect(),
        ..raw
    };
    Ok(FocusProfile {
        config: *config,
        grid,
        amplitude: g0 * g0 / delta_t / scale,
        norm_length,
        peak_overlap,
        scale,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Resolution {
    pub analytic: f64,
    pub numeric: f64,
}

/// (√2 λ₁/π)(√(ε²+2β²) − β)^{1/2}
pub fn fwhm_analytic(config: &LambdaConfig) -> f64 {
    let s = (config.epsilon.powi(2) + 2.0 * config.beta.powi(2)).sqrt() - config.beta;
    2f64.sqrt() * config.wavelength() / PI * s.sqrt()
}

/// Grid FWHM of cos²θ around z₀ with spacing `spacing`.
pub fn fwhm_numeric(config: &LambdaConfig, spacing: f64) -> f64 {
    let lam = config.wavelength();
    let half = 0.5 * config.dark_overlap(config.z0);
    let n = (0.5 * lam / spacing).round() as usize;
    let edge = |sign: f64| {
        let mut prev = config.dark_overlap(config.z0);
        for i in 1..=n {
            let x = i as f64 * spacing;
            let v = config.dark_overlap(config.z0 + sign * x);
            if v <= half {
                return x - spacing * (half - v) / (prev - v);
            }
            prev = v;
        }
        0.5 * lam
    };
    edge(1.0) + edge(-1.0)
}

pub fn fwhm_resolution(config: &LambdaConfig) -> Result<Resolution> {
    config.validate()?;
    Ok(Resolution {
        analytic: fwhm_analytic(config),
        numeric: fwhm_numeric(config, default_spacing(config)),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NonAdiabatic {
    /// V_na / E_r with E_r = ħ²k₁²/2m.
    pub recoil_units: f64,
    pub energy: f64,
}

pub fn nonadiabatic_potential(config: &LambdaConfig, mass: f64, z: f64) -> Result<NonAdiabatic> {
    if !(config.epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    if !(mass > 0.0) {
        return Err(invalid("mass", "must be positive"));
    }
    let v = nonadiabatic_recoil(config, z);
    Ok(NonAdiabatic {
        recoil_units: v,
        energy: v * config.k1 * config.k1 / (2.0 * mass),
    })
}

fn nonadiabatic_recoil(config: &LambdaConfig, z: f64) -> f64 {
    let u = config.k1 * (z - config.z0);
    let e = config.epsilon;
    let q = (1.0 + config.beta - u.cos()) / e;
    (u.sin() / (1.0 + q * q)).powi(2) / (e * e)
}

/// max_z V_na / E_r over one period: grid search then golden-section refine.
pub fn max_nonadiabatic_potential(config: &LambdaConfig) -> f64 {
    let lam = config.wavelength();
    let n = 20_000;
    let h = lam / n as f64;
    let f = |z: f64| nonadiabatic_recoil(config, z);
    let (mut best_i, mut best) = (0, f64::MIN);
    for i in 0..n {
        let v = f(config.z0 - 0.5 * lam + i as f64 * h);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let c = config.z0 - 0.5 * lam + best_i as f64 * h;
    let (mut a, mut b) = (c - h, c + h);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = b - r * (b - a);
        let x2 = a + r * (b - a);
        if f(x1) > f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    f(0.5 * (a + b)).max(best)
}

/// Mean intracavity photon number κℰ²/(δ² + κ²/4).
pub fn mean_photon_number(drive: f64, kappa: f64, delta: f64) -> f64 {
    kappa * drive * drive / (delta * delta + 0.25 * kappa * kappa)
}

/// Raman detuning Δ_r = g²(z₀)|α|²/Δ_t compensating the cavity light shift.
pub fn raman_compensation(g_z0: f64, drive: f64, kappa: f64, delta: f64, delta_t: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(invalid("kappa", "must be positive"));
    }
    if delta_t == 0.0 {
        return Err(invalid("delta_t", "must be non-zero"));
    }
    Ok(g_z0 * g_z0 * mean_photon_number(drive, kappa, delta) / delta_t)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CavityAtomBudget {
    pub cooperativity: f64,
    pub sigma_over_l0: f64,
    pub max_overlap: f64,
    pub gamma_over_gamma_sp: f64,
}

pub fn decay_budget(cooperativity: f64, sigma_over_l0: f64, max_overlap: f64) -> Result<CavityAtomBudget> {
    if !(cooperativity > 0.0) {
        return Err(invalid("cooperativity", "must be positive"));
    }
    if !(sigma_over_l0 > 0.0) {
        return Err(invalid("sigma_over_l0", "must be positive"));
    }
    if !(max_overlap > 0.0 && max_overlap <= 1.0) {
        return Err(invalid("max_overlap", "must lie in (0, 1]"));
    }
    Ok(CavityAtomBudget {
        cooperativity,
        sigma_over_l0,
        max_overlap,
        gamma_over_gamma_sp: 4.0 * cooperativity * sigma_over_l0 * max_overlap,
    })
}
