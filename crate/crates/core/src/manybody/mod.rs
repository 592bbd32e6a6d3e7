//! Non-interacting fermions in a box with a hard impurity at z = 0: orbitals,
//! the Friedel density, many-body focusing operators, the many-body SME and
//! the density scan.
//!
//! Units ħ = 1; lengths in the units of `box_length`.

mod operators;
mod scan;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QscopeError, Result};
use crate::focusing::FocusFunction;
use crate::hilbert::GaussLegendre;

pub use operators::{
    build_manybody_basis, build_manybody_operators, manybody_increment, step_manybody_sme, suppressed_rate,
    ManyBodyBasis, ManyBodyOperators, ManyBodyRepr, ManyBodyState, Transition, DEFAULT_MAX_STATES, DEFAULT_WINDOW,
};
pub use scan::{
    fit_friedel_period, friedel_coverage, run_friedel_ensemble, run_friedel_scan, FriedelConfig, FriedelEnsemble,
    FriedelFit, FriedelScan, FriedelSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxImpurityModel {
    pub n_fermions: usize,
    pub box_length: f64,
    /// Kept orbitals per parity (or side) sector.
    pub n_orbitals: usize,
    pub mass: f64,
}

impl BoxImpurityModel {
    pub fn new(n_fermions: usize, box_length: f64, n_orbitals: usize, mass: f64) -> Result<Self> {
        if n_fermions == 0 || n_fermions % 2 != 0 {
            return Err(invalid("n_fermions", "must be even and positive"));
        }
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(invalid("box_length", "must be positive"));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(invalid("mass", "must be positive"));
        }
        if n_orbitals < n_fermions / 2 {
            return Err(invalid("n_orbitals", format!("need at least N/2 = {} per sector", n_fermions / 2)));
        }
        if 2 * n_orbitals > 128 {
            return Err(invalid("n_orbitals", "at most 64 per sector"));
        }
        Ok(Self {
            n_fermions,
            box_length,
            n_orbitals,
            mass,
        })
    }

    /// 2π²/(mL²)
    pub fn energy_unit(&self) -> f64 {
        2.0 * PI * PI / (self.mass * self.box_length * self.box_length)
    }

    pub fn fermi_density(&self) -> f64 {
        self.n_fermions as f64 / self.box_length
    }

    pub fn fermi_wavevector(&self) -> f64 {
        PI * self.fermi_density()
    }

    pub fn half_filling(&self) -> usize {
        self.n_fermions / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitalBasis {
    /// ψ^(o), ψ^(e)
    Parity,
    /// (ψ^(o) ∓ ψ^(e))/√2, supported on one side of the impurity.
    LeftRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeLabel {
    Odd,
    Even,
    Left,
    Right,
}

/// Single-particle orbitals; index `2(n − 1) + s` with s = 0 for odd/left and
/// s = 1 for even/right.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    pub basis: OrbitalBasis,
    pub box_length: f64,
    pub quantum_numbers: Vec<usize>,
    pub labels: Vec<ModeLabel>,
    pub energies: Vec<f64>,
}

impl OrbitalSet {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn index(n: usize, second: bool) -> usize {
        2 * (n - 1) + second as usize
    }

    pub fn eval(&self, k: usize, z: f64) -> f64 {
        let l = self.box_length;
        if z.abs() > 0.5 * l {
            return 0.0;
        }
        let q = 2.0 * PI * self.quantum_numbers[k] as f64 / l;
        let a = (2.0 / l).sqrt();
        match self.labels[k] {
            ModeLabel::Odd => a * (q * z).sin(),
            ModeLabel::Even => a * (q * z.abs()).sin(),
            // (ψ^(o) − ψ^(e))/√2 = 2 sin(qz)/√L on z < 0
            ModeLabel::Left if z < 0.0 => 2.0 * (q * z).sin() / l.sqrt(),
            ModeLabel::Right if z > 0.0 => 2.0 * (q * z).sin() / l.sqrt(),
            _ => 0.0,
        }
    }

    /// Interval outside of which orbital `k` vanishes.
    pub fn support(&self, k: usize) -> (f64, f64) {
        let h = 0.5 * self.box_length;
        match self.labels[k] {
            ModeLabel::Left => (-h, 0.0),
            ModeLabel::Right => (0.0, h),
            _ => (-h, h),
        }
    }

    /// Orbitals `a` and `b` overlap on a set of nonzero measure.
    pub fn supports_overlap(&self, a: usize, b: usize) -> bool {
        let (a0, a1) = self.support(a);
        let (b0, b1) = self.support(b);
        a0.max(b0) < a1.min(b1)
    }
}

pub fn build_orbitals(model: &BoxImpurityModel, basis: OrbitalBasis) -> OrbitalSet {
    let unit = model.energy_unit();
    let (first, second) = match basis {
        OrbitalBasis::Parity => (ModeLabel::Odd, ModeLabel::Even),
        OrbitalBasis::LeftRight => (ModeLabel::Left, ModeLabel::Right),
    };
    let mut quantum_numbers = vec![];
    let mut labels = vec![];
    let mut energies = vec![];
    for n in 1..=model.n_orbitals {
        for label in [first, second] {
            quantum_numbers.push(n);
            labels.push(label);
            energies.push(unit * (n * n) as f64);
        }
    }
    OrbitalSet {
        basis,
        box_length: model.box_length,
        quantum_numbers,
        labels,
        energies,
    }
}

/// n(z) = n_F + (1/L){1 − sin[2π(N+1)z/L]/sin(2πz/L)}; zero outside the box.
pub fn ground_state_density(model: &BoxImpurityModel, z: f64) -> f64 {
    let l = model.box_length;
    if z.abs() > 0.5 * l {
        return 0.0;
    }
    let np1 = (model.n_fermions + 1) as f64;
    let x = 2.0 * PI * z / l;
    let s = x.sin();
    let ratio = if s.abs() < 1e-7 {
        np1 * (np1 * x).cos() / x.cos()
    } else {
        (np1 * x).sin() / s
    };
    model.fermi_density() + (1.0 - ratio) / l
}

/// n_F[1 − sin(2k_F z)/(2k_F z)]
pub fn friedel_density(model: &BoxImpurityModel, z: f64) -> f64 {
    let u = 2.0 * model.fermi_wavevector() * z;
    let sinc = if u.abs() < 1e-8 { 1.0 - u * u / 6.0 } else { u.sin() / u };
    model.fermi_density() * (1.0 - sinc)
}

/// Σ_{n ≤ N/2} |ψ_n|² summed over both sectors.
pub fn orbital_density(orbitals: &OrbitalSet, n_fermions: usize, z: f64) -> f64 {
    (0..orbitals.len())
        .filter(|&k| orbitals.quantum_numbers[k] <= n_fermions / 2)
        .map(|k| orbitals.eval(k, z).powi(2))
        .sum()
}

const GL_NODES: usize = 16;

/// Quadrature nodes covering the focus window, split at the impurity.
fn focus_nodes(focus: &FocusFunction, z0: f64, orbitals: &OrbitalSet, refine: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 0.5 * orbitals.box_length;
    let n_max = orbitals.quantum_numbers.iter().copied().max().unwrap_or(1) as f64;
    let wavelength = orbitals.box_length / n_max;
    let (lo, hi, width) = match focus {
        FocusFunction::Gaussian { sigma, .. } => ((z0 - 12.0 * sigma).max(-h), (z0 + 12.0 * sigma).min(h), *sigma),
        FocusFunction::DarkState { .. } => (-h, h, focus.width()),
    };
    let panel = width.min(0.25 * wavelength);
    let gl = GaussLegendre::new(GL_NODES);
    let mut xs = vec![];
    let mut ws = vec![];
    for (a, b) in [(lo, hi.min(0.0)), (lo.max(0.0), hi)] {
        if b <= a {
            continue;
        }
        let panels = (((b - a) / panel).ceil() as usize).max(1) * refine;
        let (x, w) = gl.mapped(a, b, panels);
        xs.extend(x);
        ws.extend(w);
    }
    (xs, ws)
}

fn f_matrix_on(focus: &FocusFunction, z0: f64, orbitals: &OrbitalSet, xs: &[f64], ws: &[f64]) -> DMatrix<f64> {
    let m = orbitals.len();
    let psi = DMatrix::from_fn(m, xs.len(), |k, i| orbitals.eval(k, xs[i]));
    let weighted = DMatrix::from_fn(m, xs.len(), |k, i| psi[(k, i)] * ws[i] * focus.eval(xs[i], z0));
    let mut f = &weighted * psi.transpose();
    for a in 0..m {
        for b in 0..a {
            if !orbitals.supports_overlap(a, b) {
                f[(a, b)] = 0.0;
                f[(b, a)] = 0.0;
            } else {
                let s = 0.5 * (f[(a, b)] + f[(b, a)]);
                f[(a, b)] = s;
                f[(b, a)] = s;
            }
        }
    }
    f
}

/// f_νν′ = ⟨ν|f_{z0}(ẑ)|ν′⟩ by composite Gauss–Legendre quadrature, checked
/// against a rule with twice the panels.
pub fn single_particle_f_elements(focus: &FocusFunction, z0: f64, orbitals: &OrbitalSet) -> Result<DMatrix<f64>> {
    let (x1, w1) = focus_nodes(focus, z0, orbitals, 1);
    let (x2, w2) = focus_nodes(focus, z0, orbitals, 2);
    let coarse = f_matrix_on(focus, z0, orbitals, &x1, &w1);
    let fine = f_matrix_on(focus, z0, orbitals, &x2, &w2);
    let diff = (&fine - &coarse).amax();
    let tol = 1e-9 * fine.amax().max(1.0);
    if diff > tol {
        return Err(QscopeError::QuadratureAccuracy {
            order: x1.len(),
            doubled: x2.len(),
            diff,
            tol,
        });
    }
    Ok(fine)
}

/// Single-rule variant for hot loops, after a representative point has
/// passed [`single_particle_f_elements`].
pub fn single_particle_f_elements_unchecked(focus: &FocusFunction, z0: f64, orbitals: &OrbitalSet) -> DMatrix<f64> {
    let (x, w) = focus_nodes(focus, z0, orbitals, 1);
    f_matrix_on(focus, z0, orbitals, &x, &w)
}

/// Refuses κ > ħ²/(mσ²) unless overridden.
pub fn check_non_demolition(model: &BoxImpurityModel, sigma: f64, kappa: f64, allow: bool) -> Result<()> {
    let bound = 1.0 / (model.mass * sigma * sigma);
    if kappa > bound && !allow {
        return Err(QscopeError::Guard(format!(
            "κ = {kappa:.4e} exceeds the non-demolition bound ħ²/(mσ²) = {bound:.4e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
