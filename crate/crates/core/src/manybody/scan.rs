//! Density scan across the impurity and its ensemble statistics.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_manybody_basis, build_orbitals, check_non_demolition, friedel_density, single_particle_f_elements,
    single_particle_f_elements_unchecked, BoxImpurityModel, ManyBodyBasis, ManyBodyOperators, ManyBodyState,
    OrbitalBasis, OrbitalSet, DEFAULT_MAX_STATES, DEFAULT_WINDOW,
};
use crate::error::{invalid, QscopeError, Result};
use crate::focusing::FocusFunction;
use crate::homodyne::{ensemble_average, lowpass_filter, CurrentMode, CurrentRecord, EnsembleStats, FilteredSignal};
use crate::noise::NoiseSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedelConfig {
    pub model: BoxImpurityModel,
    /// Gaussian standard deviation of the focus.
    pub sigma: f64,
    pub kappa: f64,
    pub gamma_t: f64,
    pub total_time: f64,
    /// τ/T
    pub tau_frac: f64,
    pub n_steps: usize,
    pub window: usize,
    pub cutoff: usize,
    pub max_states: usize,
    /// ∫f dz; defaults to 1/n_F so that ⟨f̂^(0)⟩ ≈ n(z₀)/n_F.
    pub norm_length: Option<f64>,
    pub scan_start: f64,
    pub scan_end: f64,
    pub allow_demolition: bool,
    /// Evolve the full density matrix instead of populations.
    pub dense: bool,
}

impl Default for FriedelConfig {
    /// N = 16, σ = 0.01L, κ = 4π²ħ²/(mL²), γT = 400, τ = 0.01T.
    fn default() -> Self {
        let model = BoxImpurityModel {
            n_fermions: 16,
            box_length: 1.0,
            n_orbitals: 8 + DEFAULT_WINDOW,
            mass: 1.0,
        };
        Self {
            model,
            sigma: 0.01,
            kappa: 4.0 * PI * PI,
            gamma_t: 400.0,
            total_time: 1.0,
            tau_frac: 0.01,
            n_steps: 10_000,
            window: DEFAULT_WINDOW,
            cutoff: 1,
            max_states: DEFAULT_MAX_STATES,
            norm_length: None,
            scan_start: -0.5,
            scan_end: 0.5,
            allow_demolition: false,
            dense: false,
        }
    }
}

impl FriedelConfig {
    pub fn gamma(&self) -> f64 {
        self.gamma_t / self.total_time
    }

    pub fn dt(&self) -> f64 {
        self.total_time / self.n_steps as f64
    }

    pub fn tau(&self) -> f64 {
        self.tau_frac * self.total_time
    }

    pub fn norm(&self) -> f64 {
        self.norm_length.unwrap_or(1.0 / self.model.fermi_density())
    }

    /// Linear sweep z₀(t).
    pub fn z0_at(&self, t: f64) -> f64 {
        self.scan_start + (self.scan_end - self.scan_start) * t / self.total_time
    }

    pub fn focus(&self) -> Result<FocusFunction> {
        FocusFunction::gaussian(self.sigma, self.norm())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        BoxImpurityModel::new(m.n_fermions, m.box_length, m.n_orbitals, m.mass)?;
        if !(self.sigma > 0.0) {
            return Err(invalid("sigma", "must be positive"));
        }
        if !(self.gamma_t > 0.0) || !(self.total_time > 0.0) {
            return Err(invalid("gamma_t", "γT and T must be positive"));
        }
        if self.n_steps < 2 {
            return Err(invalid("n_steps", "at least 2"));
        }
        if self.tau() < 2.0 * self.dt() {
            return Err(invalid("tau_frac", "τ must cover at least two steps"));
        }
        let h = 0.5 * m.box_length;
        if self.scan_start.abs() > h || self.scan_end.abs() > h {
            return Err(invalid("scan", "scan range must lie inside the box"));
        }
        check_non_demolition(m, self.sigma, self.kappa, self.allow_demolition)
    }

    /// Theory curve in filtered-current units: 2√γ√τ·norm·n_F[1 − sin(2k_Fz)/(2k_Fz)].
    pub fn theory_signal(&self, z: f64, tau: f64) -> f64 {
        2.0 * self.gamma().sqrt() * tau.sqrt() * self.norm() * friedel_density(&self.model, z)
    }
}

/// Noise-independent part of a scan: single-particle f elements at every step.
#[derive(Debug, Clone)]
pub struct FriedelSchedule {
    pub orbitals: OrbitalSet,
    pub basis: ManyBodyBasis,
    pub template: ManyBodyOperators,
    pub z0: Vec<f64>,
    f: Vec<DMatrix<f64>>,
}

impl FriedelSchedule {
    pub fn build(cfg: &FriedelConfig) -> Result<Self> {
        cfg.validate()?;
        let orbitals = build_orbitals(&cfg.model, OrbitalBasis::LeftRight);
        let basis = build_manybody_basis(&cfg.model, &orbitals, cfg.window, cfg.cutoff, cfg.max_states)?;
        let mut template = ManyBodyOperators::structure(&basis, &orbitals, cfg.gamma(), cfg.kappa)?;
        let focus = cfg.focus()?;
        for z in [cfg.scan_start, 0.5 * (cfg.scan_start + cfg.scan_end), 0.0, cfg.scan_end] {
            single_particle_f_elements(&focus, z, &orbitals)?;
        }
        let dt = cfg.dt();
        let mut z0 = Vec::with_capacity(cfg.n_steps);
        let mut fs = Vec::with_capacity(cfg.n_steps);
        for k in 0..cfg.n_steps {
            let z = cfg.z0_at((k as f64 + 0.5) * dt);
            z0.push(z);
            fs.push(single_particle_f_elements_unchecked(&focus, z, &orbitals));
        }
        template.update(&fs[0])?;
        Ok(Self {
            orbitals,
            basis,
            template,
            z0,
            f: fs,
        })
    }

    pub fn len(&self) -> usize {
        self.z0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z0.is_empty()
    }

    pub fn load(&self, ops: &mut ManyBodyOperators, k: usize) -> Result<()> {
        ops.update(&self.f[k])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FriedelScan {
    pub seed: u64,
    pub stream: u64,
    pub record: CurrentRecord,
    pub filtered: FilteredSignal,
    /// z₀ at the centre of each filter window.
    pub z_filtered: Vec<f64>,
    pub theory: Vec<f64>,
    /// Largest probability outside the ground configuration.
    pub max_excited: f64,
    /// Probability in configurations with exactly `cutoff` pairs, per step.
    pub tail: Vec<f64>,
}

pub fn run_friedel_scan(cfg: &FriedelConfig, schedule: &FriedelSchedule, seed: u64, stream: u64) -> Result<FriedelScan> {
    let dt = cfg.dt();
    let mut ops = schedule.template.clone();
    let mut state = ManyBodyState::ground(&schedule.basis, cfg.dense);
    let mut noise = NoiseSource::new(seed, stream);
    let mut record = CurrentRecord::with_capacity(dt, CurrentMode::Manybody, schedule.len())?;
    let g = schedule.basis.ground_index();
    let mut max_excited = 0.0f64;
    let mut tail = Vec::with_capacity(schedule.len());
    for k in 0..schedule.len() {
        schedule.load(&mut ops, k)?;
        let t = k as f64 * dt;
        let out = ops.step(&mut state, dt, &mut noise, k)?;
        record.push(t, out.increment);
        let p = state.populations();
        max_excited = max_excited.max(1.0 - p[g]);
        tail.push(state.excitation_probability(&schedule.basis, cfg.cutoff));
    }
    let filtered = lowpass_filter(&record, cfg.tau())?;
    let z_filtered: Vec<f64> = filtered.times.iter().map(|t| cfg.z0_at(t + 0.5 * filtered.tau)).collect();
    let theory = z_filtered.iter().map(|&z| cfg.theory_signal(z, filtered.tau)).collect();
    Ok(FriedelScan {
        seed,
        stream,
        record,
        filtered,
        z_filtered,
        theory,
        max_excited,
        tail,
    })
}

/// Fraction of points with |z| < `z_max` where |signal − theory| ≤ band.
pub fn friedel_coverage(signal: &[f64], theory: &[f64], band: &[f64], z: &[f64], z_max: f64) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for k in 0..signal.len().min(theory.len()).min(band.len()).min(z.len()) {
        if z[k].abs() < z_max {
            total += 1;
            if (signal[k] - theory[k]).abs() <= band[k] {
                inside += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedelFit {
    /// Wavevector q in A[1 − sin(qz)/(qz)] + B.
    pub q: f64,
    /// 2π/q
    pub period: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub rms_residual: f64,
}

fn fit_at(z: &[f64], y: &[f64], q: f64) -> (f64, f64, f64) {
    let basis: Vec<f64> = z
        .iter()
        .map(|&x| {
            let u = q * x;
            if u.abs() < 1e-8 {
                0.0
            } else {
                1.0 - u.sin() / u
            }
        })
        .collect();
    let n = z.len() as f64;
    let (sx, sy) = (basis.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = basis.iter().map(|b| b * b).sum();
    let sxy: f64 = basis.iter().zip(y).map(|(b, v)| b * v).sum();
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return (0.0, sy / n, f64::INFINITY);
    }
    let a = (n * sxy - sx * sy) / det;
    let b = (sy - a * sx) / n;
    let ssr = basis.iter().zip(y).map(|(x, v)| (v - a * x - b).powi(2)).sum();
    (a, b, ssr)
}

/// Least-squares fit of A[1 − sin(qz)/(qz)] + B with q searched in
/// [0.5, 1.5]·2k_F.
pub fn fit_friedel_period(z: &[f64], y: &[f64], k_fermi: f64) -> Result<FriedelFit> {
    if z.len() != y.len() || z.len() < 4 {
        return Err(QscopeError::Degenerate("period fit needs at least 4 matching points".into()));
    }
    let q0 = 2.0 * k_fermi;
    let (lo, hi) = (0.5 * q0, 1.5 * q0);
    let n = 2000;
    let grid: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let q = lo + (hi - lo) * i as f64 / n as f64;
            (q, fit_at(z, y, q).2)
        })
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = (grid[best].0 - step, grid[best].0 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if fit_at(z, y, c).2 < fit_at(z, y, d).2 {
            b = d;
        } else {
            a = c;
        }
    }
    let q = 0.5 * (a + b);
    let (amp, off, ssr) = fit_at(z, y, q);
    Ok(FriedelFit {
        q,
        period: 2.0 * PI / q,
        amplitude: amp,
        offset: off,
        rms_residual: (ssr / z.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FriedelEnsemble {
    pub scans: Vec<FriedelScan>,
    pub stats: EnsembleStats,
    pub z: Vec<f64>,
    pub theory: Vec<f64>,
    /// Coverage of the first scan by theory ± ensemble std in |z| < 0.2L.
    pub coverage: f64,
    pub fit: FriedelFit,
    /// max_t of the ensemble-mean probability in the `cutoff`-pair sector.
    pub max_tail: f64,
}

pub fn run_friedel_ensemble(cfg: &FriedelConfig, n_scans: usize, seed: u64) -> Result<FriedelEnsemble> {
    if n_scans < 2 {
        return Err(invalid("n_scans", "at least 2 for a noise band"));
    }
    let schedule = FriedelSchedule::build(cfg)?;
    let results: Vec<Result<FriedelScan>> = (0..n_scans as u64)
        .into_par_iter()
        .map(|s| run_friedel_scan(cfg, &schedule, seed, s))
        .collect();
    if let Some(pos) = results.iter().position(|r| r.is_err()) {
        let completed_streams: Vec<u64> = results
            .iter()
            .filter_map(|r| r.as_ref().ok().map(|s| s.stream))
            .collect();
        let source = results.into_iter().nth(pos).and_then(|r| r.err()).map(Box::new);
        return Err(QscopeError::Ensemble {
            completed: completed_streams.len(),
            requested: n_scans,
            completed_streams,
            source: source.unwrap_or_else(|| Box::new(QscopeError::Degenerate("unknown failure".into()))),
        });
    }
    let scans: Vec<FriedelScan> = results.into_iter().map(|r| r.expect("checked above")).collect();
    let filtered: Vec<FilteredSignal> = scans.iter().map(|s| s.filtered.clone()).collect();
    let stats = ensemble_average(&filtered)?;
    let z = scans[0].z_filtered.clone();
    let theory = scans[0].theory.clone();
    let band: Vec<f64> = stats.variance.iter().map(|v| v.sqrt()).collect();
    let z_max = 0.2 * cfg.model.box_length;
    let coverage = friedel_coverage(&scans[0].filtered.values, &theory, &band, &z, z_max);
    let (zs, ys): (Vec<f64>, Vec<f64>) = z
        .iter()
        .zip(&stats.mean)
        .filter(|(x, _)| x.abs() < z_max)
        .map(|(a, b)| (*a, *b))
        .unzip();
    let fit = fit_friedel_period(&zs, &ys, cfg.model.fermi_wavevector())?;
    let steps = scans[0].tail.len();
    let max_tail = (0..steps)
        .map(|k| scans.iter().map(|s| s.tail[k]).sum::<f64>() / scans.len() as f64)
        .fold(0.0, f64::max);
    Ok(FriedelEnsemble {
        scans,
        stats,
        z,
        theory,
        coverage,
        fit,
        max_tail,
    })
}
