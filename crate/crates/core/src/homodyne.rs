//! Homodyne currents, the boxcar low-pass filter, SNR and ensemble statistics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, QscopeError, Result};
use crate::hilbert::DensityMatrix;
use crate::sme::{BadCavityModel, FullModel, GoodCavityModel};

/// Which equation produced a current record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentMode {
    Full,
    BadCavity,
    GoodCavity,
    Manybody,
}

impl fmt::Display for CurrentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CurrentMode::Full => "full",
            CurrentMode::BadCavity => "bad_cavity",
            CurrentMode::GoodCavity => "good_cavity",
            CurrentMode::Manybody => "manybody",
        };
        f.write_str(s)
    }
}

/// Homodyne increments dX_φ on a uniform grid; `times[k]` is the start of step k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentRecord {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub dt: f64,
    pub mode: CurrentMode,
}

impl CurrentRecord {
    pub fn new(dt: f64, mode: CurrentMode) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        Ok(Self {
            times: vec![],
            increments: vec![],
            dt,
            mode,
        })
    }

    pub fn from_increments(t0: f64, dt: f64, increments: Vec<f64>, mode: CurrentMode) -> Result<Self> {
        let mut r = Self::new(dt, mode)?;
        r.times = (0..increments.len()).map(|k| t0 + k as f64 * dt).collect();
        r.increments = increments;
        Ok(r)
    }

    pub fn with_capacity(dt: f64, mode: CurrentMode, n: usize) -> Result<Self> {
        let mut r = Self::new(dt, mode)?;
        r.times.reserve(n);
        r.increments.reserve(n);
        Ok(r)
    }

    pub fn push(&mut self, t: f64, increment: f64) {
        self.times.push(t);
        self.increments.push(increment);
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    /// I(t) = dX/dt.
    pub fn currents(&self) -> Vec<f64> {
        self.increments.iter().map(|x| x / self.dt).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.increments.len() {
            return Err(QscopeError::GridMismatch(format!(
                "{} times vs {} increments",
                self.times.len(),
                self.increments.len()
            )));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        Ok(())
    }

    /// a·self + b·other on a shared grid.
    pub fn combine(&self, a: f64, other: &CurrentRecord, b: f64) -> Result<CurrentRecord> {
        check_grid(&self.times, &other.times)?;
        let increments = self.increments.iter().zip(&other.increments).map(|(x, y)| a * x + b * y).collect();
        Ok(CurrentRecord {
            times: self.times.clone(),
            increments,
            dt: self.dt,
            mode: self.mode,
        })
    }
}

/// Low-pass filtered current ℐ_τ(t) = (1/√τ)∫_τ I(t+t′)dt′.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredSignal {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Window length actually used, `w·dt` with `w = round(τ/dt)`.
    pub tau: f64,
}

impl FilteredSignal {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the grid point nearest `t`.
    pub fn nearest_index(&self, t: f64) -> Option<usize> {
        nearest(&self.times, t)
    }
}

/// Boxcar window anchored at t_k covering steps k..k+w. Only complete windows
/// are emitted, so the output has `n − w + 1` samples.
pub fn lowpass_filter(record: &CurrentRecord, tau: f64) -> Result<FilteredSignal> {
    record.validate()?;
    let dt = record.dt;
    if !(tau >= 2.0 * dt * (1.0 - 1e-12)) {
        return Err(invalid("tau", format!("τ = {tau} must be at least 2·dt = {}", 2.0 * dt)));
    }
    let w = (tau / dt).round() as usize;
    let n = record.len();
    if n < w {
        return Ok(FilteredSignal {
            times: vec![],
            values: vec![],
            tau: w as f64 * dt,
        });
    }
    let tau_eff = w as f64 * dt;
    let norm = 1.0 / tau_eff.sqrt();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for x in &record.increments {
        acc += x;
        prefix.push(acc);
    }
    let m = n - w + 1;
    let values = (0..m).map(|k| (prefix[k + w] - prefix[k]) * norm).collect();
    Ok(FilteredSignal {
        times: record.times[..m].to_vec(),
        values,
        tau: tau_eff,
    })
}

/// Filter bandwidth matched to the spatial resolution: τ ≈ (σ/ℓ₀)·τ_tr.
pub fn default_tau(sigma_over_l0: f64, transit_time: f64) -> f64 {
    sigma_over_l0 * transit_time
}

/// Pointwise ensemble mean, variance (unbiased) and standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// Streaming Welford accumulator with Chan's parallel merge.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    n: usize,
    times: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, times: &[f64], values: &[f64]) -> Result<()> {
        if times.len() != values.len() {
            return Err(QscopeError::GridMismatch("times and values differ in length".into()));
        }
        if self.n == 0 {
            self.times = times.to_vec();
            self.mean = vec![0.0; values.len()];
            self.m2 = vec![0.0; values.len()];
        } else {
            check_grid(&self.times, times)?;
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(values) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        check_grid(&self.times, &other.times)?;
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self) -> Result<EnsembleStats> {
        if self.n == 0 {
            return Err(QscopeError::Degenerate("empty ensemble".into()));
        }
        let n = self.n as f64;
        let variance: Vec<f64> = if self.n == 1 {
            vec![0.0; self.mean.len()]
        } else {
            self.m2.iter().map(|s| (s / (n - 1.0)).max(0.0)).collect()
        };
        let std_error = variance.iter().map(|v| (v / n).sqrt()).collect();
        Ok(EnsembleStats {
            n_traj: self.n,
            times: self.times.clone(),
            mean: self.mean.clone(),
            variance,
            std_error,
        })
    }
}

/// Anything averaged pointwise over an ensemble. Current records contribute
/// I(t) = dX/dt; filtered signals contribute ℐ_τ.
pub trait Series {
    fn series_times(&self) -> &[f64];
    fn series_values(&self) -> std::borrow::Cow<'_, [f64]>;
}

impl Series for CurrentRecord {
    fn series_times(&self) -> &[f64] {
        &self.times
    }
    fn series_values(&self) -> std::borrow::Cow<'_, [f64]> {
        std::borrow::Cow::Owned(self.currents())
    }
}

impl Series for FilteredSignal {
    fn series_times(&self) -> &[f64] {
        &self.times
    }
    fn series_values(&self) -> std::borrow::Cow<'_, [f64]> {
        std::borrow::Cow::Borrowed(&self.values)
    }
}

pub fn ensemble_average<S: Series>(records: &[S]) -> Result<EnsembleStats> {
    let mut acc = StatsAccumulator::new();
    for r in records {
        acc.push(r.series_times(), &r.series_values())?;
    }
    acc.finish()
}

/// ⟨ℐ_τ⟩²/⟨δℐ_τ²⟩ at the grid point nearest `at_time`.
pub fn snr(ensemble: &[FilteredSignal], at_time: f64) -> Result<f64> {
    if ensemble.len() < 2 {
        return Err(QscopeError::Degenerate(format!("SNR needs at least 2 signals, got {}", ensemble.len())));
    }
    let first = &ensemble[0];
    for s in &ensemble[1..] {
        if (s.tau - first.tau).abs() > 1e-12 * first.tau {
            return Err(QscopeError::GridMismatch(format!("τ {} vs {}", s.tau, first.tau)));
        }
        check_grid(&first.times, &s.times)?;
    }
    let k = first
        .nearest_index(at_time)
        .ok_or_else(|| QscopeError::Degenerate("empty filtered signals".into()))?;
    let mut acc = StatsAccumulator::new();
    for s in ensemble {
        acc.push(&[s.times[k]], &[s.values[k]])?;
    }
    let st = acc.finish()?;
    let (m, v) = (st.mean[0], st.variance[0]);
    if v <= 1e-300 * m.abs().max(1.0) {
        return Err(QscopeError::Degenerate(format!("zero variance at t = {}", first.times[k])));
    }
    Ok(m * m / v)
}

/// Source of the deterministic part of a homodyne current.
pub trait HomodyneSource {
    fn mode(&self) -> CurrentMode;
    fn state_dim(&self) -> usize;
    /// Signal s such that dX = s·dt + dW.
    fn current_signal(&self, rho: &DensityMatrix) -> f64;
}

impl HomodyneSource for FullModel {
    fn mode(&self) -> CurrentMode {
        CurrentMode::Full
    }
    fn state_dim(&self) -> usize {
        self.basis.dimension
    }
    fn current_signal(&self, rho: &DensityMatrix) -> f64 {
        self.signal(rho)
    }
}

impl HomodyneSource for BadCavityModel {
    fn mode(&self) -> CurrentMode {
        CurrentMode::BadCavity
    }
    fn state_dim(&self) -> usize {
        self.basis.dimension
    }
    fn current_signal(&self, rho: &DensityMatrix) -> f64 {
        self.signal(rho)
    }
}

impl HomodyneSource for GoodCavityModel {
    fn mode(&self) -> CurrentMode {
        CurrentMode::GoodCavity
    }
    fn state_dim(&self) -> usize {
        self.f_diag.len()
    }
    fn current_signal(&self, rho: &DensityMatrix) -> f64 {
        self.system.signal(&rho.entries)
    }
}

/// dX_φ = s·dt + dW with the same dW the paired SME step consumes.
pub fn synthesize_increment(source: &dyn HomodyneSource, rho: &DensityMatrix, dw: f64, dt: f64) -> Result<f64> {
    if rho.dim() != source.state_dim() {
        return Err(QscopeError::ModeMismatch(format!(
            "{} model expects dimension {}, state has {}",
            source.mode(),
            source.state_dim(),
            rho.dim()
        )));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    Ok(source.current_signal(rho) * dt + dw)
}

pub(crate) fn check_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(QscopeError::GridMismatch(format!("lengths {} vs {}", a.len(), b.len())));
    }
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        if (x - y).abs() > 1e-9 * x.abs().max(1.0) {
            return Err(QscopeError::GridMismatch(format!("t[{k}] = {x} vs {y}")));
        }
    }
    Ok(())
}

fn nearest(times: &[f64], t: f64) -> Option<usize> {
    times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_ho_operators, matrix_elements_adaptive, OperatorMatrix, TruncatedBasis};
    use crate::noise::NoiseSource;
    use crate::sme::{CavityFrame, CavityParams, MeasurementParams};

    fn noise_record(seed: u64, stream: u64, n: usize, dt: f64) -> CurrentRecord {
        let mut src = NoiseSource::new(seed, stream);
        let inc = (0..n).map(|_| src.increment(dt)).collect();
        CurrentRecord::from_increments(0.0, dt, inc, CurrentMode::BadCavity).unwrap()
    }

    #[test]
    fn constant_current_filters_to_c_sqrt_tau() {
        let dt = 0.01;
        let c = 2.5;
        let r = CurrentRecord::from_increments(0.0, dt, vec![c * dt; 500], CurrentMode::Full).unwrap();
        let f = lowpass_filter(&r, 0.5).unwrap();
        assert_eq!(f.len(), 451);
        for v in &f.values {
            assert!((v - c * 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn filtered_noise_has_unit_variance() {
        let dt = 0.01;
        let w = 10;
        let n_windows = 10_000;
        let r = noise_record(5, 0, w * n_windows, dt);
        let f = lowpass_filter(&r, w as f64 * dt).unwrap();
        let xs: Vec<f64> = (0..n_windows).map(|k| f.values[k * w]).collect();
        let mean = xs.iter().sum::<f64>() / n_windows as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n_windows - 1) as f64;
        let sd = (2.0 / (n_windows - 1) as f64).sqrt();
        assert!((var - 1.0).abs() < 5.0 * sd, "var = {var}");
    }

    #[test]
    fn filter_is_linear() {
        let dt = 0.005;
        let x = noise_record(1, 0, 2000, dt);
        let y = noise_record(1, 1, 2000, dt);
        let z = x.combine(1.7, &y, -0.4).unwrap();
        let (fx, fy, fz) = (
            lowpass_filter(&x, 0.1).unwrap(),
            lowpass_filter(&y, 0.1).unwrap(),
            lowpass_filter(&z, 0.1).unwrap(),
        );
        for k in 0..fz.len() {
            assert!((fz.values[k] - 1.7 * fx.values[k] + 0.4 * fy.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let r = noise_record(1, 0, 100, 0.01);
        assert!(lowpass_filter(&r, 0.015).is_err());
        assert!(lowpass_filter(&r, 0.02).is_ok());
    }

    #[test]
    fn identical_signals_have_no_snr() {
        let r = CurrentRecord::from_increments(0.0, 0.01, vec![0.01; 100], CurrentMode::Full).unwrap();
        let f = lowpass_filter(&r, 0.1).unwrap();
        let ens = vec![f.clone(), f.clone(), f];
        assert!(matches!(snr(&ens, 0.3), Err(QscopeError::Degenerate(_))));
    }

    #[test]
    fn pure_noise_snr_vanishes() {
        let n = 400;
        let ens: Vec<FilteredSignal> = (0..n)
            .map(|s| lowpass_filter(&noise_record(9, s, 200, 0.01), 0.2).unwrap())
            .collect();
        // mean ~ N(0, var/n) so n·SNR ~ χ²₁
        let v = snr(&ens, 0.5).unwrap();
        assert!(v < 25.0 / n as f64, "snr = {v}");
    }

    #[test]
    fn single_record_has_zero_variance() {
        let r = noise_record(3, 0, 50, 0.01);
        let st = ensemble_average(&[r]).unwrap();
        assert_eq!(st.n_traj, 1);
        assert!(st.variance.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn std_error_scales_as_inverse_sqrt_n() {
        let ns = [50usize, 100, 200, 400, 800, 1600];
        let pts: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| {
                let recs: Vec<CurrentRecord> = (0..n as u64).map(|s| noise_record(21, s, 200, 1.0)).collect();
                let st = ensemble_average(&recs).unwrap();
                let se = st.std_error.iter().sum::<f64>() / st.std_error.len() as f64;
                ((n as f64).ln(), se.ln())
            })
            .collect();
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / m, sy / m);
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = num / den;
        assert!((slope + 0.5).abs() < 0.05, "slope = {slope}");
    }

    #[test]
    fn welford_merge_matches_sequential() {
        let recs: Vec<CurrentRecord> = (0..30).map(|s| noise_record(4, s, 40, 0.1)).collect();
        let whole = ensemble_average(&recs).unwrap();
        let mut a = StatsAccumulator::new();
        let mut b = StatsAccumulator::new();
        for (i, r) in recs.iter().enumerate() {
            let target = if i % 3 == 0 { &mut a } else { &mut b };
            target.push(&r.times, &r.currents()).unwrap();
        }
        a.merge(&b).unwrap();
        let merged = a.finish().unwrap();
        for k in 0..whole.mean.len() {
            assert!((whole.mean[k] - merged.mean[k]).abs() < 1e-12);
            assert!((whole.variance[k] - merged.variance[k]).abs() < 1e-10 * whole.variance[k].max(1.0));
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = noise_record(1, 0, 50, 0.01);
        let b = noise_record(1, 1, 60, 0.01);
        assert!(matches!(ensemble_average(&[a, b]), Err(QscopeError::GridMismatch(_))));
    }

    #[test]
    fn vacuum_cavity_increment_is_pure_noise() {
        let b = TruncatedBasis::harmonic_oscillator(3, 1.0).unwrap();
        let ops = build_ho_operators(&b, 1.0).unwrap();
        let f = OperatorMatrix::identity(&b);
        let cav = CavityParams::new(10.0, 0.0, 0.0, 0.3).unwrap();
        let model = FullModel::new(&ops.h_sys, &f, CavityFrame::Lab { amplitude: 0.5 }, cav, 3).unwrap();
        let atom = DensityMatrix::fock(&b, 1).unwrap();
        let vac = DensityMatrix::fock(&TruncatedBasis::cavity_fock(3).unwrap(), 0).unwrap();
        let rho = atom.kron(&vac).unwrap();
        let dx = synthesize_increment(&model, &rho, 0.123, 0.001).unwrap();
        assert!((dx - 0.123).abs() < 1e-15);
    }

    #[test]
    fn bad_cavity_fock_increment_uses_diagonal_element() {
        let b = TruncatedBasis::harmonic_oscillator(8, 1.0).unwrap();
        let ops = build_ho_operators(&b, 1.0).unwrap();
        let (f, _) = matrix_elements_adaptive(&|z: f64| (-(z - 0.4).powi(2) / 0.18).exp(), &b).unwrap();
        let gamma = 2.0;
        let model = BadCavityModel::new(&ops.h_sys, &f, MeasurementParams::new(gamma, 1.0).unwrap(), 50.0, 0.0).unwrap();
        let rho = DensityMatrix::fock(&b, 2).unwrap();
        let dt = 1e-3;
        let dx = synthesize_increment(&model, &rho, 0.0, dt).unwrap();
        let expected = 2.0 * gamma.sqrt() * f.entries.get(2, 2).re * dt;
        assert!((dx - expected).abs() < 1e-14);
        let wrong = DensityMatrix::fock(&TruncatedBasis::harmonic_oscillator(4, 1.0).unwrap(), 0).unwrap();
        assert!(matches!(
            synthesize_increment(&model, &wrong, 0.0, dt),
            Err(QscopeError::ModeMismatch(_))
        ));
    }
}
