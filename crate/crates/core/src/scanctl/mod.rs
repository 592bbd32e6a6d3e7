//! Run orchestration: scan schedules, run configuration and guards,
//! trajectories, ensembles and jump labelling.

mod cache;
mod run;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, QscopeError, Result};
use crate::homodyne::CurrentRecord;

pub use cache::FMatrixCache;
pub use run::{
    run_ensemble, run_oracle, run_prepared, run_trajectory, thread_limit, EnsembleResult, OracleTrace, PreparedRun,
    TrajectorySummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    FixedPoint,
    LinearScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSchedule {
    pub mode: ScanMode,
    pub z0_start: f64,
    pub z0_end: f64,
    /// Length T of one scan.
    pub duration: f64,
    pub n_scans: usize,
}

impl ScanSchedule {
    pub fn fixed(z0: f64, duration: f64) -> Self {
        Self {
            mode: ScanMode::FixedPoint,
            z0_start: z0,
            z0_end: z0,
            duration,
            n_scans: 1,
        }
    }

    pub fn linear(z0_start: f64, z0_end: f64, duration: f64, n_scans: usize) -> Self {
        Self {
            mode: ScanMode::LinearScan,
            z0_start,
            z0_end,
            duration,
            n_scans,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("scan.T", "must be positive"));
        }
        if self.n_scans == 0 {
            return Err(invalid("scan.n_scans", "at least one scan"));
        }
        if !self.z0_start.is_finite() || !self.z0_end.is_finite() {
            return Err(invalid("scan.z0", "must be finite"));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.duration * self.n_scans as f64
    }

    /// z₀(t); consecutive scans restart from `z0_start`.
    pub fn z0_at(&self, t: f64) -> f64 {
        match self.mode {
            ScanMode::FixedPoint => self.z0_start,
            ScanMode::LinearScan => {
                let k = (t / self.duration).floor().clamp(0.0, (self.n_scans - 1) as f64);
                let u = ((t - k * self.duration) / self.duration).clamp(0.0, 1.0);
                self.z0_start + (self.z0_end - self.z0_start) * u
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Full,
    BadCavity,
    GoodCavity,
    Sre,
    Manybody,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Regime::Full),
            "bad_cavity" => Some(Regime::BadCavity),
            "good_cavity" => Some(Regime::GoodCavity),
            "sre" => Some(Regime::Sre),
            "manybody" => Some(Regime::Manybody),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    Coherent { alpha: f64 },
    Fock { n: usize },
    Thermal { n_th: f64 },
    FermiGround,
}

impl InitialState {
    pub fn is_diagonal(&self) -> bool {
        !matches!(self, InitialState::Coherent { alpha } if *alpha != 0.0)
    }
}

/// Complete description of a run. Units ħ = ω = ℓ₀ = 1 for single-particle
/// regimes and ħ = m = L = 1 for `Manybody`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub regime: Regime,
    pub gamma: f64,
    pub kappa: f64,
    pub omega: f64,
    /// Gaussian focus standard deviation.
    pub sigma: f64,
    pub delta: f64,
    pub phi: f64,
    pub initial: InitialState,
    pub schedule: ScanSchedule,
    pub dt: f64,
    pub tau: f64,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Harmonic-oscillator truncation.
    pub dim: usize,
    pub cavity_dim: usize,
    pub ell_max: usize,
    /// Store populations and energy every this many steps.
    pub record_every: usize,
    /// Jump persistence time; defaults to 50/γ.
    pub hold_time: Option<f64>,
    /// Run good-cavity or SRE equations outside κ/ω < 1.
    pub allow_regime_override: bool,
    pub cache_points: usize,
    pub n_fermions: usize,
    pub box_length: f64,
    pub window: usize,
    pub cutoff: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            regime: Regime::BadCavity,
            gamma: 1.0,
            kappa: 50.0,
            omega: 1.0,
            sigma: 0.3,
            delta: 0.0,
            phi: -std::f64::consts::FRAC_PI_2,
            initial: InitialState::Coherent { alpha: 2.0 },
            schedule: ScanSchedule::fixed(0.0, 2.0 * std::f64::consts::PI),
            dt: 0.01,
            tau: 0.1,
            n_trajectories: 1,
            seed: 0,
            dim: 30,
            cavity_dim: 4,
            ell_max: 1,
            record_every: 10,
            hold_time: None,
            allow_regime_override: false,
            cache_points: 512,
            n_fermions: 16,
            box_length: 1.0,
            window: crate::manybody::DEFAULT_WINDOW,
            cutoff: 1,
        }
    }
}

/// Guard evaluation attached to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardReport {
    pub kappa_over_omega: f64,
    /// T_coll = 1/γ
    pub t_coll: f64,
    /// T_dwell = (2ω/κ)²/γ
    pub t_dwell: f64,
    pub scan_time: f64,
    /// T_coll ≪ T (taken as T ≥ 10·T_coll).
    pub collapse_before_scan_end: bool,
    /// T ≲ T_dwell
    pub scan_within_dwell: bool,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn n_steps(&self) -> usize {
        (self.schedule.total_duration() / self.dt).round() as usize
    }

    pub fn hold(&self) -> f64 {
        self.hold_time.unwrap_or(50.0 / self.gamma)
    }

    /// SHA-256 of the JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("gamma", self.gamma),
            ("kappa", self.kappa),
            ("omega", self.omega),
            ("sigma", self.sigma),
            ("delta", self.delta),
            ("phi", self.phi),
            ("dt", self.dt),
            ("tau", self.tau),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(self.gamma >= 0.0) {
            return Err(invalid("gamma", "must be non-negative"));
        }
        for (name, v) in [("kappa", self.kappa), ("omega", self.omega), ("sigma", self.sigma), ("dt", self.dt)] {
            if !(v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if self.tau < 2.0 * self.dt {
            return Err(invalid("tau", "must be at least 2·dt"));
        }
        if self.n_trajectories == 0 {
            return Err(invalid("trajectories", "at least one"));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "at least one"));
        }
        if self.cache_points < 4 {
            return Err(invalid("cache_points", "at least 4"));
        }
        self.schedule.validate()?;
        match (self.regime, self.initial) {
            (Regime::Manybody, InitialState::FermiGround) => {}
            (Regime::Manybody, _) => {
                return Err(invalid("initial", "manybody runs start from fermi_ground"));
            }
            (_, InitialState::FermiGround) => {
                return Err(invalid("initial", "fermi_ground only applies to manybody runs"));
            }
            (_, InitialState::Fock { n }) if n >= self.dim => {
                return Err(invalid("initial", format!("Fock state {n} outside dimension {}", self.dim)));
            }
            (_, InitialState::Thermal { n_th }) if !(n_th >= 0.0) => {
                return Err(invalid("n_th", "must be non-negative"));
            }
            _ => {}
        }
        if self.regime != Regime::Manybody && self.dim < 2 {
            return Err(invalid("dim", "at least 2"));
        }
        if matches!(self.regime, Regime::GoodCavity | Regime::Sre)
            && !(self.kappa / self.omega < 1.0)
            && !self.allow_regime_override
        {
            return Err(QscopeError::Guard(format!(
                "κ/ω = {:.3} outside the good-cavity regime; set allow_regime_override to run anyway",
                self.kappa / self.omega
            )));
        }
        if self.regime == Regime::GoodCavity && self.dt * self.gamma > 0.05 {
            return Err(invalid("dt", "γ·dt must not exceed 0.05"));
        }
        Ok(())
    }

    pub fn guards(&self) -> GuardReport {
        let ratio = self.kappa / self.omega;
        let t_coll = 1.0 / self.gamma;
        let t_dwell = (2.0 * self.omega / self.kappa).powi(2) / self.gamma;
        let t = self.schedule.duration;
        let mut warnings = vec![];
        match self.regime {
            Regime::BadCavity if ratio < 5.0 => {
                warnings.push(format!("bad-cavity equations at κ/ω = {ratio:.3} < 5"));
            }
            Regime::GoodCavity | Regime::Sre if ratio > 0.5 => {
                warnings.push(format!("good-cavity equations at κ/ω = {ratio:.3} > 0.5"));
            }
            _ => {}
        }
        let collapse = t >= 10.0 * t_coll;
        let within = t <= t_dwell;
        if matches!(self.regime, Regime::GoodCavity | Regime::Sre) {
            if !collapse {
                warnings.push(format!("scan time {t:.3e} not ≫ T_coll = {t_coll:.3e}"));
            }
            if !within {
                warnings.push(format!("scan time {t:.3e} exceeds T_dwell = {t_dwell:.3e}"));
            }
        }
        GuardReport {
            kappa_over_omega: ratio,
            t_coll,
            t_dwell,
            scan_time: t,
            collapse_before_scan_end: collapse,
            scan_within_dwell: within,
            warnings,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub from_n: usize,
    pub to_n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config_hash: String,
    pub seed: u64,
    pub stream: u64,
    pub current: CurrentRecord,
    pub sample_times: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    pub mean_energy: Vec<f64>,
    pub purity: Vec<f64>,
    /// ⟨f_{z0(t)}⟩ at the sample times.
    pub f_mean: Vec<f64>,
    pub jump_events: Vec<JumpEvent>,
    /// Largest |Tr ρ − 1| (or |Σp − 1|) before renormalization.
    pub max_trace_drift: f64,
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Changes of the dominant population that persist for at least `hold_time`.
pub fn detect_jumps(times: &[f64], populations: &[Vec<f64>], hold_time: f64) -> Vec<JumpEvent> {
    let n = times.len().min(populations.len());
    if n == 0 {
        return vec![];
    }
    let labels: Vec<usize> = populations[..n].iter().map(|p| argmax(p)).collect();
    let mut current = labels[0];
    let mut events = vec![];
    let mut i = 1;
    while i < n {
        if labels[i] != current {
            let candidate = labels[i];
            let mut j = i;
            let mut held = false;
            while j < n && labels[j] == candidate {
                if times[j] - times[i] >= hold_time {
                    held = true;
                    break;
                }
                j += 1;
            }
            if held {
                events.push(JumpEvent {
                    time: times[i],
                    from_n: current,
                    to_n: candidate,
                });
                current = candidate;
            }
            i = j.max(i + 1);
        } else {
            i += 1;
        }
    }
    events
}
