//! Trajectory and ensemble execution for every regime.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{detect_jumps, FMatrixCache, GuardReport, InitialState, Regime, RunConfig, ScanMode, TrajectoryRecord};
use crate::error::{QscopeError, Result};
use crate::focusing::FocusFunction;
use crate::homodyne::{lowpass_filter, CurrentMode, CurrentRecord, EnsembleStats, StatsAccumulator};
use crate::hilbert::{build_ho_operators, purity, thermal_populations, DensityMatrix, HoOperators, OperatorMatrix, TruncatedBasis};
use crate::manybody::{
    BoxImpurityModel, FriedelConfig, FriedelSchedule, ManyBodyOperators, ManyBodyRepr, ManyBodyState,
    DEFAULT_MAX_STATES,
};
use crate::noise::NoiseSource;
use crate::sme::{
    BadCavityModel, CavityFrame, CavityParams, FullModel, GoodCavityModel, MeasurementParams, RateEquation,
};

/// Noise-independent data shared by all trajectories of a run.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    pub hash: String,
    pub guards: GuardReport,
    pub meas: MeasurementParams,
    /// Energies of the basis states.
    pub energies: Vec<f64>,
    pub cache: Option<FMatrixCache>,
    pub friedel: Option<(FriedelConfig, FriedelSchedule)>,
    ho: Option<HoOperators>,
    steps_per_scan: usize,
}

#[derive(Debug, Clone)]
enum Stepper {
    Full(Box<FullModel>),
    Bad(Box<BadCavityModel>),
    GoodDense(Box<GoodCavityModel>),
    GoodDiag(Box<GoodCavityModel>, Vec<Vec<f64>>),
    Sre(RateEquation, Vec<Vec<f64>>),
    Many(Box<ManyBodyOperators>),
}

#[derive(Debug, Clone)]
enum TrajState {
    Dense(DensityMatrix),
    Pops(Vec<f64>),
    Many(ManyBodyState),
}

struct Sample {
    populations: Vec<f64>,
    energy: f64,
    purity: f64,
    f_mean: f64,
}

impl PreparedRun {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let guards = config.guards();
        for w in &guards.warnings {
            log::warn!("{w}");
        }
        let meas = MeasurementParams::new(config.gamma, config.omega)?.with_coupling_for(config.kappa, config.delta);
        let steps_per_scan = ((config.schedule.duration / config.dt).round() as usize).max(1);
        let mut run = Self {
            config: config.clone(),
            hash: config.hash(),
            guards,
            meas,
            energies: vec![],
            cache: None,
            friedel: None,
            ho: None,
            steps_per_scan,
        };
        if config.regime == Regime::Manybody {
            let fc = run.friedel_config()?;
            let schedule = FriedelSchedule::build(&fc)?;
            run.energies = schedule.basis.energies.clone();
            run.friedel = Some((fc, schedule));
        } else {
            let basis = TruncatedBasis::harmonic_oscillator(config.dim, 1.0 / config.omega.sqrt())?;
            let ho = build_ho_operators(&basis, config.omega)?;
            let focus = FocusFunction::gaussian(config.sigma, basis.length_scale)?;
            run.cache = Some(FMatrixCache::build(&basis, &focus, &config.schedule, config.cache_points)?);
            run.energies = ho.h_sys.entries.diagonal_re();
            run.ho = Some(ho);
        }
        Ok(run)
    }

    fn friedel_config(&self) -> Result<FriedelConfig> {
        let c = &self.config;
        let n_orbitals = c.n_fermions / 2 + c.window;
        let model = BoxImpurityModel::new(c.n_fermions, c.box_length, n_orbitals, 1.0)?;
        let t = c.schedule.duration;
        Ok(FriedelConfig {
            model,
            sigma: c.sigma,
            kappa: c.kappa,
            gamma_t: c.gamma * t,
            total_time: t,
            tau_frac: c.tau / t,
            n_steps: self.steps_per_scan,
            window: c.window,
            cutoff: c.cutoff,
            max_states: DEFAULT_MAX_STATES,
            norm_length: None,
            scan_start: c.schedule.z0_start,
            scan_end: c.schedule.z0_end,
            allow_demolition: c.allow_regime_override,
            dense: false,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.steps_per_scan * self.config.schedule.n_scans
    }

    pub fn mode(&self) -> CurrentMode {
        match self.config.regime {
            Regime::Full => CurrentMode::Full,
            Regime::BadCavity => CurrentMode::BadCavity,
            Regime::GoodCavity | Regime::Sre => CurrentMode::GoodCavity,
            Regime::Manybody => CurrentMode::Manybody,
        }
    }

    /// z₀ at the midpoint of step `k`.
    pub fn z0_at_step(&self, k: usize) -> f64 {
        if let Some((_, s)) = &self.friedel {
            return s.z0[k % self.steps_per_scan];
        }
        let dt = self.config.dt;
        let local = (k % self.steps_per_scan) as f64 + 0.5;
        let scan = (k / self.steps_per_scan) as f64;
        self.config.schedule.z0_at(scan * self.config.schedule.duration + local * dt)
    }

    fn scanning(&self) -> bool {
        self.config.schedule.mode == ScanMode::LinearScan && self.config.schedule.z0_start != self.config.schedule.z0_end
    }

    fn ho(&self) -> &HoOperators {
        self.ho.as_ref().expect("single-particle run")
    }

    fn cache(&self) -> &FMatrixCache {
        self.cache.as_ref().expect("single-particle run")
    }

    fn initial_populations(&self) -> Result<Vec<f64>> {
        let d = self.config.dim;
        Ok(match self.config.initial {
            InitialState::Fock { n } => {
                let mut p = vec![0.0; d];
                p[n] = 1.0;
                p
            }
            InitialState::Thermal { n_th } => thermal_populations(d, n_th)?,
            InitialState::Coherent { .. } => self.initial_dense()?.populations(),
            InitialState::FermiGround => unreachable!("validated"),
        })
    }

    fn initial_dense(&self) -> Result<DensityMatrix> {
        let basis = &self.ho().h_sys.basis;
        match self.config.initial {
            InitialState::Coherent { alpha } => DensityMatrix::coherent(basis, Complex64::new(alpha, 0.0)),
            InitialState::Fock { n } => DensityMatrix::fock(basis, n),
            InitialState::Thermal { n_th } => DensityMatrix::thermal(basis, n_th),
            InitialState::FermiGround => unreachable!("validated"),
        }
    }

    fn good_cavity_dense(&self) -> bool {
        self.config.regime == Regime::GoodCavity && !self.config.initial.is_diagonal()
    }

    fn initial_state(&self) -> Result<TrajState> {
        Ok(match self.config.regime {
            Regime::Manybody => {
                let (_, s) = self.friedel.as_ref().expect("manybody run");
                TrajState::Many(ManyBodyState::ground(&s.basis, false))
            }
            Regime::Sre => TrajState::Pops(self.initial_populations()?),
            Regime::GoodCavity if !self.good_cavity_dense() => TrajState::Pops(self.initial_populations()?),
            Regime::Full => {
                let atom = self.initial_dense()?;
                let cav = TruncatedBasis::cavity_fock(self.config.cavity_dim)?;
                TrajState::Dense(atom.kron(&DensityMatrix::fock(&cav, 0)?)?)
            }
            _ => TrajState::Dense(self.initial_dense()?),
        })
    }

    fn f_operator(&self, f: DMatrix<f64>) -> Result<OperatorMatrix> {
        OperatorMatrix::real(self.ho().h_sys.basis.clone(), f, true)
    }

    fn stepper_at(&self, z0: f64) -> Result<Stepper> {
        let c = &self.config;
        Ok(match c.regime {
            Regime::Manybody => {
                let (_, s) = self.friedel.as_ref().expect("manybody run");
                let mut ops = s.template.clone();
                s.load(&mut ops, 0)?;
                Stepper::Many(Box::new(ops))
            }
            Regime::Full => {
                let cavity = CavityParams::new(c.kappa, c.delta, 0.0, c.phi)?;
                let frame = CavityFrame::Displaced {
                    epsilon: self.meas.coupling_amplitude,
                };
                let f = self.f_operator(self.cache().at(z0))?;
                Stepper::Full(Box::new(FullModel::new(&self.ho().h_sys, &f, frame, cavity, c.cavity_dim)?))
            }
            Regime::BadCavity => {
                let f = self.f_operator(self.cache().at(z0))?;
                Stepper::Bad(Box::new(BadCavityModel::new(&self.ho().h_sys, &f, self.meas, c.kappa, c.delta)?))
            }
            Regime::GoodCavity => {
                let m = GoodCavityModel::from_matrix(&self.energies, &self.cache().at(z0), self.meas, c.kappa, c.ell_max)?;
                if self.good_cavity_dense() {
                    Stepper::GoodDense(Box::new(m))
                } else {
                    Stepper::GoodDiag(Box::new(m), vec![])
                }
            }
            Regime::Sre => Stepper::Sre(RateEquation::from_matrix(&self.cache().at(z0), &self.meas, c.kappa), vec![]),
        })
    }

    /// Loads the focusing operator for step `k` into `stepper`.
    fn refresh(&self, stepper: &mut Stepper, k: usize) -> Result<()> {
        if let Stepper::Many(ops) = stepper {
            let (_, s) = self.friedel.as_ref().expect("manybody run");
            return s.load(ops, k % self.steps_per_scan);
        }
        if !self.scanning() {
            return Ok(());
        }
        let z0 = self.z0_at_step(k);
        match stepper {
            Stepper::GoodDiag(m, scratch) => {
                let ell = m.band_weights.len();
                self.cache().bands_at(z0, ell, &mut m.f_diag, scratch);
                square_into(scratch, &mut m.band_weights);
            }
            Stepper::Sre(m, scratch) => {
                self.cache().bands_at(z0, 1, &mut m.f_diag, scratch);
                square_into(scratch, &mut m.band_weights);
            }
            _ => *stepper = self.stepper_at(z0)?,
        }
        Ok(())
    }

    /// Advances one step; returns (increment, trace drift).
    fn advance(&self, stepper: &Stepper, state: &mut TrajState, dw: f64, k: usize) -> Result<(f64, f64)> {
        let dt = self.config.dt;
        let out = match (stepper, state) {
            (Stepper::Full(m), TrajState::Dense(r)) => m.step_with_increment(r, dt, dw, k)?,
            (Stepper::Bad(m), TrajState::Dense(r)) => m.step_with_increment(r, dt, dw, k)?,
            (Stepper::GoodDense(m), TrajState::Dense(r)) => m.step_with_increment(r, dt, dw, k)?,
            (Stepper::GoodDiag(m, _), TrajState::Pops(p)) => m.step_diagonal(p, dt, dw, k)?,
            (Stepper::Sre(m, _), TrajState::Pops(p)) => {
                let o = m.step_with_increment(p, dt, dw, k)?;
                return Ok((o.increment, o.sum_error));
            }
            (Stepper::Many(ops), TrajState::Many(s)) => ops.step_with_increment(s, dt, dw, k)?,
            _ => return Err(QscopeError::ModeMismatch("state representation vs regime".into())),
        };
        Ok((out.increment, out.trace_drift))
    }

    /// Unconditional evolution: RK4 for density matrices, Euler for populations.
    fn advance_mean(&self, stepper: &Stepper, state: &mut TrajState, k: usize) -> Result<()> {
        let dt = self.config.dt;
        match (stepper, &mut *state) {
            (Stepper::Full(m), TrajState::Dense(r)) => m.system.rk4_step(&mut r.entries, dt),
            (Stepper::Bad(m), TrajState::Dense(r)) => m.system.rk4_step(&mut r.entries, dt),
            (Stepper::GoodDense(m), TrajState::Dense(r)) => m.system.rk4_step(&mut r.entries, dt),
            _ => {
                self.advance(stepper, state, 0.0, k)?;
            }
        }
        Ok(())
    }

    fn sample(&self, stepper: &Stepper, state: &TrajState, k: usize) -> Result<Sample> {
        let (populations, pur) = match state {
            TrajState::Dense(r) if self.config.regime == Regime::Full => {
                let atom = r.partial_trace(0)?;
                (atom.populations(), purity(&atom))
            }
            TrajState::Dense(r) => (r.populations(), purity(r)),
            TrajState::Pops(p) => (p.clone(), p.iter().map(|x| x * x).sum()),
            TrajState::Many(s) => {
                let pur = match &s.repr {
                    ManyBodyRepr::Dense(m) => m.trace_product(m).re,
                    ManyBodyRepr::Diagonal(p) => p.iter().map(|x| x * x).sum(),
                };
                (s.populations(), pur)
            }
        };
        let energy = populations.iter().zip(&self.energies).map(|(p, e)| p * e).sum();
        let f_mean = match (stepper, state) {
            (Stepper::Full(m), TrajState::Dense(r)) => m.f_mean(r),
            (Stepper::GoodDiag(m, _), TrajState::Pops(p)) => dot(p, &m.f_diag),
            (Stepper::Sre(m, _), TrajState::Pops(p)) => dot(p, &m.f_diag),
            (Stepper::Many(ops), TrajState::Many(s)) => s.mean_of(&ops.f0),
            (_, TrajState::Dense(r)) => {
                let f = self.cache().at(self.z0_sample(k));
                f.iter().zip(r.entries.re.iter()).map(|(a, b)| a * b).sum()
            }
            _ => f64::NAN,
        };
        Ok(Sample {
            populations,
            energy,
            purity: pur,
            f_mean,
        })
    }

    /// z₀ that was loaded for the step ending at sample index `k`.
    fn z0_sample(&self, k: usize) -> f64 {
        if self.scanning() {
            self.z0_at_step(k.saturating_sub(1))
        } else {
            self.config.schedule.z0_start
        }
    }

    fn sample_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let every = self.config.record_every;
        let mut v: Vec<usize> = (0..=n).step_by(every).collect();
        if *v.last().unwrap_or(&0) != n {
            v.push(n);
        }
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn square_into(raw: &[Vec<f64>], out: &mut [Vec<f64>]) {
    for (o, r) in out.iter_mut().zip(raw) {
        o.resize(r.len(), 0.0);
        for (a, b) in o.iter_mut().zip(r) {
            *a = b * b;
        }
    }
}

/// One stochastic trajectory on noise stream `stream`.
pub fn run_prepared(run: &PreparedRun, stream: u64) -> Result<TrajectoryRecord> {
    let c = &run.config;
    let n = run.n_steps();
    let mut stepper = run.stepper_at(run.z0_at_step(0))?;
    let mut state = run.initial_state()?;
    let mut noise = NoiseSource::new(c.seed, stream);
    let mut current = CurrentRecord::with_capacity(c.dt, run.mode(), n)?;
    let samples = run.sample_steps();
    let mut next_sample = 0;
    let mut rec = TrajectoryRecord {
        config_hash: run.hash.clone(),
        seed: c.seed,
        stream,
        current: CurrentRecord::new(c.dt, run.mode())?,
        sample_times: Vec::with_capacity(samples.len()),
        populations: Vec::with_capacity(samples.len()),
        mean_energy: Vec::with_capacity(samples.len()),
        purity: Vec::with_capacity(samples.len()),
        f_mean: Vec::with_capacity(samples.len()),
        jump_events: vec![],
        max_trace_drift: 0.0,
    };
    let push = |rec: &mut TrajectoryRecord, s: Sample, k: usize| {
        rec.sample_times.push(k as f64 * c.dt);
        rec.populations.push(s.populations);
        rec.mean_energy.push(s.energy);
        rec.purity.push(s.purity);
        rec.f_mean.push(s.f_mean);
    };
    for k in 0..=n {
        if next_sample < samples.len() && samples[next_sample] == k {
            let s = run.sample(&stepper, &state, k)?;
            push(&mut rec, s, k);
            next_sample += 1;
        }
        if k == n {
            break;
        }
        if k > 0 {
            run.refresh(&mut stepper, k)?;
        }
        let dw = noise.increment(c.dt);
        let (inc, drift) = run.advance(&stepper, &mut state, dw, k)?;
        current.push(k as f64 * c.dt, inc);
        rec.max_trace_drift = rec.max_trace_drift.max(drift);
    }
    rec.current = current;
    rec.jump_events = detect_jumps(&rec.sample_times, &rec.populations, c.hold());
    Ok(rec)
}

pub fn run_trajectory(config: &RunConfig, stream: u64) -> Result<TrajectoryRecord> {
    run_prepared(&PreparedRun::new(config)?, stream)
}

/// Noise-free reference: the unconditional master equation sampled like a
/// trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleTrace {
    pub times: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
    pub mean_energy: Vec<f64>,
    pub f_mean: Vec<f64>,
}

pub fn run_oracle(run: &PreparedRun) -> Result<OracleTrace> {
    let n = run.n_steps();
    let mut stepper = run.stepper_at(run.z0_at_step(0))?;
    let mut state = run.initial_state()?;
    let samples = run.sample_steps();
    let mut next_sample = 0;
    let mut out = OracleTrace {
        times: vec![],
        populations: vec![],
        mean_energy: vec![],
        f_mean: vec![],
    };
    for k in 0..=n {
        if next_sample < samples.len() && samples[next_sample] == k {
            let s = run.sample(&stepper, &state, k)?;
            out.times.push(k as f64 * run.config.dt);
            out.populations.push(s.populations);
            out.mean_energy.push(s.energy);
            out.f_mean.push(s.f_mean);
            next_sample += 1;
        }
        if k == n {
            break;
        }
        if k > 0 {
            run.refresh(&mut stepper, k)?;
        }
        run.advance_mean(&stepper, &mut state, k)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub stream: u64,
    pub final_populations: Vec<f64>,
    pub n_jumps: usize,
    pub max_trace_drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub config_hash: String,
    pub guards: GuardReport,
    pub records: Vec<TrajectoryRecord>,
    pub summaries: Vec<TrajectorySummary>,
    /// Statistics of the low-pass filtered current.
    pub filtered: EnsembleStats,
    pub mean_energy: EnsembleStats,
    pub f_mean: EnsembleStats,
    pub oracle: OracleTrace,
}

/// Worker count from `QSCOPE_THREADS`, if set.
pub fn thread_limit() -> Option<usize> {
    std::env::var("QSCOPE_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// `n` trajectories on streams 0..n, merged in stream order.
pub fn run_ensemble(config: &RunConfig, n: usize) -> Result<EnsembleResult> {
    let run = PreparedRun::new(config)?;
    let work = || -> Vec<Result<TrajectoryRecord>> {
        (0..n as u64).into_par_iter().map(|s| run_prepared(&run, s)).collect()
    };
    let results = match thread_limit() {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| QscopeError::Degenerate(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    if let Some(pos) = results.iter().position(|r| r.is_err()) {
        let completed_streams: Vec<u64> = results.iter().filter_map(|r| r.as_ref().ok().map(|t| t.stream)).collect();
        let source = results.into_iter().nth(pos).and_then(|r| r.err()).expect("error at pos");
        return Err(QscopeError::Ensemble {
            completed: completed_streams.len(),
            requested: n,
            completed_streams,
            source: Box::new(source),
        });
    }
    let records: Vec<TrajectoryRecord> = results.into_iter().map(|r| r.expect("checked above")).collect();
    let mut filt = StatsAccumulator::new();
    let mut energy = StatsAccumulator::new();
    let mut fm = StatsAccumulator::new();
    let mut summaries = Vec::with_capacity(records.len());
    for r in &records {
        let f = lowpass_filter(&r.current, config.tau)?;
        filt.push(&f.times, &f.values)?;
        energy.push(&r.sample_times, &r.mean_energy)?;
        fm.push(&r.sample_times, &r.f_mean)?;
        summaries.push(TrajectorySummary {
            stream: r.stream,
            final_populations: r.populations.last().cloned().unwrap_or_default(),
            n_jumps: r.jump_events.len(),
            max_trace_drift: r.max_trace_drift,
        });
    }
    Ok(EnsembleResult {
        config_hash: run.hash.clone(),
        guards: run.guards.clone(),
        summaries,
        filtered: filt.finish()?,
        mean_energy: energy.finish()?,
        f_mean: fm.finish()?,
        oracle: run_oracle(&run)?,
        records,
    })
}
