//! Occupation-number basis, f̂^(0) and the suppressed b†_ν b_ν′ channels.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{BoxImpurityModel, OrbitalSet};
use crate::error::{invalid, QscopeError, Result};
use crate::linalg::CMat;
use crate::noise::NoiseSource;
use crate::sme::{Lindblad, Monitor, SmeSystem, SparseOp, StepGuards, StepOutcome};

pub const DEFAULT_WINDOW: usize = 6;
pub const DEFAULT_MAX_STATES: usize = 20_000;

/// Ground Slater configuration plus up to `cutoff` particle–hole pairs within
/// `window` orbitals below and above the Fermi level in each sector.
#[derive(Debug, Clone)]
pub struct ManyBodyBasis {
    pub configs: Vec<u128>,
    pub energies: Vec<f64>,
    pub excitations: Vec<usize>,
    pub ground: u128,
    pub n_particles: usize,
    pub window: usize,
    pub cutoff: usize,
    index: HashMap<u128, usize>,
}

impl ManyBodyBasis {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn index_of(&self, config: u128) -> Option<usize> {
        self.index.get(&config).copied()
    }

    pub fn ground_index(&self) -> usize {
        self.index[&self.ground]
    }

    pub fn occupied(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.configs[i];
        (0..128).filter(move |k| c >> k & 1 == 1)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![];
    let mut cur = vec![];
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

pub fn build_manybody_basis(
    model: &BoxImpurityModel,
    orbitals: &OrbitalSet,
    window: usize,
    cutoff: usize,
    max_states: usize,
) -> Result<ManyBodyBasis> {
    let half = model.half_filling();
    if window == 0 || window > half {
        return Err(invalid("window", format!("must lie in 1..={half}")));
    }
    if half + window > model.n_orbitals {
        return Err(invalid("window", format!("needs n_orbitals ≥ {}", half + window)));
    }
    if cutoff == 0 {
        return Err(invalid("cutoff", "at least one particle–hole pair"));
    }
    let n_of = |k: usize| orbitals.quantum_numbers[k];
    let holes: Vec<usize> = (0..orbitals.len()).filter(|&k| n_of(k) + window > half && n_of(k) <= half).collect();
    let particles: Vec<usize> = (0..orbitals.len()).filter(|&k| n_of(k) > half && n_of(k) <= half + window).collect();
    let states: usize = (0..=cutoff).map(|e| binomial(holes.len(), e) * binomial(particles.len(), e)).sum();
    if states > max_states {
        return Err(QscopeError::BasisOverflow {
            states,
            limit: max_states,
        });
    }
    let ground: u128 = (0..orbitals.len()).filter(|&k| n_of(k) <= half).fold(0, |c, k| c | 1u128 << k);
    let mut configs = vec![ground];
    let mut excitations = vec![0];
    for e in 1..=cutoff {
        let hs = combinations(&holes, e);
        let ps = combinations(&particles, e);
        for h in &hs {
            let base = h.iter().fold(ground, |c, &k| c & !(1u128 << k));
            for p in &ps {
                configs.push(p.iter().fold(base, |c, &k| c | 1u128 << k));
                excitations.push(e);
            }
        }
    }
    let energies = configs
        .iter()
        .map(|c| (0..orbitals.len()).filter(|k| c >> k & 1 == 1).map(|k| orbitals.energies[k]).sum())
        .collect();
    let index = configs.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    Ok(ManyBodyBasis {
        configs,
        energies,
        excitations,
        ground,
        n_particles: model.n_fermions,
        window,
        cutoff,
        index,
    })
}

/// b†_to b_from on a configuration, with the fermionic sign.
fn hop(config: u128, to: usize, from: usize) -> Option<(u128, f64)> {
    if config >> from & 1 == 0 {
        return None;
    }
    let removed = config & !(1u128 << from);
    if removed >> to & 1 == 1 {
        return None;
    }
    let (lo, hi) = if to < from { (to, from) } else { (from, to) };
    let between = if hi > lo + 1 {
        ((1u128 << hi) - 1) & !((1u128 << (lo + 1)) - 1)
    } else {
        0
    };
    let sign = if (removed & between).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
    Some((removed | 1u128 << to, sign))
}

/// γ f²/[1 + 4ΔE²/κ²]
pub fn suppressed_rate(gamma: f64, f: f64, delta_e: f64, kappa: f64) -> f64 {
    gamma * f * f / (1.0 + 4.0 * delta_e * delta_e / (kappa * kappa))
}

/// A transition `(from_state, to_state, sign)` generated by one b†_ν b_ν′.
pub type Transition = (usize, usize, f64);

#[derive(Debug, Clone)]
pub struct ManyBodyOperators {
    pub gamma: f64,
    pub kappa: f64,
    /// Σ_{ν occupied} f_νν per configuration.
    pub f0: Vec<f64>,
    /// (ν, ν′) of each channel b†_ν b_ν′.
    pub pairs: Vec<(usize, usize)>,
    pub transitions: Vec<Vec<Transition>>,
    pub rates: Vec<f64>,
    pub energies: Vec<f64>,
    orbital_energies: Vec<f64>,
    occupations: Vec<Vec<usize>>,
    pub guards: StepGuards,
}

impl ManyBodyOperators {
    /// Channel structure with all rates zero.
    pub fn structure(basis: &ManyBodyBasis, orbitals: &OrbitalSet, gamma: f64, kappa: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be non-negative"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", "must be positive"));
        }
        let m = orbitals.len();
        let mut pairs = vec![];
        let mut transitions = vec![];
        for to in 0..m {
            for from in 0..m {
                if to == from || !orbitals.supports_overlap(to, from) {
                    continue;
                }
                let list: Vec<Transition> = basis
                    .configs
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &c)| {
                        let (c2, s) = hop(c, to, from)?;
                        basis.index_of(c2).map(|j| (i, j, s))
                    })
                    .collect();
                if !list.is_empty() {
                    pairs.push((to, from));
                    transitions.push(list);
                }
            }
        }
        let rates = vec![0.0; pairs.len()];
        let occupations = (0..basis.len()).map(|i| basis.occupied(i).collect()).collect();
        Ok(Self {
            gamma,
            kappa,
            f0: vec![0.0; basis.len()],
            pairs,
            transitions,
            rates,
            energies: basis.energies.clone(),
            orbital_energies: orbitals.energies.clone(),
            occupations,
            guards: StepGuards::default(),
        })
    }

    /// Refresh f̂^(0) and the channel rates for new single-particle elements.
    pub fn update(&mut self, f: &DMatrix<f64>) -> Result<()> {
        let m = self.orbital_energies.len();
        if f.nrows() != m || f.ncols() != m {
            return Err(QscopeError::BasisMismatch(format!("f is {}×{}, orbitals {m}", f.nrows(), f.ncols())));
        }
        for (v, occ) in self.f0.iter_mut().zip(&self.occupations) {
            *v = occ.iter().map(|&k| f[(k, k)]).sum();
        }
        for (r, &(to, from)) in self.rates.iter_mut().zip(&self.pairs) {
            let de = self.orbital_energies[to] - self.orbital_energies[from];
            *r = suppressed_rate(self.gamma, f[(to, from)], de, self.kappa);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.f0.len()
    }

    pub fn signal(&self, state: &ManyBodyState) -> f64 {
        2.0 * self.gamma.sqrt() * state.mean_of(&self.f0)
    }

    /// Dense SME system: Ĥ diagonal, √γℋ[f̂^(0)], γ𝒟[f̂^(0)] and the channels.
    pub fn sme_system(&self) -> SmeSystem {
        let d = self.dim();
        let mut dissipators = vec![Lindblad::new(self.gamma, SparseOp::diagonal(&self.f0))];
        for (list, &rate) in self.transitions.iter().zip(&self.rates) {
            if rate == 0.0 {
                continue;
            }
            let entries = list.iter().map(|&(i, j, s)| (j, i, Complex64::new(s, 0.0))).collect();
            dissipators.push(Lindblad::new(rate, SparseOp::Triplets { dim: d, entries }));
        }
        SmeSystem::new(
            Some(SparseOp::diagonal(&self.energies)),
            dissipators,
            Some(Monitor {
                op: SparseOp::diagonal(&self.f0),
                amplitude: self.gamma.sqrt(),
            }),
        )
    }

    pub fn step(&self, state: &mut ManyBodyState, dt: f64, noise: &mut NoiseSource, step: usize) -> Result<StepOutcome> {
        let dw = noise.increment(dt);
        self.step_with_increment(state, dt, dw, step)
    }

    pub fn step_with_increment(&self, state: &mut ManyBodyState, dt: f64, dw: f64, step: usize) -> Result<StepOutcome> {
        if state.dim() != self.dim() {
            return Err(QscopeError::ModeMismatch(format!("state dim {} vs operators {}", state.dim(), self.dim())));
        }
        let out = match &mut state.repr {
            ManyBodyRepr::Dense(rho) => {
                let r = self.sme_system().em_step(rho, dt, dw, step, &self.guards)?;
                StepOutcome {
                    dw,
                    increment: r.signal * dt + dw,
                    trace_drift: r.trace_drift,
                }
            }
            ManyBodyRepr::Diagonal(p) => self.step_diagonal(p, dt, dw, step)?,
        };
        state.time += dt;
        Ok(out)
    }

    /// Exact restriction to diagonal states; negative populations from the
    /// Euler step are clipped when above −1e−6.
    fn step_diagonal(&self, p: &mut [f64], dt: f64, dw: f64, step: usize) -> Result<StepOutcome> {
        let mean: f64 = p.iter().zip(&self.f0).map(|(a, b)| a * b).sum();
        let signal = 2.0 * self.gamma.sqrt() * mean;
        let mut dp = vec![0.0; p.len()];
        for (list, &rate) in self.transitions.iter().zip(&self.rates) {
            if rate == 0.0 {
                continue;
            }
            for &(i, j, _) in list {
                let flow = rate * p[i];
                dp[i] -= flow;
                dp[j] += flow;
            }
        }
        let amp = 2.0 * self.gamma.sqrt() * dw;
        let mut total = 0.0;
        let mut worst = 0.0f64;
        for i in 0..p.len() {
            p[i] += dp[i] * dt + amp * p[i] * (self.f0[i] - mean);
            worst = worst.min(p[i]);
            total += p[i];
        }
        let drift = (total - 1.0).abs();
        if drift > self.guards.max_trace_drift {
            return Err(QscopeError::StepSize {
                step,
                diagnostic: format!("population drift {drift:.3e}"),
            });
        }
        if worst < -1e-6 {
            return Err(QscopeError::Positivity {
                step,
                min_eigenvalue: worst,
            });
        }
        if worst < 0.0 {
            p.iter_mut().for_each(|x| *x = x.max(0.0));
            total = p.iter().sum();
        }
        p.iter_mut().for_each(|x| *x /= total);
        Ok(StepOutcome {
            dw,
            increment: signal * dt + dw,
            trace_drift: drift,
        })
    }
}

pub fn build_manybody_operators(
    f: &DMatrix<f64>,
    orbitals: &OrbitalSet,
    basis: &ManyBodyBasis,
    gamma: f64,
    kappa: f64,
) -> Result<ManyBodyOperators> {
    let mut ops = ManyBodyOperators::structure(basis, orbitals, gamma, kappa)?;
    ops.update(f)?;
    Ok(ops)
}

#[derive(Debug, Clone)]
pub enum ManyBodyRepr {
    Dense(CMat),
    /// Populations of a state diagonal in the occupation basis.
    Diagonal(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ManyBodyState {
    pub repr: ManyBodyRepr,
    pub time: f64,
}

impl ManyBodyState {
    pub fn ground(basis: &ManyBodyBasis, dense: bool) -> Self {
        let mut p = vec![0.0; basis.len()];
        p[basis.ground_index()] = 1.0;
        let repr = if dense {
            ManyBodyRepr::Dense(CMat::from_diagonal(&p))
        } else {
            ManyBodyRepr::Diagonal(p)
        };
        Self { repr, time: 0.0 }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            ManyBodyRepr::Dense(m) => m.dim(),
            ManyBodyRepr::Diagonal(p) => p.len(),
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        match &self.repr {
            ManyBodyRepr::Dense(m) => m.diagonal_re(),
            ManyBodyRepr::Diagonal(p) => p.clone(),
        }
    }

    pub fn mean_of(&self, diag: &[f64]) -> f64 {
        match &self.repr {
            ManyBodyRepr::Dense(m) => (0..m.dim()).map(|i| m.get(i, i).re * diag[i]).sum(),
            ManyBodyRepr::Diagonal(p) => p.iter().zip(diag).map(|(a, b)| a * b).sum(),
        }
    }

    /// Total probability in configurations with exactly `e` excitations.
    pub fn excitation_probability(&self, basis: &ManyBodyBasis, e: usize) -> f64 {
        self.populations()
            .iter()
            .zip(&basis.excitations)
            .filter(|(_, &x)| x == e)
            .map(|(p, _)| p)
            .sum()
    }
}

/// One many-body SME step drawing dW from `noise`.
pub fn step_manybody_sme(
    state: &mut ManyBodyState,
    ops: &ManyBodyOperators,
    dt: f64,
    noise: &mut NoiseSource,
    step: usize,
) -> Result<StepOutcome> {
    ops.step(state, dt, noise, step)
}

/// 2√γ Tr[f̂^(0)ρ]dt + dW
pub fn manybody_increment(state: &ManyBodyState, ops: &ManyBodyOperators, dw: f64, dt: f64) -> Result<f64> {
    if state.dim() != ops.dim() {
        return Err(QscopeError::ModeMismatch(format!("state dim {} vs operators {}", state.dim(), ops.dim())));
    }
    Ok(ops.signal(state) * dt + dw)
}
