//! Subcommand bodies. Physics is delegated to the core library.

use std::path::Path;

use qscope::error::QscopeError;
use qscope::focusing::{focus_profile, fwhm_resolution, max_nonadiabatic_potential, LambdaConfig};
use qscope::homodyne::lowpass_filter;
use qscope::manybody::{run_friedel_ensemble, BoxImpurityModel, FriedelConfig, DEFAULT_MAX_STATES};
use qscope::scanctl::{run_ensemble, EnsembleResult, Regime, RunConfig, ScanMode};
use serde_json::json;

use crate::config::ConfigError;
use crate::output::{emit, write_json, ErrorRecord, Format, Manifest, OutputTable};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] QscopeError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CommandError {
    pub fn record(&self) -> ErrorRecord {
        let (error, key, completed_streams) = match self {
            CommandError::Config(e) => ("config", e.key().map(String::from), None),
            CommandError::Run(QscopeError::Ensemble { completed_streams, .. }) => {
                ("ensemble", None, Some(completed_streams.clone()))
            }
            CommandError::Run(QscopeError::InvalidParameter { name, .. }) => ("invalid_parameter", Some(name.to_string()), None),
            CommandError::Run(QscopeError::Guard(_)) => ("guard", None, None),
            CommandError::Run(_) => ("run", None, None),
            CommandError::Io(_) => ("io", None, None),
            CommandError::Usage(_) => ("usage", None, None),
        };
        ErrorRecord {
            error: error.into(),
            message: self.to_string(),
            key,
            completed_streams,
        }
    }
}

pub type Result<T> = std::result::Result<T, CommandError>;

/// Human-readable summary lines for stdout.
pub type Summary = Vec<String>;

fn version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

#[derive(Debug, Clone, Copy)]
pub struct FocusArgs {
    pub epsilon: f64,
    pub beta: f64,
    pub k1: f64,
    pub z0: f64,
    pub grid_points: usize,
}

pub fn focus(args: FocusArgs, out: &Path, format: Format) -> Result<Summary> {
    if args.grid_points < 2 {
        return Err(CommandError::Usage("--grid-points must be at least 2".into()));
    }
    let cfg = LambdaConfig::new(args.epsilon, args.beta, args.k1, args.z0)?;
    let lam = cfg.wavelength();
    let window = (args.z0 - 0.5 * lam, args.z0 + 0.5 * lam);
    let profile = focus_profile(&cfg, None, 1.0, 1.0, window)?;
    let res = fwhm_resolution(&cfg)?;
    let vna = max_nonadiabatic_potential(&cfg);
    let mut table = OutputTable::new("focus", &["z", "f"]);
    let n = args.grid_points;
    for i in 0..n {
        let z = window.0 + (window.1 - window.0) * i as f64 / (n - 1) as f64;
        table.push(vec![z, profile.value_at(z)]);
    }
    let files = emit(out, format, &[table])?;
    let summary = json!({
        "fwhm_analytic": res.analytic,
        "fwhm_numeric": res.numeric,
        "peak_overlap": profile.peak_overlap,
        "max_nonadiabatic_recoil_units": vna,
    });
    write_json(
        &out.join(MANIFEST),
        &Manifest {
            subcommand: "focus".into(),
            code_version: version(),
            seed: 0,
            config_hash: None,
            config: serde_json::to_value(cfg).map_err(std::io::Error::other)?,
            guards: json!({}),
            format,
            files,
            summary,
        },
    )?;
    Ok(vec![format!(
        "fwhm analytic {:.6e}  numeric {:.6e}  peak overlap {:.6e}  max V_na/E_r {:.6e}",
        res.analytic, res.numeric, profile.peak_overlap, vna
    )])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Movie,
    Scan,
    Ensemble,
}

impl RunKind {
    fn name(&self) -> &'static str {
        match self {
            RunKind::Movie => "movie",
            RunKind::Scan => "scan",
            RunKind::Ensemble => "ensemble",
        }
    }
}

/// Runs `config` through scanctl and writes current, samples, jumps,
/// ensemble and oracle tables.
pub fn scan_run(kind: RunKind, config: &RunConfig, populations: usize, out: &Path, format: Format) -> Result<Summary> {
    match (kind, config.schedule.mode) {
        (RunKind::Movie, ScanMode::LinearScan) => {
            return Err(CommandError::Usage("movie needs a fixed_point schedule".into()));
        }
        (RunKind::Scan, ScanMode::FixedPoint) => {
            return Err(CommandError::Usage("scan needs a linear_scan schedule".into()));
        }
        _ => {}
    }
    let manifest = |files: Vec<String>, summary: serde_json::Value| -> Result<()> {
        write_json(
            &out.join(MANIFEST),
            &Manifest {
                subcommand: kind.name().into(),
                code_version: version(),
                seed: config.seed,
                config_hash: Some(config.hash()),
                config: serde_json::to_value(config).map_err(std::io::Error::other)?,
                guards: serde_json::to_value(config.guards()).map_err(std::io::Error::other)?,
                format,
                files,
                summary,
            },
        )?;
        Ok(())
    };
    let ens = match run_ensemble(config, config.n_trajectories) {
        Ok(e) => e,
        Err(e) => {
            std::fs::create_dir_all(out)?;
            if let QscopeError::Ensemble {
                completed,
                requested,
                completed_streams,
                ..
            } = &e
            {
                manifest(
                    vec![],
                    json!({
                        "status": "aborted",
                        "completed": completed,
                        "requested": requested,
                        "completed_streams": completed_streams,
                        "error": e.to_string(),
                    }),
                )?;
            }
            return Err(e.into());
        }
    };
    let tables = scan_tables(config, &ens, populations)?;
    let files = emit(out, format, &tables)?;
    let n_jumps: usize = ens.summaries.iter().map(|s| s.n_jumps).sum();
    let max_drift = ens.summaries.iter().map(|s| s.max_trace_drift).fold(0.0, f64::max);
    let peak = ens.filtered.mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    manifest(
        files,
        json!({
            "status": "ok",
            "trajectories": ens.records.len(),
            "total_jumps": n_jumps,
            "max_trace_drift": max_drift,
            "peak_mean_filtered_current": peak,
        }),
    )?;
    let mut lines = vec![format!(
        "{}: {} trajectories, {} steps each, {} jumps, max trace drift {:.3e}",
        kind.name(),
        ens.records.len(),
        ens.records.first().map(|r| r.current.len()).unwrap_or(0),
        n_jumps,
        max_drift
    )];
    let g = &ens.guards;
    lines.push(format!(
        "guards: κ/ω = {:.4}, T_coll = {:.4e}, T_dwell = {:.4e}, T = {:.4e}",
        g.kappa_over_omega, g.t_coll, g.t_dwell, g.scan_time
    ));
    lines.extend(g.warnings.iter().map(|w| format!("warning: {w}")));
    Ok(lines)
}

fn scan_tables(config: &RunConfig, ens: &EnsembleResult, populations: usize) -> Result<Vec<OutputTable>> {
    let mut current = OutputTable::new("current", &["t", "z0", "dX", "I_tau"]);
    let mut samples_header = vec!["t".to_string(), "energy".into(), "purity".into(), "f_mean".into()];
    let mut jumps = OutputTable::new("jumps", &["trajectory", "time", "from_n", "to_n"]);
    let mut summaries = OutputTable::new("trajectories", &["trajectory", "n_jumps", "max_trace_drift"]);
    let manybody = config.regime == Regime::Manybody;
    let k_pop = if manybody { 0 } else { populations.min(config.dim) };
    samples_header.extend((0..k_pop).map(|n| format!("p{n}")));
    let mut samples = OutputTable {
        name: "samples".into(),
        header: samples_header,
        rows: vec![],
    };
    if let Some(r) = ens.records.first() {
        let filtered = lowpass_filter(&r.current, config.tau)?;
        for (k, (&t, &dx)) in r.current.times.iter().zip(&r.current.increments).enumerate() {
            let z0 = config.schedule.z0_at(t + 0.5 * config.dt);
            let i_tau = filtered.values.get(k).copied().unwrap_or(f64::NAN);
            current.push(vec![t, z0, dx, i_tau]);
        }
        for (i, &t) in r.sample_times.iter().enumerate() {
            let mut row = vec![t, r.mean_energy[i], r.purity[i], r.f_mean[i]];
            row.extend((0..k_pop).map(|n| r.populations[i][n]));
            samples.push(row);
        }
    }
    for r in &ens.records {
        for j in &r.jump_events {
            jumps.push(vec![r.stream as f64, j.time, j.from_n as f64, j.to_n as f64]);
        }
    }
    for s in &ens.summaries {
        summaries.push(vec![s.stream as f64, s.n_jumps as f64, s.max_trace_drift]);
    }
    let mut filtered = OutputTable::new("ensemble", &["t", "mean", "variance", "std_error"]);
    let f = &ens.filtered;
    for i in 0..f.times.len() {
        filtered.push(vec![f.times[i], f.mean[i], f.variance[i], f.std_error[i]]);
    }
    let mut oracle = OutputTable::new(
        "observables",
        &["t", "energy_mean", "energy_std_error", "energy_oracle", "f_mean", "f_std_error", "f_oracle"],
    );
    let (e, fm, o) = (&ens.mean_energy, &ens.f_mean, &ens.oracle);
    for i in 0..e.times.len() {
        oracle.push(vec![
            e.times[i],
            e.mean[i],
            e.std_error[i],
            o.mean_energy[i],
            fm.mean[i],
            fm.std_error[i],
            o.f_mean[i],
        ]);
    }
    Ok(vec![current, samples, jumps, summaries, filtered, oracle])
}

#[derive(Debug, Clone, Copy)]
pub struct FriedelArgs {
    pub n_fermions: usize,
    pub box_length: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub gamma_t: f64,
    pub tau_frac: f64,
    pub seed: u64,
    pub scans: usize,
    pub steps: usize,
    pub cutoff: usize,
    pub window: usize,
}

impl Default for FriedelArgs {
    fn default() -> Self {
        let d = FriedelConfig::default();
        Self {
            n_fermions: d.model.n_fermions,
            box_length: d.model.box_length,
            sigma: d.sigma,
            kappa: d.kappa,
            gamma_t: d.gamma_t,
            tau_frac: d.tau_frac,
            seed: 0,
            scans: 50,
            steps: d.n_steps,
            cutoff: d.cutoff,
            window: d.window,
        }
    }
}

pub fn friedel(args: FriedelArgs, out: &Path, format: Format) -> Result<Summary> {
    let model = BoxImpurityModel::new(args.n_fermions, args.box_length, args.n_fermions / 2 + args.window, 1.0)?;
    let cfg = FriedelConfig {
        model,
        sigma: args.sigma,
        kappa: args.kappa,
        gamma_t: args.gamma_t,
        tau_frac: args.tau_frac,
        n_steps: args.steps,
        window: args.window,
        cutoff: args.cutoff,
        max_states: DEFAULT_MAX_STATES,
        scan_start: -0.5 * args.box_length,
        scan_end: 0.5 * args.box_length,
        ..FriedelConfig::default()
    };
    let ens = run_friedel_ensemble(&cfg, args.scans, args.seed)?;
    let mut table = OutputTable::new("friedel", &["z0", "I_tau", "theory_n", "ensemble_mean", "ensemble_std"]);
    let first = &ens.scans[0];
    for i in 0..ens.z.len() {
        table.push(vec![
            ens.z[i],
            first.filtered.values[i],
            ens.theory[i],
            ens.stats.mean[i],
            ens.stats.variance[i].sqrt(),
        ]);
    }
    let files = emit(out, format, &[table])?;
    let expected = std::f64::consts::PI / model.fermi_wavevector();
    let bound = 1.0 / (model.mass * cfg.sigma * cfg.sigma);
    write_json(
        &out.join(MANIFEST),
        &Manifest {
            subcommand: "friedel".into(),
            code_version: version(),
            seed: args.seed,
            config_hash: None,
            config: json!({
                "n_fermions": args.n_fermions,
                "box_length": args.box_length,
                "sigma": args.sigma,
                "kappa": args.kappa,
                "gammaT": args.gamma_t,
                "tau_frac": args.tau_frac,
                "scans": args.scans,
                "steps": args.steps,
                "cutoff": args.cutoff,
                "window": args.window,
            }),
            guards: json!({ "non_demolition_bound": bound, "kappa": args.kappa, "passes": args.kappa <= bound }),
            format,
            files,
            summary: json!({
                "coverage": ens.coverage,
                "fitted_period": ens.fit.period,
                "expected_period": expected,
                "max_tail": ens.max_tail,
            }),
        },
    )?;
    Ok(vec![
        format!("noise-band coverage in |z| < 0.2L: {:.4}", ens.coverage),
        format!(
            "fitted period {:.6e} (π/k_F = {:.6e}, rel. error {:.3e})",
            ens.fit.period,
            expected,
            (ens.fit.period - expected).abs() / expected
        ),
        format!("max mean probability at the excitation cutoff: {:.3e}", ens.max_tail),
        format!("non-demolition bound ħ²/(mσ²) = {bound:.4e}, κ = {:.4e}", args.kappa),
    ])
}
