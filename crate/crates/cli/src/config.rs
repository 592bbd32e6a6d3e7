//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Keys may appear once. Units:
//! ħ = ω = ℓ₀ = 1 for single-particle regimes, ħ = m = L = 1 for `manybody`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qscope::scanctl::{InitialState, Regime, RunConfig, ScanMode, ScanSchedule};

use crate::output::Format;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("key `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("key `{key}` does not apply: {reason}")]
    Incompatible { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(#[from] qscope::error::QscopeError),
}

impl ConfigError {
    /// Key named by the error, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::Duplicate { key, .. }
            | ConfigError::Value { key, .. }
            | ConfigError::Incompatible { key, .. } => Some(key),
            ConfigError::Invalid(qscope::error::QscopeError::InvalidParameter { name, .. }) => Some(name),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

pub const KEYS: &[&str] = &[
    "regime",
    "gamma",
    "gammaT",
    "kappa",
    "omega",
    "sigma",
    "delta",
    "phi",
    "initial",
    "alpha",
    "n_th",
    "fock_n",
    "scan.mode",
    "scan.z0",
    "scan.z0_start",
    "scan.z0_end",
    "scan.T",
    "scan.n_scans",
    "tau",
    "dt",
    "trajectories",
    "seed",
    "dim",
    "cavity_dim",
    "ell_max",
    "record_every",
    "hold_time",
    "allow_regime_override",
    "cache_points",
    "n_fermions",
    "box_length",
    "window",
    "cutoff",
    "output.path",
    "output.format",
];

const MANYBODY_ONLY: &[&str] = &["n_fermions", "box_length", "window", "cutoff"];
const SINGLE_PARTICLE_ONLY: &[&str] = &["alpha", "n_th", "fock_n", "omega", "dim", "cavity_dim", "ell_max", "delta", "phi"];

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub run: RunConfig,
    pub output: OutputSpec,
}

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn has(&self, k: &str) -> bool {
        self.map.contains_key(k)
    }

    fn f64(&self, k: &str) -> Result<Option<f64>> {
        let Some(v) = self.map.get(k) else { return Ok(None) };
        let x: f64 = v.parse().map_err(|_| value(k, format!("`{v}` is not a number")))?;
        if !x.is_finite() {
            return Err(value(k, "must be finite"));
        }
        Ok(Some(x))
    }

    fn uint<T: std::str::FromStr>(&self, k: &str) -> Result<Option<T>> {
        let Some(v) = self.map.get(k) else { return Ok(None) };
        v.parse()
            .map(Some)
            .map_err(|_| value(k, format!("`{v}` is not a non-negative integer")))
    }

    fn bool(&self, k: &str) -> Result<Option<bool>> {
        match self.map.get(k).map(String::as_str) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(value(k, format!("`{v}` is not true/false"))),
        }
    }

    fn str(&self, k: &str) -> Option<&str> {
        self.map.get(k).map(String::as_str)
    }
}

fn value(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        reason: reason.into(),
    }
}

fn incompatible(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Incompatible {
        key: key.into(),
        reason: reason.into(),
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey { line, key: k.into() });
        }
        let v = v.trim_matches('"').to_string();
        if map.insert(k.to_string(), v).is_some() {
            return Err(ConfigError::Duplicate { line, key: k.into() });
        }
    }
    Ok(Entries { map })
}

pub fn parse_config(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Parses and validates.
pub fn parse_config_str(text: &str) -> Result<ConfigFile> {
    let e = tokenize(text)?;
    let regime = match e.str("regime") {
        None => Regime::BadCavity,
        Some(s) => Regime::parse(s).ok_or_else(|| value("regime", format!("unknown regime `{s}`")))?,
    };
    let many = regime == Regime::Manybody;
    for k in if many { SINGLE_PARTICLE_ONLY } else { MANYBODY_ONLY } {
        if e.has(k) {
            return Err(incompatible(k, format!("not used by regime {}", e.str("regime").unwrap_or("bad_cavity"))));
        }
    }

    let mut c = if many {
        RunConfig {
            regime,
            gamma: 400.0,
            kappa: 4.0 * std::f64::consts::PI.powi(2),
            sigma: 0.01,
            initial: InitialState::FermiGround,
            schedule: ScanSchedule::linear(-0.5, 0.5, 1.0, 1),
            dt: 1e-4,
            tau: 0.01,
            record_every: 100,
            ..RunConfig::default()
        }
    } else {
        RunConfig {
            regime,
            ..RunConfig::default()
        }
    };

    c.initial = initial_state(&e, many)?;

    for (k, slot) in [
        ("kappa", &mut c.kappa),
        ("omega", &mut c.omega),
        ("sigma", &mut c.sigma),
        ("delta", &mut c.delta),
        ("phi", &mut c.phi),
        ("tau", &mut c.tau),
        ("dt", &mut c.dt),
        ("box_length", &mut c.box_length),
    ] {
        if let Some(v) = e.f64(k)? {
            *slot = v;
        }
    }
    if let Some(v) = e.f64("hold_time")? {
        c.hold_time = Some(v);
    }
    for (k, slot) in [
        ("dim", &mut c.dim),
        ("cavity_dim", &mut c.cavity_dim),
        ("ell_max", &mut c.ell_max),
        ("record_every", &mut c.record_every),
        ("cache_points", &mut c.cache_points),
        ("n_fermions", &mut c.n_fermions),
        ("window", &mut c.window),
        ("cutoff", &mut c.cutoff),
        ("trajectories", &mut c.n_trajectories),
    ] {
        if let Some(v) = e.uint(k)? {
            *slot = v;
        }
    }
    if let Some(v) = e.uint("seed")? {
        c.seed = v;
    }
    if let Some(v) = e.bool("allow_regime_override")? {
        c.allow_regime_override = v;
    }

    c.schedule = schedule(&e, c.schedule)?;

    match (e.f64("gamma")?, e.f64("gammaT")?) {
        (Some(_), Some(_)) => return Err(incompatible("gammaT", "give either gamma or gammaT")),
        (Some(g), None) => c.gamma = g,
        (None, Some(gt)) => c.gamma = gt / c.schedule.duration,
        (None, None) => {}
    }

    let output = OutputSpec {
        path: e.str("output.path").map(PathBuf::from),
        format: match e.str("output.format") {
            None => Format::Csv,
            Some(s) => Format::parse(s).ok_or_else(|| value("output.format", format!("`{s}` is not csv or json_lines")))?,
        },
    };

    c.validate()?;
    Ok(ConfigFile { run: c, output })
}

fn initial_state(e: &Entries, many: bool) -> Result<InitialState> {
    let given: Vec<&str> = ["alpha", "n_th", "fock_n"].into_iter().filter(|k| e.has(k)).collect();
    if given.len() > 1 {
        return Err(incompatible(given[1], format!("conflicts with `{}`", given[0])));
    }
    let kind = match e.str("initial") {
        Some(s) => s.to_string(),
        None if many => "fermi_ground".into(),
        None => match given.first() {
            Some(&"n_th") => "thermal".into(),
            Some(&"fock_n") => "fock".into(),
            _ => "coherent".into(),
        },
    };
    let check = |key: &str| -> Result<()> {
        match given.first() {
            Some(k) if *k != key => Err(incompatible(k, format!("initial state is {kind}"))),
            _ => Ok(()),
        }
    };
    match kind.as_str() {
        "coherent" => {
            check("alpha")?;
            Ok(InitialState::Coherent {
                alpha: e.f64("alpha")?.unwrap_or(2.0),
            })
        }
        "thermal" => {
            check("n_th")?;
            Ok(InitialState::Thermal {
                n_th: e.f64("n_th")?.unwrap_or(0.0),
            })
        }
        "fock" => {
            check("fock_n")?;
            Ok(InitialState::Fock {
                n: e.uint("fock_n")?.unwrap_or(0),
            })
        }
        "fermi_ground" => {
            if let Some(k) = given.first() {
                return Err(incompatible(k, "initial state is fermi_ground"));
            }
            Ok(InitialState::FermiGround)
        }
        other => Err(value("initial", format!("unknown initial state `{other}`"))),
    }
}

fn schedule(e: &Entries, default: ScanSchedule) -> Result<ScanSchedule> {
    let mode = match e.str("scan.mode") {
        Some("fixed_point") => Some(ScanMode::FixedPoint),
        Some("linear_scan") => Some(ScanMode::LinearScan),
        Some(s) => return Err(value("scan.mode", format!("`{s}` is not fixed_point or linear_scan"))),
        None => None,
    };
    let z0 = e.f64("scan.z0")?;
    let start = e.f64("scan.z0_start")?;
    let end = e.f64("scan.z0_end")?;
    let mode = mode.unwrap_or(if start.is_some() || end.is_some() {
        ScanMode::LinearScan
    } else if z0.is_some() {
        ScanMode::FixedPoint
    } else {
        default.mode
    });
    let duration = e.f64("scan.T")?.unwrap_or(default.duration);
    let n_scans = e.uint("scan.n_scans")?.unwrap_or(default.n_scans);
    match mode {
        ScanMode::FixedPoint => {
            for k in ["scan.z0_start", "scan.z0_end"] {
                if e.has(k) {
                    return Err(incompatible(k, "fixed_point schedule uses scan.z0"));
                }
            }
            let mut s = ScanSchedule::fixed(z0.unwrap_or(default.z0_start), duration);
            s.n_scans = n_scans;
            Ok(s)
        }
        ScanMode::LinearScan => {
            if e.has("scan.z0") {
                return Err(incompatible("scan.z0", "linear_scan uses scan.z0_start and scan.z0_end"));
            }
            Ok(ScanSchedule::linear(
                start.unwrap_or(default.z0_start),
                end.unwrap_or(default.z0_end),
                duration,
                n_scans,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_movie_config_fills_defaults() {
        let f = parse_config_str("regime = bad_cavity\nalpha = 2\n").unwrap();
        assert_eq!(f.run.initial, InitialState::Coherent { alpha: 2.0 });
        assert_eq!(f.run.schedule.mode, ScanMode::FixedPoint);
        assert_eq!(f.run.dim, RunConfig::default().dim);
        assert_eq!(f.output.format, Format::Csv);
    }

    #[test]
    fn comments_and_blank_lines() {
        let f = parse_config_str("# header\n\ngamma = 2 # rate\n").unwrap();
        assert_eq!(f.run.gamma, 2.0);
    }

    #[test]
    fn zero_kappa_names_the_key() {
        let err = parse_config_str("kappa = 0\n").unwrap_err();
        assert_eq!(err.key(), Some("kappa"));
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(parse_config_str("gama = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(
            parse_config_str("gamma = 1\ngamma = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(parse_config_str("gamma 1"), Err(ConfigError::Syntax { line: 1 })));
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(parse_config_str("gamma = inf").unwrap_err().key(), Some("gamma"));
        assert_eq!(parse_config_str("sigma = NaN").unwrap_err().key(), Some("sigma"));
    }

    #[test]
    fn alpha_with_fermi_ground_is_incompatible() {
        let err = parse_config_str("regime = manybody\nalpha = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Incompatible { .. }));
        assert_eq!(err.key(), Some("alpha"));
        let err = parse_config_str("initial = thermal\nalpha = 1\n").unwrap_err();
        assert_eq!(err.key(), Some("alpha"));
        let err = parse_config_str("n_fermions = 8\n").unwrap_err();
        assert_eq!(err.key(), Some("n_fermions"));
    }

    #[test]
    fn friedel_config_accepted_with_gamma_t() {
        let f = parse_config_str(
            "regime = manybody\nn_fermions = 16\nsigma = 0.01\nkappa = 39.47841760435743\ngammaT = 400\nscan.T = 1\ndt = 1e-4\n",
        )
        .unwrap();
        assert_eq!(f.run.gamma, 400.0);
        assert_eq!(f.run.initial, InitialState::FermiGround);
        let bound = 1.0 / (0.01f64 * 0.01);
        assert!(f.run.kappa <= bound);
    }

    #[test]
    fn scan_keys_select_linear_mode() {
        let f = parse_config_str(
            "regime = good_cavity\nkappa = 0.1\ngamma = 1\nn_th = 0.6\nscan.z0_start = -5\nscan.z0_end = 5\nscan.T = 10\nscan.n_scans = 3\n",
        )
        .unwrap();
        assert_eq!(f.run.schedule, ScanSchedule::linear(-5.0, 5.0, 10.0, 3));
        assert_eq!(f.run.initial, InitialState::Thermal { n_th: 0.6 });
        assert!(parse_config_str("scan.z0 = 1\nscan.z0_end = 2\n").is_err());
    }

    #[test]
    fn good_cavity_guard_reported_as_error() {
        let err = parse_config_str("regime = good_cavity\nkappa = 5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(qscope::error::QscopeError::Guard(_))));
    }
}
