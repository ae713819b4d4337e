//! Flat `key = value` run configuration.
//!
//! ```text
//! # LQ2 with a quarter-horizon delay
//! command = optimize
//! problem = LQ2
//! param.alpha = 0.5
//! N = 32
//! delta = 0.25
//! ```
//!
//! Everything after a `#` is a comment. Command-line overrides are applied
//! after the file, so they always win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use delay_volterra::catalog::canonical_key;
use delay_volterra::Params;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Adjoint,
    Optimize,
    VerifyDuality,
    VerifyClarkOcone,
    VerifyMp,
    GradCheck,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Adjoint,
        Command::Optimize,
        Command::VerifyDuality,
        Command::VerifyClarkOcone,
        Command::VerifyMp,
        Command::GradCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Adjoint => "adjoint",
            Command::Optimize => "optimize",
            Command::VerifyDuality => "verify-duality",
            Command::VerifyClarkOcone => "verify-clark-ocone",
            Command::VerifyMp => "verify-mp",
            Command::GradCheck => "grad-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    /// The Malliavin checks run on plain Brownian motion and need no problem.
    pub fn needs_problem(&self) -> bool {
        !matches!(self, Command::VerifyDuality | Command::VerifyClarkOcone)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{key}`; accepted keys: {}, param.<name>", KEYS.iter().map(|k| k.0).collect::<Vec<_>>().join(", "))]
    UnknownKey { key: String },
    #[error("key `{key}`: `{value}` is not {expected}")]
    TypeMismatch {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key `{key}` ({expected})")]
    MissingKey { key: String, expected: &'static str },
}

const FLOAT: &str = "a finite number";
const INT: &str = "a non-negative integer";
const BOOL: &str = "true or false";

/// Accepted keys and the form each value takes.
pub const KEYS: [(&str, &str); 23] = [
    ("command", "one of simulate, adjoint, optimize, verify-duality, verify-clark-ocone, verify-mp, grad-check"),
    ("problem", "a catalog name: LQ1, LQ2, QUAD_TERM or CUSTOM_POLY"),
    ("T", FLOAT),
    ("N", INT),
    ("delta", FLOAT),
    ("M", INT),
    ("seed", INT),
    ("degree", INT),
    ("ridge", FLOAT),
    ("eta0", FLOAT),
    ("tol", FLOAT),
    ("max_iter", INT),
    ("out", "a directory path"),
    ("threads", INT),
    ("u0", FLOAT),
    ("control", "a path to a control CSV with a `u` column"),
    ("eps", FLOAT),
    ("directions", INT),
    ("summary", BOOL),
    ("full_kernel", BOOL),
    ("freeze_adjoint", BOOL),
    ("mp_tol", FLOAT),
    ("v_points", INT),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub problem: Option<String>,
    pub params: Params,
    pub horizon: f64,
    pub steps: usize,
    pub delta: f64,
    pub paths: usize,
    pub seed: u64,
    pub degree: usize,
    pub ridge: f64,
    pub eta0: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Constant control used when no control file is given.
    pub u0: f64,
    pub control: Option<PathBuf>,
    pub eps: f64,
    pub directions: usize,
    pub summary: bool,
    pub full_kernel: bool,
    pub freeze_adjoint: bool,
    pub mp_tol: f64,
    pub v_points: usize,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            problem: None,
            params: Params::new(),
            horizon: 1.0,
            steps: 32,
            delta: 0.0,
            paths: 10_000,
            seed: 42,
            degree: 2,
            ridge: 1e-8,
            eta0: 0.5,
            tol: 1e-3,
            max_iter: 200,
            out: None,
            threads: None,
            u0: 0.0,
            control: None,
            eps: 1e-3,
            directions: 5,
            summary: false,
            full_kernel: false,
            freeze_adjoint: false,
            mp_tol: 1e-2,
            v_points: 101,
        }
    }

    /// Renders the config in the file format; `parse_config` reads it back
    /// unchanged.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("command", self.command.name().to_string());
        if let Some(p) = &self.problem {
            put("problem", p.clone());
        }
        for (k, v) in &self.params {
            put(&format!("param.{k}"), v.to_string());
        }
        put("T", self.horizon.to_string());
        put("N", self.steps.to_string());
        put("delta", self.delta.to_string());
        put("M", self.paths.to_string());
        put("seed", self.seed.to_string());
        put("degree", self.degree.to_string());
        put("ridge", self.ridge.to_string());
        put("eta0", self.eta0.to_string());
        put("tol", self.tol.to_string());
        put("max_iter", self.max_iter.to_string());
        if let Some(o) = &self.out {
            put("out", o.display().to_string());
        }
        if let Some(t) = self.threads {
            put("threads", t.to_string());
        }
        put("u0", self.u0.to_string());
        if let Some(c) = &self.control {
            put("control", c.display().to_string());
        }
        put("eps", self.eps.to_string());
        put("directions", self.directions.to_string());
        put("summary", self.summary.to_string());
        put("full_kernel", self.full_kernel.to_string());
        put("freeze_adjoint", self.freeze_adjoint.to_string());
        put("mp_tol", self.mp_tol.to_string());
        put("v_points", self.v_points.to_string());
        s
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if let Some(name) = key.strip_prefix("param.") {
            if name.is_empty() {
                return Err(ConfigError::UnknownKey { key: key.to_string() });
            }
            self.params.insert(canonical_key(name), float(key, value)?);
            return Ok(());
        }
        match key {
            "command" => {
                self.command = Command::parse(value).ok_or_else(|| mismatch(key, value, KEYS[0].1))?;
            }
            "problem" => self.problem = Some(value.to_string()),
            "T" => self.horizon = float(key, value)?,
            "N" => self.steps = int(key, value)?,
            "delta" => self.delta = float(key, value)?,
            "M" => self.paths = int(key, value)?,
            "seed" => self.seed = int(key, value)?,
            "degree" => self.degree = int(key, value)?,
            "ridge" => self.ridge = float(key, value)?,
            "eta0" => self.eta0 = float(key, value)?,
            "tol" => self.tol = float(key, value)?,
            "max_iter" => self.max_iter = int(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "threads" => self.threads = Some(int(key, value)?),
            "u0" => self.u0 = float(key, value)?,
            "control" => self.control = Some(PathBuf::from(value)),
            "eps" => self.eps = float(key, value)?,
            "directions" => self.directions = int(key, value)?,
            "summary" => self.summary = boolean(key, value)?,
            "full_kernel" => self.full_kernel = boolean(key, value)?,
            "freeze_adjoint" => self.freeze_adjoint = boolean(key, value)?,
            "mp_tol" => self.mp_tol = float(key, value)?,
            "v_points" => self.v_points = int(key, value)?,
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }
}

fn mismatch(key: &str, value: &str, expected: &'static str) -> ConfigError {
    ConfigError::TypeMismatch {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    }
}

fn float(key: &str, value: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| mismatch(key, value, FLOAT))
}

fn int<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| mismatch(key, value, INT))
}

fn boolean(key: &str, value: &str) -> Result<bool, ConfigError> {
    value.parse::<bool>().map_err(|_| mismatch(key, value, BOOL))
}

/// Splits file text into `(line, key, value)` triples.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: n + 1,
            text: raw.to_string(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            });
        }
        out.push((n + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Builds a config from optional file text and `(key, value)` overrides.
///
/// `command` comes from the overrides or the file. A problem is required for
/// every command except the two Malliavin checks.
pub fn parse_config(file: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let lines = match file {
        Some(text) => parse_lines(text)?,
        None => Vec::new(),
    };
    let pairs: Vec<(&str, &str)> = lines
        .iter()
        .map(|(_, k, v)| (k.as_str(), v.as_str()))
        .chain(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .collect();
    let command = pairs
        .iter()
        .rev()
        .find(|(k, _)| *k == "command")
        .map(|(k, v)| Command::parse(v).ok_or_else(|| mismatch(k, v, KEYS[0].1)))
        .transpose()?
        .ok_or(ConfigError::MissingKey {
            key: "command".into(),
            expected: KEYS[0].1,
        })?;
    let mut cfg = RunConfig::new(command);
    for (k, v) in pairs {
        cfg.set(k, v)?;
    }
    if cfg.command.needs_problem() && cfg.problem.is_none() {
        return Err(ConfigError::MissingKey {
            key: "problem".into(),
            expected: KEYS[1].1,
        });
    }
    Ok(cfg)
}

/// Reads the file at `path` and applies the overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?),
        None => None,
    };
    parse_config(text.as_deref(), overrides)
}
