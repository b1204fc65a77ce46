//! Plain-text `key = value` configuration with dotted sections.
//!
//! Every known key has a documented default; unknown keys are rejected so a
//! typo cannot silently fall back to a default. The effective configuration
//! (defaults overlaid with the file) is what runs and what the manifest
//! records, so a run is reproducible from its manifest alone.

use std::collections::BTreeMap;
use std::fmt;

/// Configuration error; the CLI maps it to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

/// Known keys and their defaults, in serialization order.
pub const SCHEMA: &[(&str, &str)] = &[
    ("seed", "42"),
    ("out.dir", "out"),
    ("grid.d", "1"),
    ("grid.n", "256"),
    ("kernel.name", "box"),
    ("kernel.t", "1"),
    ("kernel.r0", "1"),
    ("kernel.file", ""),
    ("quad.base", "64"),
    ("quad.grading", "2"),
    ("quad.tail_probe", "64"),
    ("density.kind", "separable"),
    ("density.p", "2"),
    ("density.m", "1"),
    ("density.a.cells", "2"),
    ("density.a.values", "2,1"),
    ("density.b.cells", "1"),
    ("density.b.values", "1"),
    ("density.growth_mode", "strict"),
    ("matrix.values", "1"),
    ("cell.regime", "nonlocal"),
    ("cell.lambda", "1"),
    ("optimizer.tol_grad", "auto"),
    ("optimizer.max_iter", "5000"),
    ("optimizer.algorithm", "accelerated_gradient"),
    ("optimizer.restart_every", "0"),
    ("sweep.lambdas", "0.0625,0.125,0.25,0.5,1,2,4,8,16,32,64"),
    ("sweep.resolve_factor", "16"),
    ("sweep.n_min", "64"),
    ("sweep.n_max", "4096"),
    ("sweep.endpoint_n", "256"),
    ("relaxed.n", "64"),
    ("gamma.t_layer", "1"),
    ("gamma.resolve_factor", "8"),
    ("gamma.n_max", "16384"),
    ("schedule.eps", "0.125,0.0625,0.03125,0.015625,0.0078125"),
    ("schedule.delta", "0.125,0.0625,0.03125,0.015625,0.0078125"),
    ("schedule.target", "1"),
];

/// The effective configuration of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = SCHEMA.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        RunConfig { values }
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are an error naming the key.
    pub fn parse(text: &str) -> ConfigResult<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            if !cfg.values.contains_key(key) {
                return Err(ConfigError(format!("line {}: unknown key `{key}`", lineno + 1)));
            }
            cfg.values.insert(key.to_string(), value.to_string());
        }
        Ok(cfg)
    }

    /// Canonical serialization; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, _) in SCHEMA {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.values[*k]);
            out.push('\n');
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> ConfigResult<()> {
        if !self.values.contains_key(key) {
            return Err(ConfigError(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key `{key}` missing from schema"))
            .as_str()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        SCHEMA.iter().map(move |(k, _)| (*k, self.values[*k].as_str()))
    }

    pub fn get_f64(&self, key: &str) -> ConfigResult<f64> {
        self.get(key)
            .parse::<f64>()
            .map_err(|e| ConfigError(format!("key `{key}`: {e}")))
    }

    pub fn get_usize(&self, key: &str) -> ConfigResult<usize> {
        self.get(key)
            .parse::<usize>()
            .map_err(|e| ConfigError(format!("key `{key}`: {e}")))
    }

    pub fn get_u64(&self, key: &str) -> ConfigResult<u64> {
        self.get(key)
            .parse::<u64>()
            .map_err(|e| ConfigError(format!("key `{key}`: {e}")))
    }

    pub fn get_f64_list(&self, key: &str) -> ConfigResult<Vec<f64>> {
        let raw = self.get(key).trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| ConfigError(format!("key `{key}`: `{s}`: {e}")))
            })
            .collect()
    }
}
