//! Run configuration: a flat `key = value` file whose keys mirror the
//! command-line flags, with flags taking precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lasermm::entropy::SolverOptions;

use crate::UsageError;

/// Environment variable naming the value-cache directory.
pub const CACHE_DIR_ENV: &str = "LASERMM_CACHE_DIR";

pub const KNOWN_KEYS: &[&str] = &[
    "q_min",
    "q_max",
    "r_min",
    "r_max",
    "methods",
    "format",
    "jobs",
    "seed",
    "restarts",
    "gap_tolerance",
    "bisection_width",
    "max_iterations",
    "cache_dir",
    "lower_depth",
    "merging_depth",
    "timings",
    "out",
];

/// Parsed `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; dashes in keys are read as underscores.
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(UsageError(format!("config line {}: expected key = value", no + 1)).into());
            };
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!("config line {}: unknown key {key}", no + 1)).into());
            }
            entries.insert(key, v.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    /// Flag value if given, else the file value, else `None`.
    pub fn pick<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| UsageError(format!("config key {key}: cannot parse {raw:?}: {e}")).into()),
        }
    }
}

/// Solver overrides shared by all computing subcommands.
#[derive(Clone, Debug, Default)]
pub struct SolverOverrides {
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub gap_tolerance: Option<f64>,
    pub bisection_width: Option<f64>,
    pub max_iterations: Option<usize>,
}

impl SolverOverrides {
    pub fn resolve(&self, file: &ConfigFile) -> Result<SolverOptions> {
        let mut o = SolverOptions::default();
        if let Some(v) = file.pick("restarts", self.restarts)? {
            if v == 0 {
                bail!(UsageError("restarts must be at least 1".into()));
            }
            o.restarts = v;
        }
        if let Some(v) = file.pick("seed", self.seed)? {
            o.seed = v;
        }
        if let Some(v) = file.pick("gap_tolerance", self.gap_tolerance)? {
            if !(v > 0.0) {
                bail!(UsageError("gap tolerance must be positive".into()));
            }
            o.gap_tolerance = v;
        }
        if let Some(v) = file.pick("bisection_width", self.bisection_width)? {
            if !(v > 0.0) {
                bail!(UsageError("bisection width must be positive".into()));
            }
            o.bisection_width = v;
        }
        if let Some(v) = file.pick("max_iterations", self.max_iterations)? {
            o.max_iterations = v;
        }
        Ok(o)
    }
}

/// Cache directory: flag, then environment, then config file.
pub fn cache_dir(file: &ConfigFile, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
    if flag.is_some() {
        return Ok(flag);
    }
    if let Some(v) = std::env::var_os(CACHE_DIR_ENV) {
        if !v.is_empty() {
            return Ok(Some(PathBuf::from(v)));
        }
    }
    file.pick::<PathBuf>("cache_dir", None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_pairs() {
        let f = ConfigFile::parse("# grid\nq-max = 4\n\nr_max=1\n").unwrap();
        assert_eq!(f.pick::<u32>("q_max", None).unwrap(), Some(4));
        assert_eq!(f.pick::<u32>("q_max", Some(2)).unwrap(), Some(2));
        assert_eq!(f.pick::<u32>("r_max", None).unwrap(), Some(1));
        assert_eq!(f.pick::<u32>("q_min", None).unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(ConfigFile::parse("colour = red").unwrap_err().downcast_ref::<UsageError>().is_some());
        assert!(ConfigFile::parse("q_max").unwrap_err().downcast_ref::<UsageError>().is_some());
        let f = ConfigFile::parse("q_max = many").unwrap();
        assert!(f.pick::<u32>("q_max", None).is_err());
    }
}
