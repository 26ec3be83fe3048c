//! Selection configuration and its canonical `key = value` text form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How Stage-2 picks `n2` samples from the scored candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Necessity-based grouped sampling.
    Nbgs,
    Random,
    Top,
    Bottom,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Nbgs, Strategy::Random, Strategy::Top, Strategy::Bottom];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Nbgs => "nbgs",
            Strategy::Random => "random",
            Strategy::Top => "top",
            Strategy::Bottom => "bottom",
        }
    }
}

/// Sign convention of stored scores.
///
/// `Nll` stores the total negative log-likelihood of the response tokens, so
/// larger means the scorer finds the sample harder. `Loglik` stores the plain
/// sum of log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Nll,
    Loglik,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Nll => "nll",
            Orientation::Loglik => "loglik",
        }
    }
}

macro_rules! str_enum {
    ($ty:ident, $what:literal, [$($name:literal => $variant:expr),+ $(,)?]) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    )),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

str_enum!(Strategy, "strategy", ["nbgs" => Strategy::Nbgs, "random" => Strategy::Random, "top" => Strategy::Top, "bottom" => Strategy::Bottom]);
str_enum!(Orientation, "orientation", ["nll" => Orientation::Nll, "loglik" => Orientation::Loglik]);

pub const DEFAULT_SEED_SIZE: usize = 100_000;
pub const DEFAULT_SELECT_SIZE: usize = 565_000;
pub const DEFAULT_GROUP_SIZE: usize = 50_000;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Seed subset size.
    pub n1: usize,
    /// Necessity subset size.
    pub n2: usize,
    /// Group size for NBGS.
    pub k: usize,
    /// Softmax temperature.
    pub tau: f64,
    pub strategy: Strategy,
    pub orientation: Orientation,
    pub rng_seed: u64,
    /// Divide summed scores by the response token count.
    pub length_norm: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            n1: DEFAULT_SEED_SIZE,
            n2: DEFAULT_SELECT_SIZE,
            k: DEFAULT_GROUP_SIZE,
            tau: DEFAULT_TEMPERATURE,
            strategy: Strategy::Nbgs,
            orientation: Orientation::Nll,
            rng_seed: 0,
            length_norm: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("n1 + n2 = {} exceeds the pool size {pool} (n1 = {n1}, n2 = {n2})", n1 + n2)]
    ExceedsPool { n1: usize, n2: usize, pool: usize },
    #[error("temperature tau must satisfy tau > 0 and be finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("group size k must be at least 1")]
    ZeroGroupSize,
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("config key {key:?}: {reason}")]
    BadValue { key: String, reason: String },
}

/// Field names accepted in config files, in canonical order.
pub const CONFIG_KEYS: [&str; 8] = ["n1", "n2", "k", "tau", "strategy", "orientation", "rng_seed", "length_norm"];

impl SelectionConfig {
    /// Checks the invariants that do not depend on the pool.
    pub fn check(&self) -> Result<(), ConfigError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ConfigError::NonPositiveTemperature(self.tau));
        }
        if self.k == 0 {
            return Err(ConfigError::ZeroGroupSize);
        }
        Ok(())
    }

    /// Canonical text: one `key = value` line per field, fixed order.
    pub fn to_canonical_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.value_text(key));
            out.push('\n');
        }
        out
    }

    fn value_text(&self, key: &str) -> String {
        match key {
            "n1" => self.n1.to_string(),
            "n2" => self.n2.to_string(),
            "k" => self.k.to_string(),
            // Debug formatting of f64 is the shortest round-trip representation.
            "tau" => format!("{:?}", self.tau),
            "strategy" => self.strategy.to_string(),
            "orientation" => self.orientation.to_string(),
            "rng_seed" => self.rng_seed.to_string(),
            "length_norm" => self.length_norm.to_string(),
            _ => unreachable!("not a config key: {key}"),
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| ConfigError::BadValue { key: key.to_string(), reason: format!("{value:?}: {e}") })
        }
        match key {
            "n1" => self.n1 = parse(key, value)?,
            "n2" => self.n2 = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "strategy" => self.strategy = parse(key, value)?,
            "orientation" => self.orientation = parse(key, value)?,
            "rng_seed" => self.rng_seed = parse(key, value)?,
            "length_norm" => self.length_norm = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey { line: 0, key: key.to_string() });
            }
        }
        Ok(())
    }

    /// Applies a config file's `key = value` lines on top of `self`.
    /// Blank lines and `#` comments are ignored; keys may appear at most once.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedLine { line, text: raw.to_string() })?;
            let (key, value) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            seen.push(key);
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }
}

/// Validates `cfg` against a pool of `pool_size` samples and hands it back.
pub fn validate_config(cfg: SelectionConfig, pool_size: usize) -> Result<SelectionConfig, ConfigError> {
    cfg.check()?;
    if cfg.n1.checked_add(cfg.n2).is_none_or(|total| total > pool_size) {
        return Err(ConfigError::ExceedsPool { n1: cfg.n1, n2: cfg.n2, pool: pool_size });
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n1: usize, n2: usize) -> SelectionConfig {
        SelectionConfig { n1, n2, ..SelectionConfig::default() }
    }

    #[test]
    fn table_two_allocation_is_valid() {
        let c = cfg(1000, 5000);
        assert_eq!(validate_config(c.clone(), 6000).unwrap(), c);
    }

    #[test]
    fn rejects_oversized_allocation() {
        assert_eq!(
            validate_config(cfg(1, 1), 1).unwrap_err(),
            ConfigError::ExceedsPool { n1: 1, n2: 1, pool: 1 }
        );
    }

    #[test]
    fn rejects_nonpositive_temperature() {
        for tau in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            let c = SelectionConfig { tau, ..cfg(0, 0) };
            assert!(matches!(validate_config(c, 10), Err(ConfigError::NonPositiveTemperature(_))));
        }
    }

    #[test]
    fn rejects_zero_group_size() {
        let c = SelectionConfig { k: 0, ..cfg(0, 0) };
        assert_eq!(validate_config(c, 10).unwrap_err(), ConfigError::ZeroGroupSize);
    }

    #[test]
    fn defaults_match_reference_setup() {
        let c = SelectionConfig::default();
        assert_eq!((c.n1, c.n2, c.k), (100_000, 565_000, 50_000));
        assert_eq!(c.tau, 1.0);
        assert_eq!(c.strategy, Strategy::Nbgs);
        assert_eq!(c.orientation, Orientation::Nll);
        assert!(!c.length_norm);
    }

    #[test]
    fn canonical_text_shape() {
        let c = SelectionConfig { n1: 1000, n2: 5000, k: 500, rng_seed: 7, ..Default::default() };
        assert_eq!(
            c.to_canonical_text(),
            "n1 = 1000\nn2 = 5000\nk = 500\ntau = 1.0\nstrategy = nbgs\norientation = nll\nrng_seed = 7\nlength_norm = false\n"
        );
    }

    #[test]
    fn parse_errors_are_named() {
        assert!(matches!(SelectionConfig::from_text("bogus = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(SelectionConfig::from_text("k = 1\nk = 2"), Err(ConfigError::DuplicateKey { line: 2, .. })));
        assert!(matches!(SelectionConfig::from_text("\n\nk 3"), Err(ConfigError::MalformedLine { line: 3, .. })));
        assert!(matches!(SelectionConfig::from_text("strategy = best"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn comments_and_partial_files() {
        let c = SelectionConfig::from_text("# ablation\n tau = 10.0 \n\nstrategy=top\n").unwrap();
        assert_eq!(c.tau, 10.0);
        assert_eq!(c.strategy, Strategy::Top);
        assert_eq!(c.k, DEFAULT_GROUP_SIZE);
    }

    mod props {
        use crate::config::{Orientation, SelectionConfig, Strategy as Strat};
        use proptest::prelude::*;

        fn arb_config() -> impl Strategy<Value = SelectionConfig> {
            (
                any::<usize>(),
                any::<usize>(),
                1usize..,
                any::<f64>().prop_filter("positive finite", |t| *t > 0.0 && t.is_finite()),
                0usize..4,
                any::<bool>(),
                any::<u64>(),
                any::<bool>(),
            )
                .prop_map(|(n1, n2, k, tau, s, o, rng_seed, length_norm)| SelectionConfig {
                    n1,
                    n2,
                    k,
                    tau,
                    strategy: Strat::ALL[s],
                    orientation: if o { Orientation::Nll } else { Orientation::Loglik },
                    rng_seed,
                    length_norm,
                })
        }

        proptest! {
            #[test]
            fn canonical_text_round_trips(c in arb_config()) {
                let text = c.to_canonical_text();
                let back = SelectionConfig::from_text(&text).unwrap();
                prop_assert_eq!(back.tau.to_bits(), c.tau.to_bits());
                prop_assert_eq!(&back, &c);
                prop_assert_eq!(back.to_canonical_text(), text);
            }
        }
    }
}
