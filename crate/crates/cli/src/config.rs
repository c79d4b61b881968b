//! Flat dotted-key JSON configuration, layered under explicit flags.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use serde_json::Value;

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, f64)] = &[
    ("sdrsim.sigma_s", f64::NAN),
    ("sdrsim.sigma_r", f64::NAN),
    ("sdrsim.rho", 0.5),
    ("bracket.ev", 4.0),
    ("metrics.gt_percentile", 99.9),
    ("metrics.gt_target", 1000.0),
    ("metrics.gt_lo", 1.0),
    ("metrics.gt_hi", 1000.0),
    ("metrics.display_peak", 1000.0),
    ("vmm.steps", 2000.0),
    ("vmm.batch", 256.0),
    ("vmm.lr", 1e-3),
    ("vmm.count", 200.0),
    ("vmm.size", 32.0),
    ("toy.steps", 3000.0),
    ("toy.batch", 4.0),
    ("toy.lr", 1e-3),
    ("toy.sequences", 64.0),
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, f64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let map: BTreeMap<String, Value> = serde_json::from_str(text).context("config must be a flat JSON object")?;
        let mut values = BTreeMap::new();
        for (k, v) in map {
            if !DEFAULTS.iter().any(|(d, _)| *d == k) {
                bail!("unknown config key {k:?}");
            }
            let Some(x) = v.as_f64() else {
                bail!("config key {k:?} must be a number");
            };
            values.insert(k, x);
        }
        Ok(Self { values })
    }

    /// Explicit flag, else config file, else built-in default.
    pub fn f64(&self, key: &str, flag: Option<f64>) -> f64 {
        flag.or_else(|| self.values.get(key).copied()).unwrap_or_else(|| {
            DEFAULTS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no default for {key}"))
        })
    }

    pub fn usize(&self, key: &str, flag: Option<usize>) -> anyhow::Result<usize> {
        let v = self.f64(key, flag.map(|x| x as f64));
        if !(v >= 0.0 && v.fract() == 0.0) {
            bail!("{key} must be a non-negative integer, got {v}");
        }
        Ok(v as usize)
    }

    /// Set explicitly (flag or file) rather than defaulted.
    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }
}
