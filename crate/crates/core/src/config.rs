//! Flat `key = value` parameter files.

use crate::error::{Error, Result};
use crate::model::{canonical_theta_sq, derive_coefficients, ModelCoefficients, PhysicalParameters};
use std::collections::BTreeMap;

pub const KEYS: [&str; 13] = ["alpha", "beta", "theta_sq", "tau", "a", "b", "a1", "a2", "a3", "a4", "alpha1", "alpha2", "L"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub values: BTreeMap<String, f64>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Format(format!("line {}: unknown key '{k}'", lineno + 1)));
            }
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad number '{v}' for {k}", lineno + 1)))?;
            values.insert(k.to_string(), x);
        }
        Ok(Config { values })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: f64) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Format(format!("unknown key '{key}'")));
        }
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn physical(&self) -> PhysicalParameters {
        let theta_sq = self.get("theta_sq").unwrap_or_else(canonical_theta_sq);
        PhysicalParameters {
            alpha: self.get("alpha").unwrap_or(1.0),
            beta: self.get("beta").unwrap_or(1.0),
            theta_sq,
            tau: self.get("tau").unwrap_or(2.0 / 3.0 - theta_sq),
        }
    }

    /// Direct coefficients when `a` or `b` is present, the derivation otherwise.
    pub fn coefficients(&self) -> Result<ModelCoefficients> {
        let alpha1 = self.get("alpha1").unwrap_or(1.0);
        let alpha2 = self.get("alpha2").unwrap_or(1.0);
        let l = self.get("L").unwrap_or(1.0);
        if self.get("a").is_some() || self.get("b").is_some() {
            let (a, b) = match (self.get("a"), self.get("b")) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Format("direct coefficients need both a and b".into())),
            };
            let c = ModelCoefficients {
                a,
                b,
                a1: self.get("a1").unwrap_or(0.0),
                a2: self.get("a2").unwrap_or(0.0),
                a3: self.get("a3").unwrap_or(0.0),
                a4: self.get("a4").unwrap_or(0.0),
                alpha1,
                alpha2,
                l,
            };
            c.check()?;
            Ok(c)
        } else {
            derive_coefficients(&self.physical(), alpha1, alpha2, l)
        }
    }
}
