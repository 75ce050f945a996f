//! Physical parameters, derived PDE coefficients and their admissibility checks.

use crate::error::{Error, Result};
use serde::Serialize;

/// θ² = 1/2 − 1/(2√5), the value at which the b-identity closes.
pub fn canonical_theta_sq() -> f64 {
    0.5 - 1.0 / (2.0 * 5f64.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhysicalParameters {
    pub alpha: f64,
    pub beta: f64,
    pub theta_sq: f64,
    pub tau: f64,
}

impl PhysicalParameters {
    /// Canonical choice: θ² at its named value and τ = 2/3 − θ².
    pub fn canonical(alpha: f64, beta: f64) -> Self {
        let theta_sq = canonical_theta_sq();
        PhysicalParameters { alpha, beta, theta_sq, tau: 2.0 / 3.0 - theta_sq }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.theta_sq) {
            return Err(Error::Domain(format!("theta_sq must lie in [0,1], got {}", self.theta_sq)));
        }
        if !self.tau.is_finite() {
            return Err(Error::Domain("tau must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelCoefficients {
    pub a: f64,
    pub b: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl ModelCoefficients {
    /// Linear coefficients only; the nonlinear ones are zero.
    pub fn linear(a: f64, b: f64, alpha1: f64, alpha2: f64, l: f64) -> Self {
        ModelCoefficients { a, b, a1: 0.0, a2: 0.0, a3: 0.0, a4: 0.0, alpha1, alpha2, l }
    }

    pub fn with_gains(mut self, alpha1: f64, alpha2: f64) -> Self {
        self.alpha1 = alpha1;
        self.alpha2 = alpha2;
        self
    }

    pub fn with_length(mut self, l: f64) -> Self {
        self.l = l;
        self
    }

    pub fn without_nonlinearity(mut self) -> Self {
        self.a1 = 0.0;
        self.a2 = 0.0;
        self.a3 = 0.0;
        self.a4 = 0.0;
        self
    }

    /// Errors on the first failed hard constraint.
    pub fn check(&self) -> Result<()> {
        let report = validate_coefficients(self);
        match report.checks.iter().find(|c| !c.passed) {
            Some(c) => Err(Error::Constraint(c.name.to_string())),
            None => Ok(()),
        }
    }
}

/// Residual of b-identity: (1/120)(25θ⁴−10θ²+1) − (1/24)(θ⁴−6θ²+5) − (τ/2)(θ²−1).
pub fn appendix_identity_residual(theta_sq: f64, tau: f64) -> f64 {
    let t = theta_sq;
    (25.0 * t * t - 10.0 * t + 1.0) / 120.0 - (t * t - 6.0 * t + 5.0) / 24.0 - 0.5 * tau * (t - 1.0)
}

pub fn derive_coefficients(
    p: &PhysicalParameters,
    alpha1: f64,
    alpha2: f64,
    l: f64,
) -> Result<ModelCoefficients> {
    p.validate()?;
    let PhysicalParameters { alpha, beta, theta_sq: t, .. } = *p;
    let c = ModelCoefficients {
        a: 0.5 * beta * (t - 1.0 / 3.0),
        b: beta * beta / 120.0 * (25.0 * t * t - 10.0 * t + 1.0),
        a1: alpha,
        a2: 0.5 * alpha * beta * (t - 1.0),
        a3: alpha * beta,
        a4: alpha * beta * (2.0 - t),
        alpha1,
        alpha2,
        l,
    };
    c.check()?;
    if c.a == c.b {
        return Err(Error::Constraint("a != b".into()));
    }
    Ok(c)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Set when a < 0: the main-text sign list has a > 0, the derivation gives a < 0.
    pub a_negative: bool,
    /// Set when a = b; listed as an assumption of the model but not used by the analysis.
    pub a_equals_b: bool,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn validate_coefficients(c: &ModelCoefficients) -> ValidationReport {
    let finite = [c.a, c.b, c.a1, c.a2, c.a3, c.a4, c.alpha1, c.alpha2, c.l]
        .iter()
        .all(|v| v.is_finite());
    let checks = vec![
        Check { name: "finite", passed: finite },
        Check { name: "b > 0", passed: c.b > 0.0 },
        Check { name: "L > 0", passed: c.l > 0.0 },
        Check { name: "alpha1 >= 0", passed: c.alpha1 >= 0.0 },
        Check { name: "alpha2 >= 0", passed: c.alpha2 >= 0.0 },
        Check { name: "4b > a^2", passed: 4.0 * c.b > c.a * c.a },
    ];
    ValidationReport { checks, a_negative: c.a < 0.0, a_equals_b: c.a == c.b }
}
