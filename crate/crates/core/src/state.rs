use crate::discretization::{interleave, DiscreteOperator, Grid};
use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    pub eta: Vec<f64>,
    pub u: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn zeros(g: &Grid) -> Self {
        State { eta: vec![0.0; g.len()], u: vec![0.0; g.len()], t: 0.0 }
    }

    pub fn new(eta: Vec<f64>, u: Vec<f64>, t: f64) -> Result<Self> {
        if eta.len() != u.len() {
            return Err(Error::DimensionMismatch { expected: eta.len(), got: u.len() });
        }
        Ok(State { eta, u, t })
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn interleaved(&self) -> Vec<f64> {
        interleave(&self.eta, &self.u)
    }

    /// Trapezoidal L² norm of (η, u).
    pub fn l2_norm(&self, h: f64) -> f64 {
        (2.0 * crate::diagnostics::energy_of(&self.eta, &self.u, h)).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.eta.iter().chain(&self.u).fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(&self.u).all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> State {
        State {
            eta: self.eta.iter().map(|v| v * s).collect(),
            u: self.u.iter().map(|v| v * s).collect(),
            t: self.t,
        }
    }

    /// Largest violation of the pinned boundary values.
    pub fn boundary_violation(&self) -> f64 {
        let n = self.len() - 1;
        [self.eta[0], self.eta[n], self.u[0], self.u[n]].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Overwrite the pinned boundary values; the derivative conditions live in the ghosts.
    pub fn project(&mut self, op: &DiscreteOperator) {
        let n = op.grid.n;
        for f in [&mut self.eta, &mut self.u] {
            f[0] = 0.0;
            f[n] = 0.0;
        }
    }
}
