//! Initial data generators.

use crate::discretization::DiscreteOperator;
use crate::error::{Error, Result};
use crate::state::State;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialKind {
    /// Sine series over the lowest N/8 modes, normal amplitudes under a Gaussian roll-off.
    Random,
    /// Gaussian in η centered at L/2, u = 0.
    GaussianBump { width: f64 },
    /// sin⁴(πx/L)·cos(2πmx/L) in η, sin⁴(πx/L) in u.
    SinePacket { m: u32 },
    /// CSV (t,x,eta,u) or binary checkpoint.
    File(PathBuf),
}

impl InitialKind {
    pub fn parse(kind: &str, file: Option<PathBuf>) -> Result<Self> {
        match kind {
            "random" => Ok(InitialKind::Random),
            "gaussian-bump" => Ok(InitialKind::GaussianBump { width: 0.1 }),
            "sine-packet" => Ok(InitialKind::SinePacket { m: 1 }),
            "file" => file
                .map(InitialKind::File)
                .ok_or_else(|| Error::Domain("initial condition 'file' needs a path".into())),
            _ => Err(Error::Domain(format!("unknown initial condition '{kind}'"))),
        }
    }
}

/// Gaussian roll-off of the random sine amplitudes, width RANDOM_ROLLOFF modes.
pub const RANDOM_ROLLOFF: f64 = 3.0;

fn random_filter(k: usize) -> f64 {
    (-0.5 * (k as f64 / RANDOM_ROLLOFF).powi(2)).exp()
}

/// sin²(πx/L): vanishes with its first derivative at both ends.
fn taper(x: f64, l: f64) -> f64 {
    (PI * x / l).sin().powi(2)
}

/// Build data on the operator's grid, scaled to L² norm `amplitude` (ignored for files),
/// with the pinned boundary values overwritten.
pub fn initial_condition(kind: &InitialKind, seed: u64, op: &DiscreteOperator, amplitude: f64) -> Result<State> {
    let g = op.grid;
    let x = g.nodes();
    let l = g.l;
    let mut s = match kind {
        InitialKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes = (g.n / 8).max(1);
            let mut coef = [vec![0.0; modes], vec![0.0; modes]];
            for c in coef.iter_mut() {
                for (k, v) in c.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = z * random_filter(k + 1);
                }
            }
            let series = |c: &[f64], x: f64| -> f64 {
                c.iter().enumerate().map(|(k, a)| a * ((k + 1) as f64 * PI * x / l).sin()).sum::<f64>() * taper(x, l)
            };
            State::new(x.iter().map(|&x| series(&coef[0], x)).collect(), x.iter().map(|&x| series(&coef[1], x)).collect(), 0.0)?
        }
        InitialKind::GaussianBump { width } => {
            let w = width * l;
            let eta = x.iter().map(|&x| (-((x - 0.5 * l) / w).powi(2)).exp() * taper(x, l)).collect();
            State::new(eta, vec![0.0; g.len()], 0.0)?
        }
        InitialKind::SinePacket { m } => {
            let env = |x: f64| (PI * x / l).sin().powi(4);
            let eta = x.iter().map(|&x| env(x) * (2.0 * PI * *m as f64 * x / l).cos()).collect();
            let u = x.iter().map(|&x| env(x)).collect();
            State::new(eta, u, 0.0)?
        }
        InitialKind::File(path) => {
            let s = crate::io::read_state(path)?;
            if s.len() != g.len() {
                return Err(Error::Format(format!("file holds {} nodes, grid has {}", s.len(), g.len())));
            }
            let mut s = s;
            s.project(op);
            return Ok(s);
        }
    };
    s.project(op);
    let nrm = s.l2_norm(g.h);
    if nrm > 0.0 {
        s = s.scaled(amplitude / nrm);
    }
    Ok(s)
}
