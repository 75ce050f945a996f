//! Crank–Nicolson for the linear part, second-order Adams–Bashforth for the
//! nonlinear terms.

use crate::banded::{BandLu, BandMatrix};
use crate::diagnostics::{self, EnergyRecord};
use crate::discretization::{deinterleave, dof, interleave, BcFamily, DiscreteOperator, Grid, GHOSTS};
use crate::error::{Error, Result};
use crate::model::ModelCoefficients;
use crate::state::State;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Linear,
    Conservative,
    Nonlinear,
}

impl Mode {
    pub fn tag(self) -> u64 {
        match self {
            Mode::Linear => 0,
            Mode::Conservative => 1,
            Mode::Nonlinear => 2,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Mode::Linear),
            "conservative" => Ok(Mode::Conservative),
            "nonlinear" => Ok(Mode::Nonlinear),
            _ => Err(Error::Domain(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub mode: Mode,
    pub smallness_threshold: Option<f64>,
    /// Defaults to 1e6·‖s0‖_∞.
    pub blowup_threshold: Option<f64>,
    /// Keep every `stride`-th state as a snapshot (records are kept every step).
    pub stride: usize,
    /// Replace the first step by two implicit Euler substeps of size dt/2 (Rannacher
    /// start), damping stiff components that Crank–Nicolson only rotates.
    pub damped_start: bool,
}

impl RunConfig {
    pub fn new(dt: f64, t_end: f64, mode: Mode) -> Self {
        RunConfig { dt, t_end, mode, smallness_threshold: None, blowup_threshold: None, stride: 0, damped_start: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Domain(format!("T must be nonnegative, got {}", self.t_end)));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return Err(Error::Domain(format!("dt={} exceeds T={}", self.dt, self.t_end)));
        }
        for (name, v) in [("smallness_threshold", self.smallness_threshold), ("blowup_threshold", self.blowup_threshold)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Domain(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Factored (I − dt/2·A) together with (I + dt/2·A).
#[derive(Debug)]
pub struct CnFactors {
    pub dt: f64,
    lu: BandLu,
    explicit: BandMatrix,
}

impl CnFactors {
    pub fn new(op: &DiscreteOperator, dt: f64) -> Result<Self> {
        let a = &op.matrix;
        let eye = BandMatrix::identity(a.n(), a.kl(), a.ku());
        let n = op.grid.n;
        let pinned = [dof(0, 0), dof(1, 0), dof(0, n), dof(1, n)];
        let mut implicit = eye.combine(1.0, a, -0.5 * dt);
        let mut explicit = eye.combine(1.0, a, 0.5 * dt);
        // Dirichlet values are zero, so their columns carry nothing; clearing them keeps
        // pivoting from mixing the identity rows into the interior solve
        for m in [&mut implicit, &mut explicit] {
            for &k in &pinned {
                for i in k.saturating_sub(a.ku())..(k + a.kl() + 1).min(a.n()) {
                    if i != k {
                        m.set(i, k, 0.0);
                    }
                }
            }
        }
        let lu = implicit.factor().map_err(|e| match e {
            Error::SingularFactorization { pivot_ratio, .. } => Error::SingularFactorization { dt, pivot_ratio },
            other => other,
        })?;
        if lu.pivot_ratio() < 1e-14 {
            return Err(Error::SingularFactorization { dt, pivot_ratio: lu.pivot_ratio() });
        }
        Ok(CnFactors { dt, lu, explicit })
    }

    pub fn pivot_ratio(&self) -> f64 {
        self.lu.pivot_ratio()
    }

    /// Implicit Euler substep of size dt/2 with the same factorization: z ← (I − dt/2 A)⁻¹(z + dt/2·f).
    pub fn euler_half(&self, z: &mut [f64], forcing: Option<&[f64]>) {
        if let Some(f) = forcing {
            for (r, v) in z.iter_mut().zip(f) {
                *r += 0.5 * self.dt * v;
            }
        }
        self.lu.solve_in_place(z);
    }

    /// z ← (I − dt/2 A)⁻¹[(I + dt/2 A) z + dt·f].
    pub fn advance(&self, z: &mut [f64], forcing: Option<&[f64]>) {
        let mut rhs = vec![0.0; z.len()];
        self.explicit.matvec(z, &mut rhs);
        if let Some(f) = forcing {
            for (r, v) in rhs.iter_mut().zip(f) {
                *r += self.dt * v;
            }
        }
        self.lu.solve_in_place(&mut rhs);
        z.copy_from_slice(&rhs);
    }
}

type CacheKey = (u64, u64);

fn cache() -> &'static Mutex<HashMap<CacheKey, Arc<CnFactors>>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, Arc<CnFactors>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Factorization shared per (operator identity, dt).
pub fn factors(op: &DiscreteOperator, dt: f64) -> Result<Arc<CnFactors>> {
    let key = (op.id(), dt.to_bits());
    if let Some(f) = cache().lock().unwrap().get(&key) {
        return Ok(f.clone());
    }
    let f = Arc::new(CnFactors::new(op, dt)?);
    let mut c = cache().lock().unwrap();
    if c.len() >= 64 {
        c.clear();
    }
    c.insert(key, f.clone());
    Ok(f)
}

fn check_dims(op: &DiscreteOperator, s: &State) -> Result<()> {
    if s.len() != op.grid.len() || s.u.len() != op.grid.len() {
        return Err(Error::DimensionMismatch { expected: op.grid.len(), got: s.len() });
    }
    Ok(())
}

pub fn step_linear(op: &DiscreteOperator, s: &State, dt: f64) -> Result<State> {
    check_dims(op, s)?;
    let f = factors(op, dt)?;
    let mut z = s.interleaved();
    f.advance(&mut z, None);
    let (eta, u) = deinterleave(&z);
    Ok(State { eta, u, t: s.t + dt })
}

/// Fourth-order centered first and second differences on a ghost-extended array.
fn d1(f: &[f64], i: usize, h: f64) -> f64 {
    (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h)
}

fn d2(f: &[f64], i: usize, h: f64) -> f64 {
    (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) / (12.0 * h * h)
}

/// (−a₁(ηu)_x − a₂(ηu_xx)_x, −a₁uu_x − a₃(ηη_xx)_x − a₄u_xu_xx); zero on the pinned nodes.
pub fn nonlinear_rhs(c: &ModelCoefficients, s: &State, op: &DiscreteOperator) -> (Vec<f64>, Vec<f64>) {
    let n = op.grid.n;
    let h = op.grid.h;
    let mut re = vec![0.0; n + 1];
    let mut ru = vec![0.0; n + 1];
    if c.a1 == 0.0 && c.a2 == 0.0 && c.a3 == 0.0 && c.a4 == 0.0 {
        return (re, ru);
    }
    let [e, u] = op.extend(&s.eta, &s.u);
    let m = e.len();
    // products on nodes −1..=N+1 (extended indices 2..m−2)
    let mut eu = vec![0.0; m];
    let mut euxx = vec![0.0; m];
    let mut eexx = vec![0.0; m];
    for i in 2..m - 2 {
        eu[i] = e[i] * u[i];
        euxx[i] = e[i] * d2(&u, i, h);
        eexx[i] = e[i] * d2(&e, i, h);
    }
    for j in 1..n {
        let i = j + GHOSTS;
        let ux = d1(&u, i, h);
        re[j] = -c.a1 * d1(&eu, i, h) - c.a2 * d1(&euxx, i, h);
        ru[j] = -c.a1 * u[i] * ux - c.a3 * d1(&eexx, i, h) - c.a4 * ux * d2(&u, i, h);
    }
    (re, ru)
}

fn nl_interleaved(c: &ModelCoefficients, s: &State, op: &DiscreteOperator) -> Vec<f64> {
    let (a, b) = nonlinear_rhs(c, s, op);
    interleave(&a, &b)
}

/// One IMEX step; `s_prev = None` uses explicit Euler on the nonlinear part.
pub fn step_nonlinear(
    op: &DiscreteOperator,
    c: &ModelCoefficients,
    s_prev: Option<&State>,
    s: &State,
    dt: f64,
    blowup_threshold: f64,
) -> Result<State> {
    check_dims(op, s)?;
    let f = factors(op, dt)?;
    let fn_ = nl_interleaved(c, s, op);
    let forcing: Vec<f64> = match s_prev {
        Some(p) => {
            let fp = nl_interleaved(c, p, op);
            fn_.iter().zip(&fp).map(|(a, b)| 1.5 * a - 0.5 * b).collect()
        }
        None => fn_,
    };
    let mut z = s.interleaved();
    f.advance(&mut z, Some(&forcing));
    let (eta, u) = deinterleave(&z);
    let next = State { eta, u, t: s.t + dt };
    let norm = next.sup_norm();
    if !(norm <= blowup_threshold) {
        return Err(Error::BlowUp { t: next.t, norm, threshold: blowup_threshold });
    }
    Ok(next)
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub grid: Grid,
    pub bc: BcFamily,
    pub mode: Mode,
    pub dt: f64,
    /// Coefficients that actually drove the run (nonlinear ones zeroed in linear modes).
    pub coeffs: ModelCoefficients,
    pub records: Vec<EnergyRecord>,
    pub snapshots: Vec<State>,
    pub blowup_time: Option<f64>,
    /// Sup norm of the rejected state when blow-up was detected.
    pub blowup_norm: Option<f64>,
    pub blowup_threshold: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn initial_energy(&self) -> f64 {
        self.records[0].energy
    }

    pub fn final_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }
}

pub fn run(op: &DiscreteOperator, c: &ModelCoefficients, s0: &State, rc: &RunConfig) -> Result<Trajectory> {
    rc.validate()?;
    check_dims(op, s0)?;
    if rc.mode == Mode::Conservative && op.bc != BcFamily::Conservative {
        return Err(Error::Domain("conservative mode needs the conservative boundary family".into()));
    }
    let eff = match rc.mode {
        Mode::Nonlinear => *c,
        _ => c.without_nonlinearity(),
    };
    let mut warnings = Vec::new();
    let h = op.grid.h;
    let n0 = s0.l2_norm(h);
    if let Some(rho) = rc.smallness_threshold {
        if n0 > rho {
            return Err(Error::Domain(format!("initial norm {n0:.3e} exceeds smallness threshold {rho:.3e}")));
        }
    } else if rc.mode == Mode::Nonlinear {
        warnings.push("no smallness threshold set; small-data regime not enforced".into());
    }
    if s0.boundary_violation() > 1e-10 {
        warnings.push(format!("initial state violates pinned boundary values by {:.3e}", s0.boundary_violation()));
    }
    let threshold = rc.blowup_threshold.unwrap_or(1e6 * s0.sup_norm());
    let mut traj = Trajectory {
        grid: op.grid,
        bc: op.bc,
        mode: rc.mode,
        dt: rc.dt,
        coeffs: eff,
        records: vec![diagnostics::energy_record(op, &eff, s0)],
        snapshots: vec![s0.clone()],
        blowup_time: None,
        blowup_norm: None,
        blowup_threshold: threshold,
        warnings,
    };
    let steps = rc.steps();
    if steps == 0 {
        return Ok(traj);
    }
    let f = factors(op, rc.dt)?;
    let nonlinear = rc.mode == Mode::Nonlinear;
    let mut z = s0.interleaved();
    let mut f_prev: Option<Vec<f64>> = None;
    let mut cur = s0.clone();
    for k in 1..=steps {
        if k == 1 && rc.damped_start {
            let fnow = nonlinear.then(|| nl_interleaved(&eff, &cur, op));
            f.euler_half(&mut z, fnow.as_deref());
            f.euler_half(&mut z, fnow.as_deref());
            f_prev = fnow;
        } else if nonlinear {
            let fnow = nl_interleaved(&eff, &cur, op);
            let forcing: Vec<f64> = match &f_prev {
                Some(fp) => fnow.iter().zip(fp).map(|(a, b)| 1.5 * a - 0.5 * b).collect(),
                None => fnow.clone(),
            };
            f.advance(&mut z, Some(&forcing));
            f_prev = Some(fnow);
        } else {
            f.advance(&mut z, None);
        }
        let (eta, u) = deinterleave(&z);
        let next = State { eta, u, t: k as f64 * rc.dt };
        let norm = next.sup_norm();
        if !(norm <= threshold) {
            traj.blowup_time = Some(next.t);
            traj.blowup_norm = Some(norm);
            traj.warnings.push(format!("blow-up at t={}: sup norm {norm:.3e} > {threshold:.3e}", next.t));
            if traj.snapshots.last().map(|s| s.t) != Some(cur.t) {
                traj.snapshots.push(cur);
            }
            return Ok(traj);
        }
        cur = next;
        let mut rec = diagnostics::energy_record(op, &eff, &cur);
        rec.dis_residual = diagnostics::dissipation_residual(traj.records.last().unwrap(), &rec, &eff, rc.dt);
        traj.records.push(rec);
        if rc.stride > 0 && k % rc.stride == 0 {
            traj.snapshots.push(cur.clone());
        }
    }
    if rc.stride == 0 || !steps.is_multiple_of(rc.stride) {
        traj.snapshots.push(cur);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_operator, make_grid};
    use crate::model::{derive_coefficients, PhysicalParameters};
    use std::f64::consts::PI;

    fn setup(n: usize, bc: BcFamily) -> (ModelCoefficients, DiscreteOperator) {
        let c = derive_coefficients(&PhysicalParameters::canonical(1.0, 1.0), 1.0, 1.0, 1.0).unwrap();
        let g = make_grid(1.0, n).unwrap();
        let op = assemble_operator(&c, &g, bc).unwrap();
        (c, op)
    }

    fn smooth(op: &DiscreteOperator, eps: f64) -> State {
        let x = op.grid.nodes();
        let eta = x.iter().map(|&x| eps * (PI * x).sin().powi(4)).collect();
        let u = x.iter().map(|&x| eps * 0.5 * (PI * x).sin().powi(4) * (2.0 * PI * x).cos()).collect();
        State::new(eta, u, 0.0).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let z = State::zeros(&op.grid);
        assert_eq!(step_linear(&op, &z, 1e-3).unwrap().eta, z.eta);
        let tr = run(&op, &c, &z, &RunConfig::new(1e-3, 0.05, Mode::Nonlinear)).unwrap();
        assert!(tr.snapshots.iter().all(|s| s.sup_norm() == 0.0));
    }

    #[test]
    fn linearity() {
        let (_, op) = setup(64, BcFamily::Dissipative);
        let s1 = smooth(&op, 1.0);
        let mut s2 = smooth(&op, 1.0);
        s2.eta.reverse();
        let comb = State::new(
            s1.eta.iter().zip(&s2.eta).map(|(a, b)| 2.0 * a - 3.0 * b).collect(),
            s1.u.iter().zip(&s2.u).map(|(a, b)| 2.0 * a - 3.0 * b).collect(),
            0.0,
        )
        .unwrap();
        let (r1, r2, rc) = (step_linear(&op, &s1, 1e-3).unwrap(), step_linear(&op, &s2, 1e-3).unwrap(), step_linear(&op, &comb, 1e-3).unwrap());
        for j in 0..=64 {
            assert!((rc.eta[j] - (2.0 * r1.eta[j] - 3.0 * r2.eta[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn conservative_reversibility() {
        let (_, op) = setup(64, BcFamily::Conservative);
        let s = smooth(&op, 1.0);
        let fwd = step_linear(&op, &s, 1e-2).unwrap();
        let back = step_linear(&op, &fwd, -1e-2).unwrap();
        let err = s.eta.iter().zip(&back.eta).chain(s.u.iter().zip(&back.u)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn linear_equals_nonlinear_without_coefficients() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let s = smooth(&op, 1.0);
        let lin = run(&op, &c, &s, &RunConfig::new(1e-3, 0.05, Mode::Linear)).unwrap();
        let nl = run(&op, &c.without_nonlinearity(), &s, &RunConfig::new(1e-3, 0.05, Mode::Nonlinear)).unwrap();
        assert_eq!(lin.snapshots.last().unwrap().eta, nl.snapshots.last().unwrap().eta);
        assert_eq!(lin.snapshots.last().unwrap().u, nl.snapshots.last().unwrap().u);
    }

    #[test]
    fn zero_horizon() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let s = smooth(&op, 1.0);
        let tr = run(&op, &c, &s, &RunConfig::new(1e-3, 0.0, Mode::Linear)).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.records.len(), 1);
    }

    #[test]
    fn nonlinear_rhs_vanishes() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let z = State::zeros(&op.grid);
        let (a, b) = nonlinear_rhs(&c, &z, &op);
        assert!(a.iter().chain(&b).all(|&v| v == 0.0));
        let s = smooth(&op, 1.0);
        let (a, b) = nonlinear_rhs(&c.without_nonlinearity(), &s, &op);
        assert!(a.iter().chain(&b).all(|&v| v == 0.0));
    }

    #[test]
    fn nonlinear_rhs_matches_symbolic() {
        // η = sin(πx)·x²(1−x)², u = 0: u-component is −a₃(ηη_xx)_x
        let mut errs = Vec::new();
        for n in [64usize, 128] {
            let (c, op) = setup(n, BcFamily::Clamped);
            let x = op.grid.nodes();
            let f = |x: f64| (PI * x).sin() * x * x * (1.0 - x) * (1.0 - x);
            let s = State::new(x.iter().map(|&x| f(x)).collect(), vec![0.0; n + 1], 0.0).unwrap();
            let (_, ru) = nonlinear_rhs(&c, &s, &op);
            // (ηη'')' = η'η'' + ηη''' via complex-step-free finite differences of high accuracy
            let d = |k: usize, x: f64| {
                let hh = 1e-3;
                let w = crate::discretization::fd_weights(&(-4..=4).map(|o| o as f64).collect::<Vec<_>>(), k);
                w.iter().enumerate().map(|(i, wi)| wi * f(x + (i as f64 - 4.0) * hh)).sum::<f64>() / hh.powi(k as i32)
            };
            let mut err: f64 = 0.0;
            for j in n / 4..3 * n / 4 {
                let xj = x[j];
                let exact = -c.a3 * (d(1, xj) * d(2, xj) + f(xj) * d(3, xj));
                err = err.max((ru[j] - exact).abs());
            }
            errs.push(err);
        }
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[1] < 1e-4, "{errs:?}");
    }

    #[test]
    fn blowup_detected() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let s = smooth(&op, 1.0);
        let mut rc = RunConfig::new(1e-3, 0.01, Mode::Nonlinear);
        rc.blowup_threshold = Some(1e-6);
        let tr = run(&op, &c, &s, &rc).unwrap();
        assert_eq!(tr.blowup_time, Some(1e-3));
        assert!(matches!(step_nonlinear(&op, &c, None, &s, 1e-3, 1e-6), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn smallness_gate() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let s = smooth(&op, 1.0);
        let mut rc = RunConfig::new(1e-3, 0.01, Mode::Nonlinear);
        rc.smallness_threshold = Some(1e-3);
        assert!(run(&op, &c, &s, &rc).is_err());
        assert!(RunConfig::new(0.0, 1.0, Mode::Linear).validate().is_err());
        assert!(RunConfig::new(2.0, 1.0, Mode::Linear).validate().is_err());
    }

    #[test]
    fn step_nonlinear_matches_run() {
        let (c, op) = setup(64, BcFamily::Dissipative);
        let s0 = smooth(&op, 1e-2);
        let s1 = step_nonlinear(&op, &c, None, &s0, 1e-3, 1e9).unwrap();
        let s2 = step_nonlinear(&op, &c, Some(&s0), &s1, 1e-3, 1e9).unwrap();
        let mut rc = RunConfig::new(1e-3, 2e-3, Mode::Nonlinear);
        rc.stride = 1;
        let tr = run(&op, &c, &s0, &rc).unwrap();
        assert_eq!(tr.snapshots[2].eta, s2.eta);
    }
}
