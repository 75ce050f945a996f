//! Energy, boundary traces, identity residuals, smoothing ratios and decay fits.

use crate::discretization::{trace_second_derivatives, DiscreteOperator, GHOSTS};
use crate::error::{Error, Result};
use crate::model::ModelCoefficients;
use crate::state::State;
use crate::timestepper::Trajectory;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub t: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub eta_xx_0: f64,
    pub eta_xx_l: f64,
    pub u_xx_0: f64,
    pub u_xx_l: f64,
    /// −(a₁/2)∫η²u_x − (a₂/2)∫η²u_xxx + a₃∫ηη_xx u_x + (a₄/2)∫u_x³
    pub nl_flux: f64,
    pub dis_residual: f64,
    /// Trapezoidal H² norm squared of (η, u).
    pub h2_sq: f64,
}

fn trapezoid(f: impl Fn(usize) -> f64, n: usize, h: f64) -> f64 {
    h * (0.5 * (f(0) + f(n)) + (1..n).map(f).sum::<f64>())
}

pub fn energy_of(eta: &[f64], u: &[f64], h: f64) -> f64 {
    let n = eta.len() - 1;
    0.5 * trapezoid(|j| eta[j] * eta[j] + u[j] * u[j], n, h)
}

/// E = ½∫(η² + u²), trapezoidal.
pub fn energy(s: &State, h: f64) -> f64 {
    energy_of(&s.eta, &s.u, h)
}

pub fn energy_record(op: &DiscreteOperator, c: &ModelCoefficients, s: &State) -> EnergyRecord {
    let h = op.grid.h;
    let n = op.grid.n;
    let tr = trace_second_derivatives(op, &s.eta, &s.u);
    let [e, u] = op.extend(&s.eta, &s.u);
    let g = GHOSTS;
    let d1 = |f: &[f64], i: usize| (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    let d2 = |f: &[f64], i: usize| (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) / (12.0 * h * h);
    let d3 = |f: &[f64], i: usize| {
        (0.125 * (f[i - 3] - f[i + 3]) - (f[i - 2] - f[i + 2]) + 1.625 * (f[i - 1] - f[i + 1])) / (h * h * h)
    };
    let h2_sq = trapezoid(
        |j| {
            let i = j + g;
            e[i] * e[i] + d1(&e, i).powi(2) + d2(&e, i).powi(2) + u[i] * u[i] + d1(&u, i).powi(2) + d2(&u, i).powi(2)
        },
        n,
        h,
    );
    let nl_flux = if c.a1 == 0.0 && c.a2 == 0.0 && c.a3 == 0.0 && c.a4 == 0.0 {
        0.0
    } else {
        trapezoid(
            |j| {
                let i = j + g;
                let ux = d1(&u, i);
                -0.5 * c.a1 * e[i] * e[i] * ux - 0.5 * c.a2 * e[i] * e[i] * d3(&u, i)
                    + c.a3 * e[i] * d2(&e, i) * ux
                    + 0.5 * c.a4 * ux * ux * ux
            },
            n,
            h,
        )
    };
    EnergyRecord {
        t: s.t,
        energy: energy(s, h),
        eta_xx_0: tr[0],
        eta_xx_l: tr[1],
        u_xx_0: tr[2],
        u_xx_l: tr[3],
        nl_flux,
        dis_residual: 0.0,
        h2_sq,
    }
}

/// Boundary dissipation b(η_xx(L)u_xx(L) − η_xx(0)u_xx(0)); under the feedback conditions
/// it equals b(α₁η_xx(0)² + α₂η_xx(L)²), and it vanishes for the other two families.
fn boundary_dissipation(c: &ModelCoefficients, tr: [f64; 4]) -> f64 {
    c.b * (tr[1] * tr[3] - tr[0] * tr[2])
}

fn traces(r: &EnergyRecord) -> [f64; 4] {
    [r.eta_xx_0, r.eta_xx_l, r.u_xx_0, r.u_xx_l]
}

/// Per-step defect of dE/dt = −b[η_xx u_xx]₀ᴸ + flux, traces at the midpoint state and
/// flux averaged over the two records.
pub fn dissipation_residual(prev: &EnergyRecord, rec: &EnergyRecord, c: &ModelCoefficients, dt: f64) -> f64 {
    let (a, b) = (traces(prev), traces(rec));
    let mid: [f64; 4] = std::array::from_fn(|k| 0.5 * (a[k] + b[k]));
    let flux = 0.5 * (prev.nl_flux + rec.nl_flux);
    (rec.energy - prev.energy) / dt - (-boundary_dissipation(c, mid) + flux)
}

/// ∫|dis_residual| dt over the trajectory.
pub fn integrated_dissipation_residual(traj: &Trajectory) -> f64 {
    traj.records.iter().skip(1).map(|r| r.dis_residual.abs()).sum::<f64>() * traj.dt
}

fn time_trapezoid(records: &[EnergyRecord], f: impl Fn(&EnergyRecord) -> f64) -> f64 {
    records.windows(2).map(|w| 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1]))).sum()
}

/// Σ dt·g(t_{n+½}, traces at the midpoint state); traces are linear in the state, so the
/// midpoint traces are the averages of the two records. This is the quadrature under which
/// the Crank–Nicolson energy balance holds step by step.
fn midpoint_traces(records: &[EnergyRecord], g: impl Fn(f64, [f64; 4]) -> f64) -> f64 {
    records
        .windows(2)
        .map(|w| {
            let (a, b) = (traces(&w[0]), traces(&w[1]));
            let tr: [f64; 4] = std::array::from_fn(|k| 0.5 * (a[k] + b[k]));
            (w[1].t - w[0].t) * g(0.5 * (w[0].t + w[1].t), tr)
        })
        .sum()
}

fn initial_norm_sq(traj: &Trajectory) -> Result<f64> {
    let n2 = 2.0 * traj.initial_energy();
    if n2 == 0.0 {
        return Err(Error::Degenerate("zero initial data".into()));
    }
    Ok(n2)
}

/// ‖(η,u)‖_{L²(0,T;H²)} / ‖(η₀,u₀)‖_{L²}.
pub fn kato_ratio(traj: &Trajectory) -> Result<f64> {
    let n2 = initial_norm_sq(traj)?;
    Ok((time_trapezoid(&traj.records, |r| r.h2_sq) / n2).sqrt())
}

/// ∫(η_xx(L)² + u_xx(0)²)dt / ‖(η₀,u₀)‖²_{H²}.
pub fn trace_ratio(traj: &Trajectory) -> Result<f64> {
    let d = traj.records[0].h2_sq;
    if d == 0.0 {
        return Err(Error::Degenerate("zero initial data".into()));
    }
    Ok(midpoint_traces(&traj.records, |_, tr| tr[1] * tr[1] + tr[2] * tr[2]) / d)
}

/// (T/2)‖z₀‖² − ½∫‖z‖²dt − ∫(T−t)·b[η_xx u_xx]ᴸ₀ dt; with feedback the last integrand
/// is b(T−t)(α₁η_xx(0)² + α₂η_xx(L)²).
pub fn weighted_identity_residual(traj: &Trajectory, c: &ModelCoefficients, t_end: f64) -> f64 {
    let recs: Vec<EnergyRecord> = traj.records.iter().copied().filter(|r| r.t <= t_end + 1e-12).collect();
    let z0 = 2.0 * traj.initial_energy();
    let mass = time_trapezoid(&recs, |r| 2.0 * r.energy);
    let bnd = midpoint_traces(&recs, |t, tr| (t_end - t) * boundary_dissipation(c, tr));
    0.5 * t_end * z0 - 0.5 * mass - bnd
}

/// ‖z₀‖² / ∫₀ᵀ(η_xx(0)² + η_xx(L)²)dt.
pub fn observability_ratio(traj: &Trajectory, t_end: f64) -> Result<f64> {
    let num = initial_norm_sq(traj)?;
    let recs: Vec<EnergyRecord> = traj.records.iter().copied().filter(|r| r.t <= t_end + 1e-12).collect();
    let den = midpoint_traces(&recs, |_, tr| tr[0] * tr[0] + tr[1] * tr[1]);
    if !(den > 1e-12 * num) {
        return Err(Error::Observability(format!("boundary traces vanish: {den:.3e} vs {num:.3e}")));
    }
    Ok(num / den)
}

/// C with E(0) ≤ C·(E(0) − E(T)), obtained from the observability ratio.
pub fn decay_chain_constant(obs_ratio: f64, c: &ModelCoefficients) -> f64 {
    obs_ratio / (2.0 * c.b * c.alpha1.min(c.alpha2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub mu0: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub window: (f64, f64),
    pub r2: f64,
}

/// Energies below this fraction of E(0) are treated as roundoff floor.
pub const DECAY_FLOOR: f64 = 1e-10;

/// Last 60% of the record span, cut at the last record with E ≥ DECAY_FLOOR·E(0).
pub fn default_window(records: &[EnergyRecord]) -> (f64, f64) {
    let t0 = records.first().map_or(0.0, |r| r.t);
    let floor = records.first().map_or(0.0, |r| DECAY_FLOOR * r.energy);
    let t1 = records.iter().rev().find(|r| r.energy >= floor).map_or(t0, |r| r.t);
    (t0 + 0.4 * (t1 - t0), t1)
}

/// Least squares on (t, log E) inside the window; μ₀ = −slope/2.
pub fn fit_decay(records: &[EnergyRecord], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.t >= window.0 - 1e-12 && r.t <= window.1 + 1e-12)
        .map(|r| (r.t, r.energy))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Degenerate(format!("decay window holds {} samples, need 10", pts.len())));
    }
    if let Some(&(t, e)) = pts.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::Degenerate(format!("non-positive energy {e} at t={t}")));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(t, e) in &pts {
        let (dx, dy) = (t - tm, e.ln() - ym);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    let e0 = records[0].energy;
    let c0 = if e0 > 0.0 { (intercept.exp() / e0).sqrt() } else { f64::NAN };
    Ok(DecayFit { mu0: -0.5 * slope, c0, window, r2 })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub mu0: Option<f64>,
    #[serde(rename = "C0")]
    pub c0: Option<f64>,
    pub r2: Option<f64>,
    pub kato_ratio: Option<f64>,
    pub trace_ratio: Option<f64>,
    pub observability_ratio: Option<f64>,
    pub max_dis_residual: f64,
    pub blowup_time: Option<f64>,
    pub final_energy: f64,
    pub initial_energy: f64,
}

pub fn summarize(traj: &Trajectory) -> RunSummary {
    let fit = fit_decay(&traj.records, default_window(&traj.records)).ok();
    let t_end = traj.final_time();
    RunSummary {
        mu0: fit.map(|f| f.mu0),
        c0: fit.map(|f| f.c0),
        r2: fit.map(|f| f.r2),
        kato_ratio: kato_ratio(traj).ok(),
        trace_ratio: trace_ratio(traj).ok(),
        observability_ratio: observability_ratio(traj, t_end).ok(),
        max_dis_residual: traj.records.iter().fold(0.0, |m, r| m.max(r.dis_residual.abs())),
        blowup_time: traj.blowup_time,
        final_energy: traj.records.last().map_or(0.0, |r| r.energy),
        initial_energy: traj.initial_energy(),
    }
}
