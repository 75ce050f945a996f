mod output;

use b5kdv::config::Config;
use b5kdv::diagnostics::{self, DecayFit};
use b5kdv::discretization::{assemble_operator, make_grid, BcFamily, DiscreteOperator};
use b5kdv::initial::{initial_condition, InitialKind};
use b5kdv::model::{derive_coefficients, validate_coefficients, ModelCoefficients};
use b5kdv::spectral::{self, QPolynomial};
use b5kdv::timestepper::{run, Mode, RunConfig, Trajectory};
use b5kdv::{io as bio, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use output::{complex_pairs, Provenance, Sink};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "b5kdv", version = output::VERSION, about = "Fifth-order Boussinesq-KdV system with boundary feedback")]
struct Cli {
    /// Flat key = value parameter file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for machine-readable files (JSON goes to stdout without it).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coefficients of the system from the physical parameters.
    DeriveCoeffs(ModelArgs),
    /// Time integration with energy diagnostics.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exponential fit of an energy series written by `simulate`.
    DecayFit {
        #[arg(long)]
        input: PathBuf,
        /// Fit window as t0,t1; defaults to the tail above the roundoff floor.
        #[arg(long, allow_negative_numbers = true, value_parser = parse_window)]
        window: Option<(f64, f64)>,
    },
    /// Energy identities, smoothing and observability ratios of one run.
    Identities {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Eigenvalues of the semi-discrete operator.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "dissipative")]
        bc: BcFamily,
        #[arg(long = "N", default_value_t = 128)]
        n: usize,
        /// Also write the operator in MatrixMarket format.
        #[arg(long)]
        matrix_market: bool,
    },
    /// Roots of b x^5 + a x^3 + x + r.
    Qroots(PolyArgs),
    /// Cross-ratio mismatch of the non-real roots against their images e^{-iLx}.
    MobiusScan {
        #[command(flatten)]
        poly: PolyArgs,
        #[arg(long, allow_negative_numbers = true, default_value_t = 0.01)]
        l_min: f64,
        #[arg(long, allow_negative_numbers = true, default_value_t = 100.0)]
        l_max: f64,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
    },
    /// Refinement study of the energy identities.
    Convergence {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "dissipative")]
        bc: BcFamily,
        #[arg(long = "Ns", value_delimiter = ',', default_values_t = [64usize, 128, 256])]
        ns: Vec<usize>,
        /// Time step at the coarsest level; finer levels use dt ∝ h.
        #[arg(long, allow_negative_numbers = true, default_value_t = 2e-3)]
        dt: f64,
        #[arg(long = "T", allow_negative_numbers = true, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, value_enum, default_value_t = Ic::SinePacket)]
        ic: Ic,
    },
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta_sq: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Direct coefficient; bypasses the derivation together with --b.
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a3: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    a4: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha2: Option<f64>,
    #[arg(long = "L", allow_negative_numbers = true)]
    l: Option<f64>,
}

impl ModelArgs {
    fn config(&self, path: Option<&PathBuf>) -> Result<Config> {
        let mut cfg = match path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let flags = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("theta_sq", self.theta_sq),
            ("tau", self.tau),
            ("a", self.a),
            ("b", self.b),
            ("a1", self.a1),
            ("a2", self.a2),
            ("a3", self.a3),
            ("a4", self.a4),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("L", self.l),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Ic {
    Random,
    GaussianBump,
    SinePacket,
    File,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SnapshotFormat {
    Csv,
    Binary,
    None,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long, default_value = "linear")]
    mode: Mode,
    #[arg(long, default_value = "dissipative")]
    bc: BcFamily,
    #[arg(long = "N", default_value_t = 128)]
    n: usize,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long = "T", allow_negative_numbers = true, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, value_enum, default_value_t = Ic::Random)]
    ic: Ic,
    #[arg(long)]
    ic_file: Option<PathBuf>,
    /// L² norm of generated initial data.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    amplitude: f64,
    /// Keep every stride-th state as a snapshot; 0 keeps only the final state.
    #[arg(long, default_value_t = 0)]
    stride: usize,
    #[arg(long, allow_negative_numbers = true)]
    smallness_threshold: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    blowup_threshold: Option<f64>,
    /// Plain Crank-Nicolson from the first step (no implicit Euler start-up).
    #[arg(long)]
    no_damped_start: bool,
    #[arg(long, value_enum, default_value_t = SnapshotFormat::Csv)]
    snapshots: SnapshotFormat,
}

impl RunArgs {
    fn run_config(&self) -> RunConfig {
        let mut rc = RunConfig::new(self.dt, self.t_end, self.mode);
        rc.stride = self.stride;
        rc.smallness_threshold = self.smallness_threshold;
        rc.blowup_threshold = self.blowup_threshold;
        rc.damped_start = !self.no_damped_start;
        rc
    }

    fn initial_kind(&self) -> Result<InitialKind> {
        if self.ic_file.is_some() && self.ic != Ic::File {
            return Err(Error::Domain("--ic-file given without --ic file".into()));
        }
        let name = match self.ic {
            Ic::Random => "random",
            Ic::GaussianBump => "gaussian-bump",
            Ic::SinePacket => "sine-packet",
            Ic::File => "file",
        };
        InitialKind::parse(name, self.ic_file.clone())
    }

    fn record(&self, prov: &mut Provenance, seed: u64) {
        prov.param("mode", format!("{:?}", self.mode));
        prov.param("bc", format!("{:?}", self.bc));
        prov.param("N", self.n);
        prov.param("dt", self.dt);
        prov.param("T", self.t_end);
        prov.param("ic", format!("{:?}", self.ic));
        prov.param("amplitude", self.amplitude);
        prov.param("seed", seed);
        prov.param("damped_start", !self.no_damped_start);
    }
}

#[derive(Args, Debug, Clone)]
struct PolyArgs {
    #[arg(long, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, allow_negative_numbers = true)]
    b: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
    r: f64,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected t0,t1, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number '{v}'"));
    let (t0, t1) = (p(x)?, p(y)?);
    if t0.partial_cmp(&t1) != Some(std::cmp::Ordering::Less) {
        return Err(format!("window start {t0} must precede end {t1}"));
    }
    Ok((t0, t1))
}

fn coefficients(cfg: &Config, prov: &mut Provenance) -> Result<ModelCoefficients> {
    let c = cfg.coefficients()?;
    let report = validate_coefficients(&c);
    if let Some(bad) = report.checks.iter().find(|k| !k.passed) {
        return Err(Error::Constraint(format!("coefficient check '{}' failed", bad.name)));
    }
    for (k, v) in [("a", c.a), ("b", c.b), ("a1", c.a1), ("a2", c.a2), ("a3", c.a3), ("a4", c.a4)] {
        prov.param(k, v);
    }
    prov.param("alpha1", c.alpha1);
    prov.param("alpha2", c.alpha2);
    prov.param("L", c.l);
    Ok(c)
}

fn simulate_once(c: &ModelCoefficients, ra: &RunArgs, seed: u64) -> Result<(DiscreteOperator, Trajectory)> {
    let g = make_grid(c.l, ra.n)?;
    let op = assemble_operator(c, &g, ra.bc)?;
    let s0 = initial_condition(&ra.initial_kind()?, seed, &op, ra.amplitude)?;
    let traj = run(&op, c, &s0, &ra.run_config())?;
    Ok((op, traj))
}

fn fit_json(fit: &Option<DecayFit>) -> Value {
    match fit {
        Some(f) => json!({ "mu0": f.mu0, "C0": f.c0, "r2": f.r2, "window": [f.window.0, f.window.1] }),
        None => Value::Null,
    }
}

fn blowup_error(traj: &Trajectory) -> Result<()> {
    match traj.blowup_time {
        Some(t) => Err(Error::BlowUp { t, norm: traj.blowup_norm.unwrap_or(f64::INFINITY), threshold: traj.blowup_threshold }),
        None => Ok(()),
    }
}

fn cmd_derive(cli: &Cli, m: &ModelArgs, sink: &Sink, mut prov: Provenance) -> Result<()> {
    let cfg = m.config(cli.config.as_ref())?;
    let phys = cfg.physical();
    let c = derive_coefficients(&phys, cfg.get("alpha1").unwrap_or(1.0), cfg.get("alpha2").unwrap_or(1.0), cfg.get("L").unwrap_or(1.0))?;
    let report = validate_coefficients(&c);
    prov.param("alpha", phys.alpha);
    prov.param("beta", phys.beta);
    sink.say(&format!("a = {:.10}  b = {:.10}", c.a, c.b));
    sink.say(&format!("a1 = {:.10}  a2 = {:.10}  a3 = {:.10}  a4 = {:.10}", c.a1, c.a2, c.a3, c.a4));
    sink.say(&format!("checks: {}", if report.all_pass() { "all pass" } else { "FAILED" }));
    sink.json("coefficients.json", &prov, json!({ "physical": phys, "coefficients": c, "validation": report }))
}

fn cmd_simulate(cli: &Cli, m: &ModelArgs, ra: &RunArgs, sink: &Sink, mut prov: Provenance) -> Result<()> {
    let cfg = m.config(cli.config.as_ref())?;
    let c = coefficients(&cfg, &mut prov)?;
    ra.record(&mut prov, cli.seed);
    let (op, traj) = simulate_once(&c, ra, cli.seed)?;
    let summary = diagnostics::summarize(&traj);
    let fit = diagnostics::fit_decay(&traj.records, diagnostics::default_window(&traj.records)).ok();
    let lines = prov.lines();
    sink.file("energy.csv", |w| bio::write_energy_csv(w, &traj.records, &lines))?;
    match ra.snapshots {
        SnapshotFormat::Csv => sink.file("snapshots.csv", |w| bio::write_snapshots_csv(w, &traj.snapshots, &op.grid, &lines))?,
        SnapshotFormat::Binary => {
            sink.file("snapshots.bin", |w| bio::write_snapshots_binary(w, &traj.snapshots, &op.grid, ra.dt, ra.mode))?
        }
        SnapshotFormat::None => None,
    };
    if let Some(last) = traj.snapshots.last() {
        sink.file("final.ckpt", |w| bio::write_checkpoint(w, last, &op.grid))?;
    }
    let body = json!({
        "summary": summary,
        "fit": fit_json(&fit),
        "final_time": traj.final_time(),
        "warnings": traj.warnings,
    });
    sink.json("summary.json", &prov, body)?;
    sink.say(&format!("E(0) = {:.6e}  E(T) = {:.6e}  t_final = {}", summary.initial_energy, summary.final_energy, traj.final_time()));
    if let Some(f) = fit {
        sink.say(&format!("decay fit: mu0 = {:.6}  C0 = {:.4}  r2 = {:.6} on [{:.4}, {:.4}]", f.mu0, f.c0, f.r2, f.window.0, f.window.1));
    }
    for w in &traj.warnings {
        eprintln!("warning: {w}");
    }
    blowup_error(&traj)
}

fn cmd_decay_fit(input: &PathBuf, window: Option<(f64, f64)>, sink: &Sink, mut prov: Provenance) -> Result<()> {
    let f = std::fs::File::open(input)?;
    let recs = bio::read_energy_csv(std::io::BufReader::new(f))?;
    if recs.is_empty() {
        return Err(Error::Format(format!("{}: no energy records", input.display())));
    }
    let w = window.unwrap_or_else(|| diagnostics::default_window(&recs));
    prov.param("input", input.display());
    let fit = diagnostics::fit_decay(&recs, w)?;
    sink.say(&format!("mu0 = {:.6}  C0 = {:.4}  r2 = {:.6} on [{}, {}]", fit.mu0, fit.c0, fit.r2, w.0, w.1));
    sink.json("decay_fit.json", &prov, json!({ "fit": fit_json(&Some(fit)), "samples": recs.len() }))
}

fn cmd_identities(cli: &Cli, m: &ModelArgs, ra: &RunArgs, sink: &Sink, mut prov: Provenance) -> Result<()> {
    let cfg = m.config(cli.config.as_ref())?;
    let c = coefficients(&cfg, &mut prov)?;
    ra.record(&mut prov, cli.seed);
    let (_, traj) = simulate_once(&c, ra, cli.seed)?;
    blowup_error(&traj)?;
    let t_end = traj.final_time();
    let e0 = traj.initial_energy();
    let et = traj.records.last().unwrap().energy;
    let obs = diagnostics::observability_ratio(&traj, t_end).ok();
    let chain = obs.filter(|_| traj.bc == BcFamily::Dissipative).map(|o| {
        let cc = diagnostics::decay_chain_constant(o, &traj.coeffs);
        json!({ "C": cc, "bound": cc / (cc + 1.0) * e0, "E_T": et, "holds": et <= cc / (cc + 1.0) * e0 })
    });
    let max_step_increase = traj.records.windows(2).fold(f64::NEG_INFINITY, |m, p| m.max(p[1].energy - p[0].energy));
    let body = json!({
        "integrated_dissipation_residual": diagnostics::integrated_dissipation_residual(&traj),
        "weighted_identity_residual": diagnostics::weighted_identity_residual(&traj, &traj.coeffs, t_end),
        "max_step_energy_increase": max_step_increase,
        "kato_ratio": diagnostics::kato_ratio(&traj).ok(),
        "trace_ratio": diagnostics::trace_ratio(&traj).ok(),
        "observability_ratio": obs,
        "decay_chain": chain,
        "initial_energy": e0,
        "final_energy": et,
    });
    sink.say(&format!(
        "dissipation residual {:.3e}  weighted residual {:.3e}  max energy increase {max_step_increase:.3e}",
        body["integrated_dissipation_residual"].as_f64().unwrap_or(f64::NAN),
        body["weighted_identity_residual"].as_f64().unwrap_or(f64::NAN)
    ));
    sink.json("identities.json", &prov, body)
}

fn cmd_spectrum(cli: &Cli, m: &ModelArgs, bc: BcFamily, n: usize, mm: bool, sink: &Sink, mut prov: Provenance) -> Result<()> {
    let cfg = m.config(cli.config.as_ref())?;
    let c = coefficients(&cfg, &mut prov)?.without_nonlinearity();
    prov.param("bc", format!("{bc:?}"));
    prov.param("N", n);
    let op = assemble_operator(&c, &make_grid(c.l, n)?, bc)?;
    if mm {
        sink.file("operator.mtx", |w| op.dump_matrix_market(w))?;
    }
    let mut ev = spectral::discrete_spectrum(&op)?;
    ev.sort_by(|x, y| y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im)));
    let abscissa = spectral::spectral_abscissa(&ev);
    let defect = spectral::relative_real_defect(&ev);
    sink.say(&format!("{} eigenvalues, spectral abscissa {abscissa:.8}, relative real-part defect {defect:.3e}", ev.len()));
    let body = json!({ "eigenvalues": complex_pairs(&ev), "spectral_abscissa": abscissa, "relative_real_defect": defect });
    sink.json("spectrum.json", &prov, body)
}

fn cmd_qroots(p: &PolyArgs, sink: &Sink, mut prov: Provenance) -> Result<()> {
    let q = QPolynomial::new(p.a, p.b, p.r)?;
    prov.param("a", p.a);
    prov.param("b", p.b);
    prov.param("r", p.r);
    let s = spectral::q_roots(&q)?;
    let claim = s.real_roots.len() == 1 && s.conjugate_pairs.len() == 2 && s.min_separation > 1e-8;
    let ordered: Vec<num_complex::Complex64> = s
        .real_roots
        .iter()
        .map(|&x| num_complex::Complex64::new(x, 0.0))
        .chain(s.conjugate_pairs.iter().flat_map(|&(z, w)| [z, w]))
        .collect();
    for z in &ordered {
        sink.say(&format!("{:+.15e} {:+.15e}i", z.re, z.im));
    }
    sink.say(&format!("one real root and two conjugate pairs: {claim}"));
    let pairs: Vec<Value> = s.conjugate_pairs.iter().map(|(z, w)| json!([[z.re, z.im], [w.re, w.im]])).collect();
    let body = json!({
        "roots": complex_pairs(&ordered),
        "real_roots": s.real_roots,
        "conjugate_pairs": pairs,
        "one_real_two_pairs": claim,
        "max_residual": s.max_residual,
        "min_separation": s.min_separation,
    });
    sink.json("qroots.json", &prov, body)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))
}

fn cmd_mobius_scan(cli: &Cli, p: &PolyArgs, l_min: f64, l_max: f64, count: usize, sink: &Sink, mut prov: Provenance) -> Result<()> {
    if !(l_min > 0.0 && l_max > l_min && count >= 2) {
        return Err(Error::Domain(format!("need 0 < l-min < l-max and count >= 2, got {l_min}, {l_max}, {count}")));
    }
    let q = QPolynomial::new(p.a, p.b, p.r)?;
    for (k, v) in [("a", p.a), ("b", p.b), ("r", p.r), ("l_min", l_min), ("l_max", l_max)] {
        prov.param(k, v);
    }
    prov.param("count", count);
    let pts = spectral::nonreal_roots(&spectral::q_roots(&q)?)?;
    let ratio = (l_max / l_min).ln();
    let ls: Vec<f64> = (0..count).map(|k| l_min * (ratio * k as f64 / (count - 1) as f64).exp()).collect();
    let rows: Vec<(f64, Option<spectral::MobiusVerdict>)> =
        pool(cli.jobs)?.install(|| ls.par_iter().map(|&l| (l, spectral::mobius_feasibility(&pts, l).ok())).collect());
    let lines = prov.lines();
    sink.file("mismatch.csv", |w| {
        for line in &lines {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "L,mismatch,cr_points_re,cr_points_im,cr_images_re,cr_images_im")?;
        for (l, v) in &rows {
            match v {
                Some(v) => writeln!(w, "{l:e},{:e},{:e},{:e},{:e},{:e}", v.mismatch, v.cr_points.re, v.cr_points.im, v.cr_images.re, v.cr_images.im)?,
                None => writeln!(w, "{l:e},nan,nan,nan,nan,nan")?,
            }
        }
        Ok(())
    })?;
    let (mut best, mut best_l) = (f64::INFINITY, f64::NAN);
    let (mut feasible, mut degenerate) = (0usize, 0usize);
    for (l, v) in &rows {
        match v {
            Some(v) => {
                if v.mismatch < best {
                    best = v.mismatch;
                    best_l = *l;
                }
                feasible += usize::from(v.feasible);
            }
            None => degenerate += 1,
        }
    }
    sink.say(&format!("min mismatch {best:.6e} at L = {best_l:.6}; feasible at {feasible} of {count} lengths; {degenerate} degenerate"));
    let body = json!({
        "points": complex_pairs(&pts),
        "min_mismatch": best,
        "argmin_L": best_l,
        "feasible_count": feasible,
        "degenerate_count": degenerate,
    });
    sink.json("mobius_scan.json", &prov, body)
}

struct Level {
    n: usize,
    dt: f64,
    drift: f64,
    residual: f64,
    weighted: f64,
    kato: f64,
    trace: f64,
}

fn observed_orders(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| (w[0].abs() / w[1].abs()).log2()).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_convergence(
    cli: &Cli,
    m: &ModelArgs,
    bc: BcFamily,
    ns: &[usize],
    dt0: f64,
    t_end: f64,
    ic: Ic,
    sink: &Sink,
    mut prov: Provenance,
) -> Result<()> {
    if ns.len() < 2 || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!("--Ns must be increasing with at least two levels, got {ns:?}")));
    }
    let cfg = m.config(cli.config.as_ref())?;
    let c = coefficients(&cfg, &mut prov)?;
    prov.param("bc", format!("{bc:?}"));
    prov.param("Ns", format!("{ns:?}"));
    prov.param("dt", dt0);
    prov.param("T", t_end);
    prov.param("seed", cli.seed);
    let mode = if bc == BcFamily::Conservative { Mode::Conservative } else { Mode::Linear };
    let levels: Vec<Result<Level>> = pool(cli.jobs)?.install(|| {
        ns.par_iter()
            .map(|&n| {
                let dt = dt0 * ns[0] as f64 / n as f64;
                let ra = RunArgs {
                    mode,
                    bc,
                    n,
                    dt,
                    t_end,
                    ic,
                    ic_file: None,
                    amplitude: 1.0,
                    stride: 0,
                    smallness_threshold: None,
                    blowup_threshold: None,
                    no_damped_start: true,
                    snapshots: SnapshotFormat::None,
                };
                let (_, tr) = simulate_once(&c, &ra, cli.seed)?;
                let e0 = tr.initial_energy();
                Ok(Level {
                    n,
                    dt,
                    drift: tr.records.iter().fold(0.0f64, |m, r| m.max((r.energy - e0).abs())) / e0,
                    residual: diagnostics::integrated_dissipation_residual(&tr),
                    weighted: diagnostics::weighted_identity_residual(&tr, &tr.coeffs, t_end),
                    kato: diagnostics::kato_ratio(&tr).unwrap_or(f64::NAN),
                    trace: diagnostics::trace_ratio(&tr).unwrap_or(f64::NAN),
                })
            })
            .collect()
    });
    let levels: Vec<Level> = levels.into_iter().collect::<Result<_>>()?;
    let col = |f: fn(&Level) -> f64| levels.iter().map(f).collect::<Vec<f64>>();
    let lines = prov.lines();
    sink.file("convergence.csv", |w| {
        for line in &lines {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "N,dt,drift,dissipation_residual,weighted_residual,kato_ratio,trace_ratio")?;
        for l in &levels {
            writeln!(w, "{},{:e},{:e},{:e},{:e},{:e},{:e}", l.n, l.dt, l.drift, l.residual, l.weighted, l.kato, l.trace)?;
        }
        Ok(())
    })?;
    sink.say(&format!("{:>6} {:>10} {:>12} {:>12} {:>12} {:>10} {:>10}", "N", "dt", "drift", "residual", "weighted", "kato", "trace"));
    for l in &levels {
        sink.say(&format!("{:>6} {:>10.3e} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.4} {:>10.4}", l.n, l.dt, l.drift, l.residual, l.weighted, l.kato, l.trace));
    }
    let body = json!({
        "N": col(|l| l.n as f64),
        "dt": col(|l| l.dt),
        "drift": col(|l| l.drift),
        "dissipation_residual": col(|l| l.residual),
        "weighted_residual": col(|l| l.weighted),
        "kato_ratio": col(|l| l.kato),
        "trace_ratio": col(|l| l.trace),
        "orders": {
            "drift": observed_orders(&col(|l| l.drift)),
            "dissipation_residual": observed_orders(&col(|l| l.residual)),
            "weighted_residual": observed_orders(&col(|l| l.weighted)),
        },
    });
    sink.json("convergence.json", &prov, body)
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    let sink = Sink::new(cli.out.clone())?;
    let prov = Provenance::new(argv);
    match &cli.cmd {
        Command::DeriveCoeffs(m) => cmd_derive(cli, m, &sink, prov),
        Command::Simulate { model, run } => cmd_simulate(cli, model, run, &sink, prov),
        Command::DecayFit { input, window } => cmd_decay_fit(input, *window, &sink, prov),
        Command::Identities { model, run } => cmd_identities(cli, model, run, &sink, prov),
        Command::Spectrum { model, bc, n, matrix_market } => cmd_spectrum(cli, model, *bc, *n, *matrix_market, &sink, prov),
        Command::Qroots(p) => cmd_qroots(p, &sink, prov),
        Command::MobiusScan { poly, l_min, l_max, count } => cmd_mobius_scan(cli, poly, *l_min, *l_max, *count, &sink, prov),
        Command::Convergence { model, bc, ns, dt, t_end, ic } => cmd_convergence(cli, model, *bc, ns, *dt, *t_end, *ic, &sink, prov),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
