//! Roots of q(ξ) = bξ⁵ + aξ³ + ξ + r, the trace function N_α, cross-ratio tests and
//! eigenvalues of the assembled operator.

use crate::discretization::DiscreteOperator;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

pub type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QPolynomial {
    pub a: f64,
    pub b: f64,
    pub r: f64,
}

impl QPolynomial {
    pub fn new(a: f64, b: f64, r: f64) -> Result<Self> {
        let p = QPolynomial { a, b, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) {
            return Err(Error::Constraint(format!("b > 0 (b = {})", self.b)));
        }
        if !(4.0 * self.b > self.a * self.a) {
            return Err(Error::Constraint(format!("4b > a^2 (a = {}, b = {})", self.a, self.b)));
        }
        if !self.r.is_finite() || !self.a.is_finite() {
            return Err(Error::Constraint("finite coefficients".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: C64) -> C64 {
        let x2 = x * x;
        x * (x2 * (x2 * self.b + self.a) + 1.0) + self.r
    }

    pub fn deriv(&self, x: C64) -> C64 {
        let x2 = x * x;
        x2 * (x2 * (5.0 * self.b) + 3.0 * self.a) + 1.0
    }

    /// Residual scale |b|·max|ξ|⁵ + |r| + 1.
    pub fn residual_scale(&self, roots: &[C64]) -> f64 {
        let m = roots.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        self.b.abs() * m.powi(5) + self.r.abs() + 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootStructure {
    pub roots: Vec<C64>,
    pub real_roots: Vec<f64>,
    /// (z, z̄) with Im z > 0, sorted by real part.
    pub conjugate_pairs: Vec<(C64, C64)>,
    /// Smallest distance between two returned roots, relative to the largest modulus.
    pub min_separation: f64,
    pub max_residual: f64,
}

fn newton_polish(p: &QPolynomial, mut z: C64) -> C64 {
    for _ in 0..50 {
        let d = p.deriv(z);
        if d.norm() == 0.0 {
            break;
        }
        let step = p.eval(z) / d;
        z -= step;
        if step.norm() <= 1e-16 * z.norm().max(1e-300) {
            break;
        }
    }
    z
}

/// Simultaneous Aberth–Ehrlich iteration on the five roots.
fn aberth(p: &QPolynomial) -> Result<Vec<C64>> {
    // Cauchy bound on the monic polynomial
    let radius = 1.0 + [p.a / p.b, 1.0 / p.b, p.r / p.b].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut z: Vec<C64> = (0..5)
        .map(|k| C64::from_polar(0.5 * radius, 0.4 + 2.0 * std::f64::consts::PI * k as f64 / 5.0))
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for k in 0..5 {
            let d = p.deriv(z[k]);
            let f = p.eval(z[k]);
            if f.norm() == 0.0 {
                continue;
            }
            let ratio = f / d;
            let repulsion: C64 = (0..5).filter(|&j| j != k).map(|j| 1.0 / (z[k] - z[j])).sum();
            let step = ratio / (C64::new(1.0, 0.0) - ratio * repulsion);
            if step.re.is_finite() && step.im.is_finite() {
                z[k] -= step;
                moved = moved.max(step.norm() / z[k].norm().max(1e-300));
            }
        }
        if moved < 1e-15 {
            return Ok(z);
        }
    }
    let scale = p.residual_scale(&z);
    if z.iter().all(|&w| p.eval(w).norm() < 1e-8 * scale) {
        Ok(z)
    } else {
        Err(Error::NonConvergence("Aberth iteration did not settle".into()))
    }
}

/// Roots by Aberth iteration polished by Newton, classified into real roots and pairs.
pub fn q_roots(p: &QPolynomial) -> Result<RootStructure> {
    p.validate()?;
    let raw = aberth(p)?;
    let mut roots: Vec<C64> = raw.iter().map(|&z| newton_polish(p, z)).collect();
    let scale = p.residual_scale(&roots);
    let max_residual = roots.iter().fold(0.0f64, |m, &z| m.max(p.eval(z).norm())) / scale;
    if !(max_residual < 1e-8) {
        return Err(Error::NonConvergence(format!("root residual {max_residual:.3e}")));
    }
    let mut real_roots = Vec::new();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for z in &mut roots {
        if z.im.abs() < 1e-9 * z.norm().max(1.0) {
            z.im = 0.0;
            real_roots.push(z.re);
        } else if z.im > 0.0 {
            upper.push(*z);
        } else {
            lower.push(*z);
        }
    }
    let mut conjugate_pairs = Vec::new();
    if upper.len() == lower.len() {
        for z in upper {
            let k = (0..lower.len())
                .min_by(|&i, &j| (lower[i] - z.conj()).norm().total_cmp(&(lower[j] - z.conj()).norm()))
                .unwrap();
            let w = lower.remove(k);
            let avg = 0.5 * (z + w.conj());
            conjugate_pairs.push((avg, avg.conj()));
        }
    }
    conjugate_pairs.sort_by(|x, y| x.0.re.total_cmp(&y.0.re).then(x.0.im.total_cmp(&y.0.im)));
    real_roots.sort_by(f64::total_cmp);
    let big = roots.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
    let mut min_sep = f64::INFINITY;
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            min_sep = min_sep.min((roots[i] - roots[j]).norm() / big);
        }
    }
    Ok(RootStructure { roots, real_roots, conjugate_pairs, min_separation: min_sep, max_residual })
}

/// Exactly one simple real root and two conjugate pairs.
pub fn classify_claim(p: &QPolynomial) -> Result<bool> {
    let s = q_roots(p)?;
    Ok(s.real_roots.len() == 1 && s.conjugate_pairs.len() == 2 && s.min_separation > 1e-8)
}

/// ρ² = −a/(2b) + i√(4b−a²)/(2b): the nonzero roots at r = 0 are ±ρ, ±ρ̄.
pub fn r0_rho_squared(a: f64, b: f64) -> C64 {
    C64::new(-a / (2.0 * b), (4.0 * b - a * a).sqrt() / (2.0 * b))
}

pub fn r0_closed_form_roots(a: f64, b: f64) -> [C64; 5] {
    let rho = r0_rho_squared(a, b).sqrt();
    [C64::new(0.0, 0.0), rho, -rho, rho.conj(), -rho.conj()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaVector(pub [C64; 4]);

impl AlphaVector {
    pub fn real(a: [f64; 4]) -> Self {
        AlphaVector(a.map(|v| C64::new(v, 0.0)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|z| z.norm() == 0.0)
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// N_α(ξ,L) = α₁iξ − α₂iξe^{−iξL} + α₃ − α₄e^{−iξL}.
pub fn n_alpha(xi: C64, l: f64, alpha: &AlphaVector) -> C64 {
    let [a1, a2, a3, a4] = alpha.0;
    let i = C64::i();
    let e = (-i * xi * l).exp();
    a1 * i * xi - a2 * i * xi * e + a3 - a4 * e
}

/// d(α) = α₁α₃ − α₂α₄.
pub fn discriminant(alpha: &AlphaVector) -> C64 {
    let [a1, a2, a3, a4] = alpha.0;
    a1 * a3 - a2 * a4
}

/// α₁α₄ − α₂α₃; the map ξ ↦ (α₁iξ+α₃)/(α₂iξ+α₄) has determinant i times this value.
pub fn mobius_determinant(alpha: &AlphaVector) -> C64 {
    let [a1, a2, a3, a4] = alpha.0;
    a1 * a4 - a2 * a3
}

/// The map ξ ↦ (α₁iξ+α₃)/(α₂iξ+α₄) as (p, q, r, s) of (pξ+q)/(rξ+s).
pub fn alpha_mobius(alpha: &AlphaVector) -> Mobius {
    let [a1, a2, a3, a4] = alpha.0;
    let i = C64::i();
    Mobius { p: a1 * i, q: a3, r: a2 * i, s: a4 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub p: C64,
    pub q: C64,
    pub r: C64,
    pub s: C64,
}

impl Mobius {
    pub fn det(&self) -> C64 {
        self.p * self.s - self.q * self.r
    }

    pub fn apply(&self, z: C64) -> C64 {
        (self.p * z + self.q) / (self.r * z + self.s)
    }

    pub fn inverse(&self) -> Mobius {
        Mobius { p: self.s, q: -self.q, r: -self.r, s: self.p }
    }
}

fn distinct(z: &[C64; 4]) -> bool {
    let scale = 1.0 + z.iter().fold(0.0f64, |m, w| m.max(w.norm()));
    (0..4).all(|i| (i + 1..4).all(|j| (z[i] - z[j]).norm() > 1e-14 * scale))
}

/// ((z1−z3)(z2−z4)) / ((z1−z4)(z2−z3)).
pub fn cross_ratio(z1: C64, z2: C64, z3: C64, z4: C64) -> Result<C64> {
    if !distinct(&[z1, z2, z3, z4]) {
        return Err(Error::Degenerate("cross-ratio of coincident points".into()));
    }
    Ok(((z1 - z3) * (z2 - z4)) / ((z1 - z4) * (z2 - z3)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MobiusVerdict {
    pub feasible: bool,
    pub mismatch: f64,
    pub cr_points: C64,
    pub cr_images: C64,
}

/// log(e^{s_i} − e^{s_j}) without overflow.
fn log_exp_diff(si: C64, sj: C64) -> C64 {
    let (big, small, sign) = if si.re >= sj.re { (si, sj, 1.0) } else { (sj, si, -1.0) };
    big + (sign * (C64::new(1.0, 0.0) - (small - big).exp())).ln()
}

fn verdict(points: &[C64; 4], cr_images: C64) -> Result<MobiusVerdict> {
    let cr_points = cross_ratio(points[0], points[1], points[2], points[3])?;
    let mismatch = (cr_points - cr_images).norm();
    let mismatch = if mismatch.is_finite() { mismatch } else { f64::INFINITY };
    Ok(MobiusVerdict { feasible: mismatch < 1e-10 * (1.0 + cr_points.norm()), mismatch, cr_points, cr_images })
}

/// A Möbius map sending the points to the given images exists iff the cross-ratios agree.
pub fn mobius_feasibility_images(points: &[C64; 4], images: &[C64; 4]) -> Result<MobiusVerdict> {
    if !distinct(images) {
        return Err(Error::Degenerate("images coincide".into()));
    }
    verdict(points, cross_ratio(images[0], images[1], images[2], images[3])?)
}

/// Images e^{−iLξᵢ}; the image cross-ratio is formed in log space so large |Im ξ|·L cannot overflow.
pub fn mobius_feasibility(points: &[C64; 4], l: f64) -> Result<MobiusVerdict> {
    if !distinct(points) {
        return Err(Error::Degenerate("points coincide".into()));
    }
    let s: Vec<C64> = points.iter().map(|&z| -C64::i() * l * z).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            let d = s[i] - s[j];
            let k = (d.im / (2.0 * std::f64::consts::PI)).round();
            if d.re.abs() < 1e-12 && (d.im - 2.0 * std::f64::consts::PI * k).abs() < 1e-12 {
                return Err(Error::Degenerate(format!("images {i} and {j} coincide at L={l}")));
            }
        }
    }
    let log_cr = log_exp_diff(s[0], s[2]) + log_exp_diff(s[1], s[3]) - log_exp_diff(s[0], s[3]) - log_exp_diff(s[1], s[2]);
    let cr_images = if log_cr.re > 700.0 { C64::new(f64::INFINITY, 0.0) } else { log_cr.exp() };
    verdict(points, cr_images)
}

/// The four non-real roots ordered (ξ₁, ξ̄₁, ξ₂, ξ̄₂).
pub fn nonreal_roots(s: &RootStructure) -> Result<[C64; 4]> {
    if s.conjugate_pairs.len() != 2 {
        return Err(Error::Degenerate("expected two conjugate pairs".into()));
    }
    let (p, q) = (s.conjugate_pairs[0], s.conjugate_pairs[1]);
    Ok([p.0, p.1, q.0, q.1])
}

/// Imaginary parts of the zeros of N_α when its two linear factors are proportional:
/// N_α = (α₂iξ+α₄)(c − e^{−iξL}), giving Im ξ = ln|c|/L on the exponential branch and
/// one value from the linear factor.
pub fn n_alpha_zero_structure(alpha: &AlphaVector, l: f64) -> Result<Vec<f64>> {
    if alpha.is_zero() {
        return Err(Error::Domain("alpha must be nonzero".into()));
    }
    if !(l > 0.0) {
        return Err(Error::Domain(format!("L must be positive, got {l}")));
    }
    let nrm = alpha.norm();
    if mobius_determinant(alpha).norm() > 1e-12 * nrm * nrm {
        return Err(Error::Domain("alpha is not degenerate (alpha1*alpha4 - alpha2*alpha3 != 0)".into()));
    }
    let [a1, a2, a3, a4] = alpha.0;
    let i = C64::i();
    let mut ims = Vec::new();
    let tiny = 1e-14 * nrm;
    if a2.norm() <= tiny && a4.norm() <= tiny {
        // N_α = α₁iξ + α₃
        if a1.norm() > tiny {
            ims.push((i * a3 / a1).im);
        }
    } else {
        let c = if a2.norm() >= a4.norm() { a1 / a2 } else { a3 / a4 };
        if a2.norm() > tiny {
            ims.push((i * a4 / a2).im);
        }
        if c.norm() > tiny {
            ims.push(c.norm().ln() / l);
        }
    }
    ims.sort_by(f64::total_cmp);
    ims.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    Ok(ims)
}

/// Eigenvalues of a dense matrix via a real Schur form with an iteration cap.
pub fn dense_eigenvalues(m: DMatrix<f64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    let schur = m
        .try_schur(f64::EPSILON, 200 * n.max(10))
        .ok_or_else(|| Error::NonConvergence("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Operator restricted to the dofs not pinned by Dirichlet conditions.
pub fn free_block(op: &DiscreteOperator) -> DMatrix<f64> {
    let free = op.free_dofs();
    DMatrix::from_fn(free.len(), free.len(), |i, j| op.matrix.get(free[i], free[j]))
}

pub fn discrete_spectrum(op: &DiscreteOperator) -> Result<Vec<C64>> {
    let ev = dense_eigenvalues(free_block(op))?;
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonConvergence("eigensolver returned non-finite values".into()));
    }
    Ok(ev)
}

pub fn spectral_abscissa(ev: &[C64]) -> f64 {
    ev.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re))
}

/// max|Re λ| / max|λ|.
pub fn relative_real_defect(ev: &[C64]) -> f64 {
    let re = ev.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    let mag = ev.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    re / mag
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn roots_a1_b1_r0() {
        let s = q_roots(&QPolynomial::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let expect = [c(0.0, 0.0), c(0.5, h), c(0.5, -h), c(-0.5, h), c(-0.5, -h)];
        for e in expect {
            assert!(s.roots.iter().any(|z| (z - e).norm() < 1e-12), "{e} missing from {:?}", s.roots);
        }
        assert_eq!(s.real_roots.len(), 1);
        assert_eq!(s.conjugate_pairs.len(), 2);
    }

    #[test]
    fn r1_structure_and_gate() {
        assert!(classify_claim(&QPolynomial { a: 1.0, b: 1.0, r: 1.0 }).unwrap());
        assert!(classify_claim(&QPolynomial { a: 1.0, b: 1.0, r: 0.0 }).unwrap());
        assert!(QPolynomial::new(3.0, 1.0, 0.0).is_err());
        assert!(classify_claim(&QPolynomial { a: 3.0, b: 1.0, r: 0.0 }).is_err());
    }

    #[test]
    fn closed_form_matches() {
        for &(a, b) in &[(1.0, 1.0), (-0.0284701, 0.00121582), (0.5, 0.2)] {
            let s = q_roots(&QPolynomial::new(a, b, 0.0).unwrap()).unwrap();
            for e in r0_closed_form_roots(a, b) {
                let best = s.roots.iter().map(|z| (z - e).norm()).fold(f64::INFINITY, f64::min);
                assert!(best <= 1e-10 * e.norm().max(1.0), "{a} {b}: {best}");
            }
        }
    }

    #[test]
    fn n_alpha_examples() {
        let l = 1.3;
        let one = AlphaVector::real([0.0, 0.0, 1.0, 0.0]);
        assert_eq!(n_alpha(c(0.7, -0.2), l, &one), c(1.0, 0.0));
        assert!(n_alpha(c(0.0, 0.0), l, &AlphaVector::real([0.0, 0.0, 1.0, 1.0])).norm() < 1e-15);
        let xi = c(2.0 * std::f64::consts::PI / l, 0.0);
        assert!(n_alpha(xi, l, &AlphaVector::real([1.0, 1.0, 0.0, 0.0])).norm() < 1e-13);
    }

    #[test]
    fn discriminant_examples() {
        assert_eq!(discriminant(&AlphaVector::real([1.0, 1.0, 1.0, 1.0])), c(0.0, 0.0));
        assert_eq!(discriminant(&AlphaVector::real([1.0, 0.0, 1.0, 0.0])), c(1.0, 0.0));
        let a = AlphaVector([c(0.3, 1.0), c(-0.2, 0.5), c(1.1, -0.7), c(0.4, 0.4)]);
        let k = c(0.6, -1.3);
        let ka = AlphaVector(a.0.map(|z| z * k));
        assert!((discriminant(&ka) - k * k * discriminant(&a)).norm() < 1e-14);
    }

    #[test]
    fn cross_ratio_examples() {
        let cr = cross_ratio(c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)).unwrap();
        assert!((cr - c(4.0 / 3.0, 0.0)).norm() < 1e-15);
        assert!(cross_ratio(c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)).is_err());
        // regression value for the non-real roots of q(a=1,b=1,r=0), ordered (ξ₁, ξ̄₁, ξ₂, ξ̄₂);
        // hand value: differences 1, 1 over |1+√3 i|² = 4
        let s = q_roots(&QPolynomial::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        let z = nonreal_roots(&s).unwrap();
        let cr = cross_ratio(z[0], z[1], z[2], z[3]).unwrap();
        assert!((cr - c(0.25, 0.0)).norm() < 1e-12, "{cr}");
    }

    #[test]
    fn mobius_examples() {
        let m = Mobius { p: c(2.0, 0.0), q: c(1.0, 0.0), r: c(1.0, 0.0), s: c(3.0, 0.0) };
        let pts = [c(0.1, 0.2), c(-1.0, 0.5), c(2.0, -1.0), c(0.3, 3.0)];
        let imgs = pts.map(|z| m.apply(z));
        let v = mobius_feasibility_images(&pts, &imgs).unwrap();
        assert!(v.feasible && v.mismatch < 1e-10);
        let s = q_roots(&QPolynomial::new(1.0, 1.0, 0.0).unwrap()).unwrap();
        let v = mobius_feasibility(&nonreal_roots(&s).unwrap(), 1.0).unwrap();
        assert!(!v.feasible && v.mismatch > 1e-3, "{v:?}");
    }

    #[test]
    fn log_space_images_match_direct() {
        let pts = [c(0.3, 0.4), c(0.3, -0.4), c(-1.1, 0.2), c(-1.1, -0.2)];
        let l = 2.0;
        let imgs = pts.map(|z| (-C64::i() * l * z).exp());
        let direct = mobius_feasibility_images(&pts, &imgs).unwrap();
        let logs = mobius_feasibility(&pts, l).unwrap();
        assert!((direct.cr_images - logs.cr_images).norm() < 1e-12 * direct.cr_images.norm());
    }

    #[test]
    fn zero_structure_examples() {
        assert_eq!(n_alpha_zero_structure(&AlphaVector::real([1.0, 1.0, 1.0, 1.0]), 1.0).unwrap().len(), 2);
        let s = n_alpha_zero_structure(&AlphaVector::real([0.0, 0.0, 1.0, -1.0]), 1.0).unwrap();
        assert_eq!(s, vec![0.0]);
        assert!(n_alpha_zero_structure(&AlphaVector::real([1.0, 0.0, 0.0, 1.0]), 1.0).is_err());
    }

    #[test]
    fn zero_structure_branch_values_are_zeros() {
        // every predicted imaginary part is attained by an actual zero of N_α
        let alpha = AlphaVector([c(0.6, 0.8), c(0.5, -0.2), c(1.2, 1.0), c(0.9, 0.3)]);
        let k = alpha.0[1] / alpha.0[0];
        let _ = k;
        let cfac = c(1.7, -0.4);
        let a = AlphaVector([cfac * alpha.0[1], alpha.0[1], cfac * alpha.0[3], alpha.0[3]]);
        let l = 1.5;
        let ims = n_alpha_zero_structure(&a, l).unwrap();
        assert_eq!(ims.len(), 2);
        let lin = C64::i() * a.0[3] / a.0[1];
        assert!(n_alpha(lin, l, &a).norm() < 1e-12);
        let exp_zero = C64::i() * cfac.ln() / l;
        assert!(n_alpha(exp_zero, l, &a).norm() < 1e-12);
        assert!(ims.iter().any(|&v| (v - exp_zero.im).abs() < 1e-12));
        assert!(ims.iter().any(|&v| (v - lin.im).abs() < 1e-12));
    }

    #[test]
    fn hand_eigenvalues() {
        let ev = dense_eigenvalues(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!(ev.iter().any(|z| (z - c(0.0, 1.0)).norm() < 1e-14));
        assert!(ev.iter().any(|z| (z - c(0.0, -1.0)).norm() < 1e-14));
        assert!((relative_real_defect(&ev)).abs() < 1e-14);
        assert_eq!(spectral_abscissa(&[c(-1.0, 2.0), c(-0.5, 0.0)]), -0.5);
    }
}
