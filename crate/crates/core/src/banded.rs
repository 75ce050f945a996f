//! Banded storage and LU with partial pivoting.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.slot(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.slot(i, j);
        self.data[k] += v;
    }

    /// Column range of row i inside the band.
    pub fn row_cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for j in self.row_cols(i) {
                s += self.data[self.slot(i, j)] * x[j];
            }
            y[i] = s;
        }
    }

    /// self*s1 + other*s2, both with the same band shape.
    pub fn combine(&self, s1: f64, other: &BandMatrix, s2: f64) -> BandMatrix {
        assert_eq!((self.n, self.kl, self.ku), (other.n, other.kl, other.ku));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| s1 * a + s2 * b).collect();
        BandMatrix { n: self.n, kl: self.kl, ku: self.ku, data }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn factor(&self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// LU factors with the upper factor widened by kl for pivoting fill.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    w: usize,
    u: Vec<f64>,
    l: Vec<f64>,
    piv: Vec<usize>,
    pivot_ratio: f64,
}

impl BandLu {
    fn new(a: &BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let w = 2 * kl + ku + 1;
        let mut u = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        for i in 0..n {
            for j in a.row_cols(i) {
                u[at(i, j)] = a.get(i, j);
            }
        }
        let mut l = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            for i in k + 1..=last {
                if u[at(i, k)].abs() > u[at(p, k)].abs() {
                    p = i;
                }
            }
            piv[k] = p;
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    u.swap(at(k, j), at(p, j));
                }
            }
            let d = u[at(k, k)];
            pmin = pmin.min(d.abs());
            pmax = pmax.max(d.abs());
            if d == 0.0 || !d.is_finite() {
                return Err(Error::SingularFactorization { dt: f64::NAN, pivot_ratio: 0.0 });
            }
            for i in k + 1..=last {
                let m = u[at(i, k)] / d;
                l[k * kl + (i - k - 1)] = m;
                if m != 0.0 {
                    for j in k + 1..=jmax {
                        u[at(i, j)] -= m * u[at(k, j)];
                    }
                }
                u[at(i, k)] = 0.0;
            }
        }
        Ok(BandLu { n, kl, ku, w, u, l, piv, pivot_ratio: if pmax > 0.0 { pmin / pmax } else { 0.0 } })
    }

    /// min|pivot| / max|pivot|, a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku, w) = (self.n, self.kl, self.ku, self.w);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.l[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let row = k * w;
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.u[row + (j + kl - k)] * b[j];
            }
            b[k] = s / self.u[row + kl];
        }
    }
}
