//! Direct solvers for the linear systems of absorbing chains.
//!
//! Every system solved in this crate has the form `M = diag(q) - A` where
//! `A >= 0` holds the jump rates between the unknowns and
//! `q_i = Σ_j A_ij + leak_i`, with `leak_i >= 0` the rate of leaving the
//! set of unknowns. `M` is a nonsingular M-matrix exactly when every unknown
//! can reach a leak.
//!
//! Elimination runs without pivoting (safe for M-matrices) and recomputes
//! each pivot as the sum of the remaining off-diagonal rates plus the
//! accumulated leak. No subtraction ever appears in a pivot, so tiny escape
//! rates survive elimination with full relative accuracy. Tridiagonal systems
//! go through the Thomas recurrences; anything else uses a banded
//! factorization sized by the detected bandwidth.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("singular system: unknown {index} cannot reach a leak")]
    Singular { index: usize },
    #[error("right-hand side has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Sparse description of `diag(q) - A`.
#[derive(Debug, Clone)]
pub struct RateSystem {
    n: usize,
    rates: Vec<Vec<(usize, f64)>>,
    leak: Vec<f64>,
}

impl RateSystem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rates: vec![Vec::new(); n],
            leak: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Adds rate `A_ij`. Self-rates are ignored because they change neither
    /// `q_i` nor the solution.
    pub fn add_rate(&mut self, i: usize, j: usize, rate: f64) {
        if i != j && rate > 0.0 {
            self.rates[i].push((j, rate));
        }
    }

    pub fn add_leak(&mut self, i: usize, rate: f64) {
        if rate > 0.0 {
            self.leak[i] += rate;
        }
    }

    /// Lower and upper bandwidth of `A`.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for (i, row) in self.rates.iter().enumerate() {
            for &(j, _) in row {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn factor(&self) -> Result<Factorization, LinalgError> {
        let (kl, ku) = self.bandwidth();
        if kl <= 1 && ku <= 1 {
            Ok(Factorization::Tridiagonal(self.factor_tridiagonal()?))
        } else {
            Ok(Factorization::Banded(self.factor_banded(kl, ku)?))
        }
    }

    fn factor_tridiagonal(&self) -> Result<Tridiagonal, LinalgError> {
        let n = self.n;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut leak = self.leak.clone();
        for (i, row) in self.rates.iter().enumerate() {
            for &(j, r) in row {
                if j + 1 == i {
                    lower[i] += r;
                } else {
                    upper[i] += r;
                }
            }
        }
        let mut pivot = vec![0.0; n];
        let mut mult = vec![0.0; n];
        for k in 0..n {
            let p = upper[k] + leak[k];
            if !(p > 0.0) || !p.is_finite() {
                return Err(LinalgError::Singular { index: k });
            }
            pivot[k] = p;
            if k + 1 < n {
                // censoring state k reroutes (k+1 -> k) through k's exits;
                // the (k+1 -> k -> k+1) loop is dropped and k's leak inherited
                let m = lower[k + 1] / p;
                mult[k + 1] = m;
                leak[k + 1] += m * leak[k];
            }
        }
        Ok(Tridiagonal {
            pivot,
            mult,
            upper,
        })
    }

    fn factor_banded(&self, kl: usize, ku: usize) -> Result<Banded, LinalgError> {
        let n = self.n;
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let idx = |i: usize, j: usize| i * width + (j + kl - i);
        for (i, row) in self.rates.iter().enumerate() {
            for &(j, r) in row {
                band[idx(i, j)] += r;
            }
        }
        let mut leak = self.leak.clone();
        let mut pivot = vec![0.0; n];
        for k in 0..n {
            let hi = (k + ku).min(n - 1);
            let mut p = leak[k];
            for j in k + 1..=hi {
                p += band[idx(k, j)];
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(LinalgError::Singular { index: k });
            }
            pivot[k] = p;
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                let a_ik = band[idx(i, k)];
                if a_ik == 0.0 {
                    continue;
                }
                let m = a_ik / p;
                band[idx(i, k)] = m;
                for j in k + 1..=hi {
                    if j != i {
                        band[idx(i, j)] += m * band[idx(k, j)];
                    }
                }
                leak[i] += m * leak[k];
            }
        }
        Ok(Banded {
            n,
            kl,
            ku,
            band,
            pivot,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pivot: Vec<f64>,
    mult: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    band: Vec<f64>,
    pivot: Vec<f64>,
}

impl Banded {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.kl + self.ku + 1) + (j + self.kl - i)]
    }
}

/// LU factors of a [`RateSystem`], usable for both `M x = b` and `x M = b`.
#[derive(Debug, Clone)]
pub enum Factorization {
    Tridiagonal(Tridiagonal),
    Banded(Banded),
}

impl Factorization {
    pub fn len(&self) -> usize {
        match self {
            Factorization::Tridiagonal(t) => t.pivot.len(),
            Factorization::Banded(b) => b.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_tridiagonal(&self) -> bool {
        matches!(self, Factorization::Tridiagonal(_))
    }

    fn check(&self, b: &[f64]) -> Result<(), LinalgError> {
        if b.len() != self.len() {
            return Err(LinalgError::DimensionMismatch {
                expected: self.len(),
                found: b.len(),
            });
        }
        Ok(())
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let mut x = b.to_vec();
        match self {
            Factorization::Tridiagonal(t) => {
                let n = x.len();
                for i in 1..n {
                    x[i] += t.mult[i] * x[i - 1];
                }
                for k in (0..n).rev() {
                    let next = if k + 1 < n { t.upper[k] * x[k + 1] } else { 0.0 };
                    x[k] = (x[k] + next) / t.pivot[k];
                }
            }
            Factorization::Banded(f) => {
                let n = f.n;
                for k in 0..n {
                    let yk = x[k];
                    if yk != 0.0 {
                        for i in k + 1..=(k + f.kl).min(n - 1) {
                            x[i] += f.at(i, k) * yk;
                        }
                    }
                }
                for k in (0..n).rev() {
                    let mut acc = x[k];
                    for j in k + 1..=(k + f.ku).min(n - 1) {
                        acc += f.at(k, j) * x[j];
                    }
                    x[k] = acc / f.pivot[k];
                }
            }
        }
        Ok(x)
    }

    /// Solves the row system `x M = b`.
    pub fn solve_left(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let mut x = b.to_vec();
        match self {
            Factorization::Tridiagonal(t) => {
                let n = x.len();
                for k in 0..n {
                    let prev = if k > 0 { t.upper[k - 1] * x[k - 1] } else { 0.0 };
                    x[k] = (x[k] + prev) / t.pivot[k];
                }
                for k in (0..n.saturating_sub(1)).rev() {
                    x[k] += t.mult[k + 1] * x[k + 1];
                }
            }
            Factorization::Banded(f) => {
                let n = f.n;
                for k in 0..n {
                    let mut acc = x[k];
                    for j in k.saturating_sub(f.ku)..k {
                        acc += f.at(j, k) * x[j];
                    }
                    x[k] = acc / f.pivot[k];
                }
                for k in (0..n).rev() {
                    let mut acc = x[k];
                    for i in k + 1..=(k + f.kl).min(n - 1) {
                        acc += f.at(i, k) * x[i];
                    }
                    x[k] = acc;
                }
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(sys: &RateSystem) -> Vec<Vec<f64>> {
        let n = sys.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut q = sys.leak[i];
            for &(j, r) in &sys.rates[i] {
                m[i][j] -= r;
                q += r;
            }
            m[i][i] += q;
        }
        m
    }

    fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        m.iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn vecmat(x: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
        (0..m.len())
            .map(|j| (0..m.len()).map(|i| x[i] * m[i][j]).sum())
            .collect()
    }

    fn birth_death(n: usize) -> RateSystem {
        let mut s = RateSystem::new(n);
        for i in 0..n {
            if i + 1 < n {
                s.add_rate(i, i + 1, 1.0 + i as f64);
            }
            if i > 0 {
                s.add_rate(i, i - 1, 2.0 + 0.5 * i as f64);
            }
        }
        s.add_leak(0, 0.7);
        s
    }

    #[test]
    fn two_state_inverse() {
        // -Q_C of the toy chain q10 = 1, q12 = 1, q21 = 2
        let mut s = RateSystem::new(2);
        s.add_rate(0, 1, 1.0);
        s.add_leak(0, 1.0);
        s.add_rate(1, 0, 2.0);
        let f = s.factor().unwrap();
        assert!(f.is_tridiagonal());
        // rows of the inverse [[1, 0.5], [1, 1]]
        let r0 = f.solve_left(&[1.0, 0.0]).unwrap();
        assert!((r0[0] - 1.0).abs() < 1e-15 && (r0[1] - 0.5).abs() < 1e-15);
        let r1 = f.solve_left(&[0.0, 1.0]).unwrap();
        assert!((r1[0] - 1.0).abs() < 1e-15 && (r1[1] - 1.0).abs() < 1e-15);
        let ones = f.solve(&[1.0, 0.0]).unwrap();
        assert!((ones[0] - 1.0).abs() < 1e-15 && (ones[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tridiagonal_and_banded_paths_agree() {
        let s = birth_death(30);
        let tri = s.factor().unwrap();
        let band = Factorization::Banded(s.factor_banded(1, 1).unwrap());
        let b: Vec<f64> = (0..30).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let x1 = tri.solve(&b).unwrap();
        let x2 = band.solve(&b).unwrap();
        let y1 = tri.solve_left(&b).unwrap();
        let y2 = band.solve_left(&b).unwrap();
        for i in 0..30 {
            assert!((x1[i] - x2[i]).abs() <= 1e-12 * x1[i].abs().max(1.0));
            assert!((y1[i] - y2[i]).abs() <= 1e-12 * y1[i].abs().max(1.0));
        }
    }

    #[test]
    fn banded_residuals_on_wide_system() {
        let n = 12;
        let mut s = RateSystem::new(n);
        for i in 0..n {
            for j in 0..n {
                if i != j && (i + 2 * j) % 3 != 0 {
                    s.add_rate(i, j, 0.3 + ((i * j) % 4) as f64);
                }
            }
        }
        s.add_leak(3, 0.5);
        s.add_leak(9, 0.01);
        let f = s.factor().unwrap();
        assert!(!f.is_tridiagonal());
        let m = dense(&s);
        let b: Vec<f64> = (0..n).map(|i| i as f64 - 4.0).collect();
        let x = f.solve(&b).unwrap();
        let r = matvec(&m, &x);
        let y = f.solve_left(&b).unwrap();
        let ry = vecmat(&y, &m);
        let scale = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-10 * scale.max(1.0));
            assert!((ry[i] - b[i]).abs() < 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn no_leak_is_singular() {
        let mut s = RateSystem::new(2);
        s.add_rate(0, 1, 1.0);
        s.add_rate(1, 0, 1.0);
        assert!(matches!(s.factor(), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn tiny_escape_rate_keeps_relative_accuracy() {
        // expected absorption time of a long reflecting chain with a 1e-12 leak
        let n = 50;
        let mut s = RateSystem::new(n);
        for i in 0..n {
            if i + 1 < n {
                s.add_rate(i, i + 1, 1.0);
            }
            if i > 0 {
                s.add_rate(i, i - 1, 1.0);
            }
        }
        s.add_leak(0, 1e-12);
        let f = s.factor().unwrap();
        let t = f.solve(&vec![1.0; n]).unwrap();
        // from state 0: expected time = n / leak + O(n^2)
        let exact_leading = n as f64 / 1e-12;
        assert!(((t[0] - exact_leading) / exact_leading).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let f = birth_death(3).factor().unwrap();
        assert_eq!(
            f.solve(&[1.0]),
            Err(LinalgError::DimensionMismatch {
                expected: 3,
                found: 1
            })
        );
    }
}
