//! Birth–death chains on `{0, 1, …, N}` absorbed at 0.
//!
//! Closed forms are expressed through the weights
//! `α_1 = 1`, `α_j = b_1 ⋯ b_{j-1} / (d_2 ⋯ d_j)`, which are held in log
//! space throughout.

mod certificate;
mod io;

use thiserror::Error;

use crate::ctmc::{validate_generator, CtmcError, Generator, ProbDist};
use crate::numeric::{log_sum_exp, NeumaierSum};

pub use certificate::{BoundsReport, QuickBounds, TBounds, CONTRACTION_MARGIN};
pub use io::{parse_model, ModelKind, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("the weight sum Σ α_j diverges")]
    DivergentAlphaSum,
    #[error("the D series fails the domination test (ratio {ratio})")]
    DSeriesDivergent { ratio: f64 },
    #[error("state index {index} out of range for N = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidParams(msg.into())
}

/// Tail behaviour beyond the truncation level of a conceptually infinite
/// chain, certified by geometric domination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    /// `sup_{i >= N} α_{i+1} / α_i` in the untruncated chain.
    pub ratio: f64,
    /// Upper bound on `Σ_{j > N} 1 / d_j`.
    pub inv_death_tail: f64,
    /// `ln` of the bound `α_N ρ / (1 - ρ) >= Σ_{j > N} α_j`; `+inf` when the
    /// ratio test fails.
    pub log_tail_mass_bound: f64,
}

impl TailEstimate {
    pub fn tail_mass_bound(&self) -> f64 {
        self.log_tail_mass_bound.exp()
    }

    pub fn converges(&self) -> bool {
        self.ratio < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// The chain really lives on `{0, …, N}`.
    ExactFinite,
    /// Finite section of a chain on `{0, 1, 2, …}`.
    TruncatedInfinite(TailEstimate),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthDeathModel {
    birth: Vec<f64>,
    death: Vec<f64>,
    truncation: Truncation,
}

/// Stochastic logistic growth: `b_i = b i`, `d_i = d i + e i² / A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub b: f64,
    pub d: f64,
    pub e: f64,
    pub area: f64,
    pub n: usize,
    /// Treat `N` as a hard population ceiling ([`Truncation::ExactFinite`])
    /// instead of a truncation of the infinite chain.
    pub hard_truncation: bool,
}

impl LogisticParams {
    /// `κ = (b - d) / e`.
    pub fn carrying_capacity(&self) -> f64 {
        (self.b - self.d) / self.e
    }

    pub fn is_supercritical(&self) -> bool {
        self.b > self.d
    }
}

/// SIS epidemic: `b_i = λ i (1 - i/N)`, `d_i = μ i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SisParams {
    pub lambda: f64,
    pub mu: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights {
    /// `ln α_j`, label `j` at index `j - 1`.
    pub log_alpha: Vec<f64>,
    /// `ln Σ_j α_j`.
    pub log_alpha_plus: f64,
}

impl AlphaWeights {
    pub fn alpha(&self, j: usize) -> f64 {
        self.log_alpha[j - 1].exp()
    }

    pub fn alpha_plus(&self) -> f64 {
        self.log_alpha_plus.exp()
    }
}

/// Anomalies met while choosing the anchor state `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorFlag {
    /// `b_1 / d_1 < 1`: no crossing exists and `s = 1`.
    MonotoneWarning,
    /// `b_j / d_j` is not non-increasing; `s` falls back to `argmax_j α_j`.
    NonMonotoneRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub s: usize,
    pub flag: Option<AnchorFlag>,
}

impl BirthDeathModel {
    /// `birth[j-1] = b_j`, `death[j-1] = d_j` for `j = 1..=N`; `b_N` must be 0.
    pub fn new(
        birth: Vec<f64>,
        death: Vec<f64>,
        truncation: Truncation,
    ) -> Result<Self, ModelError> {
        let n = death.len();
        if n == 0 {
            return Err(invalid("N must be positive"));
        }
        if birth.len() != n {
            return Err(invalid(format!(
                "{} birth rates for {n} death rates",
                birth.len()
            )));
        }
        for (k, (&b, &d)) in birth.iter().zip(&death).enumerate() {
            let j = k + 1;
            if !(d > 0.0) || !d.is_finite() {
                return Err(invalid(format!("d_{j} = {d} must be positive and finite")));
            }
            if j < n && (!(b > 0.0) || !b.is_finite()) {
                return Err(invalid(format!("b_{j} = {b} must be positive and finite")));
            }
        }
        if birth[n - 1] != 0.0 {
            return Err(invalid(format!("b_N = {} must be zero", birth[n - 1])));
        }
        if let Truncation::TruncatedInfinite(t) = truncation {
            if !(t.ratio >= 0.0) || !(t.inv_death_tail >= 0.0) {
                return Err(invalid("tail estimate must be nonnegative"));
            }
        }
        Ok(Self {
            birth,
            death,
            truncation,
        })
    }

    /// Finite section of an infinite chain whose tail satisfies
    /// `α_{i+1}/α_i <= ratio` for `i >= N` and `Σ_{j>N} 1/d_j <= inv_death_tail`.
    pub fn truncated(
        birth: Vec<f64>,
        death: Vec<f64>,
        ratio: f64,
        inv_death_tail: f64,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(birth, death, Truncation::ExactFinite)?;
        let log_alpha_n = *model.alpha_weights().log_alpha.last().unwrap();
        let log_tail_mass_bound = if ratio < 1.0 {
            log_alpha_n + ratio.ln() - (-ratio).ln_1p()
        } else {
            f64::INFINITY
        };
        model.truncation = Truncation::TruncatedInfinite(TailEstimate {
            ratio,
            inv_death_tail,
            log_tail_mass_bound,
        });
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        self.death.len()
    }

    /// `b_j`.
    pub fn birth(&self, j: usize) -> f64 {
        self.birth[j - 1]
    }

    /// `d_j`.
    pub fn death(&self, j: usize) -> f64 {
        self.death[j - 1]
    }

    pub fn births(&self) -> &[f64] {
        &self.birth
    }

    pub fn deaths(&self) -> &[f64] {
        &self.death
    }

    pub fn truncation(&self) -> &Truncation {
        &self.truncation
    }

    fn tail(&self) -> Option<&TailEstimate> {
        match &self.truncation {
            Truncation::ExactFinite => None,
            Truncation::TruncatedInfinite(t) => Some(t),
        }
    }

    pub fn alpha_weights(&self) -> AlphaWeights {
        let n = self.n_states();
        let mut log_alpha = Vec::with_capacity(n);
        let mut acc = NeumaierSum::new();
        log_alpha.push(0.0);
        for j in 2..=n {
            acc.add(self.birth(j - 1).ln() - self.death(j).ln());
            log_alpha.push(acc.value());
        }
        let log_alpha_plus = log_sum_exp(&log_alpha);
        AlphaWeights {
            log_alpha,
            log_alpha_plus,
        }
    }

    fn check_alpha_sum(&self) -> Result<(), ModelError> {
        match self.tail() {
            Some(t) if !t.converges() => Err(ModelError::DivergentAlphaSum),
            _ => Ok(()),
        }
    }

    /// Stationary law of the chain returned to state 1: `α_j / α_+`.
    pub fn return_dist_delta1(&self) -> Result<ProbDist, ModelError> {
        self.check_alpha_sum()?;
        let w = self.alpha_weights();
        let mass = w
            .log_alpha
            .iter()
            .map(|&la| (la - w.log_alpha_plus).exp())
            .collect();
        Ok(ProbDist::from_weights(mass)?)
    }

    /// Anchor `s` with `b_s/d_s >= 1 > b_{s+1}/d_{s+1}`.
    pub fn choose_s(&self) -> Anchor {
        let n = self.n_states();
        // compare b_{j+1} d_j <= b_j d_{j+1} to avoid dividing
        let monotone = (1..n).all(|j| {
            let lhs = self.birth(j + 1) * self.death(j);
            let rhs = self.birth(j) * self.death(j + 1);
            lhs <= rhs * (1.0 + 1e-12)
        });
        if !monotone {
            let w = self.alpha_weights();
            let mut best = 0;
            for (k, &la) in w.log_alpha.iter().enumerate() {
                if la > w.log_alpha[best] {
                    best = k;
                }
            }
            return Anchor {
                s: best + 1,
                flag: Some(AnchorFlag::NonMonotoneRatio),
            };
        }
        if self.birth(1) < self.death(1) {
            return Anchor {
                s: 1,
                flag: Some(AnchorFlag::MonotoneWarning),
            };
        }
        let s = (1..=n)
            .take_while(|&j| self.birth(j) >= self.death(j))
            .last()
            .unwrap_or(1);
        Anchor { s, flag: None }
    }

    /// Tridiagonal generator with `q_{i,i+1} = b_i`, `q_{i,i-1} = d_i`.
    pub fn to_generator(&self) -> Generator {
        let n = self.n_states();
        let mut triples = Vec::with_capacity(2 * n);
        for i in 1..=n {
            triples.push((i, i - 1, self.death(i)));
            if i < n {
                triples.push((i, i + 1, self.birth(i)));
            }
        }
        validate_generator(triples, n).expect("birth-death rates are valid by construction")
    }

    pub(crate) fn check_state(&self, j: usize) -> Result<(), ModelError> {
        if j == 0 || j > self.n_states() {
            return Err(ModelError::IndexOutOfRange {
                index: j,
                n: self.n_states(),
            });
        }
        Ok(())
    }
}

fn check_rate(name: &str, v: f64) -> Result<(), ModelError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(format!("{name} = {v} must be positive and finite")));
    }
    Ok(())
}

pub fn make_logistic(p: &LogisticParams) -> Result<BirthDeathModel, ModelError> {
    check_rate("b", p.b)?;
    check_rate("d", p.d)?;
    check_rate("e", p.e)?;
    check_rate("A", p.area)?;
    if p.n == 0 {
        return Err(invalid("N must be positive"));
    }
    let n = p.n;
    let birth: Vec<f64> = (1..=n)
        .map(|i| if i < n { p.b * i as f64 } else { 0.0 })
        .collect();
    let death: Vec<f64> = (1..=n)
        .map(|i| {
            let x = i as f64;
            p.d * x + p.e * x * x / p.area
        })
        .collect();
    if p.hard_truncation {
        return BirthDeathModel::new(birth, death, Truncation::ExactFinite);
    }
    // α_{i+1}/α_i = b i / (d (i+1) + e (i+1)² / A) decreases once
    // x = i + 1 exceeds 1 + sqrt(1 + d A / e)
    let ratio_at = |x: f64| p.b * (x - 1.0) / (p.d * x + p.e * x * x / p.area);
    let x_star = 1.0 + (1.0 + p.d * p.area / p.e).sqrt();
    let ratio = ratio_at((n as f64 + 1.0).max(x_star));
    // Σ_{j>N} 1/d_j <= Σ_{j>N} A/(e j²) <= A/(e N)
    let inv_death_tail = p.area / (p.e * n as f64);
    BirthDeathModel::truncated(birth, death, ratio, inv_death_tail)
}

pub fn make_sis(p: &SisParams) -> Result<BirthDeathModel, ModelError> {
    check_rate("lambda", p.lambda)?;
    check_rate("mu", p.mu)?;
    if p.n < 2 {
        return Err(invalid("N must be at least 2"));
    }
    let nf = p.n as f64;
    let birth = (1..=p.n)
        .map(|i| {
            let x = i as f64;
            p.lambda * x * (1.0 - x / nf)
        })
        .collect();
    let death = (1..=p.n).map(|i| p.mu * i as f64).collect();
    BirthDeathModel::new(birth, death, Truncation::ExactFinite)
}
