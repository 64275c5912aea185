//! Closed-form quantities behind the contraction certificate.

use super::{AnchorFlag, BirthDeathModel, ModelError};
use crate::numeric::{log_add_exp, NeumaierSum};

/// Slack below 1 required of `2UT/p`; keeps rounding from certifying a
/// borderline model.
pub const CONTRACTION_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TBounds {
    /// Bound on `max_{k<s} E_k τ_{s,0}` from summed upward passage times.
    pub t1_upward: f64,
    /// Bound on the return time `E_s τ_{s,0}`.
    pub t1_return: f64,
    pub t1: f64,
    /// `max_{k>s} E_k τ_{s,0}`, plus a certified tail for truncated chains.
    pub t2: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub s: usize,
    pub s_flag: Option<AnchorFlag>,
    pub p: f64,
    pub t1: f64,
    pub t2: f64,
    pub t: f64,
    pub u: f64,
    pub q_s: f64,
    pub b: f64,
    pub contraction: f64,
    pub certificate_valid: bool,
    /// Why the certificate failed, when it did.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuickBounds {
    pub rho1: f64,
    pub rho2: f64,
    pub p_lo: f64,
    pub u_hi: f64,
    pub t1_hi: f64,
    pub t2_hi: f64,
}

impl BirthDeathModel {
    /// `ln(1 / (d_j α_j))` for `j = 1..=N`.
    fn log_inv_d_alpha(&self, log_alpha: &[f64]) -> Vec<f64> {
        log_alpha
            .iter()
            .enumerate()
            .map(|(k, &la)| -self.death[k].ln() - la)
            .collect()
    }

    /// `P_k[τ_s < τ_0]` as `σ_k / σ_s` with `σ_k = Σ_{j<=k} 1/(d_j α_j)`.
    pub fn hit_prob_closed_form(&self, s: usize) -> Result<Vec<f64>, ModelError> {
        self.check_state(s)?;
        let w = self.alpha_weights();
        let terms = self.log_inv_d_alpha(&w.log_alpha);
        let mut log_sigma = Vec::with_capacity(s);
        let mut acc = f64::NEG_INFINITY;
        for &t in &terms[..s] {
            acc = log_add_exp(acc, t);
            log_sigma.push(acc);
        }
        let log_sigma_s = log_sigma[s - 1];
        Ok((1..=self.n_states())
            .map(|k| {
                if k >= s {
                    1.0
                } else {
                    (log_sigma[k - 1] - log_sigma_s).exp()
                }
            })
            .collect())
    }

    /// `p = r_1 = 1 / (d_1 σ_s)`.
    pub fn p_bound(&self, s: usize) -> Result<f64, ModelError> {
        Ok(self.hit_prob_closed_form(s)?[0])
    }

    /// `E_i τ_{i-1} = (1/(d_i α_i)) Σ_{j>=i} α_j` on the finite chain.
    pub fn mean_upcross_time(&self, i: usize) -> Result<f64, ModelError> {
        let n = self.n_states();
        if i < 2 || i > n {
            return Err(ModelError::IndexOutOfRange { index: i, n });
        }
        let w = self.alpha_weights();
        let mut tail = f64::NEG_INFINITY;
        for &la in &w.log_alpha[i - 1..] {
            tail = log_add_exp(tail, la);
        }
        Ok((tail - w.log_alpha[i - 1] - self.death(i).ln()).exp())
    }

    /// Terms `E_j τ_{j-1}` for `j = s+1..=N`, each including the mass beyond
    /// `N` for truncated chains, and the summed contribution of `j > N`.
    fn downward_terms(&self, s: usize, log_alpha: &[f64]) -> Result<(Vec<f64>, f64), ModelError> {
        let n = self.n_states();
        let (tail_mass, beyond) = match self.tail() {
            None => (0.0, 0.0),
            Some(t) if !t.converges() => {
                return Err(ModelError::DSeriesDivergent { ratio: t.ratio });
            }
            Some(t) => (t.tail_mass_bound(), t.inv_death_tail / (1.0 - t.ratio)),
        };
        let mut suffix = vec![f64::NEG_INFINITY; n + 1];
        for j in (1..=n).rev() {
            suffix[j - 1] = log_add_exp(suffix[j], log_alpha[j - 1]);
        }
        let terms = (s + 1..=n)
            .map(|j| {
                let log_inv = -self.death(j).ln() - log_alpha[j - 1];
                let extra = if tail_mass > 0.0 { (tail_mass.ln() + log_inv).exp() } else { 0.0 };
                (suffix[j - 1] + log_inv).exp() + extra
            })
            .collect();
        Ok((terms, beyond))
    }

    pub fn t_bounds(&self, s: usize) -> Result<TBounds, ModelError> {
        self.check_state(s)?;
        let w = self.alpha_weights();
        let la = &w.log_alpha;

        // Σ_{i<s} (1/(b_i α_i)) Σ_{j<=i} α_j
        let mut upward = NeumaierSum::new();
        let mut prefix = f64::NEG_INFINITY;
        for i in 1..s {
            prefix = log_add_exp(prefix, la[i - 1]);
            upward.add((prefix - la[i - 1] - self.birth(i).ln()).exp());
        }
        let t1_upward = upward.value();

        let (down, beyond) = self.downward_terms(s, la)?;
        let mut t2 = NeumaierSum::new();
        t2.extend(down.iter().copied());
        t2.add(beyond);
        let t2 = t2.value();

        // one holding time at s, then either climb back down from s+1 or
        // climb up from s-1 (bounded by the full upward passage)
        let up_from_above = down.first().copied().unwrap_or(0.0);
        let q_s = self.birth(s) + self.death(s);
        let below = if s > 1 { self.death(s) * t1_upward } else { 0.0 };
        let t1_return = (1.0 + self.birth(s) * up_from_above + below) / q_s;

        let t1 = t1_upward.max(t1_return);
        Ok(TBounds {
            t1_upward,
            t1_return,
            t1,
            t2,
            t: t1.max(t2),
        })
    }

    /// `U = d_1 / Σ_j α_j`.
    pub fn u_exact(&self) -> Result<f64, ModelError> {
        self.check_alpha_sum()?;
        let w = self.alpha_weights();
        Ok(self.death(1) * (-w.log_alpha_plus).exp())
    }

    pub fn certificate(&self) -> BoundsReport {
        let anchor = self.choose_s();
        self.report_at(anchor.s, anchor.flag)
    }

    /// The certificate with a caller-chosen anchor.
    pub fn certificate_at(&self, s: usize) -> Result<BoundsReport, ModelError> {
        self.check_state(s)?;
        Ok(self.report_at(s, None))
    }

    fn report_at(&self, s: usize, s_flag: Option<AnchorFlag>) -> BoundsReport {
        let q_s = self.birth(s) + self.death(s);
        let p = self.p_bound(s).expect("anchor is a valid state");
        let failed = |reason: String, t1: f64, u: f64| BoundsReport {
            s,
            s_flag,
            p,
            t1,
            t2: f64::INFINITY,
            t: f64::INFINITY,
            u,
            q_s,
            b: f64::INFINITY,
            contraction: f64::INFINITY,
            certificate_valid: false,
            reason: Some(reason),
        };
        let u = match self.u_exact() {
            Ok(u) => u,
            Err(e) => return failed(e.to_string(), f64::NAN, f64::NAN),
        };
        let tb = match self.t_bounds(s) {
            Ok(tb) => tb,
            Err(e) => return failed(e.to_string(), f64::NAN, u),
        };
        let contraction = 2.0 * u * tb.t / p;
        let certificate_valid = contraction < 1.0 - CONTRACTION_MARGIN;
        let reason = (!certificate_valid).then(|| format!("2UT/p = {contraction} is not below 1"));
        BoundsReport {
            s,
            s_flag,
            p,
            t1: tb.t1,
            t2: tb.t2,
            t: tb.t,
            u,
            q_s,
            b: tb.t * q_s / p,
            contraction,
            certificate_valid,
            reason,
        }
    }

    /// Estimates that use only `ρ_1 = b_{s1}/d_{s1}` and `ρ_2 = b_{s2}/d_{s2}`
    /// for monotone chains; each dominates the exact value it replaces.
    pub fn quick_bounds(&self, s1: usize, s2: usize) -> Result<QuickBounds, ModelError> {
        let n = self.n_states();
        let violated = |m: String| Err(ModelError::AssumptionViolated(m));
        if s1 == 0 || s2 > n {
            return violated(format!("need 1 <= s1 and s2 <= N = {n}"));
        }
        if self.birth(1) <= self.death(1) {
            return violated("b_1/d_1 must exceed 1".into());
        }
        if let Some(j) = (1..n).find(|&j| self.death(j + 1) < self.death(j)) {
            return violated(format!("d is not non-decreasing at j = {j}"));
        }
        if let Some(j) = (1..n).find(|&j| {
            self.birth(j + 1) * self.death(j) > self.birth(j) * self.death(j + 1) * (1.0 + 1e-12)
        }) {
            return violated(format!("b/d is not non-increasing at j = {j}"));
        }
        let s = self.choose_s().s;
        if !(s1 <= s && s < s2) {
            return violated(format!("need s1 <= s < s2 with s = {s}"));
        }
        let rho1 = self.birth(s1) / self.death(s1);
        let rho2 = self.birth(s2) / self.death(s2);
        if !(rho1 > 1.0) {
            return violated(format!("rho1 = {rho1} must exceed 1"));
        }
        let tail = match self.tail() {
            None => 0.0,
            Some(t) if t.ratio >= 1.0 => {
                return Err(ModelError::DSeriesDivergent { ratio: t.ratio });
            }
            Some(t) => t.inv_death_tail,
        };

        let rho1_pow = rho1.powi(s1 as i32);
        let geo1 = rho1 / (rho1 - 1.0);
        let gap = (s - s1) as f64;
        let p_lo = 1.0 / (geo1 + gap / rho1_pow);
        let u_hi = self.death(s1) * (rho1 - 1.0) / (rho1_pow - 1.0);

        let g = gap + geo1;
        let upward: NeumaierSum = (1..s)
            .map(|i| g * self.death(i) / (self.death(1) * self.birth(i)))
            .collect();
        let upward = upward.value();
        let geo2 = 1.0 / (1.0 - rho2);
        let up_hi = if s < n {
            ((s2 - s - 1) as f64 + geo2) / self.death(s + 1)
        } else {
            0.0
        };
        let below = if s > 1 { self.death(s) * upward } else { 0.0 };
        let ret = (1.0 + self.birth(s) * up_hi + below) / (self.birth(s) + self.death(s));
        let t1_hi = upward.max(ret);

        let inv_d: NeumaierSum = (s + 1..=n).map(|j| 1.0 / self.death(j)).collect();
        let t2_hi = ((s2 - s) as f64 + geo2) * (inv_d.value() + tail);
        Ok(QuickBounds {
            rho1,
            rho2,
            p_lo,
            u_hi,
            t1_hi,
            t2_hi,
        })
    }
}
