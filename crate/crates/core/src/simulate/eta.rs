//! The error bound `η(t) = U t + K B sqrt(T/(p t)) + (2/e)^{p t / (16 T)}`
//! for the law at time `t` started from the anchor state.

use crate::bd_models::BoundsReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaInputs {
    pub u: f64,
    pub b: f64,
    pub t_bound: f64,
    pub p: f64,
    /// Unknown constant; supplied by the caller.
    pub k: f64,
    pub t: f64,
}

impl EtaInputs {
    pub fn from_report(report: &BoundsReport, k: f64, t: f64) -> Self {
        Self {
            u: report.u,
            b: report.b,
            t_bound: report.t,
            p: report.p,
            k,
            t,
        }
    }

    pub fn at(&self, t: f64) -> Self {
        Self { t, ..*self }
    }

    /// The range `B² T / p << t << 1/U` in which `η` can be small.
    pub fn window(&self) -> (f64, f64) {
        (self.b * self.b * self.t_bound / self.p, 1.0 / self.u)
    }
}

pub fn eta_bound(inp: &EtaInputs) -> f64 {
    let drift = inp.u * inp.t;
    let mixing = inp.k * inp.b * (inp.t_bound / (inp.p * inp.t)).sqrt();
    let renewal = (2.0 / std::f64::consts::E).powf(inp.p * inp.t / (16.0 * inp.t_bound));
    drift + mixing + renewal
}

/// Minimizes `η` over `t` in `[t_lo, t_hi]` by golden-section search on
/// `ln t`, after a coarse grid locates the bracket. Returns `(t*, η(t*))`.
pub fn minimize_eta(inp: &EtaInputs, t_lo: f64, t_hi: f64) -> (f64, f64) {
    assert!(t_lo > 0.0 && t_hi > t_lo, "need 0 < t_lo < t_hi");
    let f = |x: f64| eta_bound(&inp.at(x.exp()));
    let (lo, hi) = (t_lo.ln(), t_hi.ln());
    const GRID: usize = 64;
    let step = (hi - lo) / GRID as f64;
    let best = (0..=GRID)
        .map(|k| lo + step * k as f64)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
        if b - a < 1e-12 {
            break;
        }
    }
    let x = 0.5 * (a + b);
    (x.exp(), f(x))
}
