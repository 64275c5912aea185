//! The return map `μ ↦ π^μ`, its fixed point (the QSD), an independent
//! power-iteration oracle, and the Stein equation of the returned process.
//!
//! Stationarity of the returned process reads `π Q_C = -(Σ_i π_i q_{i0}) μ`,
//! so `π^μ` is proportional to `μ (-Q_C)^{-1}`: one left solve per
//! application of the map.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::bd_models::{AnchorFlag, BoundsReport};
use crate::ctmc::{
    hit_probability, mean_hitting_time, tv_distance, tv_norm_diff, CtmcError, Generator,
    HittingSpec, Measure, ProbDist, StateSet,
};
use crate::linalg::{Factorization, RateSystem};
use crate::numeric::{compensated_sum, format_g, NeumaierSum};

/// Entries of `μ (-Q_C)^{-1}` below `-NEG_CLAMP` (after normalization) are
/// reported as a solver failure; smaller negatives are clamped to zero.
pub const NEG_CLAMP: f64 = 1e-12;

const STEIN_RESIDUAL_TOL: f64 = 1e-8;
const DYNKIN_TOL: f64 = 1e-9;
const ORACLE_MAX_ITER: usize = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReturnMapError {
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        trace: Option<Box<IterationTrace>>,
    },
    #[error("step {h} must lie in (0, {limit})")]
    StepTooLarge { h: f64, limit: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("cancelled")]
    Cancelled,
    #[error("Stein solution failed verification: {0}")]
    SteinCheck(String),
}

impl From<crate::linalg::LinalgError> for ReturnMapError {
    fn from(e: crate::linalg::LinalgError) -> Self {
        Self::Ctmc(e.into())
    }
}

/// Shared cancellation flag for long iterations.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsdMethod {
    ReturnMapIteration,
    SpectralOracle,
}

impl QsdMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ReturnMapIteration => "return-map-iteration",
            Self::SpectralOracle => "spectral-oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QsdResult {
    pub m: ProbDist,
    pub lambda_m: f64,
    pub method: QsdMethod,
    pub iterations: usize,
    /// `max_i |(m Q_C)_i + λ_m m_i| / q_i`.
    pub balance_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// `μ_0, μ_1, …`.
    pub iterates: Vec<ProbDist>,
    /// `d_TV(μ_{k+1}, μ_k)`.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Largest ratio of successive residuals, ignoring residuals at the
    /// rounding floor.
    pub contraction_observed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteinSolution {
    pub f: Vec<f64>,
    /// Solution with `h(gauge) = 0`.
    pub h: Vec<f64>,
    pub pi_f: f64,
    pub gauge: usize,
    /// `max_j |(Q^μ h)(j) - (f(j) - π^μ(f))|` as a normwise backward error,
    /// that is relative to `‖Q^μ‖_∞ ‖h‖_∞ + ‖f - π^μ(f)‖_∞`.
    pub residual: f64,
    /// `|π^μ(Q^μ h)|`, on the same scale as `residual`.
    pub dynkin: f64,
}

impl SteinSolution {
    /// `max_j |h(j) - h(gauge)|`.
    pub fn oscillation(&self) -> f64 {
        self.h.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck {
    /// `‖π^ν - π^μ‖_TV` as the L1 norm of the difference.
    pub lhs: f64,
    /// `(2UT/p) ‖ν - μ‖_TV`.
    pub rhs: f64,
    /// The same bound with `U` replaced by `Σ_i π^μ(i) q_{i0}`.
    pub sharper_rhs: f64,
    pub holds: bool,
}

/// `-Q_C` factored once and reused for every application of the map.
#[derive(Debug, Clone)]
pub struct ReturnMap<'a> {
    gen: &'a Generator,
    fact: Factorization,
}

impl<'a> ReturnMap<'a> {
    pub fn new(gen: &'a Generator) -> Result<Self, ReturnMapError> {
        let n = gen.n_states();
        let mut sys = RateSystem::new(n);
        for i in 1..=n {
            for t in gen.row(i) {
                if t.target == 0 {
                    sys.add_leak(i - 1, t.rate);
                } else {
                    sys.add_rate(i - 1, t.target - 1, t.rate);
                }
            }
        }
        let fact = sys.factor().map_err(|e| {
            CtmcError::SingularSystem(format!("Q_C is not invertible: {e}"))
        })?;
        Ok(Self { gen, fact })
    }

    pub fn generator(&self) -> &Generator {
        self.gen
    }

    /// Stationary law of the chain returned according to `mu`.
    pub fn apply(&self, mu: &ProbDist) -> Result<ProbDist, ReturnMapError> {
        let x = self.fact.solve_left(mu.masses())?;
        normalize_solution(x)
    }

    /// `(-Q_C)^{-1} g`.
    fn solve_right(&self, g: &[f64]) -> Result<Vec<f64>, ReturnMapError> {
        Ok(self.fact.solve(g)?)
    }
}

fn normalize_solution(x: Vec<f64>) -> Result<ProbDist, ReturnMapError> {
    let total = compensated_sum(x.iter().copied());
    if !(total > 0.0) || !total.is_finite() {
        return Err(CtmcError::SingularSystem(format!("solution mass {total}")).into());
    }
    let mut mass = x;
    for v in &mut mass {
        *v /= total;
        if *v < -NEG_CLAMP {
            return Err(CtmcError::SingularSystem(format!("negative stationary mass {v}")).into());
        }
        *v = v.max(0.0);
    }
    Ok(ProbDist::from_weights(mass)?)
}

fn check_dims(gen: &Generator, len: usize) -> Result<(), CtmcError> {
    if gen.n_states() != len {
        return Err(CtmcError::DimensionMismatch {
            expected: gen.n_states(),
            found: len,
        });
    }
    Ok(())
}

pub fn pi_mu(gen: &Generator, mu: &ProbDist) -> Result<ProbDist, ReturnMapError> {
    check_dims(gen, mu.len())?;
    ReturnMap::new(gen)?.apply(mu)
}

/// `Σ_i dist_i q_{i0}`.
pub fn exit_rate(gen: &Generator, dist: &ProbDist) -> f64 {
    compensated_sum(
        dist.masses()
            .iter()
            .zip(gen.absorption_rates())
            .map(|(p, q)| p * q),
    )
}

/// `max_i |(m Q_C)_i + λ m_i| / q_i`.
pub fn balance_residual(gen: &Generator, m: &ProbDist, lambda: f64) -> f64 {
    let mq = left_apply(gen, m.masses());
    (1..=gen.n_states())
        .map(|i| (mq[i - 1] + lambda * m.prob(i)).abs() / gen.exit_rate(i))
        .fold(0.0, f64::max)
}

/// `v Q_C` from the sparse rows.
fn left_apply(gen: &Generator, v: &[f64]) -> Vec<f64> {
    let n = gen.n_states();
    let mut out: Vec<NeumaierSum> = vec![NeumaierSum::new(); n];
    for i in 1..=n {
        let vi = v[i - 1];
        out[i - 1].add(-vi * gen.exit_rate(i));
        for t in gen.row(i) {
            if t.target > 0 {
                out[t.target - 1].add(vi * t.rate);
            }
        }
    }
    out.iter().map(NeumaierSum::value).collect()
}

pub fn default_max_iter(gen: &Generator) -> usize {
    10 * gen.n_states()
}

/// Picard iteration `μ ← π^μ` until successive iterates are within `tol` in
/// total variation.
pub fn iterate_return_map(
    gen: &Generator,
    mu0: &ProbDist,
    tol: f64,
    max_iter: usize,
) -> Result<(QsdResult, IterationTrace), ReturnMapError> {
    iterate_return_map_with_cancel(gen, mu0, tol, max_iter, None)
}

pub fn iterate_return_map_with_cancel(
    gen: &Generator,
    mu0: &ProbDist,
    tol: f64,
    max_iter: usize,
    cancel: Option<&CancelToken>,
) -> Result<(QsdResult, IterationTrace), ReturnMapError> {
    if !(tol > 0.0) {
        return Err(ReturnMapError::InvalidTolerance(tol));
    }
    check_dims(gen, mu0.len())?;
    let map = ReturnMap::new(gen)?;
    let mut trace = IterationTrace {
        iterates: vec![mu0.clone()],
        residuals: Vec::new(),
        converged: false,
        contraction_observed: 0.0,
    };
    let mut current = mu0.clone();
    for _ in 0..max_iter {
        if cancel.is_some_and(CancelToken::is_cancelled) {
            return Err(ReturnMapError::Cancelled);
        }
        let next = map.apply(&current)?;
        let r = tv_distance(&next, &current)?;
        if let Some(&prev) = trace.residuals.last() {
            if prev > NEG_CLAMP && r > NEG_CLAMP {
                trace.contraction_observed = trace.contraction_observed.max(r / prev);
            }
        }
        trace.residuals.push(r);
        trace.iterates.push(next.clone());
        current = next;
        if r < tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        return Err(ReturnMapError::NotConverged {
            iterations: trace.residuals.len(),
            residual: trace.residuals.last().copied().unwrap_or(f64::NAN),
            trace: Some(Box::new(trace)),
        });
    }
    let lambda_m = exit_rate(gen, &current);
    let result = QsdResult {
        balance_residual: balance_residual(gen, &current, lambda_m),
        m: current,
        lambda_m,
        method: QsdMethod::ReturnMapIteration,
        iterations: trace.residuals.len(),
    };
    Ok((result, trace))
}

/// Fails unless every transient state reaches every other through `C`.
fn check_irreducible(gen: &Generator) -> Result<(), CtmcError> {
    let n = gen.n_states();
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    let mut bwd: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for i in 1..=n {
        for t in gen.row(i) {
            if t.target > 0 {
                fwd[i].push(t.target);
                bwd[t.target].push(i);
            }
        }
    }
    for adj in [&fwd, &bwd] {
        let mut seen = vec![false; n + 1];
        let mut queue = VecDeque::from([1usize]);
        seen[1] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(bad) = (1..=n).find(|&j| !seen[j]) {
            return Err(CtmcError::SingularSystem(format!(
                "transient states are not irreducible (state {bad} is cut off from state 1)"
            )));
        }
    }
    Ok(())
}

/// Default oracle step `0.5 / max_i q_i`.
pub fn default_oracle_step(gen: &Generator) -> f64 {
    0.5 / gen.max_exit_rate()
}

/// Left power iteration on `P_h = I + h Q_C`, normalized in L1 each step.
///
/// Stops once the successive change, extrapolated with the observed
/// geometric rate, is below `tol`.
pub fn qsd_spectral_oracle(
    gen: &Generator,
    h_step: f64,
    tol: f64,
) -> Result<QsdResult, ReturnMapError> {
    if !(tol > 0.0) {
        return Err(ReturnMapError::InvalidTolerance(tol));
    }
    let limit = 1.0 / gen.max_exit_rate();
    if !(h_step > 0.0 && h_step < limit) {
        return Err(ReturnMapError::StepTooLarge { h: h_step, limit });
    }
    check_irreducible(gen)?;
    let n = gen.n_states();
    const WINDOW: usize = 32;
    // changes at this level are rounding noise rather than progress
    let floor = 16.0 * f64::EPSILON;

    let mut v = vec![1.0 / n as f64; n];
    let mut history: VecDeque<f64> = VecDeque::with_capacity(WINDOW + 1);
    let mut last = f64::INFINITY;
    for iter in 1..=ORACLE_MAX_ITER {
        let vq = left_apply(gen, &v);
        let mut next: Vec<f64> = v.iter().zip(&vq).map(|(a, b)| a + h_step * b).collect();
        let total = compensated_sum(next.iter().copied());
        for x in &mut next {
            *x /= total;
        }
        let diff = 0.5 * tv_norm_diff(&next, &v)?;
        v = next;
        last = diff;
        history.push_back(diff);
        if history.len() > WINDOW {
            history.pop_front();
        }
        let rate = if history.len() == WINDOW && history[0] > 0.0 {
            (diff / history[0]).powf(1.0 / (WINDOW - 1) as f64)
        } else {
            f64::NAN
        };
        let done = diff <= floor
            || (rate < 1.0 && diff < tol && diff * rate / (1.0 - rate) < tol);
        if done {
            let m = ProbDist::from_weights(v.iter().map(|x| x.max(0.0)).collect())?;
            let lambda_m = exit_rate(gen, &m);
            return Ok(QsdResult {
                balance_residual: balance_residual(gen, &m, lambda_m),
                m,
                lambda_m,
                method: QsdMethod::SpectralOracle,
                iterations: iter,
            });
        }
    }
    Err(ReturnMapError::NotConverged {
        iterations: ORACLE_MAX_ITER,
        residual: last,
        trace: None,
    })
}

/// `U = Σ_k q_{k0} / (q_k E_k τ_{k,0})`, with `E_k τ_{k,0}` the return time.
pub fn u_general(gen: &Generator) -> Result<f64, ReturnMapError> {
    let n = gen.n_states();
    let mut acc = NeumaierSum::new();
    for k in 1..=n {
        let q0 = gen.absorption_rate(k);
        if q0 > 0.0 {
            let a = StateSet::new(n, &[k, 0])?;
            let e = crate::ctmc::mean_hitting_time_from(gen, &a, k)?;
            acc.add(q0 / (gen.exit_rate(k) * e));
        }
    }
    Ok(acc.value())
}

/// Solves `(Q^μ h)(j) = f(j) - π^μ(f)` with `h(gauge) = 0`.
///
/// With `g = f - π^μ(f)` and `y = (-Q_C)^{-1} g`, `μ(y)` vanishes, so
/// `h = y(gauge) 1 - y` solves the equation.
pub fn stein_solve(
    gen: &Generator,
    mu: &ProbDist,
    f: &[f64],
    gauge: usize,
) -> Result<SteinSolution, ReturnMapError> {
    check_dims(gen, mu.len())?;
    check_dims(gen, f.len())?;
    gen.check_state(gauge)?;
    if f.iter().any(|x| !x.is_finite()) {
        return Err(CtmcError::InvalidDistribution("test function must be finite".into()).into());
    }
    let map = ReturnMap::new(gen)?;
    let pi = map.apply(mu)?;
    let pi_f = pi.expect(f)?;
    let g: Vec<f64> = f.iter().map(|x| x - pi_f).collect();
    let scale = g.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    if scale == 0.0 {
        return Ok(SteinSolution {
            f: f.to_vec(),
            h: vec![0.0; f.len()],
            pi_f,
            gauge,
            residual: 0.0,
            dynkin: 0.0,
        });
    }
    let y = map.solve_right(&g)?;
    let c = y[gauge - 1];
    let h: Vec<f64> = y.iter().map(|v| c - v).collect();

    let qh = gen.apply(&h, mu.expect(&h)?)?;
    let h_norm = h.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let denom = 2.0 * gen.max_exit_rate() * h_norm + scale;
    let residual = qh
        .iter()
        .zip(&g)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / denom;
    let dynkin = pi.expect(&qh)?.abs() / denom;
    if residual > STEIN_RESIDUAL_TOL {
        return Err(ReturnMapError::SteinCheck(format!("relative residual {residual:e}")));
    }
    if dynkin > DYNKIN_TOL {
        return Err(ReturnMapError::SteinCheck(format!("Dynkin defect {dynkin:e}")));
    }
    Ok(SteinSolution {
        f: f.to_vec(),
        h,
        pi_f,
        gauge,
        residual,
        dynkin,
    })
}

/// Checks `‖π^ν - π^μ‖ <= (2UT/p) ‖ν - μ‖` in the L1 norm.
pub fn check_contraction(
    gen: &Generator,
    mu: &ProbDist,
    nu: &ProbDist,
    report: &BoundsReport,
) -> Result<ContractionCheck, ReturnMapError> {
    check_dims(gen, mu.len())?;
    check_dims(gen, nu.len())?;
    let map = ReturnMap::new(gen)?;
    check_contraction_with(&map, mu, nu, report)
}

pub fn check_contraction_with(
    map: &ReturnMap<'_>,
    mu: &ProbDist,
    nu: &ProbDist,
    report: &BoundsReport,
) -> Result<ContractionCheck, ReturnMapError> {
    let pi_mu = map.apply(mu)?;
    let pi_nu = map.apply(nu)?;
    let lhs = tv_norm_diff(pi_nu.masses(), pi_mu.masses())?;
    let input = tv_norm_diff(nu.masses(), mu.masses())?;
    let rhs = report.contraction * input;
    let sharper_rhs = 2.0 * exit_rate(map.generator(), &pi_mu) * report.t / report.p * input;
    Ok(ContractionCheck {
        lhs,
        rhs,
        sharper_rhs,
        holds: lhs <= rhs + 1e-10,
    })
}

/// Certificate for an arbitrary generator anchored at `s`: `p` is the
/// smallest probability of reaching `s` before absorption, `T` the largest
/// mean time to `{s, 0}` (reported as both `T1` and `T2`).
pub fn general_certificate(gen: &Generator, s: usize) -> Result<BoundsReport, ReturnMapError> {
    let n = gen.n_states();
    gen.check_state(s)?;
    let r = hit_probability(gen, &HittingSpec::new(n, &[s], &[0])?)?;
    let p = r.iter().copied().fold(1.0, f64::min);
    let e = mean_hitting_time(gen, &StateSet::new(n, &[s, 0])?)?;
    let t = e.iter().copied().fold(0.0, f64::max);
    let u = u_general(gen)?;
    let q_s = gen.exit_rate(s);
    let contraction = 2.0 * u * t / p;
    let certificate_valid =
        contraction < 1.0 - crate::bd_models::CONTRACTION_MARGIN && contraction.is_finite();
    Ok(BoundsReport {
        s,
        s_flag: None::<AnchorFlag>,
        p,
        t1: t,
        t2: t,
        t,
        u,
        q_s,
        b: t * q_s / p,
        contraction,
        certificate_valid,
        reason: (!certificate_valid).then(|| format!("2UT/p = {contraction} is not below 1")),
    })
}

/// Two-column `state probability` export with `#` header lines.
pub fn write_qsd(result: &QsdResult) -> String {
    let mut out = format!(
        "# lambda_m={}\n# method={}\n# residual={}\n",
        format_g(result.lambda_m, 12),
        result.method.name(),
        format_g(result.balance_residual, 12)
    );
    for (k, &p) in result.m.masses().iter().enumerate() {
        out.push_str(&format!("{} {}\n", k + 1, format_g(p, 12)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bd_models::{make_logistic, BirthDeathModel, LogisticParams, Truncation};
    use crate::ctmc::{parse_distribution, validate_generator};
    use proptest::prelude::*;

    fn toy() -> Generator {
        validate_generator([(1, 0, 1.0), (1, 2, 1.0), (2, 1, 2.0)], 2).unwrap()
    }

    fn logistic(area: f64, n: usize) -> BirthDeathModel {
        make_logistic(&LogisticParams {
            b: 2.0,
            d: 1.0,
            e: 1.0,
            area,
            n,
            hard_truncation: true,
        })
        .unwrap()
    }

    // roots of λ² - 4λ + 2: λ = 2 - √2, m ∝ (√2, 1)
    fn toy_qsd() -> (f64, [f64; 2]) {
        let r2 = 2f64.sqrt();
        (2.0 - r2, [r2 / (1.0 + r2), 1.0 / (1.0 + r2)])
    }

    #[test]
    fn pi_mu_toy() {
        let g = toy();
        let p = pi_mu(&g, &ProbDist::delta(2, 1).unwrap()).unwrap();
        assert!((p.prob(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.prob(2) - 1.0 / 3.0).abs() < 1e-15);
        let p = pi_mu(&g, &ProbDist::delta(2, 2).unwrap()).unwrap();
        assert!((p.prob(1) - 0.5).abs() < 1e-15);
        assert!(pi_mu(&g, &ProbDist::uniform(3)).is_err());
    }

    #[test]
    fn iteration_and_oracle_on_toy() {
        let g = toy();
        let (lambda, m) = toy_qsd();
        let (res, trace) =
            iterate_return_map(&g, &ProbDist::delta(2, 1).unwrap(), 1e-12, 100).unwrap();
        assert!(trace.converged);
        assert!((res.lambda_m - lambda).abs() < 1e-11);
        assert!((res.m.prob(1) - m[0]).abs() < 1e-11);
        assert!(res.balance_residual < 1e-9);
        assert_eq!(trace.iterates.len(), trace.residuals.len() + 1);

        let or = qsd_spectral_oracle(&g, default_oracle_step(&g), 1e-12).unwrap();
        assert!((or.lambda_m - lambda).abs() < 1e-11);
        assert!((or.m.prob(2) - m[1]).abs() < 1e-11);
        assert_eq!(or.method, QsdMethod::SpectralOracle);

        let exact = ProbDist::new(m.to_vec()).unwrap();
        let (res, _) = iterate_return_map(&g, &exact, 1e-12, 100).unwrap();
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn oracle_three_state_flat_chain() {
        // reference from a dense eigen-decomposition of
        // Q_C = [[-2, 1, 0], [1, -2, 1], [0, 1, -1]]
        let g = validate_generator(
            [(1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 3, 1.0), (3, 2, 1.0)],
            3,
        )
        .unwrap();
        let or = qsd_spectral_oracle(&g, default_oracle_step(&g), 1e-13).unwrap();
        let expected = [0.19806226419516174, 0.35689586789220934, 0.4450418679126289];
        for (a, b) in or.m.masses().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
        assert!((or.lambda_m - 0.19806226419516185).abs() < 1e-11);
        let (it, _) = iterate_return_map(&g, &ProbDist::uniform(3), 1e-14, 1000).unwrap();
        assert!(tv_distance(&it.m, &or.m).unwrap() < 1e-10);
    }

    #[test]
    fn oracle_rejects_bad_input() {
        let g = toy();
        assert!(matches!(
            qsd_spectral_oracle(&g, 0.5, 1e-12),
            Err(ReturnMapError::StepTooLarge { .. })
        ));
        // state 2 never returns to 1
        let cut = validate_generator([(1, 0, 1.0), (1, 2, 1.0), (2, 0, 1.0)], 2).unwrap();
        assert!(matches!(
            qsd_spectral_oracle(&cut, 0.1, 1e-12),
            Err(ReturnMapError::Ctmc(CtmcError::SingularSystem(_)))
        ));
    }

    #[test]
    fn not_converged_keeps_trace() {
        let g = logistic(20.0, 200).to_generator();
        let err = iterate_return_map(&g, &ProbDist::delta(200, 1).unwrap(), 1e-300, 3)
            .unwrap_err();
        match err {
            ReturnMapError::NotConverged { iterations, trace, .. } => {
                assert_eq!(iterations, 3);
                assert_eq!(trace.unwrap().iterates.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cancellation() {
        let g = toy();
        let token = CancelToken::new();
        token.cancel();
        assert_eq!(
            iterate_return_map_with_cancel(&g, &ProbDist::uniform(2), 1e-12, 10, Some(&token))
                .unwrap_err(),
            ReturnMapError::Cancelled
        );
    }

    #[test]
    fn exit_rate_examples() {
        let g = toy();
        assert_eq!(exit_rate(&g, &ProbDist::delta(2, 1).unwrap()), 1.0);
        assert_eq!(exit_rate(&g, &ProbDist::delta(2, 2).unwrap()), 0.0);
    }

    #[test]
    fn u_general_toy() {
        assert!((u_general(&toy()).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // a longer excursion away from the exit state lowers U
        let mut prev = f64::INFINITY;
        for slow in [1.0, 0.1, 0.01] {
            let g = validate_generator([(1, 0, 1.0), (1, 2, 1.0), (2, 1, slow)], 2).unwrap();
            let u = u_general(&g).unwrap();
            assert!(u < prev);
            prev = u;
        }
    }

    #[test]
    fn stein_examples() {
        let g = toy();
        let mu = ProbDist::delta(2, 1).unwrap();
        let sol = stein_solve(&g, &mu, &[3.0, 3.0], 1).unwrap();
        assert_eq!(sol.h, vec![0.0, 0.0]);
        assert_eq!(sol.pi_f, 3.0);

        // f = (1, 0), π = (2/3, 1/3), g = (1/3, -2/3); returns to 1 are silent,
        // so h(2) - h(1) = g(1) / q_12 = 1/3
        let sol = stein_solve(&g, &mu, &[1.0, 0.0], 1).unwrap();
        assert!((sol.pi_f - 2.0 / 3.0).abs() < 1e-15);
        assert!(sol.h[0].abs() < 1e-15);
        assert!((sol.h[1] - 1.0 / 3.0).abs() < 1e-14);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn contraction_identity_and_toy() {
        let m = logistic(20.0, 200);
        let g = m.to_generator();
        let report = m.certificate();
        let mu = ProbDist::uniform(200);
        let c = check_contraction(&g, &mu, &mu, &report).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.rhs, 0.0);
        assert!(c.holds);

        let toy_m =
            BirthDeathModel::new(vec![1.0, 0.0], vec![1.0, 2.0], Truncation::ExactFinite).unwrap();
        let r = toy_m.certificate();
        let c = check_contraction(
            &toy(),
            &ProbDist::delta(2, 1).unwrap(),
            &ProbDist::delta(2, 2).unwrap(),
            &r,
        )
        .unwrap();
        assert!(!r.certificate_valid);
        assert!(c.lhs > 0.0);
    }

    #[test]
    fn logistic_iteration_matches_oracle() {
        let m = logistic(20.0, 200);
        let g = m.to_generator();
        let (it, trace) =
            iterate_return_map(&g, &ProbDist::delta(200, 1).unwrap(), 1e-12, 2000).unwrap();
        let or = qsd_spectral_oracle(&g, default_oracle_step(&g), 1e-12).unwrap();
        assert!(tv_distance(&it.m, &or.m).unwrap() <= 1e-10);
        let report = m.certificate();
        assert!(trace.contraction_observed <= report.contraction + 0.05);
        assert!(it.lambda_m <= report.u);
        assert!(it.balance_residual < 1e-9);
    }

    #[test]
    fn general_certificate_matches_birth_death_on_toy() {
        let r = general_certificate(&toy(), 1).unwrap();
        assert_eq!(r.p, 1.0);
        assert!((r.t - 0.75).abs() < 1e-15);
        assert!((r.u - 2.0 / 3.0).abs() < 1e-15);
        assert!(!r.certificate_valid);
    }

    #[test]
    fn export_format() {
        let g = toy();
        let (res, _) =
            iterate_return_map(&g, &ProbDist::delta(2, 1).unwrap(), 1e-12, 100).unwrap();
        let text = write_qsd(&res);
        assert!(text.starts_with("# lambda_m=0.585786437627\n# method=return-map-iteration\n"));
        let back = parse_distribution(&text, 2).unwrap();
        assert!(tv_distance(&back, &res.m).unwrap() < 1e-11);
    }

    fn random_bd() -> impl Strategy<Value = BirthDeathModel> {
        (2usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(0.1f64..4.0, n),
                prop::collection::vec(0.1f64..4.0, n),
            )
                .prop_map(move |(mut b, d)| {
                    b[n - 1] = 0.0;
                    BirthDeathModel::new(b, d, Truncation::ExactFinite).unwrap()
                })
        })
    }

    fn random_weights(n: usize) -> impl Strategy<Value = ProbDist> {
        prop::collection::vec(0.0f64..1.0, n)
            .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-3)
            .prop_map(|w| ProbDist::from_weights(w).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pi_mu_is_stationary_for_returned_chain(
            (m, mu) in random_bd().prop_flat_map(|m| {
                let n = m.n_states();
                (Just(m), random_weights(n))
            })
        ) {
            let g = m.to_generator();
            let pi = pi_mu(&g, &mu).unwrap();
            let rg = crate::ctmc::return_generator(&g, &mu).unwrap();
            // π Q^μ = 0 on every coordinate
            let n = g.n_states();
            let mut flow = vec![0.0; n];
            for i in 1..=n {
                flow[i - 1] -= pi.prob(i) * rg.exit_rate(i);
                for t in rg.row(i) {
                    flow[t.target - 1] += pi.prob(i) * t.rate;
                }
            }
            for (j, f) in flow.iter().enumerate() {
                prop_assert!(f.abs() < 1e-10 * g.max_exit_rate(), "state {}: {f}", j + 1);
            }
        }

        #[test]
        fn pi_mu_is_time_scale_free(m in random_bd(), c in 0.01f64..100.0) {
            let g = m.to_generator();
            let scaled = validate_generator(g.triples().map(|(i, j, r)| (i, j, c * r)), g.n_states())
                .unwrap();
            let mu = ProbDist::uniform(g.n_states());
            let a = pi_mu(&g, &mu).unwrap();
            let b = pi_mu(&scaled, &mu).unwrap();
            prop_assert!(tv_distance(&a, &b).unwrap() < 1e-12);
        }

        #[test]
        fn u_general_matches_birth_death_formula(m in random_bd()) {
            let u = u_general(&m.to_generator()).unwrap();
            let exact = m.u_exact().unwrap();
            prop_assert!((u - exact).abs() <= 1e-8 * exact);
        }

        #[test]
        fn stein_solutions_verify(m in random_bd(), f in prop::collection::vec(-1.0f64..1.0, 40)) {
            let g = m.to_generator();
            let n = g.n_states();
            let sol = stein_solve(&g, &ProbDist::uniform(n), &f[..n], 1).unwrap();
            prop_assert!(sol.h[0] == 0.0);
            prop_assert!(sol.residual < 1e-8 && sol.dynkin < 1e-9);
        }
    }
}
