//! Exact event-driven simulation of the absorbed chain `X` and of the
//! returned chain `X^μ`, with Monte-Carlo estimators.
//!
//! Replicates run in parallel, each on its own random stream, and are
//! reduced in replicate order, so estimates are reproducible for any thread
//! count.

mod eta;
mod rng;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bd_models::BoundsReport;
use crate::ctmc::{CtmcError, Generator, Measure, ProbDist, StateSet, SubProbDist};
use crate::numeric::{format_g, pairwise_sum, NeumaierSum};

pub use eta::{eta_bound, minimize_eta, EtaInputs};
pub use rng::replicate_rng;

/// Largest share of paths allowed to hit the horizon in a mean-time estimate.
pub const MAX_CENSORED_FRACTION: f64 = 1e-3;

/// Replicates simulated per parallel batch.
const CHUNK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("path reached the horizon t_max = {t_max} before stopping")]
    HorizonExceeded { t_max: f64 },
    #[error("{censored} of {n} paths reached the horizon")]
    TooManyCensored { censored: usize, n: usize },
    #[error("{absorbed} of {n} paths were absorbed before reaching the target")]
    AbsorbedBeforeTarget { absorbed: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: usize,
    pub t_max: f64,
    pub stream_id: u64,
    /// Leading share of `[0, t_max]` excluded from occupation averages.
    pub burn_in: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            replicates: 10_000,
            t_max: 1e6,
            stream_id: 0,
            burn_in: 0.1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.replicates == 0 {
            return Err(SimError::InvalidConfig("replicates must be at least 1".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(SimError::InvalidConfig(format!("t_max = {} must be positive", self.t_max)));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(SimError::InvalidConfig(format!(
                "burn-in fraction {} must lie in [0, 1)",
                self.burn_in
            )));
        }
        Ok(())
    }

    fn rng(&self, replicate: usize) -> ChaCha8Rng {
        replicate_rng(self.seed, self.stream_id, replicate as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    Probability,
    MeanTime,
    TvDistance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Replicates that entered the estimate.
    pub n: usize,
    pub kind: EstimateKind,
    /// Replicates dropped for reaching the horizon.
    pub censored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEnd {
    /// State entered at the stopping time; 0 if the path was absorbed.
    pub hit_state: usize,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub dist: ProbDist,
    /// Standard error of each coordinate across replicates.
    pub std_errors: Vec<f64>,
    pub n: usize,
}

impl Occupation {
    /// Total variation distance to `target`, with standard error
    /// `½ Σ_j se_j`.
    pub fn tv_to(&self, target: &ProbDist) -> Result<SimEstimate, SimError> {
        let value = crate::ctmc::tv_distance(&self.dist, target)?;
        Ok(SimEstimate {
            value,
            std_error: 0.5 * self.std_errors.iter().sum::<f64>(),
            n: self.n,
            kind: EstimateKind::TvDistance,
            censored: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnTimeCheck {
    /// `(r, estimate of E_r τ^μ_s)`.
    pub estimates: Vec<(usize, SimEstimate)>,
    pub max_mean: f64,
    /// `T / p`.
    pub bound: f64,
    pub holds: bool,
}

/// Jump tables for the absorbed chain, optionally with returns drawn from
/// `μ` in place of absorption.
#[derive(Debug, Clone)]
pub struct Sampler {
    exit: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    cum: Vec<f64>,
    returns: Option<Vec<f64>>,
}

impl Sampler {
    pub fn absorbed(gen: &Generator) -> Self {
        let n = gen.n_states();
        let mut offsets = Vec::with_capacity(n + 2);
        let mut targets = Vec::with_capacity(gen.nnz());
        let mut cum = Vec::with_capacity(gen.nnz());
        offsets.push(0);
        offsets.push(0);
        for i in 1..=n {
            let mut acc = 0.0;
            for t in gen.row(i) {
                acc += t.rate;
                targets.push(t.target);
                cum.push(acc);
            }
            // guard the last bucket against rounding in the running sum
            if let Some(last) = cum.last_mut() {
                *last = f64::INFINITY;
            }
            offsets.push(targets.len());
        }
        Self {
            exit: gen.exit_rates().to_vec(),
            offsets,
            targets,
            cum,
            returns: None,
        }
    }

    pub fn returned(gen: &Generator, mu: &ProbDist) -> Result<Self, SimError> {
        if mu.len() != gen.n_states() {
            return Err(CtmcError::DimensionMismatch {
                expected: gen.n_states(),
                found: mu.len(),
            }
            .into());
        }
        let mut s = Self::absorbed(gen);
        let mut acc = 0.0;
        let mut cum: Vec<f64> = mu
            .masses()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = f64::INFINITY;
        }
        s.returns = Some(cum);
        Ok(s)
    }

    pub fn n_states(&self) -> usize {
        self.exit.len()
    }

    fn check_state(&self, k: usize) -> Result<(), SimError> {
        if k == 0 || k > self.n_states() {
            return Err(CtmcError::IndexOutOfRange {
                index: k,
                n: self.n_states(),
            }
            .into());
        }
        Ok(())
    }

    /// One holding time and jump from transient state `i`. Returns the new
    /// state, equal to `i` when a return lands where the path already is.
    #[inline]
    fn step(&self, i: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
        let q = self.exit[i - 1];
        let u: f64 = rng.gen();
        let dt = -(1.0 - u).ln() / q;
        let v: f64 = rng.gen::<f64>() * q;
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        let mut k = lo;
        while k + 1 < hi && self.cum[k] <= v {
            k += 1;
        }
        let mut j = self.targets[k];
        if j == 0 {
            if let Some(ret) = &self.returns {
                let w: f64 = rng.gen();
                j = 1 + ret.partition_point(|&c| c <= w).min(ret.len() - 1);
            }
        }
        (dt, j)
    }

    /// Runs from `start` until the first entry into `stop` after the first
    /// jump. Absorption always ends the path.
    pub fn until(
        &self,
        start: usize,
        stop: &StateSet,
        rng: &mut ChaCha8Rng,
        t_max: f64,
    ) -> Result<PathEnd, SimError> {
        self.check_state(start)?;
        let mut t = 0.0;
        let mut i = start;
        loop {
            let (dt, j) = self.step(i, rng);
            t += dt;
            if t > t_max {
                return Err(SimError::HorizonExceeded { t_max });
            }
            // a silent return is not an entry
            if j == i {
                continue;
            }
            if j == 0 || stop.contains(j) {
                return Ok(PathEnd {
                    hit_state: j,
                    elapsed: t,
                });
            }
            i = j;
        }
    }

    /// State at time `t`, 0 once absorbed.
    pub fn state_at(&self, start: usize, t: f64, rng: &mut ChaCha8Rng) -> usize {
        let mut now = 0.0;
        let mut i = start;
        while i != 0 {
            let (dt, j) = self.step(i, rng);
            now += dt;
            if now > t {
                return i;
            }
            i = j;
        }
        0
    }

    /// Time spent in each state during `[from, to]`.
    fn occupation(&self, start: usize, from: f64, to: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut occ = vec![0.0; self.n_states()];
        let mut now = 0.0;
        let mut i = start;
        while now < to && i != 0 {
            let (dt, j) = self.step(i, rng);
            let end = (now + dt).min(to);
            if end > from {
                occ[i - 1] += end - now.max(from);
            }
            now += dt;
            i = j;
        }
        occ
    }

    fn draw_start(&self, init: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let w: f64 = rng.gen();
        let mut acc = 0.0;
        for (k, p) in init.iter().enumerate() {
            acc += p;
            if w < acc {
                return k + 1;
            }
        }
        init.iter().rposition(|&p| p > 0.0).unwrap_or(0) + 1
    }
}

/// Runs `f(replicate)` for every replicate, in parallel, returning results in
/// replicate order.
fn run_replicates<T: Send>(cfg: &SimConfig, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..cfg.replicates).into_par_iter().map(f).collect()
}

pub fn sample_until(
    gen: &Generator,
    start: usize,
    stop: &StateSet,
    rng: &mut ChaCha8Rng,
    t_max: f64,
) -> Result<PathEnd, SimError> {
    if stop.is_empty() {
        return Err(CtmcError::EmptyTargetSet.into());
    }
    Sampler::absorbed(gen).until(start, stop, rng, t_max)
}

/// Half-width of the Wilson score interval at `z = 1`.
fn wilson_half_width(hits: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let p = hits as f64 / n;
    (p * (1.0 - p) / n + 0.25 / (n * n)).sqrt() / (1.0 + 1.0 / n)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `P_k[τ_s < τ_0]`.
pub fn estimate_hit_prob(
    gen: &Generator,
    k: usize,
    s: usize,
    cfg: &SimConfig,
) -> Result<SimEstimate, SimError> {
    cfg.validate()?;
    gen.check_state(k)?;
    gen.check_state(s)?;
    if k == s {
        return Ok(SimEstimate {
            value: 1.0,
            std_error: 0.0,
            n: 0,
            kind: EstimateKind::Probability,
            censored: 0,
        });
    }
    let sampler = Sampler::absorbed(gen);
    let stop = StateSet::new(gen.n_states(), &[s, 0])?;
    let outcomes = run_replicates(cfg, |r| {
        let mut rng = cfg.rng(r);
        sampler.until(k, &stop, &mut rng, cfg.t_max).ok().map(|e| e.hit_state == s)
    });
    let censored = outcomes.iter().filter(|o| o.is_none()).count();
    let n = outcomes.len() - censored;
    if n == 0 {
        return Err(SimError::TooManyCensored { censored, n: outcomes.len() });
    }
    let hits = outcomes.iter().filter(|o| **o == Some(true)).count();
    Ok(SimEstimate {
        value: hits as f64 / n as f64,
        std_error: wilson_half_width(hits, n),
        n,
        kind: EstimateKind::Probability,
        censored,
    })
}

fn mean_time_estimate(
    cfg: &SimConfig,
    run: impl Fn(&mut ChaCha8Rng) -> Result<PathEnd, SimError> + Sync + Send,
    lost: impl Fn(&PathEnd) -> bool + Sync,
) -> Result<SimEstimate, SimError> {
    let outcomes = run_replicates(cfg, |r| run(&mut cfg.rng(r)).ok());
    let total = outcomes.len();
    let censored = outcomes.iter().filter(|o| o.is_none()).count();
    if censored as f64 > MAX_CENSORED_FRACTION * total as f64 {
        return Err(SimError::TooManyCensored { censored, n: total });
    }
    let ends: Vec<PathEnd> = outcomes.into_iter().flatten().collect();
    let absorbed = ends.iter().filter(|e| lost(e)).count();
    if absorbed > 0 {
        return Err(SimError::AbsorbedBeforeTarget { absorbed, n: total });
    }
    if ends.is_empty() {
        return Err(SimError::TooManyCensored { censored, n: total });
    }
    let times: Vec<f64> = ends.iter().map(|e| e.elapsed).collect();
    let (value, std_error) = mean_and_se(&times);
    Ok(SimEstimate {
        value,
        std_error,
        n: times.len(),
        kind: EstimateKind::MeanTime,
        censored,
    })
}

/// `E_k τ_A` for the absorbed chain.
pub fn estimate_mean_hitting_time(
    gen: &Generator,
    k: usize,
    a: &StateSet,
    cfg: &SimConfig,
) -> Result<SimEstimate, SimError> {
    cfg.validate()?;
    if a.is_empty() {
        return Err(CtmcError::EmptyTargetSet.into());
    }
    let sampler = Sampler::absorbed(gen);
    sampler.check_state(k)?;
    mean_time_estimate(
        cfg,
        |rng| sampler.until(k, a, rng, cfg.t_max),
        |e| e.hit_state == 0 && !a.contains(0),
    )
}

/// Time-weighted occupation of `X^μ` over `[burn_in · t_max, t_max]`, one
/// path per replicate started from `μ`.
pub fn simulate_return_occupation(
    gen: &Generator,
    mu: &ProbDist,
    cfg: &SimConfig,
) -> Result<Occupation, SimError> {
    cfg.validate()?;
    let sampler = Sampler::returned(gen, mu)?;
    let n = gen.n_states();
    let from = cfg.burn_in * cfg.t_max;
    let span = cfg.t_max - from;
    let mut sum = vec![NeumaierSum::new(); n];
    let mut sum_sq = vec![NeumaierSum::new(); n];
    for chunk_start in (0..cfg.replicates).step_by(CHUNK) {
        let chunk_end = (chunk_start + CHUNK).min(cfg.replicates);
        let occ: Vec<Vec<f64>> = (chunk_start..chunk_end)
            .into_par_iter()
            .map(|r| {
                let mut rng = cfg.rng(r);
                let start = sampler.draw_start(mu.masses(), &mut rng);
                sampler.occupation(start, from, cfg.t_max, &mut rng)
            })
            .collect();
        for o in &occ {
            for j in 0..n {
                let x = o[j] / span;
                sum[j].add(x);
                sum_sq[j].add(x * x);
            }
        }
    }
    let r = cfg.replicates as f64;
    let means: Vec<f64> = sum.iter().map(|s| s.value() / r).collect();
    let std_errors = sum_sq
        .iter()
        .zip(&means)
        .map(|(sq, m)| {
            if cfg.replicates < 2 {
                0.0
            } else {
                ((sq.value() / r - m * m).max(0.0) * r / (r - 1.0) / r).sqrt()
            }
        })
        .collect();
    Ok(Occupation {
        dist: ProbDist::from_weights(means)?,
        std_errors,
        n: cfg.replicates,
    })
}

fn law_from_states(n: usize, states: &[usize]) -> Result<SubProbDist, SimError> {
    let mut counts = vec![0usize; n + 1];
    for &s in states {
        counts[s] += 1;
    }
    let total = states.len() as f64;
    let mass: Vec<f64> = counts[1..].iter().map(|&c| c as f64 / total).collect();
    let mass0 = counts[0] as f64 / total;
    Ok(SubProbDist::new(mass0, mass)?)
}

/// Empirical law of `X(t)` on `C ∪ {0}` from `start`.
pub fn estimate_law_at_t(
    gen: &Generator,
    start: usize,
    t: f64,
    cfg: &SimConfig,
) -> Result<SubProbDist, SimError> {
    cfg.validate()?;
    if !(t >= 0.0) || t > cfg.t_max {
        return Err(SimError::InvalidConfig(format!("t = {t} must lie in [0, t_max]")));
    }
    let sampler = Sampler::absorbed(gen);
    sampler.check_state(start)?;
    let states = run_replicates(cfg, |r| sampler.state_at(start, t, &mut cfg.rng(r)));
    law_from_states(gen.n_states(), &states)
}

/// `P[X(t) ∈ C]` with `X(0) ~ init`.
pub fn estimate_survival(
    gen: &Generator,
    init: &ProbDist,
    t: f64,
    cfg: &SimConfig,
) -> Result<SimEstimate, SimError> {
    cfg.validate()?;
    if init.len() != gen.n_states() {
        return Err(CtmcError::DimensionMismatch {
            expected: gen.n_states(),
            found: init.len(),
        }
        .into());
    }
    let sampler = Sampler::absorbed(gen);
    let alive = run_replicates(cfg, |r| {
        let mut rng = cfg.rng(r);
        let start = sampler.draw_start(init.masses(), &mut rng);
        sampler.state_at(start, t, &mut rng) != 0
    });
    let n = alive.len();
    let hits = alive.iter().filter(|&&a| a).count();
    Ok(SimEstimate {
        value: hits as f64 / n as f64,
        std_error: wilson_half_width(hits, n),
        n,
        kind: EstimateKind::Probability,
        censored: 0,
    })
}

/// Estimates `E_r τ^μ_s` under the returned chain for each `r` and compares
/// the largest with `T / p` plus three standard errors.
pub fn check_lemma_s_mean(
    gen: &Generator,
    mu: &ProbDist,
    s: usize,
    starts: &[usize],
    report: &BoundsReport,
    cfg: &SimConfig,
) -> Result<ReturnTimeCheck, SimError> {
    cfg.validate()?;
    let sampler = Sampler::returned(gen, mu)?;
    sampler.check_state(s)?;
    let stop = StateSet::new(gen.n_states(), &[s])?;
    let bound = report.t / report.p;
    let mut estimates = Vec::with_capacity(starts.len());
    let mut holds = true;
    let mut max_mean = 0.0f64;
    for &r in starts {
        sampler.check_state(r)?;
        let est = mean_time_estimate(cfg, |rng| sampler.until(r, &stop, rng, cfg.t_max), |_| false)?;
        holds &= est.value <= bound + 3.0 * est.std_error;
        max_mean = max_mean.max(est.value);
        estimates.push((r, est));
    }
    Ok(ReturnTimeCheck {
        estimates,
        max_mean,
        bound,
        holds,
    })
}

pub const CSV_HEADER: &str = "quantity,start,target,value,std_error,n,seed";

pub fn csv_row(quantity: &str, start: &str, target: &str, est: &SimEstimate, seed: u64) -> String {
    format!(
        "{quantity},{start},{target},{},{},{},{seed}",
        format_g(est.value, 12),
        format_g(est.std_error, 12),
        est.n
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::validate_generator;

    fn toy() -> Generator {
        validate_generator([(1, 0, 1.0), (1, 2, 1.0), (2, 1, 2.0)], 2).unwrap()
    }

    fn flat(n: usize) -> Generator {
        let mut t = Vec::new();
        for i in 1..=n {
            t.push((i, i - 1, 1.0));
            if i < n {
                t.push((i, i + 1, 1.0));
            }
        }
        validate_generator(t, n).unwrap()
    }

    fn cfg(replicates: usize) -> SimConfig {
        SimConfig {
            replicates,
            t_max: 1e6,
            ..SimConfig::default()
        }
    }

    #[test]
    fn holding_time_from_state_two() {
        let g = toy();
        let c = cfg(20_000);
        let a = StateSet::new(2, &[1, 0]).unwrap();
        let est = estimate_mean_hitting_time(&g, 2, &a, &c).unwrap();
        assert!((est.value - 0.5).abs() < 3.0 * est.std_error, "{est:?}");
        let est1 = estimate_mean_hitting_time(&g, 1, &a, &c).unwrap();
        assert!((est1.value - 0.75).abs() < 3.0 * est1.std_error, "{est1:?}");

        let mut rng = replicate_rng(1, 0, 0);
        let end = sample_until(&g, 2, &a, &mut rng, 1e6).unwrap();
        assert_eq!(end.hit_state, 1);
        assert!(end.elapsed > 0.0);
    }

    #[test]
    fn same_seed_same_path() {
        let g = flat(5);
        let stop = StateSet::new(5, &[5, 0]).unwrap();
        let a = sample_until(&g, 2, &stop, &mut replicate_rng(9, 3, 11), 1e6).unwrap();
        let b = sample_until(&g, 2, &stop, &mut replicate_rng(9, 3, 11), 1e6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn horizon_guard() {
        let g = flat(5);
        let stop = StateSet::new(5, &[5]).unwrap();
        // with a tiny horizon the path cannot finish
        let r = sample_until(&g, 1, &stop, &mut replicate_rng(0, 0, 0), 1e-9);
        assert_eq!(r, Err(SimError::HorizonExceeded { t_max: 1e-9 }));
        let c = SimConfig {
            t_max: 1e-9,
            ..cfg(100)
        };
        let a = StateSet::new(5, &[5, 0]).unwrap();
        assert!(matches!(
            estimate_mean_hitting_time(&g, 1, &a, &c),
            Err(SimError::TooManyCensored { .. })
        ));
    }

    #[test]
    fn hit_probabilities() {
        let g = flat(5);
        let c = cfg(20_000);
        let est = estimate_hit_prob(&g, 1, 3, &c).unwrap();
        assert!((est.value - 1.0 / 3.0).abs() < 3.0 * est.std_error, "{est:?}");
        let same = estimate_hit_prob(&g, 3, 3, &c).unwrap();
        assert_eq!((same.value, same.n), (1.0, 0));
        let above = estimate_hit_prob(&g, 5, 3, &c).unwrap();
        assert_eq!(above.value, 1.0);
    }

    #[test]
    fn everything_stop_set_is_one_holding_time() {
        let g = flat(4);
        let all = StateSet::new(4, &[0, 1, 2, 3, 4]).unwrap();
        let est = estimate_mean_hitting_time(&g, 2, &all, &cfg(20_000)).unwrap();
        assert!((est.value - 0.5).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn lost_paths_are_reported() {
        let g = flat(4);
        let a = StateSet::new(4, &[4]).unwrap();
        assert!(matches!(
            estimate_mean_hitting_time(&g, 1, &a, &cfg(200)),
            Err(SimError::AbsorbedBeforeTarget { .. })
        ));
    }

    #[test]
    fn toy_occupation() {
        let g = toy();
        let c = SimConfig {
            replicates: 4,
            t_max: 1e5,
            ..SimConfig::default()
        };
        let occ = simulate_return_occupation(&g, &ProbDist::delta(2, 1).unwrap(), &c).unwrap();
        let exact = ProbDist::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!(occ.tv_to(&exact).unwrap().value <= 0.01);

        let single = validate_generator([(1, 0, 1.0)], 1).unwrap();
        let occ =
            simulate_return_occupation(&single, &ProbDist::delta(1, 1).unwrap(), &cfg(3)).unwrap();
        assert_eq!(occ.dist.masses(), &[1.0]);
    }

    #[test]
    fn law_at_time_limits() {
        let g = flat(4);
        let c = cfg(500);
        let law = estimate_law_at_t(&g, 2, 0.0, &c).unwrap();
        assert_eq!(law.mass(), &[0.0, 1.0, 0.0, 0.0]);
        let late = estimate_law_at_t(&g, 2, 1e4, &c).unwrap();
        assert_eq!(late.mass0(), 1.0);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let g = flat(6);
        let c = cfg(3000);
        let a = StateSet::new(6, &[6, 0]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        estimate_mean_hitting_time(&g, 3, &a, &c).unwrap(),
                        simulate_return_occupation(&g, &ProbDist::uniform(6), &SimConfig {
                            t_max: 50.0,
                            ..c
                        })
                        .unwrap(),
                    )
                })
        };
        let (m1, o1) = run(1);
        let (m3, o3) = run(3);
        assert_eq!(m1.value.to_bits(), m3.value.to_bits());
        assert_eq!(m1.std_error.to_bits(), m3.std_error.to_bits());
        assert_eq!(o1, o3);
    }

    #[test]
    fn csv_layout() {
        let est = SimEstimate {
            value: 0.5,
            std_error: 0.001,
            n: 10,
            kind: EstimateKind::Probability,
            censored: 0,
        };
        assert_eq!(csv_row("hit_prob", "1", "3", &est, 42), "hit_prob,1,3,0.5,0.001,10,42");
        assert_eq!(CSV_HEADER.split(',').count(), 7);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { replicates: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { t_max: 0.0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { burn_in: 1.0, ..SimConfig::default() }.validate().is_err());
    }
}
