//! Absorbing continuous-time Markov chains on a finite transient class.
//!
//! States are labelled `0..=n`: label `0` is the cemetery and `1..=n` form
//! the transient class `C`. Vectors over `C` are stored with label `j` at
//! index `j - 1`.

mod hitting;
mod io;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::numeric::compensated_sum;

pub use hitting::{hit_probability, mean_hitting_time, mean_hitting_time_from};
pub use io::{parse_distribution, parse_generator, write_generator};

/// Absolute tolerance on the total mass of a probability vector.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtmcError {
    #[error("negative rate {rate} on transition {from} -> {to}")]
    NegativeRate { from: usize, to: usize, rate: f64 },
    #[error("non-finite rate on transition {from} -> {to}")]
    NonFiniteRate { from: usize, to: usize },
    #[error("state {0} has zero exit rate")]
    ZeroExitRate(usize),
    #[error("no transient state has a positive absorption rate")]
    NoAbsorption,
    #[error("state index {index} out of range 0..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self transition on state {0}")]
    SelfTransition(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("target set is empty")]
    EmptyTargetSet,
    #[error("state {0} is in both the target and the avoid set")]
    OverlappingSets(usize),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("mean hitting time from state {start} is infinite")]
    Divergent { start: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl From<LinalgError> for CtmcError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { index } => {
                CtmcError::SingularSystem(format!("zero pivot at unknown {index}"))
            }
            LinalgError::DimensionMismatch { expected, found } => {
                CtmcError::DimensionMismatch { expected, found }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub target: usize,
    pub rate: f64,
}

/// Sparse rate matrix of a chain on `C ∪ {0}`; row `i` lists the jumps out
/// of transient state `i`, sorted by target. State 0 has no outgoing rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n: usize,
    rows: Vec<Vec<Transition>>,
    exit: Vec<f64>,
    absorb: Vec<f64>,
}

impl Generator {
    /// Builds without the absorption requirement. Rows must already be
    /// sorted, merged, positive and free of self transitions.
    pub(crate) fn from_rows(n: usize, rows: Vec<Vec<Transition>>) -> Self {
        let exit = rows
            .iter()
            .map(|r| compensated_sum(r.iter().map(|t| t.rate)))
            .collect();
        let absorb = rows
            .iter()
            .map(|r| {
                r.first()
                    .filter(|t| t.target == 0)
                    .map_or(0.0, |t| t.rate)
            })
            .collect();
        Self {
            n,
            rows,
            exit,
            absorb,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    /// Jumps out of transient state `i` (label, `1..=n`).
    pub fn row(&self, i: usize) -> &[Transition] {
        &self.rows[i - 1]
    }

    /// `q_i`, the total rate of leaving `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i - 1]
    }

    /// `q_{i0}`.
    pub fn absorption_rate(&self, i: usize) -> f64 {
        self.absorb[i - 1]
    }

    pub fn exit_rates(&self) -> &[f64] {
        &self.exit
    }

    pub fn absorption_rates(&self) -> &[f64] {
        &self.absorb
    }

    pub fn is_absorbing(&self) -> bool {
        self.absorb.iter().any(|&r| r > 0.0)
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }

    /// Every jump moves to a neighbouring label (or to 0 from state 1).
    pub fn is_birth_death(&self) -> bool {
        self.rows.iter().enumerate().all(|(k, row)| {
            let i = k + 1;
            row.iter()
                .all(|t| t.target + 1 == i || t.target == i + 1)
        })
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// All `(i, j, rate)` triples in row order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(k, row)| row.iter().map(move |t| (k + 1, t.target, t.rate)))
    }

    /// `(Q h)(i) = Σ_j q_ij (h(j) - h(i))` for a function on `C`, with the
    /// value `h0` at the cemetery.
    pub fn apply(&self, h: &[f64], h0: f64) -> Result<Vec<f64>, CtmcError> {
        check_len(self.n, h.len())?;
        Ok(self
            .rows
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let hk = h[k];
                compensated_sum(row.iter().map(|t| {
                    let target = if t.target == 0 { h0 } else { h[t.target - 1] };
                    t.rate * (target - hk)
                }))
            })
            .collect())
    }

    /// Checks that `state` is a transient label.
    pub fn check_state(&self, state: usize) -> Result<(), CtmcError> {
        if state == 0 || state > self.n {
            return Err(CtmcError::IndexOutOfRange {
                index: state,
                n: self.n,
            });
        }
        Ok(())
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), CtmcError> {
    if expected != found {
        return Err(CtmcError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Builds a [`Generator`] from `(i, j, rate)` triples with `i ∈ 1..=n` and
/// `j ∈ 0..=n`. Repeated triples are summed; zero rates are dropped.
pub fn validate_generator<I>(raw: I, n: usize) -> Result<Generator, CtmcError>
where
    I: IntoIterator<Item = (usize, usize, f64)>,
{
    let mut rows: Vec<Vec<Transition>> = vec![Vec::new(); n];
    for (i, j, rate) in raw {
        if i == 0 || i > n {
            return Err(CtmcError::IndexOutOfRange { index: i, n });
        }
        if j > n {
            return Err(CtmcError::IndexOutOfRange { index: j, n });
        }
        if i == j {
            return Err(CtmcError::SelfTransition(i));
        }
        if !rate.is_finite() {
            return Err(CtmcError::NonFiniteRate { from: i, to: j });
        }
        if rate < 0.0 {
            return Err(CtmcError::NegativeRate {
                from: i,
                to: j,
                rate,
            });
        }
        if rate > 0.0 {
            rows[i - 1].push(Transition { target: j, rate });
        }
    }
    for row in &mut rows {
        merge_row(row);
    }
    for (k, row) in rows.iter().enumerate() {
        if row.is_empty() {
            return Err(CtmcError::ZeroExitRate(k + 1));
        }
    }
    let gen = Generator::from_rows(n, rows);
    if !gen.is_absorbing() {
        return Err(CtmcError::NoAbsorption);
    }
    Ok(gen)
}

fn merge_row(row: &mut Vec<Transition>) {
    row.sort_by_key(|t| t.target);
    let mut merged: Vec<Transition> = Vec::with_capacity(row.len());
    for t in row.drain(..) {
        match merged.last_mut() {
            Some(last) if last.target == t.target => last.rate += t.rate,
            _ => merged.push(t),
        }
    }
    *row = merged;
}

/// Generator of the returned process: `q^μ_ij = q_ij + q_i0 μ_j` on `C`.
/// The term `q_i0 μ_i` is a jump to the current state and is dropped.
pub fn return_generator(gen: &Generator, mu: &ProbDist) -> Result<Generator, CtmcError> {
    let n = gen.n_states();
    check_len(n, mu.len())?;
    let rows = (1..=n)
        .map(|i| {
            let q0 = gen.absorption_rate(i);
            let mut dense_add = Vec::new();
            if q0 > 0.0 {
                for (k, &m) in mu.masses().iter().enumerate() {
                    let j = k + 1;
                    if j != i && m > 0.0 {
                        dense_add.push(Transition {
                            target: j,
                            rate: q0 * m,
                        });
                    }
                }
            }
            let mut row: Vec<Transition> = gen
                .row(i)
                .iter()
                .filter(|t| t.target != 0)
                .copied()
                .chain(dense_add)
                .collect();
            merge_row(&mut row);
            row
        })
        .collect();
    Ok(Generator::from_rows(n, rows))
}

/// Anything with a vector of masses that total one.
pub trait Measure {
    fn masses(&self) -> &[f64];
}

/// Probability vector on `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    mass: Vec<f64>,
}

impl ProbDist {
    /// Validates entries `>= 0` with total within [`PROB_TOL`] of one, then
    /// renormalizes.
    pub fn new(mass: Vec<f64>) -> Result<Self, CtmcError> {
        if mass.is_empty() {
            return Err(CtmcError::InvalidDistribution("empty vector".into()));
        }
        let mass = check_masses(mass)?;
        Ok(Self { mass })
    }

    /// Normalizes nonnegative weights; fails on an all-zero or non-finite input.
    pub fn from_weights(mut w: Vec<f64>) -> Result<Self, CtmcError> {
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(CtmcError::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total = compensated_sum(w.iter().copied());
        if !(total > 0.0) {
            return Err(CtmcError::InvalidDistribution("zero total weight".into()));
        }
        for x in &mut w {
            *x /= total;
        }
        Ok(Self { mass: w })
    }

    /// Point mass on transient label `k`.
    pub fn delta(n: usize, k: usize) -> Result<Self, CtmcError> {
        if k == 0 || k > n {
            return Err(CtmcError::IndexOutOfRange { index: k, n });
        }
        let mut mass = vec![0.0; n];
        mass[k - 1] = 1.0;
        Ok(Self { mass })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            mass: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Mass at transient label `j`.
    pub fn prob(&self, j: usize) -> f64 {
        self.mass[j - 1]
    }

    /// `Σ_j mass(j) f(j)`.
    pub fn expect(&self, f: &[f64]) -> Result<f64, CtmcError> {
        check_len(self.len(), f.len())?;
        Ok(compensated_sum(self.mass.iter().zip(f).map(|(p, v)| p * v)))
    }

    /// Label carrying the most mass (lowest label on ties).
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (k, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = k;
            }
        }
        best + 1
    }

    /// Extends by a zero mass at the cemetery.
    pub fn extend_by_zero(&self) -> SubProbDist {
        let mut full = Vec::with_capacity(self.len() + 1);
        full.push(0.0);
        full.extend_from_slice(&self.mass);
        SubProbDist { full }
    }
}

impl Measure for ProbDist {
    fn masses(&self) -> &[f64] {
        &self.mass
    }
}

/// Probability vector on `C ∪ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubProbDist {
    full: Vec<f64>,
}

impl SubProbDist {
    pub fn new(mass0: f64, mass: Vec<f64>) -> Result<Self, CtmcError> {
        let mut full = Vec::with_capacity(mass.len() + 1);
        full.push(mass0);
        full.extend(mass);
        let full = check_masses(full)?;
        Ok(Self { full })
    }

    pub fn mass0(&self) -> f64 {
        self.full[0]
    }

    /// Masses on `C` (label `j` at index `j - 1`).
    pub fn mass(&self) -> &[f64] {
        &self.full[1..]
    }

    pub fn n_states(&self) -> usize {
        self.full.len() - 1
    }
}

impl Measure for SubProbDist {
    fn masses(&self) -> &[f64] {
        &self.full
    }
}

fn check_masses(mut mass: Vec<f64>) -> Result<Vec<f64>, CtmcError> {
    for &m in &mass {
        if !m.is_finite() || m < -PROB_TOL {
            return Err(CtmcError::InvalidDistribution(format!(
                "entry {m} is negative or not finite"
            )));
        }
    }
    for m in &mut mass {
        *m = m.max(0.0);
    }
    let total = compensated_sum(mass.iter().copied());
    if (total - 1.0).abs() > PROB_TOL {
        return Err(CtmcError::InvalidDistribution(format!(
            "total mass {total} differs from one"
        )));
    }
    for m in &mut mass {
        *m /= total;
    }
    Ok(mass)
}

/// `½ Σ_i |f_i - g_i|`, including the cemetery coordinate for
/// [`SubProbDist`].
pub fn tv_distance<M: Measure>(f: &M, g: &M) -> Result<f64, CtmcError> {
    Ok((0.5 * tv_norm_diff(f.masses(), g.masses())?).clamp(0.0, 1.0))
}

/// `Σ_i |f_i - g_i|`, the total variation norm of the signed difference.
pub fn tv_norm_diff(f: &[f64], g: &[f64]) -> Result<f64, CtmcError> {
    check_len(f.len(), g.len())?;
    Ok(compensated_sum(f.iter().zip(g).map(|(a, b)| (a - b).abs())))
}

/// A subset of `C ∪ {0}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSet {
    members: Vec<bool>,
}

impl StateSet {
    pub fn new(n: usize, states: &[usize]) -> Result<Self, CtmcError> {
        let mut members = vec![false; n + 1];
        for &s in states {
            if s > n {
                return Err(CtmcError::IndexOutOfRange { index: s, n });
            }
            members[s] = true;
        }
        Ok(Self { members })
    }

    /// `C ∪ {0}`.
    pub fn all(n: usize) -> Self {
        Self {
            members: vec![true; n + 1],
        }
    }

    #[inline]
    pub fn contains(&self, state: usize) -> bool {
        self.members.get(state).copied().unwrap_or(false)
    }

    pub fn n_states(&self) -> usize {
        self.members.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&b| b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }
}

/// Event "hit `target` before `avoid`".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HittingSpec {
    target: StateSet,
    avoid: StateSet,
}

impl HittingSpec {
    pub fn new(n: usize, target: &[usize], avoid: &[usize]) -> Result<Self, CtmcError> {
        let target = StateSet::new(n, target)?;
        let avoid = StateSet::new(n, avoid)?;
        Self::from_sets(target, avoid)
    }

    pub fn from_sets(target: StateSet, avoid: StateSet) -> Result<Self, CtmcError> {
        check_len(target.n_states(), avoid.n_states())?;
        if target.is_empty() {
            return Err(CtmcError::EmptyTargetSet);
        }
        if let Some(s) = target.iter().find(|&s| avoid.contains(s)) {
            return Err(CtmcError::OverlappingSets(s));
        }
        Ok(Self { target, avoid })
    }

    pub fn target(&self) -> &StateSet {
        &self.target
    }

    pub fn avoid(&self) -> &StateSet {
        &self.avoid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn toy() -> Generator {
        validate_generator([(1, 0, 1.0), (1, 2, 1.0), (2, 1, 2.0)], 2).unwrap()
    }

    #[test]
    fn toy_generator_exit_rates() {
        let g = toy();
        assert_eq!(g.exit_rate(1), 2.0);
        assert_eq!(g.exit_rate(2), 2.0);
        assert_eq!(g.absorption_rate(1), 1.0);
        assert_eq!(g.absorption_rate(2), 0.0);
        assert!(g.is_birth_death());
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            validate_generator([(1, 2, -1.0)], 2),
            Err(CtmcError::NegativeRate { .. })
        ));
        assert_eq!(
            validate_generator([(1, 2, 1.0), (2, 1, 1.0)], 2),
            Err(CtmcError::NoAbsorption)
        );
        assert_eq!(
            validate_generator([(1, 0, 1.0)], 2),
            Err(CtmcError::ZeroExitRate(2))
        );
        assert_eq!(
            validate_generator([(1, 3, 1.0)], 2),
            Err(CtmcError::IndexOutOfRange { index: 3, n: 2 })
        );
        assert_eq!(
            validate_generator([(0, 1, 1.0)], 2),
            Err(CtmcError::IndexOutOfRange { index: 0, n: 2 })
        );
        assert_eq!(
            validate_generator([(1, 1, 1.0)], 2),
            Err(CtmcError::SelfTransition(1))
        );
        assert!(matches!(
            validate_generator([(1, 0, f64::NAN)], 1),
            Err(CtmcError::NonFiniteRate { .. })
        ));
    }

    #[test]
    fn duplicate_triples_are_merged() {
        let g = validate_generator([(1, 0, 0.5), (1, 0, 0.5), (1, 2, 1.0), (2, 1, 2.0)], 2)
            .unwrap();
        assert_eq!(g, toy());
    }

    #[test]
    fn tv_examples() {
        let a = ProbDist::new(vec![1.0, 0.0]).unwrap();
        let b = ProbDist::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let f = ProbDist::new(vec![0.6, 0.4]).unwrap();
        let g = ProbDist::new(vec![0.5, 0.5]).unwrap();
        assert!((tv_distance(&f, &g).unwrap() - 0.1).abs() < 1e-15);
        let c = ProbDist::uniform(3);
        assert!(matches!(
            tv_distance(&a, &c),
            Err(CtmcError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tv_counts_cemetery_mass() {
        let f = SubProbDist::new(0.5, vec![0.5, 0.0]).unwrap();
        let g = SubProbDist::new(0.0, vec![0.5, 0.5]).unwrap();
        assert!((tv_distance(&f, &g).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prob_dist_tolerance() {
        let p = ProbDist::new(vec![0.5, 0.5 + 5e-13]).unwrap();
        assert!((p.masses().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(ProbDist::new(vec![0.5, 0.6]).is_err());
        assert!(ProbDist::new(vec![1.1, -0.1]).is_err());
        assert!(ProbDist::delta(2, 3).is_err());
    }

    #[test]
    fn return_generator_examples() {
        let g = toy();
        let r1 = return_generator(&g, &ProbDist::delta(2, 1).unwrap()).unwrap();
        assert_eq!(r1.row(1), &[Transition { target: 2, rate: 1.0 }]);
        assert_eq!(r1.exit_rate(1), 1.0);
        assert_eq!(r1.row(2), &[Transition { target: 1, rate: 2.0 }]);
        assert!(!r1.is_absorbing());

        let r2 = return_generator(&g, &ProbDist::delta(2, 2).unwrap()).unwrap();
        assert_eq!(r2.row(1), &[Transition { target: 2, rate: 2.0 }]);
        assert_eq!(r2.row(2), g.row(2));
    }

    #[test]
    fn hitting_spec_validation() {
        assert_eq!(HittingSpec::new(3, &[], &[0]), Err(CtmcError::EmptyTargetSet));
        assert_eq!(
            HittingSpec::new(3, &[2, 0], &[0]),
            Err(CtmcError::OverlappingSets(0))
        );
    }

    fn dist(n: usize) -> impl Strategy<Value = ProbDist> {
        proptest::collection::vec(0.0f64..1.0, n)
            .prop_filter("nonzero", |w| w.iter().sum::<f64>() > 1e-6)
            .prop_map(|w| ProbDist::from_weights(w).unwrap())
    }

    fn random_generator() -> impl Strategy<Value = Generator> {
        (2usize..8).prop_flat_map(|n| {
            proptest::collection::vec((1..=n, 0..=n, 0.01f64..5.0), 1..30).prop_map(
                move |mut triples| {
                    triples.retain(|&(i, j, _)| i != j);
                    for i in 1..=n {
                        triples.push((i, if i == n { 1 } else { i + 1 }, 0.5));
                    }
                    triples.push((1, 0, 0.3));
                    validate_generator(triples, n).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric((a, b, c) in (2usize..10).prop_flat_map(|n| (dist(n), dist(n), dist(n)))) {
            let ab = tv_distance(&a, &b).unwrap();
            let ba = tv_distance(&b, &a).unwrap();
            let bc = tv_distance(&b, &c).unwrap();
            let ac = tv_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(tv_distance(&a, &a).unwrap() <= 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn return_generator_conserves_rates(g in random_generator(), seed in 0u64..1000) {
            let n = g.n_states();
            let w: Vec<f64> = (0..n).map(|k| ((seed + 7 * k as u64) % 11) as f64 + 0.1).collect();
            let mu = ProbDist::from_weights(w).unwrap();
            let r = return_generator(&g, &mu).unwrap();
            prop_assert!(!r.is_absorbing());
            for i in 1..=n {
                let expected = g.exit_rate(i) - g.absorption_rate(i) * mu.prob(i);
                prop_assert!((r.exit_rate(i) - expected).abs() <= 1e-12 * g.exit_rate(i));
            }
        }
    }
}
