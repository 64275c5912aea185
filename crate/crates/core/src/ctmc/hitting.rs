//! Hitting probabilities and mean hitting times by direct linear solves.

use std::collections::VecDeque;

use super::{CtmcError, Generator, HittingSpec, StateSet};
use crate::linalg::RateSystem;

/// Marks every state in `region` (a mask over labels `0..=n`) from which
/// some seed state can be reached along jumps that stay inside `region`.
fn reaches_within(gen: &Generator, region: &[bool], seeds: &[usize]) -> Vec<bool> {
    let n = gen.n_states();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for i in 1..=n {
        if !region[i] {
            continue;
        }
        for t in gen.row(i) {
            if region[t.target] {
                preds[t.target].push(i);
            }
        }
    }
    let mut mark = vec![false; n + 1];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in seeds {
        if !mark[s] {
            mark[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(j) = queue.pop_front() {
        for &i in &preds[j] {
            if !mark[i] {
                mark[i] = true;
                queue.push_back(i);
            }
        }
    }
    mark
}

/// `P_k[hit target before avoid]` for every transient start `k`.
///
/// The cemetery counts as a target only if listed in the target set;
/// otherwise reaching it ends the run as a miss.
pub fn hit_probability(gen: &Generator, spec: &HittingSpec) -> Result<Vec<f64>, CtmcError> {
    let n = gen.n_states();
    if spec.target().n_states() != n {
        return Err(CtmcError::DimensionMismatch {
            expected: n,
            found: spec.target().n_states(),
        });
    }
    let target = spec.target();
    let boundary = |j: usize| {
        if target.contains(j) {
            1.0
        } else {
            0.0
        }
    };
    let mut interior = vec![false; n + 1];
    for (j, slot) in interior.iter_mut().enumerate().skip(1) {
        *slot = !target.contains(j) && !spec.avoid().contains(j);
    }
    let exits: Vec<usize> = (1..=n)
        .filter(|&i| interior[i] && gen.row(i).iter().any(|t| !interior[t.target]))
        .collect();
    let ok = reaches_within(gen, &interior, &exits);
    if let Some(bad) = (1..=n).find(|&i| interior[i] && !ok[i]) {
        return Err(CtmcError::SingularSystem(format!(
            "state {bad} cannot reach the target or avoid set"
        )));
    }

    let (index, labels) = reindex(&interior);
    let mut sys = RateSystem::new(labels.len());
    let mut rhs = vec![0.0; labels.len()];
    for (u, &i) in labels.iter().enumerate() {
        for t in gen.row(i) {
            if interior[t.target] {
                sys.add_rate(u, index[t.target], t.rate);
            } else {
                sys.add_leak(u, t.rate);
                rhs[u] += t.rate * boundary(t.target);
            }
        }
    }
    let sol = sys.factor()?.solve(&rhs)?;
    Ok((1..=n)
        .map(|i| {
            if interior[i] {
                sol[index[i]].clamp(0.0, 1.0)
            } else {
                boundary(i)
            }
        })
        .collect())
}

/// `E_k τ_A` for every transient start `k`.
///
/// A start inside `A` gets its return time: one holding time in `k` followed
/// by the time to enter `A` again, where a jump straight into `A` ends the
/// run. Entries are `f64::INFINITY` for starts that, with positive
/// probability, are absorbed at a cemetery not contained in `A`.
pub fn mean_hitting_time(gen: &Generator, a: &StateSet) -> Result<Vec<f64>, CtmcError> {
    let n = gen.n_states();
    if a.n_states() != n {
        return Err(CtmcError::DimensionMismatch {
            expected: n,
            found: a.n_states(),
        });
    }
    if a.is_empty() {
        return Err(CtmcError::EmptyTargetSet);
    }
    let mut outside = vec![false; n + 1];
    for (j, slot) in outside.iter_mut().enumerate().skip(1) {
        *slot = !a.contains(j);
    }
    // outside states that can be absorbed before entering A
    let lost = if a.contains(0) {
        vec![false; n + 1]
    } else {
        let seeds: Vec<usize> = (1..=n)
            .filter(|&i| outside[i] && gen.absorption_rate(i) > 0.0)
            .collect();
        reaches_within(gen, &outside, &seeds)
    };
    let mut live = vec![false; n + 1];
    for i in 1..=n {
        live[i] = outside[i] && !lost[i];
    }
    let entries: Vec<usize> = (1..=n)
        .filter(|&i| live[i] && gen.row(i).iter().any(|t| a.contains(t.target)))
        .collect();
    let ok = reaches_within(gen, &live, &entries);
    if let Some(bad) = (1..=n).find(|&i| live[i] && !ok[i]) {
        return Err(CtmcError::SingularSystem(format!(
            "state {bad} can never reach the target set"
        )));
    }

    let (index, labels) = reindex(&live);
    let mut sys = RateSystem::new(labels.len());
    for (u, &i) in labels.iter().enumerate() {
        for t in gen.row(i) {
            if live[t.target] {
                sys.add_rate(u, index[t.target], t.rate);
            } else {
                sys.add_leak(u, t.rate);
            }
        }
    }
    let sol = if labels.is_empty() {
        Vec::new()
    } else {
        sys.factor()?.solve(&vec![1.0; labels.len()])?
    };

    let value_after_jump = |j: usize| -> f64 {
        if a.contains(j) {
            0.0
        } else if j == 0 || lost[j] {
            f64::INFINITY
        } else {
            sol[index[j]]
        }
    };
    Ok((1..=n)
        .map(|i| {
            if live[i] {
                sol[index[i]]
            } else if lost[i] {
                f64::INFINITY
            } else {
                let q = gen.exit_rate(i);
                let mut acc = 1.0;
                for t in gen.row(i) {
                    acc += t.rate * value_after_jump(t.target);
                }
                acc / q
            }
        })
        .collect())
}

/// `E_k τ_A` for a single start, failing with [`CtmcError::Divergent`] when
/// the expectation is infinite.
pub fn mean_hitting_time_from(gen: &Generator, a: &StateSet, k: usize) -> Result<f64, CtmcError> {
    gen.check_state(k)?;
    let v = mean_hitting_time(gen, a)?[k - 1];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CtmcError::Divergent { start: k })
    }
}

fn reindex(mask: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let mut index = vec![usize::MAX; mask.len()];
    let mut labels = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            index[i] = labels.len();
            labels.push(i);
        }
    }
    (index, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::validate_generator;

    fn toy() -> Generator {
        validate_generator([(1, 0, 1.0), (1, 2, 1.0), (2, 1, 2.0)], 2).unwrap()
    }

    fn symmetric_bd(n: usize) -> Generator {
        let mut t = Vec::new();
        for i in 1..=n {
            t.push((i, i - 1, 1.0));
            if i < n {
                t.push((i, i + 1, 1.0));
            }
        }
        validate_generator(t, n).unwrap()
    }

    #[test]
    fn boundary_values() {
        let g = symmetric_bd(5);
        let spec = HittingSpec::new(5, &[3], &[0]).unwrap();
        let r = hit_probability(&g, &spec).unwrap();
        assert_eq!(r[2], 1.0);
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((r[1] - 2.0 / 3.0).abs() < 1e-14);
        // above the target a skip-free chain must pass through it
        assert!((r[3] - 1.0).abs() < 1e-14 && (r[4] - 1.0).abs() < 1e-14);

        let spec = HittingSpec::new(5, &[3], &[1]).unwrap();
        let r = hit_probability(&g, &spec).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn enlarging_target_increases_probability() {
        let g = symmetric_bd(6);
        let small = hit_probability(&g, &HittingSpec::new(6, &[5], &[0]).unwrap()).unwrap();
        let big = hit_probability(&g, &HittingSpec::new(6, &[5, 3], &[0]).unwrap()).unwrap();
        for (a, b) in small.iter().zip(&big) {
            assert!(b >= a);
        }
    }

    #[test]
    fn unreachable_boundary_is_singular() {
        // states 2 and 3 form a closed class that never reaches 1 or 0
        let g = validate_generator([(1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)], 3).unwrap();
        let spec = HittingSpec::new(3, &[1], &[0]).unwrap();
        assert!(matches!(
            hit_probability(&g, &spec),
            Err(CtmcError::SingularSystem(_))
        ));
        let a = StateSet::new(3, &[1, 0]).unwrap();
        assert!(matches!(
            mean_hitting_time(&g, &a),
            Err(CtmcError::SingularSystem(_))
        ));
    }

    #[test]
    fn toy_mean_times() {
        let g = toy();
        let a = StateSet::new(2, &[1, 0]).unwrap();
        let e = mean_hitting_time(&g, &a).unwrap();
        assert!((e[1] - 0.5).abs() < 1e-15);
        assert!((e[0] - 0.75).abs() < 1e-15);

        let all = StateSet::all(2);
        let e = mean_hitting_time(&g, &all).unwrap();
        assert_eq!(e, vec![0.5, 0.5]);
    }

    #[test]
    fn absorption_outside_target_diverges() {
        let g = symmetric_bd(4);
        // E_i τ_{i-1} is finite from i but infinite below i-1
        let a = StateSet::new(4, &[2]).unwrap();
        let e = mean_hitting_time(&g, &a).unwrap();
        assert!(e[2].is_finite() && e[3].is_finite());
        assert!(e[0].is_infinite());
        // from 2 itself the return can be lost through 1 -> 0
        assert!(e[1].is_infinite());
        assert_eq!(
            mean_hitting_time_from(&g, &a, 1),
            Err(CtmcError::Divergent { start: 1 })
        );
        // E_3 τ_2 for the symmetric chain on {1..4}: (1/α_3)(α_3 + α_4) / d_3 = 2
        assert!((e[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn absorption_time_from_every_state() {
        let g = symmetric_bd(3);
        let a = StateSet::new(3, &[0]).unwrap();
        let e = mean_hitting_time(&g, &a).unwrap();
        // E_k τ_0 for the chain reflected at 3: k(2N + 1 - k) / 2 with N = 3
        for k in 1..=3 {
            let exact = (k * (7 - k)) as f64 / 2.0;
            assert!((e[k - 1] - exact).abs() < 1e-13, "{k}: {}", e[k - 1]);
        }
    }
}
