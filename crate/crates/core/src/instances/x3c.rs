//! MDPs built from Exact-3-Set-Cover instances.
//!
//! A start state fans out uniformly to `N` copies of one state per element and
//! one extra state `s*`. An element state may move to any subset state that
//! contains it (admissible) or to a dead end (inadmissible); `s*` may take a
//! paying exit (admissible) or fan out to all subset states (inadmissible).
//! Every path reaches a final state after three steps and returns to the
//! start. An exact cover yields a cheap design: pay one unit at each chosen
//! subset state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionMask, Mdp, RewardTable};
use crate::policy_search::AdmissibleSet;

/// Largest reduction MDP that will be materialized.
pub const MAX_REDUCTION_STATES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct X3cInstance {
    /// Cover size; the ground set is `1..=3k`.
    pub k: usize,
    /// Subsets of the ground set, each of three distinct elements.
    pub subsets: Vec<Vec<usize>>,
}

impl X3cInstance {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        for (index, set) in self.subsets.iter().enumerate() {
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if set.len() != 3 || sorted.len() != 3 || sorted.iter().any(|&e| e == 0 || e > 3 * self.k) {
                return Err(Error::SubsetArityError { index });
            }
        }
        if self.subsets.len() < self.k {
            return Err(Error::InvalidArgument(format!(
                "{} subsets cannot cover {} elements",
                self.subsets.len(),
                3 * self.k
            )));
        }
        Ok(())
    }

    /// True iff the chosen subsets partition the ground set.
    pub fn is_exact_cover(&self, cover: &[usize]) -> bool {
        let mut hit = vec![0usize; 3 * self.k + 1];
        for &j in cover {
            let Some(set) = self.subsets.get(j) else { return false };
            for &e in set {
                hit[e] += 1;
            }
        }
        hit[1..].iter().all(|&h| h == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionParams {
    pub k: usize,
    pub l: usize,
    pub p: f64,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub phi: f64,
    pub xi: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Reward of every admissible element edge.
    pub x: f64,
    /// Reward of the admissible exit of `s*`.
    pub y: f64,
}

/// State indices of one copy of the copied states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReductionCopy {
    pub elements: Vec<usize>,
    pub star: usize,
    pub dead_end: usize,
    pub exit: usize,
}

#[derive(Debug, Clone)]
pub struct X3cReduction {
    pub instance: X3cInstance,
    pub mdp: Mdp,
    pub admissible: AdmissibleSet,
    pub params: ReductionParams,
    pub start: usize,
    pub copies: Vec<ReductionCopy>,
    /// Subset states, shared by every copy.
    pub subset_states: Vec<usize>,
    pub final_state: usize,
}

/// Copy count needed by the full hardness argument.
pub fn full_copy_count(k: usize, l: usize, gamma: f64, p: f64) -> (f64, f64) {
    let (k, l) = (k as f64, l as f64);
    let base = (9.0 * l / gamma).powi(2);
    let phi = (6.0 * k * base * (3.0 * k + l + 5.0) * (l + 1.0)).powf(1.0 / p);
    ((3.0 * k * phi.powf(1.0 - p) * base).ceil(), phi)
}

pub fn x3c_reduction(
    instance: &X3cInstance,
    epsilon: f64,
    gamma: f64,
    p: f64,
    n_override: Option<usize>,
) -> Result<X3cReduction> {
    instance.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {p}")));
    }
    let k = instance.k;
    let l = instance.subsets.len();
    let (n_full, phi) = full_copy_count(k, l, gamma, p);
    let per_copy = 3 * k + 3;
    let n = match n_override {
        Some(0) => return Err(Error::InvalidArgument("copy count must be positive".into())),
        Some(n) => n,
        None => {
            let states = 1.0 + n_full * per_copy as f64 + l as f64 + 1.0;
            if !(states <= MAX_REDUCTION_STATES as f64) {
                return Err(Error::InstanceTooLarge { states, cap: MAX_REDUCTION_STATES });
            }
            n_full as usize
        }
    };
    let ns = 1 + n * per_copy + l + 1;
    if ns > MAX_REDUCTION_STATES {
        return Err(Error::InstanceTooLarge { states: ns as f64, cap: MAX_REDUCTION_STATES });
    }

    let m = (3 * k + 1) * n;
    let delta = gamma * gamma / (8.0 * m as f64 * l as f64);
    let lift = m as f64 / gamma * (epsilon / (1.0 - gamma) + delta);
    let x = lift - gamma;
    let y = gamma * k as f64 / l as f64 + lift;

    // layout: start, copies, subset states, final state
    let start = 0;
    let copies: Vec<ReductionCopy> = (0..n)
        .map(|c| {
            let base = 1 + c * per_copy;
            ReductionCopy {
                elements: (0..3 * k).map(|i| base + i).collect(),
                star: base + 3 * k,
                dead_end: base + 3 * k + 1,
                exit: base + 3 * k + 2,
            }
        })
        .collect();
    let subset_states: Vec<usize> = (0..l).map(|j| 1 + n * per_copy + j).collect();
    let final_state = ns - 1;

    let na = l + 1;
    let dagger = l;
    let mut transitions = vec![vec![vec![0.0; ns]; na]; ns];
    let mut reward = RewardTable::zeros(ns, na);
    let mut available = vec![vec![false; na]; ns];
    let mut admissible = ActionMask::full(ns, na);

    let fan = 1.0 / m as f64;
    for copy in &copies {
        for &s in copy.elements.iter().chain([&copy.star]) {
            transitions[start][0][s] = fan;
        }
    }
    available[start][0] = true;

    for copy in &copies {
        for (i, &s) in copy.elements.iter().enumerate() {
            for (j, set) in instance.subsets.iter().enumerate() {
                if set.contains(&(i + 1)) {
                    available[s][j] = true;
                    transitions[s][j][subset_states[j]] = 1.0;
                    reward[(s, j)] = x;
                }
            }
            available[s][dagger] = true;
            transitions[s][dagger][copy.dead_end] = 1.0;
            admissible.0[s][dagger] = false;
        }
        let star = copy.star;
        available[star][0] = true;
        transitions[star][0][copy.exit] = 1.0;
        reward[(star, 0)] = y;
        available[star][dagger] = true;
        for &t in &subset_states {
            transitions[star][dagger][t] = 1.0 / l as f64;
        }
        admissible.0[star][dagger] = false;
    }
    // single-action states of the sink chain
    let chain = copies
        .iter()
        .flat_map(|c| [(c.dead_end, final_state), (c.exit, final_state)])
        .chain(subset_states.iter().map(|&t| (t, final_state)))
        .chain([(final_state, start)]);
    for (s, to) in chain {
        available[s][0] = true;
        transitions[s][0][to] = 1.0;
    }

    for s in 0..ns {
        for a in 0..na {
            if !available[s][a] {
                transitions[s][a][s] = 1.0;
            }
        }
    }
    let mut sigma = vec![0.0; ns];
    sigma[start] = 1.0;
    let mdp = Mdp::with_available(transitions, reward, gamma, sigma, Some(ActionMask(available)))?;
    Ok(X3cReduction {
        instance: instance.clone(),
        mdp,
        admissible: AdmissibleSet::new(admissible),
        params: ReductionParams { k, l, p, n, m, delta, phi, xi: (k as f64).sqrt(), epsilon, gamma, x, y },
        start,
        copies,
        subset_states,
        final_state,
    })
}

/// Reward that pays one unit on the subset states of an exact cover.
pub fn x3c_yes_certificate(reduction: &X3cReduction, cover: &[usize]) -> Result<RewardTable> {
    let inst = &reduction.instance;
    if cover.len() != inst.k || !inst.is_exact_cover(cover) {
        return Err(Error::NotAnExactCover(format!("{cover:?} does not partition 1..={}", 3 * inst.k)));
    }
    let mut r = reduction.mdp.base_reward().clone();
    for &j in cover {
        r[(reduction.subset_states[j], 0)] = 1.0;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> X3cInstance {
        X3cInstance { k: 1, subsets: vec![vec![1, 2, 3]] }
    }

    #[test]
    fn single_subset_parameters() {
        let red = x3c_reduction(&single(), 0.1, 0.9, 0.5, Some(1)).unwrap();
        let p = red.params;
        assert_eq!(p.m, 4);
        assert!((p.delta - 0.81 / 32.0).abs() < 1e-15);
        let expected_x = (4.0 / 0.9) * (0.1 / 0.1 + 0.81 / 32.0) - 0.9;
        assert!((p.x - expected_x).abs() < 1e-12);
        assert!((p.y - (0.9 + (4.0 / 0.9) * (1.0 + 0.81 / 32.0))).abs() < 1e-12);
        assert_eq!(p.xi, 1.0);
        assert_eq!(red.mdp.n_states(), 1 + 6 + 1 + 1);
    }

    #[test]
    fn arity_is_checked() {
        let bad = X3cInstance { k: 1, subsets: vec![vec![1, 2]] };
        assert!(matches!(x3c_reduction(&bad, 0.1, 0.9, 0.5, Some(1)), Err(Error::SubsetArityError { index: 0 })));
        let dup = X3cInstance { k: 1, subsets: vec![vec![1, 1, 2]] };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn full_size_is_refused() {
        assert!(matches!(x3c_reduction(&single(), 0.1, 0.9, 0.5, None), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn certificate_cost_and_guard() {
        let red = x3c_reduction(&single(), 0.1, 0.9, 0.5, Some(1)).unwrap();
        let r = x3c_yes_certificate(&red, &[0]).unwrap();
        assert_eq!(r.l2_distance(red.mdp.base_reward()), 1.0);
        let two = X3cInstance { k: 2, subsets: vec![vec![1, 2, 3], vec![3, 4, 5], vec![4, 5, 6]] };
        let red2 = x3c_reduction(&two, 0.1, 0.9, 0.5, Some(1)).unwrap();
        assert!(matches!(x3c_yes_certificate(&red2, &[0, 1]), Err(Error::NotAnExactCover(_))));
        assert!(x3c_yes_certificate(&red2, &[0, 2]).is_ok());
    }
}
