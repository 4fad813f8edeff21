//! Brute-force references for small instances.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::bounds::delta_q_pi;
use crate::error::{Error, Result};
use crate::mdp::{DetPolicy, Mdp, RewardTable};
use crate::planning;
use crate::policy_search::{force, optimal, AdmissibleSet, DesignOutcome};

/// Default limit on enumerated policies.
pub const DEFAULT_CAP: u128 = 100_000;

/// Slack subtracted from the threshold of the strict near-optimality test.
pub const OPT_SET_SLACK: f64 = 1e-12;

/// Mixed-radix enumeration of the product of per-state action lists.
#[derive(Debug, Clone)]
pub struct PolicyEnumeration {
    choices: Vec<Vec<usize>>,
    count: usize,
}

impl PolicyEnumeration {
    /// Fails with `TooManyPolicies` when the product exceeds `cap`.
    pub fn new(choices: Vec<Vec<usize>>, cap: u128) -> Result<Self> {
        let count = choices.iter().fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128));
        if count > cap {
            return Err(Error::TooManyPolicies { count, cap });
        }
        Ok(PolicyEnumeration { choices, count: count as usize })
    }

    /// Enumeration of every policy over the available actions.
    pub fn all(mdp: &Mdp, cap: u128) -> Result<Self> {
        Self::new((0..mdp.n_states()).map(|s| mdp.available_actions(s).collect()).collect(), cap)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// The `index`-th policy; the last state varies fastest.
    pub fn policy(&self, mut index: usize) -> DetPolicy {
        let mut actions = vec![0; self.choices.len()];
        for s in (0..self.choices.len()).rev() {
            let k = self.choices[s].len();
            actions[s] = self.choices[s][index % k];
            index /= k;
        }
        DetPolicy(actions)
    }

    pub fn iter(&self) -> impl Iterator<Item = DetPolicy> + '_ {
        (0..self.count).map(|i| self.policy(i))
    }
}

/// Policies whose score under `reward` is strictly within `epsilon` of the best.
pub fn opt_set(mdp: &Mdp, reward: &RewardTable, epsilon: f64, cap: u128) -> Result<Vec<DetPolicy>> {
    mdp.check_reward(reward)?;
    let all = PolicyEnumeration::all(mdp, cap)?;
    let scores: Vec<f64> = (0..all.count())
        .into_par_iter()
        .map(|i| planning::score(mdp, reward, &all.policy(i)))
        .collect::<Result<_>>()?;
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best - epsilon - OPT_SET_SLACK;
    Ok(scores.iter().enumerate().filter(|(_, r)| **r > threshold).map(|(i, _)| all.policy(i)).collect())
}

/// Admissible policies, one representative per distinct behavior on the
/// states it visits.
pub fn admissible_policies(mdp: &Mdp, adm: &AdmissibleSet, cap: u128) -> Result<Vec<DetPolicy>> {
    adm.check(mdp)?;
    let choices: Vec<Vec<usize>> = (0..mdp.n_states())
        .map(|s| {
            let usable = adm.usable(mdp, s);
            if usable.is_empty() {
                mdp.available_actions(s).collect()
            } else {
                usable
            }
        })
        .collect();
    let enumeration = PolicyEnumeration::new(choices, cap)?;
    let keyed: Vec<Option<Vec<(usize, usize)>>> = (0..enumeration.count())
        .into_par_iter()
        .map(|i| {
            let pi = enumeration.policy(i);
            let occ = planning::occupancy(mdp, &pi)?;
            let ok = occ.support.iter().all(|&s| adm.allows(s, pi.action(s)));
            Ok(ok.then(|| occ.support.iter().map(|&s| (s, pi.action(s))).collect()))
        })
        .collect::<Result<_>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, key) in keyed.into_iter().enumerate() {
        if let Some(key) = key {
            if seen.insert(key) {
                out.push(enumeration.policy(i));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoAdmissiblePolicy);
    }
    Ok(out)
}

/// Exhaustive surrogate design: force every admissible policy and keep the
/// one with the lowest `cost - lambda * score` (first in enumeration order on ties).
pub fn brute_design_p4(mdp: &Mdp, adm: &AdmissibleSet, lambda: f64, epsilon: f64, cap: u128) -> Result<DesignOutcome> {
    let candidates = admissible_policies(mdp, adm, cap)?;
    let (_, opt_score) = optimal(mdp)?;
    let outcomes: Vec<DesignOutcome> = candidates
        .into_par_iter()
        .map(|pi| force(mdp, pi, lambda, epsilon, opt_score))
        .collect::<Result<_>>()?;
    let mut best: Option<DesignOutcome> = None;
    for out in outcomes {
        if best.as_ref().is_none_or(|b| out.objective < b.objective) {
            best = Some(out);
        }
    }
    best.ok_or(Error::NoAdmissiblePolicy)
}

/// Exhaustive min over admissible policies of the largest visited Q-gap.
pub fn brute_delta_q(mdp: &Mdp, adm: &AdmissibleSet, cap: u128) -> Result<f64> {
    admissible_policies(mdp, adm, cap)?
        .par_iter()
        .map(|pi| delta_q_pi(mdp, pi))
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::b2;
    use crate::mdp::ActionMask;

    #[test]
    fn opt_set_on_b2() {
        let mdp = b2();
        assert_eq!(opt_set(&mdp, mdp.base_reward(), 0.1, DEFAULT_CAP).unwrap(), vec![DetPolicy(vec![0])]);
        assert_eq!(opt_set(&mdp, mdp.base_reward(), 2.0, DEFAULT_CAP).unwrap().len(), 2);
        assert!(matches!(
            opt_set(&mdp, mdp.base_reward(), 0.1, 1),
            Err(Error::TooManyPolicies { count: 2, cap: 1 })
        ));
    }

    #[test]
    fn enumeration_order() {
        let e = PolicyEnumeration::new(vec![vec![0, 1], vec![2, 3, 4]], 100).unwrap();
        assert_eq!(e.count(), 6);
        assert_eq!(e.policy(0), DetPolicy(vec![0, 2]));
        assert_eq!(e.policy(1), DetPolicy(vec![0, 3]));
        assert_eq!(e.policy(5), DetPolicy(vec![1, 4]));
    }

    #[test]
    fn brute_references_on_b2() {
        let mdp = b2();
        let only_a1 = AdmissibleSet::new(ActionMask(vec![vec![false, true]]));
        assert_eq!(brute_delta_q(&mdp, &AdmissibleSet::all(&mdp), DEFAULT_CAP).unwrap(), 0.0);
        assert!((brute_delta_q(&mdp, &only_a1, DEFAULT_CAP).unwrap() - 1.0).abs() < 1e-9);
        let out = brute_design_p4(&mdp, &only_a1, 1.0, 0.1, DEFAULT_CAP).unwrap();
        assert!((out.objective - 0.7778174593052023).abs() < 1e-6);
        let cheapest = brute_design_p4(&mdp, &AdmissibleSet::all(&mdp), 0.0, 0.1, DEFAULT_CAP).unwrap();
        assert_eq!(cheapest.policy, DetPolicy(vec![0]));
    }
}
