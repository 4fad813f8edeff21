//! Exact designs for MDPs whose transitions do not depend on the action.
//!
//! In such MDPs the occupancy measure is the same for every policy, so forcing
//! a target decouples into one projection per visited state: lower every
//! competitor above a threshold `x_s` down to it and lift the target reward to
//! `x_s + eps / mu(s)`.

use serde::Serialize;

use crate::attack::{verify_forced, AttackSolution};
use crate::error::{Error, Result};
use crate::mdp::{DetPolicy, Mdp};
use crate::planning::{self, TOL_SPECIAL};
use crate::policy_search::{optimal, AdmissibleSet, DesignOutcome};
use crate::qp::QpDiagnostics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurplusSolution {
    pub x: f64,
    /// Number of competitors strictly above the threshold segment.
    pub breakpoint_index: usize,
}

/// Unique root of `sum_{a != t} [r(a) - x]_+ = x - r(t) + eps_over_mu`.
///
/// The left side is piecewise linear with breakpoints at the competitor
/// rewards; the root is found by solving the segment that brackets it.
pub fn solve_surplus_x(rewards: &[f64], target_action: usize, eps_over_mu: f64) -> SurplusSolution {
    let competitors: Vec<f64> =
        rewards.iter().enumerate().filter(|&(a, _)| a != target_action).map(|(_, r)| *r).collect();
    surplus_root(&competitors, rewards[target_action], eps_over_mu)
}

fn surplus_root(competitors: &[f64], target_reward: f64, eps_over_mu: f64) -> SurplusSolution {
    let mut c = competitors.to_vec();
    c.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    for k in 0..=c.len() {
        let x = (prefix + target_reward - eps_over_mu) / (k as f64 + 1.0);
        let below_prev = k == 0 || x <= c[k - 1];
        let above_next = k == c.len() || c[k] <= x;
        if below_prev && above_next {
            return SurplusSolution { x, breakpoint_index: k };
        }
        if k < c.len() {
            prefix += c[k];
        }
    }
    unreachable!("the surplus function is strictly decreasing and changes sign")
}

/// Left side minus right side of the surplus equation.
pub fn surplus_residual(rewards: &[f64], target_action: usize, eps_over_mu: f64, x: f64) -> f64 {
    let surplus: f64 =
        rewards.iter().enumerate().filter(|&(a, _)| a != target_action).map(|(_, r)| (r - x).max(0.0)).sum();
    surplus - x + rewards[target_action] - eps_over_mu
}

/// Optimal forcing reward for a special MDP.
pub fn closed_form_attack(mdp: &Mdp, target: &DetPolicy, epsilon: f64) -> Result<AttackSolution> {
    if !planning::is_special(mdp, TOL_SPECIAL) {
        return Err(Error::NotSpecial);
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    mdp.check_policy(target)?;
    let occ = planning::occupancy(mdp, target)?;
    let mut r_hat = mdp.base_reward().clone();
    for &s in &occ.support {
        let t = target.action(s);
        let eps_over_mu = epsilon / occ.mu[s];
        let competitors: Vec<(usize, f64)> =
            mdp.available_actions(s).filter(|&a| a != t).map(|a| (a, r_hat[(s, a)])).collect();
        let rewards: Vec<f64> = competitors.iter().map(|&(_, r)| r).collect();
        let x = surplus_root(&rewards, r_hat[(s, t)], eps_over_mu).x;
        r_hat[(s, t)] = x + eps_over_mu;
        for (a, r) in competitors {
            if r >= x {
                r_hat[(s, a)] = x;
            }
        }
    }
    let q_v = planning::policy_evaluation(mdp, &r_hat, target)?;
    let feasibility = verify_forced(mdp, &r_hat, target, epsilon)?;
    Ok(AttackSolution {
        cost: r_hat.l2_distance(mdp.base_reward()),
        r_hat,
        q_v,
        diagnostics: QpDiagnostics::default(),
        feasibility,
    })
}

/// Optimal design for a special MDP: take the best admissible action per
/// visited state and force it with [`closed_form_attack`].
pub fn special_design(mdp: &Mdp, admissible: &AdmissibleSet, epsilon: f64, lambda: f64) -> Result<DesignOutcome> {
    if !planning::is_special(mdp, TOL_SPECIAL) {
        return Err(Error::NotSpecial);
    }
    admissible.check(mdp)?;
    let probe = DetPolicy((0..mdp.n_states()).map(|s| mdp.first_available(s)).collect());
    let occ = planning::occupancy(mdp, &probe)?;
    let r = mdp.base_reward();
    let best_of = |acts: Vec<usize>, s: usize| {
        acts.into_iter().fold(None, |acc: Option<usize>, a| match acc {
            Some(b) if r[(s, a)] <= r[(s, b)] => Some(b),
            _ => Some(a),
        })
    };
    let mut policy = Vec::with_capacity(mdp.n_states());
    for s in 0..mdp.n_states() {
        let choice = match best_of(admissible.usable(mdp, s), s) {
            Some(a) => a,
            None if occ.visits(s) => return Err(Error::NoAdmissibleAction(s)),
            None => best_of(mdp.available_actions(s).collect(), s).expect("validated MDP has an action"),
        };
        policy.push(choice);
    }
    let policy = DetPolicy(policy);
    let attack = closed_form_attack(mdp, &policy, epsilon)?;
    let (_, opt_score) = optimal(mdp)?;
    DesignOutcome::from_attack(mdp, policy, attack, lambda, opt_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{b2, stay_or_move};
    use crate::mdp::{ActionMask, RewardTable};

    /// Bisection on the strictly decreasing surplus function.
    fn bisect(rewards: &[f64], t: usize, e: f64) -> f64 {
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if surplus_residual(rewards, t, e, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn surplus_examples() {
        let s = solve_surplus_x(&[1.0, 0.0], 1, 0.1);
        assert!((s.x - 0.45).abs() < 1e-15);
        assert!((bisect(&[1.0, 0.0], 1, 0.1) - 0.45).abs() < 1e-9);
        let s = solve_surplus_x(&[1.0, 0.0], 0, 0.1);
        assert!((s.x - 0.9).abs() < 1e-15);
        assert_eq!(s.breakpoint_index, 0);
        let lone = solve_surplus_x(&[2.5], 0, 0.25);
        assert_eq!(lone.x, 2.25);
        assert_eq!(lone.x + 0.25, 2.5);
    }

    #[test]
    fn surplus_matches_bisection_on_ties() {
        let row = [3.0, 3.0, 3.0, -1.0, 0.5];
        for t in 0..row.len() {
            for e in [0.0, 0.3, 7.0] {
                let x = solve_surplus_x(&row, t, e).x;
                assert!(surplus_residual(&row, t, e, x).abs() <= 1e-10);
                assert!((x - bisect(&row, t, e)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn closed_form_on_b2() {
        let mdp = b2();
        let sol = closed_form_attack(&mdp, &DetPolicy(vec![1]), 0.1).unwrap();
        assert!((sol.r_hat[(0, 0)] - 0.45).abs() < 1e-12);
        assert!((sol.r_hat[(0, 1)] - 0.55).abs() < 1e-12);
        assert!((sol.cost - 0.7778174593052023).abs() < 1e-9);
        assert!(sol.feasibility.passed);
    }

    #[test]
    fn non_special_is_rejected() {
        assert!(matches!(closed_form_attack(&stay_or_move(), &DetPolicy(vec![0, 0]), 0.1), Err(Error::NotSpecial)));
    }

    #[test]
    fn special_design_on_b2() {
        let mdp = b2();
        let only_a1 = AdmissibleSet::new(ActionMask(vec![vec![false, true]]));
        let out = special_design(&mdp, &only_a1, 0.1, 1.0).unwrap();
        assert_eq!(out.policy, DetPolicy(vec![1]));
        assert!((out.objective - 0.7778174593052023).abs() < 1e-9);
        let all = special_design(&mdp, &AdmissibleSet::all(&mdp), 0.1, 1.0).unwrap();
        assert_eq!(all.policy, DetPolicy(vec![0]));
        assert!(all.cost.abs() < 1e-12);
        assert!((all.objective + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unvisited_state_without_admissible_actions() {
        // state 1 is never reached; its rewards must stay untouched
        let mdp = Mdp::new(
            vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![1.0, 0.0]]],
            RewardTable::from_rows(&[vec![0.0, 1.0], vec![5.0, -5.0]]).unwrap(),
            0.9,
            vec![1.0, 0.0],
        )
        .unwrap();
        let adm = AdmissibleSet::new(ActionMask(vec![vec![true, false], vec![false, false]]));
        let out = special_design(&mdp, &adm, 0.1, 1.0).unwrap();
        assert_eq!(out.policy.action(0), 0);
        assert_eq!(out.r_hat.row(1), &[5.0, -5.0]);
    }
}
