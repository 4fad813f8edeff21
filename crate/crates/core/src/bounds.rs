//! Characterization quantities and certificates for the relative value
//! `Phi = cost + lambda * (rho* - rho)` of a design.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::mdp::{DetPolicy, Mdp};
use crate::oracle::PolicyEnumeration;
use crate::planning;
use crate::policy_search::{optimal, optimal_admissible, q_gaps, qgreedy, AdmissibleSet, DesignOutcome};

/// Default policy budget for [`mu_min`].
pub const MU_MIN_CAP: u128 = 10_000;

/// Slack used by every certificate check.
pub const CERT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuMinMethod {
    Exact,
    /// Minimum over a seeded sample; the true value may be smaller.
    SampledUpperEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuMin {
    pub value: f64,
    pub method: MuMinMethod,
}

/// Score lost by the best admissible policy.
pub fn delta_rho(mdp: &Mdp, adm: &AdmissibleSet) -> Result<f64> {
    let (_, rho_star) = optimal(mdp)?;
    let pi = optimal_admissible(mdp, adm)?;
    Ok(rho_star - planning::score(mdp, mdp.base_reward(), &pi)?)
}

/// Largest optimal-Q gap of `policy` over the states it visits.
pub fn delta_q_pi(mdp: &Mdp, policy: &DetPolicy) -> Result<f64> {
    let (opt, _) = optimal(mdp)?;
    let gaps = q_gaps(&opt);
    let occ = planning::occupancy(mdp, policy)?;
    Ok(occ.support.iter().map(|&s| gaps[(s, policy.action(s))]).fold(0.0, f64::max))
}

/// Smallest positive occupancy over all deterministic policies.
pub fn mu_min(mdp: &Mdp, cap: u128) -> Result<MuMin> {
    mu_min_seeded(mdp, cap, 0)
}

pub fn mu_min_seeded(mdp: &Mdp, cap: u128, seed: u64) -> Result<MuMin> {
    let min_of = |pi: &DetPolicy| planning::occupancy(mdp, pi).map(|o| o.min_positive);
    if mdp.policy_count() <= cap {
        let all = PolicyEnumeration::all(mdp, cap)?;
        let values: Vec<f64> = (0..all.count()).into_par_iter().map(|i| min_of(&all.policy(i))).collect::<Result<_>>()?;
        return Ok(MuMin { value: values.into_iter().fold(f64::INFINITY, f64::min), method: MuMinMethod::Exact });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices: Vec<Vec<usize>> = (0..mdp.n_states()).map(|s| mdp.available_actions(s).collect()).collect();
    let samples: Vec<DetPolicy> = (0..cap.max(1))
        .map(|_| DetPolicy(choices.iter().map(|c| *c.choose(&mut rng).expect("non-empty")).collect()))
        .collect();
    let values: Vec<f64> = samples.par_iter().map(min_of).collect::<Result<_>>()?;
    Ok(MuMin {
        value: values.into_iter().fold(f64::INFINITY, f64::min),
        method: MuMinMethod::SampledUpperEstimate,
    })
}

/// The four interval coefficients `(alpha_rho, beta_rho, alpha_q, beta_q)`.
pub fn coefficients(lambda: f64, gamma: f64, mu_min: f64, n_states: usize) -> (f64, f64, f64, f64) {
    let half = (1.0 - gamma) / 2.0;
    (lambda + half, lambda + 1.0 / mu_min, lambda * mu_min + half, lambda + (n_states as f64).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub delta_rho: f64,
    pub delta_q: f64,
    pub mu_min: MuMin,
    pub alpha_rho: f64,
    pub beta_rho: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub thm3_interval: (f64, f64),
    pub thm4_interval: (f64, f64),
    /// `(1 - gamma) / 2 * Delta_Q^pi` for the outcome's policy.
    pub corollary_floor: f64,
    pub corollary_holds: bool,
    /// Exhaustive optimum of `Phi`, when supplied.
    pub optimal_phi: Option<f64>,
    pub optimal_in_thm3: Option<bool>,
    pub optimal_in_thm4: Option<bool>,
    /// Set when `mu_min` is only an estimate, so the upper ends are indicative.
    pub advisory: bool,
}

/// Evaluates both interval bounds and the cost floor for `outcome`. When
/// `optimum` (an exhaustive surrogate optimum) is given, its `Phi` is checked
/// against both intervals.
pub fn phi_bounds(
    mdp: &Mdp,
    adm: &AdmissibleSet,
    lambda: f64,
    epsilon: f64,
    outcome: &DesignOutcome,
    optimum: Option<&DesignOutcome>,
) -> Result<BoundsReport> {
    phi_bounds_with_cap(mdp, adm, lambda, epsilon, outcome, optimum, MU_MIN_CAP, 0)
}

/// [`phi_bounds`] with an explicit policy budget and sampling seed for `mu_min`.
#[allow(clippy::too_many_arguments)]
pub fn phi_bounds_with_cap(
    mdp: &Mdp,
    adm: &AdmissibleSet,
    lambda: f64,
    epsilon: f64,
    outcome: &DesignOutcome,
    optimum: Option<&DesignOutcome>,
    cap: u128,
    seed: u64,
) -> Result<BoundsReport> {
    let delta_rho = delta_rho(mdp, adm)?;
    let (delta_q, _) = qgreedy(mdp, adm)?;
    let mu = mu_min_seeded(mdp, cap, seed)?;
    let (alpha_rho, beta_rho, alpha_q, beta_q) = coefficients(lambda, mdp.gamma(), mu.value, mdp.n_states());
    let slack = epsilon * ((mdp.n_states() * mdp.n_actions()) as f64).sqrt() / mu.value;
    let thm3_interval = (alpha_rho * delta_rho, beta_rho * delta_rho + slack);
    let thm4_interval = (alpha_q * delta_q, beta_q * delta_q + slack);
    let corollary_floor = (1.0 - mdp.gamma()) / 2.0 * delta_q_pi(mdp, &outcome.policy)?;
    let inside = |(lo, hi): (f64, f64), v: f64| lo - CERT_SLACK <= v && v <= hi + CERT_SLACK;
    let optimal_phi = optimum.map(|o| o.phi);
    Ok(BoundsReport {
        delta_rho,
        delta_q,
        mu_min: mu,
        alpha_rho,
        beta_rho,
        alpha_q,
        beta_q,
        thm3_interval,
        thm4_interval,
        corollary_floor,
        corollary_holds: outcome.cost >= corollary_floor - CERT_SLACK,
        optimal_phi,
        optimal_in_thm3: optimal_phi.map(|p| inside(thm3_interval, p)),
        optimal_in_thm4: optimal_phi.map(|p| inside(thm4_interval, p)),
        advisory: mu.method == MuMinMethod::SampledUpperEstimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{b2, stay_or_move};
    use crate::mdp::ActionMask;
    use crate::oracle::{brute_design_p4, DEFAULT_CAP};
    use crate::policy_search::constrain_optimize;

    fn only_a1() -> AdmissibleSet {
        AdmissibleSet::new(ActionMask(vec![vec![false, true]]))
    }

    #[test]
    fn gaps_on_b2() {
        let mdp = b2();
        assert_eq!(delta_rho(&mdp, &AdmissibleSet::all(&mdp)).unwrap(), 0.0);
        assert!((delta_rho(&mdp, &only_a1()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(delta_q_pi(&mdp, &DetPolicy(vec![0])).unwrap(), 0.0);
        assert!((delta_q_pi(&mdp, &DetPolicy(vec![1])).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn off_support_deviation_is_free() {
        // from state 0 the optimal move is to state 1; state 0 staying never reaches 1
        let mdp = stay_or_move();
        let (opt, _) = optimal(&mdp).unwrap();
        let mut pi = opt.greedy.clone();
        pi.0[0] = 0;
        let mut other = pi.clone();
        other.0[1] = 1 - other.0[1];
        assert_eq!(delta_q_pi(&mdp, &pi).unwrap(), delta_q_pi(&mdp, &other).unwrap());
    }

    #[test]
    fn mu_min_examples() {
        let one = mu_min(&b2(), MU_MIN_CAP).unwrap();
        assert_eq!((one.value, one.method), (1.0, MuMinMethod::Exact));
        // staying at 0 forever visits only 0; moving then staying at 1 gives mu(0) = 0.1
        let cyc = mu_min(&stay_or_move(), MU_MIN_CAP).unwrap();
        assert!((cyc.value - 0.1).abs() < 1e-12);
        let sampled = mu_min(&stay_or_move(), 2).unwrap();
        assert_eq!(sampled.method, MuMinMethod::SampledUpperEstimate);
        assert!(sampled.value >= cyc.value - 1e-15);
    }

    #[test]
    fn b2_certificate() {
        let mdp = b2();
        let adm = only_a1();
        let out = constrain_optimize(&mdp, &adm, 1.0, 0.1).unwrap();
        let best = brute_design_p4(&mdp, &adm, 1.0, 0.1, DEFAULT_CAP).unwrap();
        let rep = phi_bounds(&mdp, &adm, 1.0, 0.1, &out, Some(&best)).unwrap();
        assert!((rep.thm3_interval.0 - 1.05).abs() < 1e-9);
        assert!((rep.thm3_interval.1 - (2.0 + 0.1 * 2f64.sqrt())).abs() < 1e-9);
        assert!((rep.optimal_phi.unwrap() - 1.7778174593052023).abs() < 1e-6);
        assert_eq!(rep.optimal_in_thm3, Some(true));
        assert_eq!(rep.optimal_in_thm4, Some(true));
        assert!(rep.corollary_holds);
    }

    #[test]
    fn all_admissible_intervals() {
        let mdp = b2();
        let adm = AdmissibleSet::all(&mdp);
        let out = constrain_optimize(&mdp, &adm, 1.0, 0.1).unwrap();
        let rep = phi_bounds(&mdp, &adm, 1.0, 0.1, &out, None).unwrap();
        assert_eq!(rep.thm3_interval.0, 0.0);
        assert!((rep.thm3_interval.1 - 0.1 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rep.thm4_interval, rep.thm3_interval);
    }
}
