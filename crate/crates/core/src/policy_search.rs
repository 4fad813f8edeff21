//! Policy-level optimizers: the best admissible policy, the min-max Q-gap
//! policy, and the constrain-then-optimize local search.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{solve_attack, AttackProblem, AttackSolution, FeasibilityReport};
use crate::error::{Error, Result};
use crate::mdp::{ActionMask, DetPolicy, Mdp, RewardTable, StateActionTable};
use crate::planning::{self, Mode, ValueTables};

/// Strict improvement required before the local search accepts a neighbor.
pub const ACCEPT_MARGIN: f64 = 1e-9;

/// Per-state admissible actions. States may have none; operations fail only
/// when such a state cannot be avoided.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    pub mask: ActionMask,
}

impl AdmissibleSet {
    pub fn new(mask: ActionMask) -> Self {
        AdmissibleSet { mask }
    }

    /// Every action admissible.
    pub fn all(mdp: &Mdp) -> Self {
        AdmissibleSet { mask: ActionMask::full(mdp.n_states(), mdp.n_actions()) }
    }

    /// Everything admissible except the listed `(state, action)` pairs.
    pub fn excluding(mdp: &Mdp, pairs: &[(usize, usize)]) -> Self {
        let mut set = Self::all(mdp);
        for &(s, a) in pairs {
            set.mask.0[s][a] = false;
        }
        set
    }

    pub fn allows(&self, s: usize, a: usize) -> bool {
        self.mask.allows(s, a)
    }

    pub fn check(&self, mdp: &Mdp) -> Result<()> {
        let m = &self.mask.0;
        if m.len() != mdp.n_states() || m.iter().any(|r| r.len() != mdp.n_actions()) {
            return Err(Error::InvalidArgument(format!(
                "admissible mask must have shape [{}][{}]",
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }

    /// Admissible actions of `s` that the MDP makes available.
    pub fn usable(&self, mdp: &Mdp, s: usize) -> Vec<usize> {
        mdp.available_actions(s).filter(|&a| self.allows(s, a)).collect()
    }

    /// Copy with `(s, a)` made inadmissible.
    pub fn ban(&self, s: usize, a: usize) -> Self {
        let mut out = self.clone();
        out.mask.0[s][a] = false;
        out
    }

    /// True iff the policy takes admissible actions on every state it visits.
    pub fn is_admissible(&self, mdp: &Mdp, policy: &DetPolicy) -> Result<bool> {
        self.check(mdp)?;
        let occ = planning::occupancy(mdp, policy)?;
        Ok(occ.support.iter().all(|&s| self.allows(s, policy.action(s))))
    }
}

/// A chosen policy with its designed reward and the trade-off quantities.
#[derive(Debug, Clone, Serialize)]
pub struct DesignOutcome {
    pub policy: DetPolicy,
    pub r_hat: RewardTable,
    pub cost: f64,
    /// Score of the policy under the original reward.
    pub score: f64,
    /// `cost - lambda * score`.
    pub objective: f64,
    pub lambda: f64,
    /// `cost + lambda * (rho* - score)`.
    pub phi: f64,
    pub feasibility: FeasibilityReport,
}

impl DesignOutcome {
    pub fn from_attack(mdp: &Mdp, policy: DetPolicy, attack: AttackSolution, lambda: f64, opt_score: f64) -> Result<Self> {
        let score = planning::score(mdp, mdp.base_reward(), &policy)?;
        Ok(DesignOutcome {
            objective: attack.cost - lambda * score,
            phi: attack.cost + lambda * (opt_score - score),
            cost: attack.cost,
            r_hat: attack.r_hat,
            feasibility: attack.feasibility,
            policy,
            score,
            lambda,
        })
    }
}

/// Optimal values under the base reward together with the optimal score.
pub fn optimal(mdp: &Mdp) -> Result<(ValueTables, f64)> {
    let vt = planning::value_iteration(mdp, mdp.base_reward(), Mode::Maximize, None, None)?;
    let rho = planning::score(mdp, mdp.base_reward(), &vt.greedy)?;
    Ok((vt, rho))
}

/// `Q*(s, pi*(s)) - Q*(s, a)` under the base reward, clamped at zero.
pub fn q_gaps(opt: &ValueTables) -> StateActionTable {
    let mut gaps = opt.q.clone();
    for s in 0..gaps.n_states() {
        let best = opt.q[(s, opt.greedy.action(s))];
        for a in 0..gaps.n_actions() {
            gaps[(s, a)] = (best - opt.q[(s, a)]).max(0.0);
        }
    }
    gaps
}

/// States from which some policy can stay on admissible actions forever,
/// and the admissible actions that keep it there.
fn safe_region(mdp: &Mdp, adm: &AdmissibleSet) -> (Vec<bool>, ActionMask) {
    let ns = mdp.n_states();
    let mut safe: Vec<bool> = (0..ns).map(|s| !adm.usable(mdp, s).is_empty()).collect();
    let staying = |safe: &[bool], s: usize| -> Vec<usize> {
        adm.usable(mdp, s)
            .into_iter()
            .filter(|&a| mdp.successors(s, a).iter().all(|&(n, _)| safe[n]))
            .collect()
    };
    loop {
        let mut changed = false;
        for s in 0..ns {
            if safe[s] && staying(&safe, s).is_empty() {
                safe[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut mask = vec![vec![false; mdp.n_actions()]; ns];
    for s in 0..ns {
        let acts: Vec<usize> = if safe[s] { staying(&safe, s) } else { mdp.available_actions(s).collect() };
        for a in acts {
            mask[s][a] = true;
        }
    }
    (safe, ActionMask(mask))
}

/// Score-maximizing policy among those that act admissibly wherever they go.
pub fn optimal_admissible(mdp: &Mdp, adm: &AdmissibleSet) -> Result<DetPolicy> {
    adm.check(mdp)?;
    let (safe, mask) = safe_region(mdp, adm);
    if (0..mdp.n_states()).any(|s| mdp.initial()[s] > 0.0 && !safe[s]) {
        return Err(Error::NoAdmissiblePolicy);
    }
    let vt = planning::value_iteration(mdp, mdp.base_reward(), Mode::Maximize, Some(&mask), None)?;
    Ok(vt.greedy)
}

/// Minimum over admissible policies of the largest optimal-Q gap on the states
/// the policy visits, with a minimizing policy.
pub fn qgreedy(mdp: &Mdp, adm: &AdmissibleSet) -> Result<(f64, DetPolicy)> {
    adm.check(mdp)?;
    let (opt, _) = optimal(mdp)?;
    let gaps = q_gaps(&opt);
    let ns = mdp.n_states();
    let start: Vec<usize> = (0..ns).filter(|&s| mdp.initial()[s] > 0.0).collect();
    let mut remaining = vec![true; ns];
    let mut pairs: Vec<Vec<bool>> =
        (0..ns).map(|s| (0..mdp.n_actions()).map(|a| mdp.is_available(s, a) && adm.allows(s, a)).collect()).collect();
    let mut best: Option<(f64, DetPolicy)> = None;

    while start.iter().all(|&s| remaining[s]) {
        let delta = |s: usize| {
            (0..mdp.n_actions()).filter(|&a| pairs[s][a]).map(|a| gaps[(s, a)]).fold(f64::INFINITY, f64::min)
        };
        let mut s_t = None;
        let mut delta_t = f64::NEG_INFINITY;
        for s in (0..ns).filter(|&s| remaining[s]) {
            let d = delta(s);
            if s_t.is_none() || d > delta_t {
                s_t = Some(s);
                delta_t = d;
            }
        }
        let Some(s_t) = s_t else { break };
        let pi_t = DetPolicy(
            (0..ns)
                .map(|s| {
                    let mut choice = None;
                    if remaining[s] {
                        for a in (0..mdp.n_actions()).filter(|&a| pairs[s][a]) {
                            if choice.is_none_or(|c: usize| gaps[(s, a)] < gaps[(s, c)]) {
                                choice = Some(a);
                            }
                        }
                    }
                    choice.unwrap_or_else(|| mdp.first_available(s))
                })
                .collect(),
        );
        if best.as_ref().is_none_or(|(d, _)| delta_t < *d) {
            best = Some((delta_t, pi_t));
        }

        let mut removed = vec![s_t];
        while !removed.is_empty() {
            for &s in &removed {
                remaining[s] = false;
            }
            for s in 0..ns {
                for a in 0..mdp.n_actions() {
                    if pairs[s][a] && mdp.successors(s, a).iter().any(|&(n, _)| !remaining[n]) {
                        pairs[s][a] = false;
                    }
                }
            }
            removed = (0..ns).filter(|&s| remaining[s] && !pairs[s].iter().any(|&b| b)).collect();
        }
    }
    match best {
        Some((d, pi)) if d.is_finite() => Ok((d, pi)),
        _ => Err(Error::NoAdmissiblePolicy),
    }
}

/// Forces `policy` and packages the result.
pub fn force(mdp: &Mdp, policy: DetPolicy, lambda: f64, epsilon: f64, opt_score: f64) -> Result<DesignOutcome> {
    let attack = solve_attack(&AttackProblem::new(mdp, policy.clone(), epsilon)?)?;
    DesignOutcome::from_attack(mdp, policy, attack, lambda, opt_score)
}

/// Accepted steps of a local search run.
#[derive(Debug, Clone, Serialize)]
pub struct SearchTrace {
    pub outcome: DesignOutcome,
    /// Objective after initialization and after every acceptance.
    pub objectives: Vec<f64>,
    /// Pairs made inadmissible by the accepted moves, in order.
    pub banned: Vec<(usize, usize)>,
}

/// Local search from the best admissible policy: ban the current action at a
/// visited state, re-optimize, and keep the neighbor when it lowers
/// `cost - lambda * score`.
pub fn constrain_optimize(mdp: &Mdp, adm: &AdmissibleSet, lambda: f64, epsilon: f64) -> Result<DesignOutcome> {
    constrain_optimize_traced(mdp, adm, lambda, epsilon).map(|t| t.outcome)
}

pub fn constrain_optimize_traced(mdp: &Mdp, adm: &AdmissibleSet, lambda: f64, epsilon: f64) -> Result<SearchTrace> {
    let (opt, opt_score) = optimal(mdp)?;
    let gaps = q_gaps(&opt);
    let mut current_adm = adm.clone();
    let start = optimal_admissible(mdp, &current_adm)?;
    let mut cache: HashMap<DetPolicy, DesignOutcome> = HashMap::new();
    let mut current = force(mdp, start.clone(), lambda, epsilon, opt_score)?;
    cache.insert(start, current.clone());
    let mut objectives = vec![current.objective];
    let mut banned = Vec::new();

    loop {
        let occ = planning::occupancy(mdp, &current.policy)?;
        let mut order = occ.support.clone();
        let gap_of = |s: usize| gaps[(s, current.policy.action(s))];
        order.sort_by(|&x, &y| gap_of(y).total_cmp(&gap_of(x)).then(x.cmp(&y)));

        let mut neighbors = Vec::new();
        for &s in &order {
            let a = current.policy.action(s);
            let next_adm = current_adm.ban(s, a);
            if next_adm.usable(mdp, s).is_empty() {
                continue;
            }
            match optimal_admissible(mdp, &next_adm) {
                Ok(pi) => neighbors.push((s, a, next_adm, pi)),
                Err(Error::NoAdmissiblePolicy) => continue,
                Err(e) => return Err(e),
            }
        }
        let fresh: Vec<DetPolicy> = {
            let mut seen: Vec<DetPolicy> = Vec::new();
            for (_, _, _, pi) in &neighbors {
                if !cache.contains_key(pi) && !seen.contains(pi) {
                    seen.push(pi.clone());
                }
            }
            seen
        };
        let solved: Vec<Result<DesignOutcome>> =
            fresh.par_iter().map(|pi| force(mdp, pi.clone(), lambda, epsilon, opt_score)).collect();
        for (pi, out) in fresh.into_iter().zip(solved) {
            cache.insert(pi, out?);
        }

        let mut accepted = false;
        for (s, a, next_adm, pi) in neighbors {
            let candidate = &cache[&pi];
            if candidate.objective < current.objective - ACCEPT_MARGIN {
                current = candidate.clone();
                current_adm = next_adm;
                objectives.push(current.objective);
                banned.push((s, a));
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    Ok(SearchTrace { outcome: current, objectives, banned })
}

/// Named design strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Force an optimal policy of the base reward, admissible or not.
    Opt,
    /// Force the best admissible policy.
    OptAdm,
    /// Force the min-max Q-gap policy.
    Qgreedy,
    /// Local search over admissible policies.
    ConstrainOptimize,
    /// Closed form for action-independent transitions.
    Special,
}

impl Strategy {
    pub const SWEEP: [Strategy; 4] = [Strategy::Opt, Strategy::OptAdm, Strategy::Qgreedy, Strategy::ConstrainOptimize];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Opt => "opt",
            Strategy::OptAdm => "opt-adm",
            Strategy::Qgreedy => "qgreedy",
            Strategy::ConstrainOptimize => "constrain-optimize",
            Strategy::Special => "special",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Strategy::Opt, Strategy::OptAdm, Strategy::Qgreedy, Strategy::ConstrainOptimize, Strategy::Special]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'")))
    }
}

/// Runs one strategy end to end.
pub fn design(mdp: &Mdp, adm: &AdmissibleSet, strategy: Strategy, lambda: f64, epsilon: f64) -> Result<DesignOutcome> {
    match strategy {
        Strategy::Opt => {
            let (opt, rho) = optimal(mdp)?;
            force(mdp, opt.greedy, lambda, epsilon, rho)
        }
        Strategy::OptAdm => {
            let (_, rho) = optimal(mdp)?;
            force(mdp, optimal_admissible(mdp, adm)?, lambda, epsilon, rho)
        }
        Strategy::Qgreedy => {
            let (_, rho) = optimal(mdp)?;
            force(mdp, qgreedy(mdp, adm)?.1, lambda, epsilon, rho)
        }
        Strategy::ConstrainOptimize => constrain_optimize(mdp, adm, lambda, epsilon),
        Strategy::Special => crate::special::special_design(mdp, adm, epsilon, lambda),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{b2, stay_or_move};

    fn only_a1() -> AdmissibleSet {
        AdmissibleSet::new(ActionMask(vec![vec![false, true]]))
    }

    #[test]
    fn unrestricted_admissible_is_optimal() {
        let mdp = stay_or_move();
        let (opt, _) = optimal(&mdp).unwrap();
        assert_eq!(optimal_admissible(&mdp, &AdmissibleSet::all(&mdp)).unwrap(), opt.greedy);
        assert_eq!(optimal_admissible(&b2(), &only_a1()).unwrap(), DetPolicy(vec![1]));
    }

    #[test]
    fn unavoidable_empty_state_is_reported() {
        let mdp = b2();
        let none = AdmissibleSet::new(ActionMask(vec![vec![false, false]]));
        assert!(matches!(optimal_admissible(&mdp, &none), Err(Error::NoAdmissiblePolicy)));
        assert!(matches!(qgreedy(&mdp, &none), Err(Error::NoAdmissiblePolicy)));
    }

    #[test]
    fn avoidable_empty_state_is_fine() {
        // state 1 has no admissible action but state 0 can stay put
        let mdp = stay_or_move();
        let adm = AdmissibleSet::new(ActionMask(vec![vec![true, true], vec![false, false]]));
        assert_eq!(optimal_admissible(&mdp, &adm).unwrap().action(0), 0);
        let (d, pi) = qgreedy(&mdp, &adm).unwrap();
        assert_eq!(pi.action(0), 0);
        assert!(d >= 0.0);
    }

    #[test]
    fn qgreedy_on_b2() {
        let mdp = b2();
        let (d, pi) = qgreedy(&mdp, &AdmissibleSet::all(&mdp)).unwrap();
        assert_eq!((d, pi), (0.0, DetPolicy(vec![0])));
        let (d, pi) = qgreedy(&mdp, &only_a1()).unwrap();
        assert!((d - 1.0).abs() < 1e-9);
        assert_eq!(pi, DetPolicy(vec![1]));
    }

    #[test]
    fn constrain_optimize_on_b2() {
        let mdp = b2();
        let out = constrain_optimize(&mdp, &only_a1(), 1.0, 0.1).unwrap();
        assert_eq!(out.policy, DetPolicy(vec![1]));
        assert!((out.cost - 0.55 * 2f64.sqrt()).abs() < 1e-6);
        assert!((out.phi - out.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Opt, Strategy::OptAdm, Strategy::Qgreedy, Strategy::ConstrainOptimize, Strategy::Special] {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("greedy".parse::<Strategy>().is_err());
    }
}
