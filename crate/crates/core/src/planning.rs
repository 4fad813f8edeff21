//! Planning primitives: Bellman-optimal values, exact policy evaluation,
//! occupancy measures and scores.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{ActionMask, DetPolicy, Mdp, RewardTable, StateActionTable};

/// Threshold above which an occupancy entry counts as visited.
pub const TOL_ZERO: f64 = 1e-12;

/// Guard used by [`is_special`] when no tolerance is supplied by the caller.
pub const TOL_SPECIAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Maximize,
    Minimize,
}

/// Q and V tables together with the Bellman residual they were accepted at.
#[derive(Debug, Clone, Serialize)]
pub struct ValueTables {
    pub q: StateActionTable,
    pub v: Vec<f64>,
    pub residual: f64,
    /// Greedy policy over the permitted actions, lowest index on ties.
    pub greedy: DetPolicy,
}

/// Discounted state-visitation frequencies of a policy.
#[derive(Debug, Clone, Serialize)]
pub struct OccupancyMeasure {
    pub mu: Vec<f64>,
    /// States with `mu > TOL_ZERO`, ascending.
    pub support: Vec<usize>,
    pub min_positive: f64,
}

impl OccupancyMeasure {
    pub fn visits(&self, s: usize) -> bool {
        self.mu[s] > TOL_ZERO
    }
}

/// Sup-norm Bellman residual accepted by [`value_iteration`].
pub fn vi_tolerance(reward: &RewardTable) -> f64 {
    1e-10 * (1.0 + reward.max_abs())
}

fn tie_tolerance(value: f64) -> f64 {
    1e-10 * (1.0 + value.abs())
}

fn iteration_cap(tol: f64, gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 10;
    }
    let steps = (tol.ln() / gamma.ln()).ceil().max(1.0);
    (10.0 * steps) as usize
}

fn permitted_sets(
    mdp: &Mdp,
    allowed: Option<&ActionMask>,
    fixed: Option<&[Option<usize>]>,
) -> Result<Vec<Vec<usize>>> {
    (0..mdp.n_states())
        .map(|s| {
            if let Some(a) = fixed.and_then(|f| f[s]) {
                if a >= mdp.n_actions() || !mdp.is_available(s, a) {
                    return Err(Error::InvalidPolicy(format!("fixed action {a} is not available at state {s}")));
                }
                return Ok(vec![a]);
            }
            let acts: Vec<usize> =
                mdp.available_actions(s).filter(|&a| allowed.is_none_or(|m| m.allows(s, a))).collect();
            if acts.is_empty() {
                Err(Error::EmptyActionSet(s))
            } else {
                Ok(acts)
            }
        })
        .collect()
}

fn q_from_v(mdp: &Mdp, reward: &RewardTable, v: &[f64]) -> StateActionTable {
    let mut q = StateActionTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            q[(s, a)] = reward[(s, a)] + mdp.gamma() * mdp.expected_next(s, a, v);
        }
    }
    q
}

fn better(mode: Mode, candidate: f64, incumbent: f64) -> bool {
    match mode {
        Mode::Maximize => candidate > incumbent,
        Mode::Minimize => candidate < incumbent,
    }
}

fn best_value(mode: Mode, q: &StateActionTable, s: usize, acts: &[usize]) -> f64 {
    acts.iter().map(|&a| q[(s, a)]).fold(None, |acc: Option<f64>, x| match acc {
        Some(b) if !better(mode, x, b) => Some(b),
        _ => Some(x),
    })
    .expect("permitted sets are non-empty")
}

/// Lowest-index action within the tie tolerance of the best permitted value.
fn pick(mode: Mode, q: &StateActionTable, s: usize, acts: &[usize]) -> usize {
    let best = best_value(mode, q, s, acts);
    let tol = tie_tolerance(best);
    *acts
        .iter()
        .find(|&&a| (q[(s, a)] - best).abs() <= tol)
        .expect("best value is attained")
}

/// Greedy policy with respect to `q` over the available actions.
pub fn greedy_policy(mdp: &Mdp, q: &StateActionTable) -> DetPolicy {
    DetPolicy(
        (0..mdp.n_states())
            .map(|s| {
                let acts: Vec<usize> = mdp.available_actions(s).collect();
                pick(Mode::Maximize, q, s, &acts)
            })
            .collect(),
    )
}

/// Bellman-optimal (or pessimal) values over the permitted actions.
///
/// `allowed` restricts every state to a subset of its available actions and
/// `fixed` pins single actions, overriding the mask. Plain value iteration runs
/// to the residual [`vi_tolerance`]; the greedy policy is then evaluated exactly
/// and improved until stable, which removes the iterative truncation error.
pub fn value_iteration(
    mdp: &Mdp,
    reward: &RewardTable,
    mode: Mode,
    allowed: Option<&ActionMask>,
    fixed: Option<&[Option<usize>]>,
) -> Result<ValueTables> {
    mdp.check_reward(reward)?;
    let permitted = permitted_sets(mdp, allowed, fixed)?;
    let ns = mdp.n_states();
    let tol = vi_tolerance(reward);
    let cap = iteration_cap(tol, mdp.gamma());

    let mut v = vec![0.0; ns];
    let mut q = q_from_v(mdp, reward, &v);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cap {
        iterations += 1;
        let next: Vec<f64> = (0..ns).map(|s| best_value(mode, &q, s, &permitted[s])).collect();
        residual = next.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        q = q_from_v(mdp, reward, &v);
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(Error::NoConvergence { iterations, residual });
    }

    // Exact refinement by policy iteration from the greedy policy.
    let mut policy = DetPolicy((0..ns).map(|s| pick(mode, &q, s, &permitted[s])).collect());
    for _ in 0..(10 * ns + 10) {
        let Ok(exact) = evaluate_linear(mdp, reward, &policy) else { break };
        let q_exact = q_from_v(mdp, reward, &exact);
        let mut changed = false;
        for s in 0..ns {
            let current = q_exact[(s, policy.action(s))];
            let best = best_value(mode, &q_exact, s, &permitted[s]);
            if better(mode, best, current) && (best - current).abs() > tie_tolerance(best) {
                policy.0[s] = pick(mode, &q_exact, s, &permitted[s]);
                changed = true;
            }
        }
        let exact_residual =
            (0..ns).fold(0.0_f64, |m, s| m.max((exact[s] - best_value(mode, &q_exact, s, &permitted[s])).abs()));
        if exact_residual <= residual {
            v = exact;
            q = q_exact;
            residual = exact_residual;
        }
        if !changed {
            break;
        }
    }
    let greedy = DetPolicy((0..ns).map(|s| pick(mode, &q, s, &permitted[s])).collect());
    Ok(ValueTables { q, v, residual, greedy })
}

fn evaluate_linear(mdp: &Mdp, reward: &RewardTable, policy: &DetPolicy) -> Result<Vec<f64>> {
    let ns = mdp.n_states();
    let g = mdp.gamma();
    let mut m = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        let a = policy.action(s);
        for &(n, p) in mdp.successors(s, a) {
            m[(s, n)] -= g * p;
        }
        b[s] = reward[(s, a)];
    }
    let sol = m.lu().solve(&b).ok_or(Error::SingularSystem)?;
    Ok(sol.iter().copied().collect())
}

/// Exact `Q^pi`, `V^pi` from the linear system `(I - gamma P_pi) V = R_pi`.
pub fn policy_evaluation(mdp: &Mdp, reward: &RewardTable, policy: &DetPolicy) -> Result<ValueTables> {
    mdp.check_reward(reward)?;
    mdp.check_policy(policy)?;
    let v = evaluate_linear(mdp, reward, policy)?;
    let q = q_from_v(mdp, reward, &v);
    let residual = (0..mdp.n_states()).fold(0.0_f64, |m, s| m.max((v[s] - q[(s, policy.action(s))]).abs()));
    Ok(ValueTables { q, v, residual, greedy: policy.clone() })
}

/// States reachable from the support of the initial distribution under `policy`.
pub fn reachable_states(mdp: &Mdp, policy: &DetPolicy) -> Vec<bool> {
    let mut seen = vec![false; mdp.n_states()];
    let mut stack: Vec<usize> = (0..mdp.n_states()).filter(|&s| mdp.initial()[s] > 0.0).collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(s) = stack.pop() {
        for &(n, _) in mdp.successors(s, policy.action(s)) {
            if !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        }
    }
    seen
}

/// Solves the Bellman flow equation
/// `mu(s) = (1 - gamma) sigma(s) + gamma sum_{s'} P(s', pi(s'), s) mu(s')`.
///
/// States unreachable from the initial support get an exact zero; the linear
/// system is solved on the reachable states only.
pub fn occupancy(mdp: &Mdp, policy: &DetPolicy) -> Result<OccupancyMeasure> {
    mdp.check_policy(policy)?;
    let reach = reachable_states(mdp, policy);
    let idx: Vec<usize> = (0..mdp.n_states()).filter(|&s| reach[s]).collect();
    let mut local = vec![usize::MAX; mdp.n_states()];
    for (i, &s) in idx.iter().enumerate() {
        local[s] = i;
    }
    let k = idx.len();
    let g = mdp.gamma();
    let mut m = DMatrix::<f64>::identity(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (i, &s) in idx.iter().enumerate() {
        b[i] = (1.0 - g) * mdp.initial()[s];
        for &(n, p) in mdp.successors(s, policy.action(s)) {
            // reachability is closed under the policy's transitions
            m[(local[n], i)] -= g * p;
        }
    }
    let sol = m.lu().solve(&b).ok_or(Error::SingularSystem)?;
    let mut mu = vec![0.0; mdp.n_states()];
    for (i, &s) in idx.iter().enumerate() {
        mu[s] = sol[i].max(0.0);
    }
    let support: Vec<usize> = (0..mdp.n_states()).filter(|&s| mu[s] > TOL_ZERO).collect();
    let min_positive = support.iter().map(|&s| mu[s]).fold(f64::INFINITY, f64::min);
    Ok(OccupancyMeasure { mu, support, min_positive })
}

/// Score `rho = sum_s mu(s) R(s, pi(s))`, the (1 - gamma)-scaled return.
pub fn score(mdp: &Mdp, reward: &RewardTable, policy: &DetPolicy) -> Result<f64> {
    mdp.check_reward(reward)?;
    let occ = occupancy(mdp, policy)?;
    Ok(score_with(&occ, reward, policy))
}

pub(crate) fn score_with(occ: &OccupancyMeasure, reward: &RewardTable, policy: &DetPolicy) -> f64 {
    occ.support.iter().map(|&s| occ.mu[s] * reward[(s, policy.action(s))]).sum()
}

/// Score through the value form `(1 - gamma) E_sigma V^pi`.
pub fn score_from_values(mdp: &Mdp, values: &ValueTables) -> f64 {
    (1.0 - mdp.gamma()) * mdp.initial().iter().zip(&values.v).map(|(p, v)| p * v).sum::<f64>()
}

/// Score difference of two policies, directly and through the
/// occupancy-weighted advantage identity.
pub fn score_diff_check(
    mdp: &Mdp,
    reward: &RewardTable,
    pi1: &DetPolicy,
    pi2: &DetPolicy,
) -> Result<(f64, f64)> {
    let direct = score(mdp, reward, pi1)? - score(mdp, reward, pi2)?;
    let occ1 = occupancy(mdp, pi1)?;
    let q2 = policy_evaluation(mdp, reward, pi2)?.q;
    let identity = (0..mdp.n_states())
        .map(|s| occ1.mu[s] * (q2[(s, pi1.action(s))] - q2[(s, pi2.action(s))]))
        .sum();
    Ok((direct, identity))
}

/// True iff the available actions of every state share one transition row
/// up to `tol` (inclusive).
pub fn is_special(mdp: &Mdp, tol: f64) -> bool {
    (0..mdp.n_states()).all(|s| {
        (0..mdp.n_states()).all(|n| {
            let (lo, hi) = mdp
                .available_actions(s)
                .map(|a| mdp.prob(s, a, n))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
            hi - lo <= tol
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{b2, stay_or_move};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn b2_optimal_values() {
        let mdp = b2();
        let vt = value_iteration(&mdp, mdp.base_reward(), Mode::Maximize, None, None).unwrap();
        assert!(close(vt.v[0], 10.0, 1e-9));
        assert!(close(vt.q[(0, 0)], 10.0, 1e-9));
        assert!(close(vt.q[(0, 1)], 9.0, 1e-9));
        assert_eq!(vt.greedy, DetPolicy(vec![0]));
    }

    #[test]
    fn zero_reward_gives_zero_values() {
        let mdp = stay_or_move();
        let zero = RewardTable::zeros(2, 2);
        let vt = value_iteration(&mdp, &zero, Mode::Maximize, None, None).unwrap();
        assert!(vt.v.iter().all(|&v| v == 0.0));
        assert!(vt.q.as_slice().iter().all(|&q| q == 0.0));
    }

    #[test]
    fn b2_minimize_is_zero() {
        let mdp = b2();
        let vt = value_iteration(&mdp, mdp.base_reward(), Mode::Minimize, None, None).unwrap();
        assert!(close(vt.v[0], 0.0, 1e-9));
        assert_eq!(vt.greedy, DetPolicy(vec![1]));
    }

    #[test]
    fn empty_mask_is_reported() {
        let mdp = b2();
        let mask = ActionMask(vec![vec![false, false]]);
        assert!(matches!(
            value_iteration(&mdp, mdp.base_reward(), Mode::Maximize, Some(&mask), None),
            Err(Error::EmptyActionSet(0))
        ));
    }

    #[test]
    fn fixed_actions_override_mask() {
        let mdp = b2();
        let mask = ActionMask(vec![vec![true, false]]);
        let vt = value_iteration(&mdp, mdp.base_reward(), Mode::Maximize, Some(&mask), Some(&[Some(1)])).unwrap();
        assert!(close(vt.v[0], 0.0, 1e-9));
    }

    #[test]
    fn b2_policy_evaluation() {
        let mdp = b2();
        let lazy = policy_evaluation(&mdp, mdp.base_reward(), &DetPolicy(vec![1])).unwrap();
        assert!(close(lazy.v[0], 0.0, 1e-12));
        assert!(close(lazy.q[(0, 0)], 1.0, 1e-12));
        assert!(close(lazy.q[(0, 1)], 0.0, 1e-12));
        let good = policy_evaluation(&mdp, mdp.base_reward(), &DetPolicy(vec![0])).unwrap();
        assert!(close(good.v[0], 10.0, 1e-12));
    }

    #[test]
    fn b2_occupancy_and_scores() {
        let mdp = b2();
        for a in 0..2 {
            let occ = occupancy(&mdp, &DetPolicy(vec![a])).unwrap();
            assert_eq!(occ.mu, vec![1.0]);
            assert_eq!(occ.support, vec![0]);
            assert_eq!(occ.min_positive, 1.0);
        }
        assert!(close(score(&mdp, mdp.base_reward(), &DetPolicy(vec![0])).unwrap(), 1.0, 1e-12));
        assert!(close(score(&mdp, mdp.base_reward(), &DetPolicy(vec![1])).unwrap(), 0.0, 1e-12));
    }

    #[test]
    fn two_state_cycle_occupancy() {
        // geometric oracle: (1-g)/(1-g^2) and g(1-g)/(1-g^2)
        let mdp = stay_or_move();
        let occ = occupancy(&mdp, &DetPolicy(vec![1, 1])).unwrap();
        let g: f64 = 0.9;
        assert!(close(occ.mu[0], (1.0 - g) / (1.0 - g * g), 1e-12));
        assert!(close(occ.mu[1], g * (1.0 - g) / (1.0 - g * g), 1e-12));
        assert!(close(occ.mu[0], 0.5263157894736842, 1e-12));
    }

    #[test]
    fn unreachable_states_have_exact_zero() {
        let mdp = stay_or_move();
        let occ = occupancy(&mdp, &DetPolicy(vec![0, 1])).unwrap();
        assert_eq!(occ.mu, vec![1.0, 0.0]);
        assert_eq!(occ.support, vec![0]);
    }

    #[test]
    fn score_difference_on_b2() {
        let mdp = b2();
        let same = score_diff_check(&mdp, mdp.base_reward(), &DetPolicy(vec![0]), &DetPolicy(vec![0])).unwrap();
        assert_eq!(same, (0.0, 0.0));
        let (direct, identity) =
            score_diff_check(&mdp, mdp.base_reward(), &DetPolicy(vec![0]), &DetPolicy(vec![1])).unwrap();
        assert!(close(direct, 1.0, 1e-12) && close(identity, 1.0, 1e-12));
    }

    #[test]
    fn specialness() {
        assert!(is_special(&b2(), TOL_SPECIAL));
        assert!(!is_special(&stay_or_move(), TOL_SPECIAL));
        // rows differ by exactly 0.25 (exact in binary floating point)
        let mdp = Mdp::new(
            vec![vec![vec![0.5, 0.5], vec![0.75, 0.25]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            RewardTable::zeros(2, 2),
            0.5,
            vec![1.0, 0.0],
        )
        .unwrap();
        assert!(is_special(&mdp, 0.25));
        assert!(!is_special(&mdp, 0.2499999));
    }

    #[test]
    fn iteration_cap_formula() {
        // 10 * ceil(log(1e-10) / log(0.9)) = 10 * 219
        assert_eq!(iteration_cap(1e-10, 0.9), 2190);
        assert_eq!(iteration_cap(1e-10, 0.0), 10);
    }
}
