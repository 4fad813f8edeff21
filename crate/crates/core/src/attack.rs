//! Targeted reward poisoning: the slack parameters, the constructive attack,
//! the quadratic program over `(Q, V)` and post-hoc verification.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{DetPolicy, Mdp, RewardTable, StateActionTable};
use crate::oracle::PolicyEnumeration;
use crate::planning::{self, Mode, OccupancyMeasure, ValueTables, TOL_ZERO};
use crate::qp::{self, QpDiagnostics, QpProblem, QpSettings};

/// Constraint tolerance every returned attack is checked against.
pub const TOL_FEAS: f64 = 1e-6;

/// Largest policy count for which [`verify_forced`] enumerates.
pub const VERIFY_ENUM_CAP: u128 = 10_000;

const MAX_OFFENDERS: usize = 5;

/// Inputs of one forcing problem.
#[derive(Debug, Clone)]
pub struct AttackProblem<'a> {
    pub mdp: &'a Mdp,
    pub target: DetPolicy,
    pub epsilon: f64,
    /// Per-pair Q-value margins; zero off the target's support and on target actions.
    pub eps_prime: StateActionTable,
}

impl<'a> AttackProblem<'a> {
    /// Problem with the margins produced by [`epsilon_prime`].
    pub fn new(mdp: &'a Mdp, target: DetPolicy, epsilon: f64) -> Result<Self> {
        let eps_prime = epsilon_prime(mdp, &target, epsilon)?;
        Ok(AttackProblem { mdp, target, epsilon, eps_prime })
    }

    /// Problem with caller-supplied non-negative margins.
    pub fn with_eps_prime(mdp: &'a Mdp, target: DetPolicy, epsilon: f64, eps_prime: StateActionTable) -> Result<Self> {
        check_epsilon(epsilon)?;
        mdp.check_policy(&target)?;
        mdp.check_reward(&eps_prime)?;
        if eps_prime.as_slice().iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::InvalidArgument("eps_prime must be finite and non-negative".into()));
        }
        Ok(AttackProblem { mdp, target, epsilon, eps_prime })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerificationMode {
    EnumeratedPolicies,
    BellmanClosure,
}

/// One violated (or tightest) constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Offender {
    pub constraint: String,
    pub state: Option<usize>,
    pub action: Option<usize>,
    pub policy: Option<DetPolicy>,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub passed: bool,
    /// Largest constraint violation, zero when every constraint holds.
    pub max_violation: f64,
    /// Smallest `rho(target) - rho(pi)` over deviating policies (enumeration only).
    pub min_score_gap: Option<f64>,
    pub offenders: Vec<Offender>,
    pub mode: VerificationMode,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackSolution {
    pub cost: f64,
    pub r_hat: RewardTable,
    #[serde(skip)]
    pub q_v: ValueTables,
    pub diagnostics: QpDiagnostics,
    pub feasibility: FeasibilityReport,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    Ok(())
}

/// Margins `eps / min_{pi in D} mu^pi(s~)` where `D` holds the policies that
/// follow the target on its support except for action `a~` at `s~`.
///
/// The minimum is a pessimal planning problem with reward `1{s = s~}`.
pub fn epsilon_prime(mdp: &Mdp, target: &DetPolicy, epsilon: f64) -> Result<StateActionTable> {
    check_epsilon(epsilon)?;
    let occ = planning::occupancy(mdp, target)?;
    let mut out = StateActionTable::zeros(mdp.n_states(), mdp.n_actions());
    if epsilon == 0.0 {
        return Ok(out);
    }
    let pairs: Vec<(usize, usize)> = occ
        .support
        .iter()
        .flat_map(|&s| mdp.available_actions(s).filter(move |&a| a != target.action(s)).map(move |a| (s, a)))
        .collect();
    let values: Vec<Result<f64>> =
        pairs.par_iter().map(|&(s, a)| min_occupancy(mdp, target, &occ, s, a)).collect();
    for (&(s, a), v) in pairs.iter().zip(values) {
        let mu = v?;
        if mu <= TOL_ZERO {
            return Err(Error::DegenerateDenominator { state: s, action: a, value: mu });
        }
        out[(s, a)] = epsilon / mu;
    }
    Ok(out)
}

fn min_occupancy(mdp: &Mdp, target: &DetPolicy, occ: &OccupancyMeasure, s_tilde: usize, a_tilde: usize) -> Result<f64> {
    let mut fixed: Vec<Option<usize>> = vec![None; mdp.n_states()];
    for &s in &occ.support {
        fixed[s] = Some(target.action(s));
    }
    fixed[s_tilde] = Some(a_tilde);
    let mut indicator = StateActionTable::zeros(mdp.n_states(), mdp.n_actions());
    for a in 0..mdp.n_actions() {
        indicator[(s_tilde, a)] = 1.0;
    }
    let vt = planning::value_iteration(mdp, &indicator, Mode::Minimize, None, Some(&fixed))?;
    Ok(planning::score_from_values(mdp, &vt))
}

/// Feasible attack built from optimal Q-values: raise the target reward by its
/// Q-gap and lower every competitor by its margin, on visited states only.
pub fn constructive_attack(mdp: &Mdp, target: &DetPolicy, epsilon: f64) -> Result<AttackSolution> {
    let eps_prime = epsilon_prime(mdp, target, epsilon)?;
    let problem = AttackProblem { mdp, target: target.clone(), epsilon, eps_prime };
    let (r, q, v) = constructive_point(&problem)?;
    let feasibility = verify_with(mdp, &r, target, epsilon, Some(&problem.eps_prime), VERIFY_ENUM_CAP)?;
    Ok(AttackSolution {
        cost: r.l2_distance(mdp.base_reward()),
        r_hat: r,
        q_v: ValueTables { q, v, residual: 0.0, greedy: target.clone() },
        diagnostics: QpDiagnostics::default(),
        feasibility,
    })
}

fn constructive_point(problem: &AttackProblem) -> Result<(RewardTable, StateActionTable, Vec<f64>)> {
    let mdp = problem.mdp;
    let target = &problem.target;
    mdp.check_policy(target)?;
    let opt = planning::value_iteration(mdp, mdp.base_reward(), Mode::Maximize, None, None)?;
    let occ = planning::occupancy(mdp, target)?;
    let mut r = mdp.base_reward().clone();
    for &s in &occ.support {
        let t = target.action(s);
        r[(s, t)] += opt.q[(s, opt.greedy.action(s))] - opt.q[(s, t)];
        for a in mdp.available_actions(s).filter(|&a| a != t) {
            r[(s, a)] -= problem.eps_prime[(s, a)];
        }
    }
    let mut q = StateActionTable::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            q[(s, a)] = r[(s, a)] + mdp.gamma() * mdp.expected_next(s, a, &opt.v);
        }
    }
    Ok((r, q, opt.v))
}

/// Variable layout of the QP: one Q per available pair, then one V per state.
struct Layout {
    pairs: Vec<(usize, usize)>,
    q_index: Vec<Option<usize>>,
    n_actions: usize,
}

impl Layout {
    fn new(mdp: &Mdp) -> Self {
        let mut pairs = Vec::new();
        let mut q_index = vec![None; mdp.n_states() * mdp.n_actions()];
        for s in 0..mdp.n_states() {
            for a in mdp.available_actions(s) {
                q_index[s * mdp.n_actions() + a] = Some(pairs.len());
                pairs.push((s, a));
            }
        }
        Layout { pairs, q_index, n_actions: mdp.n_actions() }
    }

    fn q(&self, s: usize, a: usize) -> usize {
        self.q_index[s * self.n_actions + a].expect("pair is available")
    }

    fn v(&self, s: usize) -> usize {
        self.pairs.len() + s
    }

    fn n_vars(&self, n_states: usize) -> usize {
        self.pairs.len() + n_states
    }
}

/// Minimizes `||R - R_bar||_2` over rewards whose `(Q, V)` certify that the
/// target beats every competitor by its margin on visited states.
pub fn solve_attack(problem: &AttackProblem) -> Result<AttackSolution> {
    solve_attack_with(problem, &QpSettings::default())
}

pub fn solve_attack_with(problem: &AttackProblem, settings: &QpSettings) -> Result<AttackSolution> {
    let mdp = problem.mdp;
    let target = &problem.target;
    check_epsilon(problem.epsilon)?;
    mdp.check_policy(target)?;
    let occ = planning::occupancy(mdp, target)?;
    let layout = Layout::new(mdp);
    let ns = mdp.n_states();
    let nv = layout.n_vars(ns);
    let g = mdp.gamma();

    // R = M x with M = [I | -gamma P]
    let mut m = DMatrix::<f64>::zeros(layout.pairs.len(), nv);
    let mut r_bar = DVector::<f64>::zeros(layout.pairs.len());
    for (k, &(s, a)) in layout.pairs.iter().enumerate() {
        m[(k, k)] = 1.0;
        for &(n, p) in mdp.successors(s, a) {
            m[(k, layout.v(n))] -= g * p;
        }
        r_bar[k] = mdp.base_reward()[(s, a)];
    }
    let p_mat = m.tr_mul(&m);
    let q_vec = -m.tr_mul(&r_bar);

    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
    let on_support: Vec<bool> = (0..ns).map(|s| occ.visits(s)).collect();
    for s in 0..ns {
        let t = target.action(s);
        if on_support[s] {
            for a in mdp.available_actions(s).filter(|&a| a != t) {
                rows.push((vec![(layout.q(s, t), 1.0), (layout.q(s, a), -1.0)], problem.eps_prime[(s, a)], f64::INFINITY));
            }
            rows.push((vec![(layout.v(s), 1.0), (layout.q(s, t), -1.0)], 0.0, 0.0));
        } else {
            for a in mdp.available_actions(s) {
                rows.push((vec![(layout.v(s), 1.0), (layout.q(s, a), -1.0)], 0.0, f64::INFINITY));
            }
        }
    }
    let mut a_mat = DMatrix::<f64>::zeros(rows.len(), nv);
    let mut l = DVector::<f64>::zeros(rows.len());
    let mut u = DVector::<f64>::zeros(rows.len());
    for (i, (coeffs, lo, hi)) in rows.iter().enumerate() {
        for &(j, c) in coeffs {
            a_mat[(i, j)] += c;
        }
        l[i] = *lo;
        u[i] = *hi;
    }

    let (_, q0, v0) = constructive_point(problem)?;
    let mut warm = DVector::<f64>::zeros(nv);
    for (k, &(s, a)) in layout.pairs.iter().enumerate() {
        warm[k] = q0[(s, a)];
    }
    for s in 0..ns {
        warm[layout.v(s)] = v0[s];
    }

    let qp_problem = QpProblem { p: p_mat, q: q_vec, a: a_mat, l, u };
    let sol = qp::solve(&qp_problem, settings, Some(&warm));
    let diag = sol.diagnostics;
    if !diag.converged {
        return Err(Error::SolverDiverged {
            iterations: diag.iterations,
            primal: diag.primal_residual,
            dual: diag.dual_residual,
        });
    }

    // Repair: make every constraint hold exactly, then read off R.
    let x = sol.x;
    let mut q = StateActionTable::zeros(ns, mdp.n_actions());
    for (k, &(s, a)) in layout.pairs.iter().enumerate() {
        q[(s, a)] = x[k];
    }
    let mut v: Vec<f64> = (0..ns).map(|s| x[layout.v(s)]).collect();
    for s in 0..ns {
        let t = target.action(s);
        if on_support[s] {
            for a in mdp.available_actions(s).filter(|&a| a != t) {
                q[(s, a)] = q[(s, a)].min(q[(s, t)] - problem.eps_prime[(s, a)]);
            }
            v[s] = q[(s, t)];
        } else {
            v[s] = mdp.available_actions(s).map(|a| q[(s, a)]).fold(v[s], f64::max);
        }
    }
    let mut r_hat = mdp.base_reward().clone();
    for &(s, a) in &layout.pairs {
        r_hat[(s, a)] = q[(s, a)] - g * mdp.expected_next(s, a, &v);
    }
    for s in 0..ns {
        for a in (0..mdp.n_actions()).filter(|&a| !mdp.is_available(s, a)) {
            q[(s, a)] = r_hat[(s, a)] + g * mdp.expected_next(s, a, &v);
        }
    }

    let feasibility = verify_with(mdp, &r_hat, target, problem.epsilon, Some(&problem.eps_prime), VERIFY_ENUM_CAP)?;
    Ok(AttackSolution {
        cost: r_hat.l2_distance(mdp.base_reward()),
        r_hat,
        q_v: ValueTables { q, v, residual: diag.primal_residual, greedy: target.clone() },
        diagnostics: diag,
        feasibility,
    })
}

/// Checks that `r_hat` makes every policy deviating from `target` on its
/// support at least `epsilon` worse in score.
///
/// Small instances are checked by enumeration; larger ones by the margin
/// constraints on the optimal Q-values of `r_hat`.
pub fn verify_forced(mdp: &Mdp, r_hat: &RewardTable, target: &DetPolicy, epsilon: f64) -> Result<FeasibilityReport> {
    verify_with(mdp, r_hat, target, epsilon, None, VERIFY_ENUM_CAP)
}

pub fn verify_forced_with_cap(
    mdp: &Mdp,
    r_hat: &RewardTable,
    target: &DetPolicy,
    epsilon: f64,
    cap: u128,
) -> Result<FeasibilityReport> {
    verify_with(mdp, r_hat, target, epsilon, None, cap)
}

fn keep_worst(offenders: &mut Vec<Offender>) {
    offenders.sort_by(|a, b| b.violation.total_cmp(&a.violation));
    offenders.truncate(MAX_OFFENDERS);
}

fn verify_with(
    mdp: &Mdp,
    r_hat: &RewardTable,
    target: &DetPolicy,
    epsilon: f64,
    eps_prime: Option<&StateActionTable>,
    cap: u128,
) -> Result<FeasibilityReport> {
    mdp.check_reward(r_hat)?;
    mdp.check_policy(target)?;
    let occ = planning::occupancy(mdp, target)?;
    if mdp.policy_count() <= cap {
        let rho_target = planning::score_with(&occ, r_hat, target);
        let choices: Vec<Vec<usize>> = (0..mdp.n_states()).map(|s| mdp.available_actions(s).collect()).collect();
        let enumeration = PolicyEnumeration::new(choices, cap)?;
        let gaps: Vec<(DetPolicy, f64)> = (0..enumeration.count())
            .into_par_iter()
            .filter_map(|i| {
                let pi = enumeration.policy(i);
                let deviates = occ.support.iter().any(|&s| pi.action(s) != target.action(s));
                deviates.then(|| {
                    let rho = planning::score(mdp, r_hat, &pi).expect("enumerated policies are valid");
                    (pi, rho_target - rho)
                })
            })
            .collect();
        let min_gap = gaps.iter().map(|(_, g)| *g).fold(None, |m: Option<f64>, g| Some(m.map_or(g, |m| m.min(g))));
        let mut offenders: Vec<Offender> = gaps
            .into_iter()
            .filter(|(_, g)| epsilon - g > 0.0)
            .map(|(pi, g)| Offender {
                constraint: "score-gap".into(),
                state: None,
                action: None,
                policy: Some(pi),
                violation: epsilon - g,
            })
            .collect();
        keep_worst(&mut offenders);
        let max_violation = min_gap.map_or(0.0, |g| (epsilon - g).max(0.0));
        return Ok(FeasibilityReport {
            passed: max_violation <= TOL_FEAS,
            max_violation,
            min_score_gap: min_gap,
            offenders,
            mode: VerificationMode::EnumeratedPolicies,
        });
    }

    let computed;
    let eps_prime = match eps_prime {
        Some(e) => e,
        None => {
            computed = epsilon_prime(mdp, target, epsilon)?;
            &computed
        }
    };
    let vt = planning::value_iteration(mdp, r_hat, Mode::Maximize, None, None)?;
    let mut offenders = Vec::new();
    for &s in &occ.support {
        let t = target.action(s);
        let vq = vt.v[s] - vt.q[(s, t)];
        if vq > 0.0 {
            offenders.push(Offender {
                constraint: "vqone".into(),
                state: Some(s),
                action: Some(t),
                policy: None,
                violation: vq,
            });
        }
        for a in mdp.available_actions(s).filter(|&a| a != t) {
            let short = eps_prime[(s, a)] - (vt.q[(s, t)] - vt.q[(s, a)]);
            if short > 0.0 {
                offenders.push(Offender {
                    constraint: "ge".into(),
                    state: Some(s),
                    action: Some(a),
                    policy: None,
                    violation: short,
                });
            }
        }
    }
    keep_worst(&mut offenders);
    let max_violation = offenders.first().map_or(0.0, |o| o.violation);
    Ok(FeasibilityReport {
        passed: max_violation <= TOL_FEAS,
        max_violation,
        min_score_gap: None,
        offenders,
        mode: VerificationMode::BellmanClosure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{b2, stay_or_move};

    #[test]
    fn b2_margins() {
        let mdp = b2();
        let e = epsilon_prime(&mdp, &DetPolicy(vec![1]), 0.1).unwrap();
        assert!((e[(0, 0)] - 0.1).abs() < 1e-12);
        assert_eq!(e[(0, 1)], 0.0);
        let zero = epsilon_prime(&mdp, &DetPolicy(vec![1]), 0.0).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_epsilon_is_rejected() {
        assert!(epsilon_prime(&b2(), &DetPolicy(vec![0]), -0.1).unwrap_err().is_input_error());
    }

    #[test]
    fn b2_constructive() {
        let mdp = b2();
        let sol = constructive_attack(&mdp, &DetPolicy(vec![1]), 0.1).unwrap();
        assert!((sol.r_hat[(0, 0)] - 0.9).abs() < 1e-9);
        assert!((sol.r_hat[(0, 1)] - 1.0).abs() < 1e-9);
        assert!((sol.cost - (1.0f64 + 0.01).sqrt()).abs() < 1e-9);
        assert!(sol.feasibility.passed);

        let opt = constructive_attack(&mdp, &DetPolicy(vec![0]), 0.1).unwrap();
        assert!((opt.r_hat[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((opt.r_hat[(0, 1)] + 0.1).abs() < 1e-9);
        assert!((opt.cost - 0.1).abs() < 1e-9);

        let none = constructive_attack(&mdp, &DetPolicy(vec![0]), 0.0).unwrap();
        assert!(none.cost.abs() < 1e-9);
    }

    #[test]
    fn b2_quadratic_program() {
        let mdp = b2();
        let sol = solve_attack(&AttackProblem::new(&mdp, DetPolicy(vec![1]), 0.1).unwrap()).unwrap();
        assert!((sol.r_hat[(0, 0)] - 0.45).abs() < 1e-6, "{:?}", sol.r_hat);
        assert!((sol.r_hat[(0, 1)] - 0.55).abs() < 1e-6);
        assert!((sol.cost - 0.55 * 2f64.sqrt()).abs() < 1e-6);
        assert!(sol.feasibility.passed);

        let free = solve_attack(&AttackProblem::new(&mdp, DetPolicy(vec![0]), 0.1).unwrap()).unwrap();
        assert!(free.cost < 1e-7, "{}", free.cost);
    }

    #[test]
    fn verification_on_b2() {
        let mdp = b2();
        let closed = RewardTable::from_rows(&[vec![0.45, 0.55]]).unwrap();
        let ok = verify_forced(&mdp, &closed, &DetPolicy(vec![1]), 0.1).unwrap();
        assert!(ok.passed && ok.max_violation <= 1e-8);
        assert_eq!(ok.mode, VerificationMode::EnumeratedPolicies);

        let bad = verify_forced(&mdp, mdp.base_reward(), &DetPolicy(vec![1]), 0.1).unwrap();
        assert!(!bad.passed);
        assert!((bad.min_score_gap.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn closure_mode_agrees_on_b2() {
        let mdp = b2();
        let closed = RewardTable::from_rows(&[vec![0.45, 0.55]]).unwrap();
        let ok = verify_forced_with_cap(&mdp, &closed, &DetPolicy(vec![1]), 0.1, 0).unwrap();
        assert_eq!(ok.mode, VerificationMode::BellmanClosure);
        assert!(ok.passed);
        let bad = verify_forced_with_cap(&mdp, mdp.base_reward(), &DetPolicy(vec![1]), 0.1, 0).unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn single_action_is_vacuous() {
        let mdp = Mdp::new(vec![vec![vec![1.0]]], RewardTable::zeros(1, 1), 0.5, vec![1.0]).unwrap();
        let report = verify_forced(&mdp, mdp.base_reward(), &DetPolicy(vec![0]), 0.3).unwrap();
        assert!(report.passed);
        assert_eq!(report.min_score_gap, None);
    }

    #[test]
    fn two_state_attack_is_feasible_and_cheaper() {
        let mdp = stay_or_move();
        for target in [vec![0, 0], vec![1, 1], vec![1, 0], vec![0, 1]] {
            let target = DetPolicy(target);
            let qp = solve_attack(&AttackProblem::new(&mdp, target.clone(), 0.1).unwrap()).unwrap();
            let cons = constructive_attack(&mdp, &target, 0.1).unwrap();
            assert!(qp.feasibility.passed, "{target:?} {:?}", qp.feasibility);
            assert!(qp.cost <= cons.cost + 1e-6);
        }
    }
}
