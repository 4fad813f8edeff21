//! Tabular MDP representation, validation and the JSON file format.
//!
//! An [`Mdp`] stores the dense transition tensor `P[s][a][s']`, the base reward
//! table, the discount and the initial state distribution. States may expose
//! only a subset of the action alphabet: an unavailable action behaves like an
//! action with reward `-inf`, so it never enters a policy, a Bellman maximum,
//! an attack constraint or a reward-modification cost.

use std::ops::{Index, IndexMut};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, MdpIssue, Result};
use crate::policy_search::AdmissibleSet;

/// Row-sum tolerance for stochastic rows and the initial distribution.
pub const TOL_STOCHASTIC: f64 = 1e-12;

/// Dense `[s][a]` table of reals: rewards, Q-values, slacks.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

/// Reward tables share the state-action layout.
pub type RewardTable = StateActionTable;

impl StateActionTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        StateActionTable { n_states, n_actions, values: vec![value; n_states * n_actions] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::InvalidArgument("reward rows have unequal lengths".into()));
        }
        Ok(StateActionTable { n_states, n_actions, values: rows.concat() })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_states).map(|s| self.row(s).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Euclidean distance to another table of the same shape.
    pub fn l2_distance(&self, other: &StateActionTable) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_difference(&self, other: &StateActionTable) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl Index<(usize, usize)> for StateActionTable {
    type Output = f64;

    fn index(&self, (s, a): (usize, usize)) -> &f64 {
        &self.values[s * self.n_actions + a]
    }
}

impl IndexMut<(usize, usize)> for StateActionTable {
    fn index_mut(&mut self, (s, a): (usize, usize)) -> &mut f64 {
        &mut self.values[s * self.n_actions + a]
    }
}

impl Serialize for StateActionTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateActionTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        StateActionTable::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Deterministic policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetPolicy(pub Vec<usize>);

impl DetPolicy {
    pub fn constant(n_states: usize, action: usize) -> Self {
        DetPolicy(vec![action; n_states])
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Boolean `[s][a]` mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionMask(pub Vec<Vec<bool>>);

impl ActionMask {
    pub fn full(n_states: usize, n_actions: usize) -> Self {
        ActionMask(vec![vec![true; n_actions]; n_states])
    }

    pub fn allows(&self, s: usize, a: usize) -> bool {
        self.0[s][a]
    }

    pub fn actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.0[s].iter().enumerate().filter(|(_, ok)| **ok).map(|(a, _)| a)
    }
}

/// The on-disk MDP document. Field names follow the library-wide JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub sigma: Vec<f64>,
    #[serde(rename = "P")]
    pub transitions: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    pub reward: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admissible: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub available: Option<Vec<Vec<bool>>>,
}

/// Validated tabular MDP.
#[derive(Debug, Clone)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transitions: Vec<f64>,
    successors: Vec<Vec<(usize, f64)>>,
    base_reward: RewardTable,
    gamma: f64,
    initial: Vec<f64>,
    available: ActionMask,
}

impl Mdp {
    /// Builds an MDP in which every action is available.
    pub fn new(
        transitions: Vec<Vec<Vec<f64>>>,
        base_reward: RewardTable,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        Self::with_available(transitions, base_reward, gamma, initial, None)
    }

    pub fn with_available(
        transitions: Vec<Vec<Vec<f64>>>,
        base_reward: RewardTable,
        gamma: f64,
        initial: Vec<f64>,
        available: Option<ActionMask>,
    ) -> Result<Self> {
        let file = MdpFile {
            n_states: transitions.len(),
            n_actions: base_reward.n_actions(),
            gamma,
            sigma: initial,
            transitions,
            reward: base_reward.rows(),
            admissible: None,
            available: available.map(|m| m.0),
        };
        validate_mdp(&file)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn base_reward(&self) -> &RewardTable {
        &self.base_reward
    }

    /// `P(s, a, next)`.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Non-zero entries of the row `P(s, a, .)`.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + a]
    }

    pub fn is_available(&self, s: usize, a: usize) -> bool {
        self.available.allows(s, a)
    }

    pub fn available(&self) -> &ActionMask {
        &self.available
    }

    pub fn available_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.available.actions(s)
    }

    /// Lowest-index available action of `s`.
    pub fn first_available(&self, s: usize) -> usize {
        self.available_actions(s).next().expect("validated MDP has an action in every state")
    }

    /// `sum_{s'} P(s, a, s') v(s')`.
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.successors(s, a).iter().map(|&(n, p)| p * v[n]).sum()
    }

    /// Number of deterministic policies over available actions, saturating.
    pub fn policy_count(&self) -> u128 {
        (0..self.n_states)
            .map(|s| self.available_actions(s).count() as u128)
            .fold(1u128, |acc, c| acc.saturating_mul(c))
    }

    /// Same MDP with a different base reward.
    pub fn with_reward(&self, reward: RewardTable) -> Result<Self> {
        if reward.n_states() != self.n_states || reward.n_actions() != self.n_actions {
            return Err(Error::InvalidArgument("reward table shape does not match the MDP".into()));
        }
        let mut out = self.clone();
        out.base_reward = reward;
        Ok(out)
    }

    pub fn check_policy(&self, policy: &DetPolicy) -> Result<()> {
        if policy.len() != self.n_states {
            return Err(Error::InvalidPolicy(format!(
                "policy has {} entries for {} states",
                policy.len(),
                self.n_states
            )));
        }
        for (s, &a) in policy.0.iter().enumerate() {
            if a >= self.n_actions || !self.is_available(s, a) {
                return Err(Error::InvalidPolicy(format!("action {a} is not available at state {s}")));
            }
        }
        Ok(())
    }

    pub fn check_reward(&self, reward: &RewardTable) -> Result<()> {
        if reward.n_states() != self.n_states || reward.n_actions() != self.n_actions {
            return Err(Error::InvalidArgument(format!(
                "reward table is {}x{}, MDP is {}x{}",
                reward.n_states(),
                reward.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    pub fn to_file(&self, admissible: Option<&AdmissibleSet>) -> MdpFile {
        let transitions = (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| (0..self.n_states).map(|n| self.prob(s, a, n)).collect())
                    .collect()
            })
            .collect();
        let all_available = self.available.0.iter().all(|r| r.iter().all(|&b| b));
        MdpFile {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            sigma: self.initial.clone(),
            transitions,
            reward: self.base_reward.rows(),
            admissible: admissible.map(|a| a.mask.0.clone()),
            available: (!all_available).then(|| self.available.0.clone()),
        }
    }
}

/// Checks every invariant of a candidate MDP and reports all violations at once.
pub fn validate_mdp(raw: &MdpFile) -> Result<Mdp> {
    let mut issues = Vec::new();
    let (ns, na) = (raw.n_states, raw.n_actions);
    if ns == 0 || na == 0 {
        issues.push(MdpIssue::Shape(format!("n_states = {ns}, n_actions = {na}; both must be positive")));
        return Err(Error::InvalidMdp(issues));
    }
    if raw.transitions.len() != ns || raw.transitions.iter().any(|r| r.len() != na || r.iter().any(|x| x.len() != ns)) {
        issues.push(MdpIssue::Shape(format!("P must have shape [{ns}][{na}][{ns}]")));
    }
    if raw.reward.len() != ns || raw.reward.iter().any(|r| r.len() != na) {
        issues.push(MdpIssue::Shape(format!("R must have shape [{ns}][{na}]")));
    }
    if raw.sigma.len() != ns {
        issues.push(MdpIssue::Shape(format!("sigma must have length {ns}")));
    }
    for (name, mask) in [("available", &raw.available), ("admissible", &raw.admissible)] {
        if let Some(m) = mask {
            if m.len() != ns || m.iter().any(|r| r.len() != na) {
                issues.push(MdpIssue::Shape(format!("{name} must have shape [{ns}][{na}]")));
            }
        }
    }
    if !issues.is_empty() {
        return Err(Error::InvalidMdp(issues));
    }

    if !(raw.gamma.is_finite() && (0.0..1.0).contains(&raw.gamma)) {
        issues.push(MdpIssue::BadDiscount(raw.gamma));
    }
    if raw.reward.iter().flatten().any(|r| !r.is_finite()) {
        issues.push(MdpIssue::NonFinite("R".into()));
    }
    let sigma_sum: f64 = raw.sigma.iter().sum();
    if raw.sigma.iter().any(|p| !p.is_finite() || *p < 0.0) {
        issues.push(MdpIssue::BadInitialDist("negative or non-finite entry".into()));
    } else if (sigma_sum - 1.0).abs() > TOL_STOCHASTIC {
        issues.push(MdpIssue::BadInitialDist(format!("sums to {sigma_sum}")));
    }
    for (s, rows) in raw.transitions.iter().enumerate() {
        for (a, row) in rows.iter().enumerate() {
            let mut negative = false;
            for (n, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    issues.push(MdpIssue::NegativeProbability { state: s, action: a, next: n, value: p });
                    negative = true;
                }
            }
            let sum: f64 = row.iter().sum();
            if !negative && (sum - 1.0).abs() > TOL_STOCHASTIC {
                issues.push(MdpIssue::NonStochasticRow { state: s, action: a, sum });
            }
        }
    }
    let available = ActionMask(raw.available.clone().unwrap_or_else(|| vec![vec![true; na]; ns]));
    for s in 0..ns {
        if !available.0[s].iter().any(|&b| b) {
            issues.push(MdpIssue::NoAvailableAction(s));
        }
    }
    if !issues.is_empty() {
        return Err(Error::InvalidMdp(issues));
    }

    let transitions: Vec<f64> = raw.transitions.iter().flatten().flatten().copied().collect();
    let successors = transitions
        .chunks(ns)
        .map(|row| row.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(n, p)| (n, *p)).collect())
        .collect();
    Ok(Mdp {
        n_states: ns,
        n_actions: na,
        transitions,
        successors,
        base_reward: StateActionTable::from_rows(&raw.reward)?,
        gamma: raw.gamma,
        initial: raw.sigma.clone(),
        available,
    })
}

/// Reads an MDP document and its optional admissible mask.
pub fn load_instance(path: &Path) -> Result<(Mdp, Option<AdmissibleSet>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    parse_instance(&text)
}

pub fn parse_instance(text: &str) -> Result<(Mdp, Option<AdmissibleSet>)> {
    let file: MdpFile = serde_json::from_str(text)?;
    let mdp = validate_mdp(&file)?;
    let admissible = file.admissible.map(|m| AdmissibleSet::new(ActionMask(m)));
    Ok((mdp, admissible))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// One state, two self-looping actions with rewards (1, 0), gamma 0.9.
    pub fn b2() -> Mdp {
        Mdp::new(
            vec![vec![vec![1.0], vec![1.0]]],
            StateActionTable::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            0.9,
            vec![1.0],
        )
        .unwrap()
    }

    /// Two states; action 0 stays, action 1 moves to the other state.
    pub fn stay_or_move() -> Mdp {
        Mdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            ],
            StateActionTable::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap(),
            0.9,
            vec![1.0, 0.0],
        )
        .unwrap()
    }
}
