//! Seeded random MDPs for property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::mdp::{ActionMask, DetPolicy, Mdp, RewardTable};
use crate::policy_search::AdmissibleSet;

/// Normalized vector of unit exponentials, i.e. a flat Dirichlet draw.
/// Entries for which `keep` is false are zero.
fn dirichlet(rng: &mut ChaCha8Rng, keep: &[bool]) -> Vec<f64> {
    let mut w: Vec<f64> = keep.iter().map(|&k| if k { rng.sample::<f64, _>(Exp1) + 1e-3 } else { 0.0 }).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

fn rewards(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, range: (f64, f64)) -> RewardTable {
    let mut r = RewardTable::zeros(n_states, n_actions);
    for s in 0..n_states {
        for a in 0..n_actions {
            r[(s, a)] = if range.0 < range.1 { rng.random_range(range.0..range.1) } else { range.0 };
        }
    }
    r
}

/// Dense random MDP with discount 0.9 and a full-support initial distribution.
/// With `special`, every action of a state shares one transition row.
///
/// # Panics
/// If either size is zero.
pub fn random_mdp(seed: u64, n_states: usize, n_actions: usize, special: bool, reward_range: (f64, f64)) -> Mdp {
    assert!(n_states > 0 && n_actions > 0, "sizes must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let full = vec![true; n_states];
    let transitions: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            if special {
                let row = dirichlet(&mut rng, &full);
                vec![row; n_actions]
            } else {
                (0..n_actions).map(|_| dirichlet(&mut rng, &full)).collect()
            }
        })
        .collect();
    let reward = rewards(&mut rng, n_states, n_actions, reward_range);
    let sigma = dirichlet(&mut rng, &full);
    Mdp::new(transitions, reward, 0.9, sigma).expect("generated MDP is valid")
}

/// Random MDP whose rows each reach a random subset of states and whose
/// initial distribution sits on state 0, so policies visit different states.
pub fn random_sparse_mdp(seed: u64, n_states: usize, n_actions: usize, density: f64, reward_range: (f64, f64)) -> Mdp {
    assert!(n_states > 0 && n_actions > 0, "sizes must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let mut keep: Vec<bool> = (0..n_states).map(|_| rng.random_bool(density.clamp(0.0, 1.0))).collect();
                    if !keep.iter().any(|&k| k) {
                        keep[rng.random_range(0..n_states)] = true;
                    }
                    dirichlet(&mut rng, &keep)
                })
                .collect()
        })
        .collect();
    let reward = rewards(&mut rng, n_states, n_actions, reward_range);
    let mut sigma = vec![0.0; n_states];
    sigma[0] = 1.0;
    Mdp::new(transitions, reward, 0.9, sigma).expect("generated MDP is valid")
}

/// Marks each action inadmissible with probability `p_inadmissible`.
pub fn random_admissible(seed: u64, mdp: &Mdp, p_inadmissible: f64) -> AdmissibleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = (0..mdp.n_states())
        .map(|_| (0..mdp.n_actions()).map(|_| !rng.random_bool(p_inadmissible.clamp(0.0, 1.0))).collect())
        .collect();
    AdmissibleSet::new(ActionMask(mask))
}

/// Uniformly random deterministic policy over the available actions.
pub fn random_policy(seed: u64, mdp: &Mdp) -> DetPolicy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DetPolicy(
        (0..mdp.n_states())
            .map(|s| {
                let acts: Vec<usize> = mdp.available_actions(s).collect();
                acts[rng.random_range(0..acts.len())]
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planning::{is_special, TOL_SPECIAL};

    #[test]
    fn deterministic_and_normalized() {
        let a = random_mdp(7, 4, 3, false, (-1.0, 1.0));
        let b = random_mdp(7, 4, 3, false, (-1.0, 1.0));
        assert_eq!(serde_json::to_string(&a.to_file(None)).unwrap(), serde_json::to_string(&b.to_file(None)).unwrap());
        for s in 0..4 {
            for act in 0..3 {
                let sum: f64 = a.successors(s, act).iter().map(|&(_, p)| p).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(!is_special(&a, TOL_SPECIAL));
        assert!(is_special(&random_mdp(7, 4, 3, true, (0.0, 1.0)), TOL_SPECIAL));
    }

    #[test]
    fn sparse_rows_keep_mass() {
        let m = random_sparse_mdp(3, 5, 2, 0.2, (0.0, 1.0));
        assert_eq!(m.initial()[0], 1.0);
        assert!(m.successors(0, 0).len() <= 5);
    }
}
