#![allow(dead_code)]

use apt_forge::{DetPolicy, Mdp, RewardTable};

/// One state, two self-loops paying 1 and 0.
pub fn b2() -> Mdp {
    Mdp::new(vec![vec![vec![1.0], vec![1.0]]], RewardTable::from_rows(&[vec![1.0, 0.0]]).unwrap(), 0.9, vec![1.0])
        .unwrap()
}

/// Two states that swap every step regardless of the action.
pub fn two_cycle() -> Mdp {
    Mdp::new(
        vec![vec![vec![0.0, 1.0]; 2], vec![vec![1.0, 0.0]; 2]],
        RewardTable::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.0]]).unwrap(),
        0.9,
        vec![1.0, 0.0],
    )
    .unwrap()
}

/// Two states; action 0 stays, action 1 moves to the other state.
pub fn stay_or_move() -> Mdp {
    Mdp::new(
        vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]],
        RewardTable::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap(),
        0.9,
        vec![1.0, 0.0],
    )
    .unwrap()
}

pub fn pi(actions: &[usize]) -> DetPolicy {
    DetPolicy(actions.to_vec())
}
