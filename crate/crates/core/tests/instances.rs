use apt_forge::instances::grid::{build_grid, GridSpec};
use apt_forge::instances::random::{random_mdp, random_policy, random_sparse_mdp};
use apt_forge::instances::x3c::{x3c_reduction, X3cInstance};
use apt_forge::instances::{bundled_env, BUNDLED_ENVS};
use apt_forge::mdp::validate_mdp;
use apt_forge::planning::occupancy;

fn two_sets() -> X3cInstance {
    X3cInstance { k: 2, subsets: vec![vec![1, 2, 3], vec![3, 4, 5], vec![4, 5, 6], vec![1, 5, 6]] }
}

#[test]
fn generated_mdps_round_trip_through_validation() {
    for seed in 0..10 {
        for mdp in [random_mdp(seed, 4, 3, seed % 2 == 0, (-1.0, 1.0)), random_sparse_mdp(seed, 5, 2, 0.3, (0.0, 1.0))] {
            let again = validate_mdp(&mdp.to_file(None)).unwrap();
            let json = |m: &apt_forge::Mdp| serde_json::to_string(&m.to_file(None)).unwrap();
            assert_eq!(json(&again), json(&mdp));
        }
    }
    for name in BUNDLED_ENVS {
        let world = bundled_env(name).unwrap();
        validate_mdp(&world.mdp.to_file(Some(&world.admissible))).unwrap();
        world.admissible.check(&world.mdp).unwrap();
    }
}

#[test]
fn every_reduction_path_is_three_steps() {
    let red = x3c_reduction(&two_sets(), 0.1, 0.9, 0.5, Some(2)).unwrap();
    let mdp = &red.mdp;
    let layer = |from: &[usize]| -> Vec<usize> {
        let mut next: Vec<usize> = from
            .iter()
            .flat_map(|&s| mdp.available_actions(s).flat_map(move |a| mdp.successors(s, a).iter().map(|&(n, _)| n)))
            .collect();
        next.sort_unstable();
        next.dedup();
        next
    };
    let first = layer(&[red.start]);
    let third = layer(&layer(&first));
    assert_eq!(third, vec![red.final_state]);
    assert_eq!(layer(&third), vec![red.start]);

    // any policy visits the final state with the same occupancy
    let reference = occupancy(mdp, &random_policy(0, mdp)).unwrap().mu[red.final_state];
    for seed in 1..200 {
        let mu = occupancy(mdp, &random_policy(seed, mdp)).unwrap().mu[red.final_state];
        assert!((mu - reference).abs() < 1e-12);
    }
}

#[test]
fn copies_share_their_local_structure() {
    let red = x3c_reduction(&two_sets(), 0.1, 0.9, 0.5, Some(3)).unwrap();
    let mdp = &red.mdp;
    let first = &red.copies[0];
    let local = |copy: &apt_forge::instances::x3c::ReductionCopy| {
        let own: Vec<usize> = copy.elements.iter().copied().chain([copy.star, copy.dead_end, copy.exit]).collect();
        own.iter()
            .map(|&s| {
                mdp.available_actions(s)
                    .map(|a| {
                        let succ: Vec<(usize, u64)> = mdp
                            .successors(s, a)
                            .iter()
                            .map(|&(n, p)| (own.iter().position(|&o| o == n).map_or(n, |i| 10_000 + i), p.to_bits()))
                            .collect();
                        (a, mdp.base_reward()[(s, a)].to_bits(), red.admissible.allows(s, a), succ)
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    for copy in &red.copies[1..] {
        assert_eq!(local(copy), local(first));
    }
}

#[test]
fn grid_rejects_bad_layouts() {
    let spec = |cells: &[&str]| -> GridSpec {
        serde_json::from_value(serde_json::json!({"cells": cells, "rewards": {"step": -1.0, "goal": 1.0}})).unwrap()
    };
    assert!(build_grid(&spec(&["S.G"])).is_ok());
    assert!(build_grid(&spec(&["..G"])).is_err());
    assert!(build_grid(&spec(&["S.G", ".."])).is_err());
    assert!(build_grid(&spec(&["S?G"])).is_err());
}

#[test]
fn data_directory_overrides_bundled_layouts() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cliff.json"),
        r#"{"cells": ["S.G"], "rewards": {"step": -1.0, "goal": 20.0}}"#,
    )
    .unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_apt-forge"))
        .args(["generate", "--env", "cliff"])
        .env("APT_FORGE_DATA", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let file: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(file["n_states"], 3);
}
