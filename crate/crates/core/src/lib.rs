//! Reward design for admissible policy teaching in tabular MDPs.
//!
//! The crate computes minimal-cost reward modifications that make every
//! approximately optimal deterministic policy of an agent admissible, along
//! with the planning primitives, attack solvers, policy-search heuristics,
//! characterization bounds and brute-force oracles needed to evaluate them.
//!
//! ```
//! use apt_forge::mdp::{DetPolicy, Mdp, RewardTable};
//! use apt_forge::planning::score;
//!
//! // one state, two self-loops paying 1 and 0
//! let mdp = Mdp::new(
//!     vec![vec![vec![1.0], vec![1.0]]],
//!     RewardTable::from_rows(&[vec![1.0, 0.0]]).unwrap(),
//!     0.9,
//!     vec![1.0],
//! )
//! .unwrap();
//! let rho = score(&mdp, mdp.base_reward(), &DetPolicy(vec![0])).unwrap();
//! assert!((rho - 1.0).abs() < 1e-12);
//! ```

pub mod attack;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod instances;
pub mod mdp;
pub mod oracle;
pub mod planning;
pub mod policy_search;
pub mod qp;
pub mod special;

pub use attack::{AttackProblem, AttackSolution, FeasibilityReport};
pub use error::{Error, Result};
pub use mdp::{ActionMask, DetPolicy, Mdp, RewardTable, StateActionTable};
pub use planning::{OccupancyMeasure, ValueTables};
pub use policy_search::{AdmissibleSet, DesignOutcome};
