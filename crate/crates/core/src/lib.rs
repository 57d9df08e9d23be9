//! Offline safe policy improvement for partially observable environments.
//!
//! A behavior policy is represented as a finite-state controller whose memory
//! is a window of recent observations. Pairing a memory node with the current
//! observation gives a finite "history state"; data logged under the behavior
//! policy is counted over those states to estimate a fully observable MDP, and
//! a baseline-bootstrapped policy iteration on that estimate yields an
//! improved controller with the same memory structure.
//!
//! Module map:
//!
//! * [`pomdp`]: tabular POMDP model, sampling and Bayesian belief updates.
//! * [`mdp`]: tabular MDPs over history states, value iteration and policy
//!   evaluation.
//! * [`oracle`]: the exact finite-history MDP of a known POMDP.
//! * [`fsc`]: finite-state controllers and the k-window memory structure.
//! * [`envs`]: CheeseMaze, Tiger and Voicemail.
//! * [`behavior`]: Q-learning and softmax extraction of behavior policies.
//! * [`data`]: dataset collection and count statistics.
//! * [`spi`]: MLE estimation, bootstrapped sets, SPIBB and the safety bounds.
//! * [`eval`]: rollouts, CVaR, normalized improvement and the experiment grid.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod behavior;
pub mod data;
pub mod envs;
mod error;
pub mod eval;
pub mod fsc;
pub mod mdp;
pub mod oracle;
pub mod pomdp;
pub mod rng;
pub mod spi;

pub use behavior::{softmax_policy, train_q_learning, QLearnConfig, QTable};
pub use data::{collect_dataset, count, CountTable, Dataset, DatasetMeta, Episode, Step};
pub use envs::{make_cheese_maze, make_tiger, make_voicemail, EnvSpec};
pub use error::{Error, Result};
pub use eval::{
    cvar, normalized_improvement, reference_optimum, rollout_performance, run_experiment,
    EvalReport, ExperimentConfig,
};
pub use fsc::{fsc_from_table, make_k_window_fsc, Fsc, HistoryState};
pub use mdp::{policy_evaluation, value_iteration, Solution, TabularMdp};
pub use oracle::{build_oracle_finite_history_mdp, OccupancyWeighting, OracleOptions};
pub use pomdp::{Belief, Pomdp};
pub use spi::{
    basic_rl_policy, bootstrapped_set, estimate_mle_mdp, spibb_policy, sufficiency_count,
    weissman_bound, zeta_bound, BootstrapSet, BoundInputs, BoundVariant, SafetyReport,
    SpibbConfig,
};

/// Default solver tolerance for value iteration and policy evaluation.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Default cap on episode length, used for both data collection and rollouts.
pub const DEFAULT_MAX_STEPS: usize = 300;
