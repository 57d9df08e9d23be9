//! Shared fixtures for the solver benchmarks.

use pomdp_spi::spi::{estimate_for_window, Estimate};
use pomdp_spi::{collect_dataset, make_cheese_maze, make_k_window_fsc, EnvSpec, Fsc};

/// CheeseMaze with a uniform window-`k` behavior and an estimate at `k_prime`.
pub struct Fixture {
    pub env: EnvSpec,
    pub behavior: Fsc,
    pub estimate: Estimate,
}

pub fn cheese_maze_fixture(k: usize, k_prime: usize, trajectories: usize) -> Fixture {
    let env = make_cheese_maze().expect("built-in environment");
    let (nz, na) = (env.pomdp.num_observations(), env.pomdp.num_actions());
    let behavior = make_k_window_fsc(k, nz, na).expect("valid window");
    let data = collect_dataset(&env, &behavior, trajectories, 300, 7).expect("collection");
    let estimate = estimate_for_window(&data, &behavior, k_prime, env.pomdp.discount).expect("estimate");
    Fixture { env, behavior, estimate }
}
