//! Rollout evaluation, risk aggregation and the experiment grid.

mod experiment;

pub use experiment::{
    aggregate, read_results_csv, run_experiment, EvalReport, ExperimentConfig, ResultRow,
    SummaryRow,
};

use rayon::prelude::*;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::fsc::{make_k_window_fsc, Fsc};
use crate::mdp::{one_hot_policy, value_iteration};
use crate::oracle::{build_oracle_with, OracleOptions};
use crate::rng::{derive_seed, seeded};

/// Discounted return of one episode from the initial belief.
fn episode_return(env: &EnvSpec, policy: &Fsc, max_steps: usize, seed: u64) -> Result<f64> {
    let pomdp = &env.pomdp;
    let mut rng = seeded(seed);
    let (mut s, mut z) = pomdp.reset(&mut rng);
    let mut n = policy.initial_node();
    let (mut ret, mut disc) = (0.0, 1.0);
    for _ in 0..max_steps {
        let (a, n2) = policy.step(n, z, &mut rng)?;
        let (s2, z2, r) = pomdp.step(s, a, &mut rng)?;
        ret += disc * r;
        disc *= pomdp.discount;
        if pomdp.is_terminal(s2) {
            break;
        }
        s = s2;
        z = z2;
        n = n2;
    }
    Ok(ret)
}

/// Mean discounted return over `episodes` rollouts and its standard error.
/// Episode `i` uses the stream seeded by `derive_seed(seed, [i])`.
pub fn rollout_performance(
    env: &EnvSpec,
    policy: &Fsc,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::EmptyInput);
    }
    if policy.num_observations() != env.pomdp.num_observations()
        || policy.num_actions() != env.pomdp.num_actions()
    {
        return Err(Error::InvalidParameter("policy does not match the environment".into()));
    }
    let returns = (0..episodes)
        .into_par_iter()
        .map(|i| episode_return(env, policy, max_steps, derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_stderr(&returns))
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(rho_i - rho_beta) / (rho_max - rho_beta)`.
pub fn normalized_improvement(rho_i: f64, rho_beta: f64, rho_max: f64) -> Result<f64> {
    let denom = rho_max - rho_beta;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateNormalization);
    }
    Ok((rho_i - rho_beta) / denom)
}

/// Mean of the `ceil(x% * n)` smallest values.
pub fn cvar(values: &[f64], x_percent: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(x_percent > 0.0 && x_percent <= 100.0) {
        return Err(Error::InvalidParameter(format!("CVaR level {x_percent} outside (0, 100]")));
    }
    let n = values.len();
    let take = ((x_percent * n as f64 / 100.0) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[..take].iter().sum::<f64>() / take as f64)
}

/// Greedy controller of the exact finite-history MDP and its rollout value.
#[derive(Clone, Debug)]
pub struct ReferenceOptimum {
    pub rho: f64,
    pub stderr: f64,
    pub policy: Fsc,
    /// History states the oracle never reached; their rows are arbitrary.
    pub unreached: Vec<usize>,
}

/// Solve the exact finite-history MDP at window `k_max` (beliefs weighted by
/// the uniform controller) and roll out its greedy policy.
pub fn reference_optimum(
    env: &EnvSpec,
    k_max: usize,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<ReferenceOptimum> {
    let pomdp = &env.pomdp;
    let structure = make_k_window_fsc(k_max, pomdp.num_observations(), pomdp.num_actions())?;
    let opts = OracleOptions::default_for(pomdp.discount, k_max);
    let oracle = build_oracle_with(pomdp, &structure, &structure, &opts)?;
    let solution = value_iteration(&oracle, crate::DEFAULT_TOL)?;
    let hs = structure.num_history_states();
    let policy = structure.with_action_map(one_hot_policy(&solution.greedy[..hs], pomdp.num_actions()))?;
    let (rho, stderr) = rollout_performance(env, &policy, episodes, max_steps, seed)?;
    Ok(ReferenceOptimum {
        rho,
        stderr,
        policy,
        unreached: oracle.unreached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_tiger;
    use crate::mdp::{policy_evaluation, TabularMdp};
    use crate::pomdp::tests::single_state;
    use crate::pomdp::Pomdp;

    #[test]
    fn geometric_sum() {
        let env = EnvSpec::from_pomdp("one", single_state(1.0)).unwrap();
        let f = make_k_window_fsc(1, 1, 1).unwrap();
        let (mean, se) = rollout_performance(&env, &f, 10, 300, 1).unwrap();
        let g = env.pomdp.discount;
        assert!((mean - (1.0 - g.powi(300)) / (1.0 - g)).abs() < 1e-9);
        assert!(se < 1e-9);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let env = make_tiger(0.85).unwrap();
        let f = make_k_window_fsc(2, 2, 3).unwrap();
        assert_eq!(
            rollout_performance(&env, &f, 500, 300, 4).unwrap(),
            rollout_performance(&env, &f, 500, 300, 4).unwrap()
        );
    }

    fn two_state() -> Pomdp {
        Pomdp {
            states: vec!["a".into(), "b".into()],
            actions: vec!["stay".into(), "move".into()],
            observations: vec!["a".into(), "b".into()],
            transition: vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.3, 0.7], vec![0.6, 0.4]],
            ],
            observation: vec![vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2]],
            initial_observation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            reward: vec![vec![1.0, 0.0], vec![-1.0, 2.0]],
            reward_bounds: (-1.0, 2.0),
            discount: 0.9,
            initial_belief: vec![1.0, 0.0],
            terminal_states: vec![],
        }
    }

    #[test]
    fn rollout_matches_exact_value() {
        let pomdp = two_state();
        let mdp = TabularMdp::from_dense(&pomdp.transition, &pomdp.reward, 0.9, vec![1.0, 0.0]).unwrap();
        let env = EnvSpec::from_pomdp("two", pomdp).unwrap();
        let table = vec![vec![0.7, 0.3], vec![0.4, 0.6]];
        let f = make_k_window_fsc(1, 2, 2).unwrap().with_action_map(table.clone()).unwrap();
        let exact = mdp.performance(&policy_evaluation(&mdp, &table, 1e-12).unwrap());
        let (mean, se) = rollout_performance(&env, &f, 20000, 300, 11).unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn fully_observable_reference_is_optimal() {
        let pomdp = two_state();
        let mdp = TabularMdp::from_dense(&pomdp.transition, &pomdp.reward, 0.9, vec![1.0, 0.0]).unwrap();
        let optimum = mdp.performance(&value_iteration(&mdp, 1e-12).unwrap().values);
        let env = EnvSpec::from_pomdp("two", pomdp).unwrap();
        let r = reference_optimum(&env, 1, 20000, 300, 5).unwrap();
        assert!((r.rho - optimum).abs() < 3.0 * r.stderr, "{} vs {optimum}", r.rho);
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(normalized_improvement(1.0, 1.0, 3.0).unwrap(), 0.0);
        assert_eq!(normalized_improvement(3.0, 1.0, 3.0).unwrap(), 1.0);
        assert_eq!(normalized_improvement(1.0, 0.0, 2.0).unwrap(), 0.5);
        assert!(matches!(normalized_improvement(1.0, 2.0, 2.0), Err(Error::DegenerateNormalization)));
    }

    #[test]
    fn cvar_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(cvar(&v, 10.0).unwrap(), 1.0);
        assert_eq!(cvar(&v, 20.0).unwrap(), 1.5);
        assert_eq!(cvar(&v, 100.0).unwrap(), 5.5);
        let w: Vec<f64> = (0..500).rev().map(f64::from).collect();
        assert_eq!(cvar(&w, 1.0).unwrap(), 2.0);
        assert!(matches!(cvar(&[], 10.0), Err(Error::EmptyInput)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cvar_is_monotone(v in prop::collection::vec(-100.0f64..100.0, 1..60), x in 0.5f64..100.0, y in 0.5f64..100.0) {
                let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
                prop_assert!(cvar(&v, lo).unwrap() <= cvar(&v, hi).unwrap() + 1e-9);
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                prop_assert!((cvar(&v, 100.0).unwrap() - mean).abs() < 1e-9);
            }
        }
    }
}
