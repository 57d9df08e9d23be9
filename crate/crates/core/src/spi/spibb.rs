//! Baseline-bootstrapped policy iteration on an estimated MDP.

use serde::{Deserialize, Serialize};

use crate::data::CountTable;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::fsc::Fsc;
use crate::mdp::{greedy_action, policy_evaluation_from, TabularMdp};

use super::bounds::{BoundInputs, BoundVariant, SafetyReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpibbConfig {
    pub n_wedge: u64,
    pub delta: f64,
    pub k_prime: usize,
    pub v_max: f64,
    pub tol: f64,
    pub max_policy_iterations: usize,
}

impl SpibbConfig {
    /// Defaults for `env`: `delta = 0.05`, `V_max = R_max / (1 - gamma)`.
    pub fn for_env(env: &EnvSpec, n_wedge: u64, k_prime: usize) -> Self {
        SpibbConfig {
            n_wedge,
            delta: 0.05,
            k_prime,
            v_max: env.v_max(),
            tol: crate::DEFAULT_TOL,
            max_policy_iterations: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) || !(self.v_max >= 0.0) || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid SPIBB config {self:?}")));
        }
        Ok(())
    }
}

/// Pairs `(<n,z>, a)` with at most `n_wedge` visits.
///
/// The threshold is inclusive: a pair seen exactly `n_wedge` times is
/// bootstrapped, although the set is often described as "fewer than".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BootstrapSet {
    num_history_states: usize,
    num_actions: usize,
    n_wedge: u64,
    unknown: Vec<bool>,
}

impl BootstrapSet {
    /// Build from visit counts indexed `h * num_actions + a`.
    pub fn from_visits(visits: &[u64], num_history_states: usize, num_actions: usize, n_wedge: u64) -> Self {
        let unknown = visits[..num_history_states * num_actions]
            .iter()
            .map(|&c| c <= n_wedge)
            .collect();
        BootstrapSet {
            num_history_states,
            num_actions,
            n_wedge,
            unknown,
        }
    }

    /// Build from the visit counts stored on an estimated MDP.
    pub fn from_mdp(mdp: &TabularMdp, num_history_states: usize, n_wedge: u64) -> Self {
        Self::from_visits(&mdp.counts, num_history_states, mdp.num_actions, n_wedge)
    }

    pub fn contains(&self, history_state: usize, action: usize) -> bool {
        self.unknown[history_state * self.num_actions + action]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let na = self.num_actions;
        self.unknown
            .iter()
            .enumerate()
            .filter(|(_, &u)| u)
            .map(move |(i, _)| (i / na, i % na))
    }

    pub fn len(&self) -> usize {
        self.unknown.iter().filter(|&&u| u).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_wedge(&self) -> u64 {
        self.n_wedge
    }

    pub fn num_history_states(&self) -> usize {
        self.num_history_states
    }
}

/// Pairs of the full `<n,z> x A` grid with at most `n_wedge` visits.
pub fn bootstrapped_set(counts: &CountTable, n_wedge: u64) -> BootstrapSet {
    BootstrapSet::from_visits(&counts.visits, counts.num_history_states, counts.num_actions, n_wedge)
}

/// Improved controller with the memory structure of `behavior`.
///
/// Policy iteration on the estimated MDP (undefined rows closed to the sink)
/// starting from the behavior policy. Each improvement step keeps
/// `pi(a|h) = pi_b(a|h)` on bootstrapped pairs and moves the remaining
/// behavior mass onto the known action with the highest Q-value (ties to
/// the lowest index). States whose actions are all bootstrapped keep the
/// behavior row. Iteration stops when no selection changes.
pub fn spibb_policy(
    mle: &TabularMdp,
    behavior: &Fsc,
    unknown: &BootstrapSet,
    cfg: &SpibbConfig,
) -> Result<(Fsc, SafetyReport)> {
    cfg.validate()?;
    let hs = behavior.num_history_states();
    let na = behavior.num_actions();
    if unknown.num_history_states != hs || unknown.num_actions != na {
        return Err(Error::IncompletePolicy(
            "bootstrapped set does not match the behavior controller".into(),
        ));
    }
    if mle.num_actions != na || mle.num_states < hs {
        return Err(Error::IncompletePolicy(format!(
            "behavior controller covers {hs} history states, estimated MDP has {}",
            mle.num_states
        )));
    }
    let closed = mle.close_undefined_to_sink();
    let ns = closed.num_states;
    let idle = {
        let mut r = vec![0.0; na];
        r[0] = 1.0;
        r
    };
    let mut policy: Vec<Vec<f64>> = (0..ns)
        .map(|s| if s < hs { behavior.row(s).to_vec() } else { idle.clone() })
        .collect();
    let behavior_values = policy_evaluation_from(&closed, &policy, cfg.tol, vec![0.0; ns])?;
    let rho_behavior = closed.performance(&behavior_values);

    let mut values = behavior_values;
    let mut selection: Vec<Option<usize>> = vec![None; hs];
    let mut first = true;
    for _ in 0..cfg.max_policy_iterations {
        let q = closed.q_values(&values);
        let mut changed = first;
        first = false;
        for h in 0..hs {
            let known: Vec<f64> = (0..na)
                .map(|a| if unknown.contains(h, a) { f64::NEG_INFINITY } else { q[h * na + a] })
                .collect();
            let best = greedy_action(&known);
            if best != selection[h] {
                changed = true;
                selection[h] = best;
            }
            policy[h] = constrained_row(behavior.row(h), unknown, h, best);
        }
        if !changed {
            break;
        }
        values = policy_evaluation_from(&closed, &policy, cfg.tol, values)?;
    }
    let rho_improved = closed.performance(&values);

    policy.truncate(hs);
    let improved = behavior.with_action_map(policy)?;
    let report = SafetyReport::from_inputs(BoundInputs {
        variant: BoundVariant::FiniteHistory,
        state_count: hs,
        action_count: na,
        obs_count: behavior.num_observations(),
        n_wedge: cfg.n_wedge,
        delta: cfg.delta,
        v_max: cfg.v_max,
        gamma: mle.discount,
        rho_improved_mle: rho_improved,
        rho_behavior_mle: rho_behavior,
    })?;
    Ok((improved, report))
}

/// Behavior row with its known mass moved onto `best`.
fn constrained_row(beta: &[f64], unknown: &BootstrapSet, h: usize, best: Option<usize>) -> Vec<f64> {
    let Some(best) = best else {
        return beta.to_vec();
    };
    let known_mass: f64 = (0..beta.len())
        .filter(|&a| !unknown.contains(h, a))
        .map(|a| beta[a])
        .sum();
    (0..beta.len())
        .map(|a| {
            if unknown.contains(h, a) {
                beta[a]
            } else if a == best {
                known_mass
            } else {
                0.0
            }
        })
        .collect()
}

/// Unconstrained solve of the estimated MDP: SPIBB with `n_wedge = 0`, so
/// only never-visited pairs follow the behavior policy.
pub fn basic_rl_policy(mle: &TabularMdp, behavior: &Fsc, cfg: &SpibbConfig) -> Result<Fsc> {
    let cfg = SpibbConfig { n_wedge: 0, ..cfg.clone() };
    let unknown = BootstrapSet::from_mdp(mle, behavior.num_history_states(), 0);
    spibb_policy(mle, behavior, &unknown, &cfg).map(|(f, _)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsc::make_k_window_fsc;
    use crate::mdp::tests::{linear_solve_values, random_mdp};
    use crate::mdp::value_iteration;

    fn cfg(n_wedge: u64) -> SpibbConfig {
        SpibbConfig {
            n_wedge,
            delta: 0.05,
            k_prime: 1,
            v_max: 10.0,
            tol: 1e-11,
            max_policy_iterations: 1000,
        }
    }

    /// Treat a random dense MDP as an estimate over `ns` one-node history
    /// states (one observation per state) with synthetic visit counts.
    fn as_estimate(seed: u64, ns: usize, na: usize, visits: &[u64]) -> (TabularMdp, Fsc) {
        let mut m = random_mdp(seed, ns, na, 0.9);
        m.counts = visits.to_vec();
        m.pair_counts = vec![Vec::new(); ns * na];
        let structure = make_k_window_fsc(1, ns, na).unwrap();
        let rows: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                let raw: Vec<f64> = (0..na).map(|a| 1.0 + ((seed as usize + s * 7 + a * 3) % 5) as f64).collect();
                let t: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / t).collect()
            })
            .collect();
        (m, structure.with_action_map(rows).unwrap())
    }

    /// Best performance over every policy that copies `beta` on unknown
    /// pairs and puts the rest of the mass on a single known action.
    fn brute_force(m: &TabularMdp, beta: &Fsc, u: &BootstrapSet) -> f64 {
        let (ns, na) = (m.num_states, m.num_actions);
        let choices: Vec<Vec<Option<usize>>> = (0..ns)
            .map(|s| {
                let known: Vec<Option<usize>> = (0..na).filter(|&a| !u.contains(s, a)).map(Some).collect();
                if known.is_empty() {
                    vec![None]
                } else {
                    known
                }
            })
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; ns];
        loop {
            let policy: Vec<Vec<f64>> = (0..ns)
                .map(|s| constrained_row(beta.row(s), u, s, choices[s][idx[s]]))
                .collect();
            best = best.max(m.performance(&linear_solve_values(m, &policy)));
            let mut i = 0;
            loop {
                if i == ns {
                    return best;
                }
                idx[i] += 1;
                if idx[i] < choices[i].len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn full_unknown_copies_behavior() {
        let (m, beta) = as_estimate(1, 3, 2, &[1; 6]);
        let u = BootstrapSet::from_visits(&m.counts, 3, 2, 10);
        let (pi, r) = spibb_policy(&m, &beta, &u, &cfg(10)).unwrap();
        assert_eq!(pi.rows(), beta.rows());
        assert!((r.rho_improved_mle - r.rho_behavior_mle).abs() < 1e-9);
    }

    #[test]
    fn empty_unknown_is_greedy() {
        let (m, beta) = as_estimate(2, 4, 3, &[50; 12]);
        let u = BootstrapSet::from_visits(&m.counts, 4, 3, 0);
        assert!(u.is_empty());
        let (pi, _) = spibb_policy(&m, &beta, &u, &cfg(0)).unwrap();
        let sol = value_iteration(&m, 1e-11).unwrap();
        for s in 0..4 {
            let a = pi.row(s).iter().position(|&p| p == 1.0).unwrap();
            assert_eq!(a, sol.greedy[s]);
        }
    }

    #[test]
    fn matches_brute_force() {
        for seed in 0..40 {
            let visits: Vec<u64> = (0..6).map(|i| (seed * 31 + i * 17) % 4).collect();
            let (m, beta) = as_estimate(seed, 3, 2, &visits);
            let u = BootstrapSet::from_visits(&visits, 3, 2, 1);
            let (pi, r) = spibb_policy(&m, &beta, &u, &cfg(1)).unwrap();
            let oracle = brute_force(&m, &beta, &u);
            assert!((r.rho_improved_mle - oracle).abs() < 1e-6, "seed {seed}");
            for (s, a) in u.iter() {
                assert_eq!(pi.row(s)[a].to_bits(), beta.row(s)[a].to_bits());
            }
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let u = BootstrapSet::from_visits(&[5, 6, 0], 3, 1, 5);
        assert_eq!(u.iter().collect::<Vec<_>>(), vec![(0, 0), (2, 0)]);
        let u0 = BootstrapSet::from_visits(&[5, 6, 0], 3, 1, 0);
        assert_eq!(u0.iter().collect::<Vec<_>>(), vec![(2, 0)]);
        assert_eq!(BootstrapSet::from_visits(&[5, 6, 0], 3, 1, 6).len(), 3);
    }

    #[test]
    fn basic_rl_equals_zero_wedge() {
        let (m, beta) = as_estimate(9, 3, 2, &[0, 4, 2, 0, 7, 1]);
        let u = BootstrapSet::from_mdp(&m, 3, 0);
        let (spibb, _) = spibb_policy(&m, &beta, &u, &cfg(0)).unwrap();
        assert_eq!(basic_rl_policy(&m, &beta, &cfg(20)).unwrap(), spibb);
    }

    #[test]
    fn mismatched_behavior() {
        let (m, _) = as_estimate(3, 3, 2, &[1; 6]);
        let other = make_k_window_fsc(2, 3, 2).unwrap();
        let u = BootstrapSet::from_visits(&[0; 24], 12, 2, 0);
        assert!(spibb_policy(&m, &other, &u, &cfg(0)).is_err());
    }
}
