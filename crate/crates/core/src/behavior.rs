//! Behavior policies: tabular Q-learning over k-window history states and
//! softmax extraction into a controller.
//!
//! Learning rate and exploration decay per episode index `i`:
//! `alpha_i = alpha0 * exp(-lambda * i)`, `epsilon_i = epsilon0 * exp(-lambda * i)`.
//!
//! The extracted policy is `psi(a | n, z) ∝ exp(+tau * Q(<n,z>, a))`, which
//! favours high-value actions. The commonly quoted form `exp(-tau * Q)` would
//! favour the worst actions.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::fsc::{make_k_window_fsc, Fsc};
use crate::mdp::greedy_action;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLearnConfig {
    pub k: usize,
    pub episodes: usize,
    pub alpha0: f64,
    pub epsilon0: f64,
    pub lambda: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        QLearnConfig {
            k: 1,
            episodes: 5000,
            alpha0: 1.0,
            epsilon0: 0.5,
            lambda: 0.002,
            max_steps: crate::DEFAULT_MAX_STEPS,
            seed: 0,
        }
    }
}

impl QLearnConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |x: f64| x > 0.0 && x <= 1.0;
        if self.k == 0 || !rate(self.alpha0) || !rate(self.epsilon0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid Q-learning config {self:?}")));
        }
        Ok(())
    }

    pub fn alpha(&self, episode: usize) -> f64 {
        self.alpha0 * (-self.lambda * episode as f64).exp()
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        self.epsilon0 * (-self.lambda * episode as f64).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub num_history_states: usize,
    pub num_actions: usize,
    /// `values[h][a]`
    pub values: Vec<Vec<f64>>,
}

impl QTable {
    pub fn zeros(num_history_states: usize, num_actions: usize) -> Self {
        QTable {
            num_history_states,
            num_actions,
            values: vec![vec![0.0; num_actions]; num_history_states],
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    #[serde(rename = "return")]
    pub discounted_return: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

pub fn write_training_log(log: &[EpisodeLog], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Tabular epsilon-greedy Q-learning on the k-window history states of `env`.
pub fn train_q_learning<R: Rng + ?Sized>(
    env: &EnvSpec,
    cfg: &QLearnConfig,
    rng: &mut R,
) -> Result<(QTable, Vec<EpisodeLog>)> {
    cfg.validate()?;
    let pomdp = &env.pomdp;
    let structure = make_k_window_fsc(cfg.k, pomdp.num_observations(), pomdp.num_actions())?;
    let (nz, na) = (pomdp.num_observations(), pomdp.num_actions());
    let gamma = pomdp.discount;
    let mut q = QTable::zeros(structure.num_history_states(), na);
    let mut log = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let alpha = cfg.alpha(i);
        let epsilon = cfg.epsilon(i);
        let (mut s, mut z) = pomdp.reset(rng);
        let mut n = structure.initial_node();
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..cfg.max_steps {
            let h = n * nz + z;
            let a = if rng.gen::<f64>() < epsilon {
                rng.gen_range(0..na)
            } else {
                greedy_action(&q.values[h]).unwrap_or(0)
            };
            let (s2, z2, r) = pomdp.step(s, a, rng)?;
            let n2 = structure.eta(n, z, a);
            let done = pomdp.is_terminal(s2);
            let bootstrap = if done {
                0.0
            } else {
                let next = &q.values[n2 * nz + z2];
                next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let target = r + gamma * bootstrap;
            q.values[h][a] += alpha * (target - q.values[h][a]);
            ret += disc * r;
            disc *= gamma;
            s = s2;
            z = z2;
            n = n2;
            if done {
                break;
            }
        }
        log.push(EpisodeLog {
            episode: i,
            discounted_return: ret,
            alpha,
            epsilon,
        });
    }
    Ok((q, log))
}

/// Softmax distribution `exp(tau * q) / sum exp(tau * q)` with max-subtraction.
pub fn softmax_row(q: &[f64], tau: f64) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q.iter().map(|&x| (tau * (x - max)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Controller over `structure` with `psi(.|n,z) = softmax(tau * Q(<n,z>, .))`.
pub fn softmax_policy(structure: &Fsc, q: &QTable, tau: f64) -> Result<Fsc> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("softmax temperature {tau} must be positive")));
    }
    if q.values.len() != structure.num_history_states() || q.num_actions != structure.num_actions() {
        return Err(Error::InvalidParameter(
            "Q-table does not match the controller's history states".into(),
        ));
    }
    let rows = q.values.iter().map(|row| softmax_row(row, tau)).collect();
    structure.with_action_map(rows)
}

/// Train a behavior controller for `env` with window `cfg.k`.
pub fn train_behavior<R: Rng + ?Sized>(
    env: &EnvSpec,
    cfg: &QLearnConfig,
    tau: f64,
    rng: &mut R,
) -> Result<(Fsc, QTable, Vec<EpisodeLog>)> {
    let (q, log) = train_q_learning(env, cfg, rng)?;
    let structure = make_k_window_fsc(cfg.k, env.pomdp.num_observations(), env.pomdp.num_actions())?;
    let fsc = softmax_policy(&structure, &q, tau)?;
    Ok((fsc, q, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_tiger;
    use crate::pomdp::Pomdp;
    use crate::rng::seeded;

    #[test]
    fn schedules() {
        let cfg = QLearnConfig::default();
        assert_eq!(cfg.alpha(0), 1.0);
        assert_eq!(cfg.epsilon(0), 0.5);
        let a = cfg.alpha(5000);
        assert!((a - (-10.0f64).exp()).abs() < 1e-18);
        assert!((a - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn bandit_learns_better_arm() {
        // One state, two arms, each pull ends the episode.
        let pomdp = Pomdp {
            states: vec!["s".into(), "done".into()],
            actions: vec!["zero".into(), "one".into()],
            observations: vec!["z".into()],
            transition: vec![vec![vec![0.0, 1.0]; 2], vec![vec![0.0, 1.0]; 2]],
            observation: vec![vec![vec![1.0]; 2]; 2],
            initial_observation: vec![vec![1.0]; 2],
            reward: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            reward_bounds: (0.0, 1.0),
            discount: 0.95,
            initial_belief: vec![1.0, 0.0],
            terminal_states: vec![1],
        };
        let env = EnvSpec::from_pomdp("bandit", pomdp).unwrap();
        let cfg = QLearnConfig { episodes: 200, ..Default::default() };
        let (q, log) = train_q_learning(&env, &cfg, &mut seeded(3)).unwrap();
        assert_eq!(greedy_action(&q.values[0]), Some(1));
        assert_eq!(log.len(), 200);
    }

    #[test]
    fn training_is_deterministic() {
        let env = make_tiger(0.85).unwrap();
        let cfg = QLearnConfig { k: 2, episodes: 300, ..Default::default() };
        let a = train_q_learning(&env, &cfg, &mut seeded(8)).unwrap();
        let b = train_q_learning(&env, &cfg, &mut seeded(8)).unwrap();
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_row(&[2.0, 2.0, 2.0], 0.7), vec![1.0 / 3.0; 3]);
        let p = softmax_row(&[1.0, 0.0], 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
        // tau * (gap to the runner-up) = 20
        let sharp = softmax_row(&[1.0, 0.0, 0.5], 40.0);
        assert!(sharp[0] >= 1.0 - 1e-6);
        let sharp = softmax_row(&[1.0, 0.0], 20.0);
        assert!(sharp[0] >= 1.0 - 1e-6);
    }

    #[test]
    fn softmax_rejects_nonpositive_tau() {
        let s = make_k_window_fsc(1, 1, 2).unwrap();
        let q = QTable::zeros(1, 2);
        assert!(softmax_policy(&s, &q, 0.0).is_err());
        assert!(softmax_policy(&s, &q, -1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_normalized_and_shift_invariant(
                q in prop::collection::vec(-100.0f64..100.0, 1..6),
                shift in -50.0f64..50.0,
                tau in 0.01f64..20.0,
            ) {
                let p = softmax_row(&q, tau);
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let shifted: Vec<f64> = q.iter().map(|x| x + shift).collect();
                let p2 = softmax_row(&shifted, tau);
                let am = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, x)| if *x > v[b] { i } else { b });
                prop_assert_eq!(am(&p), am(&p2));
                for (a, b) in p.iter().zip(&p2) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
