//! Tabular POMDP model.
//!
//! Observations are conditioned on the state landed in and the action taken,
//! `O(z | s', a)`. Episodes start with a state drawn from the initial belief
//! and a first observation drawn from `initial_observation[s]`. Terminal
//! states are absorbing sinks with zero reward.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::rng::sample_index;

const ROW_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pomdp {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `observation[s'][a][z]`
    pub observation: Vec<Vec<Vec<f64>>>,
    /// `initial_observation[s][z]`: distribution of the first observation of
    /// an episode that starts in `s`.
    pub initial_observation: Vec<Vec<f64>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub reward_bounds: (f64, f64),
    pub discount: f64,
    pub initial_belief: Vec<f64>,
    #[serde(default)]
    pub terminal_states: Vec<usize>,
}

fn check_distribution(row: &[f64], len: usize, what: impl FnOnce() -> String) -> Result<()> {
    if row.len() != len {
        return Err(Error::InvalidModel(format!(
            "{} has length {}, expected {}",
            what(),
            row.len(),
            len
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidModel(format!(
            "{} has a negative or non-finite entry",
            what()
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidModel(format!("{} sums to {sum}", what())));
    }
    Ok(())
}

impl Pomdp {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal_states.contains(&s)
    }

    /// Number of states that are not absorbing sinks.
    pub fn num_nonterminal_states(&self) -> usize {
        (0..self.num_states()).filter(|&s| !self.is_terminal(s)).count()
    }

    /// Check every model invariant, reporting the first violation found.
    pub fn validate(&self) -> Result<()> {
        let (ns, na, nz) = (self.num_states(), self.num_actions(), self.num_observations());
        if ns == 0 || na == 0 || nz == 0 {
            return Err(Error::InvalidModel(
                "states, actions and observations must be nonempty".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidModel(format!(
                "discount {} outside [0, 1)",
                self.discount
            )));
        }
        let (rmin, rmax) = self.reward_bounds;
        if !(rmin <= rmax) {
            return Err(Error::InvalidModel(format!(
                "reward bounds ({rmin}, {rmax}) are not ordered"
            )));
        }
        if self.transition.len() != ns {
            return Err(Error::InvalidModel("transition table has wrong state count".into()));
        }
        if self.observation.len() != ns {
            return Err(Error::InvalidModel("observation table has wrong state count".into()));
        }
        if self.reward.len() != ns {
            return Err(Error::InvalidModel("reward table has wrong state count".into()));
        }
        if self.initial_observation.len() != ns {
            return Err(Error::InvalidModel(
                "initial observation table has wrong state count".into(),
            ));
        }
        for s in 0..ns {
            if self.transition[s].len() != na {
                return Err(Error::InvalidModel(format!(
                    "transition[{}] has wrong action count",
                    self.states[s]
                )));
            }
            if self.observation[s].len() != na {
                return Err(Error::InvalidModel(format!(
                    "observation[{}] has wrong action count",
                    self.states[s]
                )));
            }
            if self.reward[s].len() != na {
                return Err(Error::InvalidModel(format!(
                    "reward[{}] has wrong action count",
                    self.states[s]
                )));
            }
            for a in 0..na {
                check_distribution(&self.transition[s][a], ns, || {
                    format!("transition row (s={}, a={})", self.states[s], self.actions[a])
                })?;
                check_distribution(&self.observation[s][a], nz, || {
                    format!("observation row (s'={}, a={})", self.states[s], self.actions[a])
                })?;
                let r = self.reward[s][a];
                if !r.is_finite() || r < rmin || r > rmax {
                    return Err(Error::InvalidModel(format!(
                        "reward (s={}, a={}) = {r} outside [{rmin}, {rmax}]",
                        self.states[s], self.actions[a]
                    )));
                }
            }
            check_distribution(&self.initial_observation[s], nz, || {
                format!("initial observation row (s={})", self.states[s])
            })?;
        }
        check_distribution(&self.initial_belief, ns, || "initial belief".to_string())?;
        for &t in &self.terminal_states {
            check_index("terminal state", t, ns)?;
            for a in 0..na {
                if self.transition[t][a][t] != 1.0 || self.reward[t][a] != 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "terminal state {} is not an absorbing zero-reward sink under {}",
                        self.states[t], self.actions[a]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let pomdp: Pomdp = serde_json::from_str(json)?;
        pomdp.validate()?;
        Ok(pomdp)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    /// Sample a start state and its first observation.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let s = sample_index(&self.initial_belief, rng);
        let z = sample_index(&self.initial_observation[s], rng);
        (s, z)
    }

    /// Sample one transition: `s' ~ T(.|s,a)`, `z ~ O(.|s',a)`, reward `R(s,a)`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> Result<(usize, usize, f64)> {
        check_index("state", state, self.num_states())?;
        check_index("action", action, self.num_actions())?;
        let next = sample_index(&self.transition[state][action], rng);
        let obs = sample_index(&self.observation[next][action], rng);
        Ok((next, obs, self.reward[state][action]))
    }

    /// Bayesian belief update after taking `action` and observing `obs`.
    pub fn belief_update(&self, belief: &Belief, action: usize, obs: usize) -> Result<Belief> {
        check_index("action", action, self.num_actions())?;
        check_index("observation", obs, self.num_observations())?;
        let ns = self.num_states();
        if belief.0.len() != ns {
            return Err(Error::InvalidParameter(format!(
                "belief has {} entries, model has {ns} states",
                belief.0.len()
            )));
        }
        let mut next = vec![0.0; ns];
        for (s, &b) in belief.0.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (s2, &t) in self.transition[s][action].iter().enumerate() {
                next[s2] += b * t;
            }
        }
        for (s2, p) in next.iter_mut().enumerate() {
            *p *= self.observation[s2][action][obs];
        }
        let total: f64 = next.iter().sum();
        if total <= 0.0 {
            return Err(Error::ImpossibleObservation { action, obs });
        }
        next.iter_mut().for_each(|p| *p /= total);
        Ok(Belief(next))
    }

    /// Belief over the start state after seeing the first observation.
    pub fn initial_posterior(&self, obs: usize) -> Result<Belief> {
        check_index("observation", obs, self.num_observations())?;
        let mut b: Vec<f64> = self
            .initial_belief
            .iter()
            .zip(&self.initial_observation)
            .map(|(p, row)| p * row[obs])
            .collect();
        let total: f64 = b.iter().sum();
        if total <= 0.0 {
            return Err(Error::ImpossibleObservation { action: usize::MAX, obs });
        }
        b.iter_mut().for_each(|p| *p /= total);
        Ok(Belief(b))
    }
}

/// A distribution over hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief(pub Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let n = probs.len();
        check_distribution(&probs, n, || "belief".to_string())?;
        Ok(Belief(probs))
    }

    pub fn point(num_states: usize, state: usize) -> Self {
        let mut p = vec![0.0; num_states];
        p[state] = 1.0;
        Belief(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::envs::make_tiger;
    use crate::rng::seeded;

    /// One state, one action, one observation, reward 0.5.
    pub(crate) fn single_state(reward: f64) -> Pomdp {
        Pomdp {
            states: vec!["s".into()],
            actions: vec!["a".into()],
            observations: vec!["z".into()],
            transition: vec![vec![vec![1.0]]],
            observation: vec![vec![vec![1.0]]],
            initial_observation: vec![vec![1.0]],
            reward: vec![vec![reward]],
            reward_bounds: (reward.min(0.0), reward.max(0.0)),
            discount: 0.95,
            initial_belief: vec![1.0],
            terminal_states: vec![],
        }
    }

    #[test]
    fn single_state_step() {
        let p = single_state(0.5);
        p.validate().unwrap();
        let mut rng = seeded(0);
        assert_eq!(p.step(0, 0, &mut rng).unwrap(), (0, 0, 0.5));
    }

    #[test]
    fn step_rejects_bad_indices() {
        let p = single_state(0.5);
        let mut rng = seeded(0);
        assert!(matches!(p.step(1, 0, &mut rng), Err(Error::InvalidIndex { .. })));
        assert!(matches!(p.step(0, 3, &mut rng), Err(Error::InvalidIndex { .. })));
    }

    #[test]
    fn tiger_listen_keeps_tiger() {
        let env = make_tiger(0.85).unwrap();
        let p = &env.pomdp;
        let mut rng = seeded(11);
        for _ in 0..100 {
            let (s, _, r) = p.step(0, 0, &mut rng).unwrap();
            assert_eq!(s, 0);
            assert_eq!(r, -1.0);
        }
    }

    #[test]
    fn tiger_listen_observation_frequency() {
        let env = make_tiger(0.85).unwrap();
        let mut rng = seeded(2024);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| env.pomdp.step(0, 0, &mut rng).unwrap().1 == 0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((0.8489..=0.8511).contains(&freq), "{freq}");
    }

    #[test]
    fn deterministic_belief_update() {
        // Two-state cycle with an uninformative observation.
        let p = Pomdp {
            states: vec!["x".into(), "y".into()],
            actions: vec!["go".into()],
            observations: vec!["o".into()],
            transition: vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            observation: vec![vec![vec![1.0]], vec![vec![1.0]]],
            initial_observation: vec![vec![1.0], vec![1.0]],
            reward: vec![vec![0.0], vec![0.0]],
            reward_bounds: (0.0, 0.0),
            discount: 0.9,
            initial_belief: vec![1.0, 0.0],
            terminal_states: vec![],
        };
        p.validate().unwrap();
        let b = p.belief_update(&Belief::point(2, 0), 0, 0).unwrap();
        assert_eq!(b.0, vec![0.0, 1.0]);
    }

    #[test]
    fn tiger_belief_after_hearing_left() {
        let env = make_tiger(0.85).unwrap();
        let b0 = Belief(vec![0.5, 0.5, 0.0]);
        let b = env.pomdp.belief_update(&b0, 0, 0).unwrap();
        assert!((b.0[0] - 0.85).abs() < 1e-12);
        assert!((b.0[1] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn uninformative_observation_is_pushforward() {
        let env = make_tiger(0.5).unwrap();
        let b0 = Belief(vec![0.3, 0.7, 0.0]);
        let b = env.pomdp.belief_update(&b0, 0, 1).unwrap();
        assert!((b.0[0] - 0.3).abs() < 1e-12 && (b.0[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn impossible_observation_is_reported() {
        let env = make_tiger(1.0).unwrap();
        let b0 = Belief(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            env.pomdp.belief_update(&b0, 0, 1),
            Err(Error::ImpossibleObservation { .. })
        ));
    }

    #[test]
    fn loader_reports_first_bad_row() {
        let mut p = make_tiger(0.85).unwrap().pomdp;
        p.transition[1][0] = vec![0.2, 0.2, 0.2];
        let err = Pomdp::from_json_str(&p.to_json_string().unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tiger-right") && msg.contains("listen"), "{msg}");
    }

    #[test]
    fn json_round_trip() {
        let p = make_tiger(0.85).unwrap().pomdp;
        let back = Pomdp::from_json_str(&p.to_json_string().unwrap()).unwrap();
        assert_eq!(p, back);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn belief_update_stays_normalized(
                b in prop::collection::vec(0.0f64..1.0, 2),
                acc in 0.5f64..0.99,
                obs in 0usize..2,
            ) {
                let total: f64 = b.iter().sum();
                prop_assume!(total > 1e-6);
                let env = make_tiger(acc).unwrap();
                let belief = Belief(vec![b[0] / total, b[1] / total, 0.0]);
                let next = env.pomdp.belief_update(&belief, 0, obs).unwrap();
                let s: f64 = next.0.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(next.0.iter().all(|p| *p >= 0.0));
            }
        }
    }
}
