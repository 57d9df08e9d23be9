//! Trajectory datasets logged under a behavior controller, and their counts.
//!
//! Each step records `<n_t, z_t>, a_t, r_t`; the successor of a step is the
//! next step's history state. The last step of an episode has no successor:
//! it is counted in `visits` and `reward_sums` and tallied in `final_steps`,
//! which the estimated MDP routes to its absorbing sink.
//!
//! On disk a dataset is a CSV file with header
//! `episode_id,t,node,obs,action,reward,done` (one row per step, `done = 1`
//! on the last step of an episode that reached a terminal state) plus a JSON
//! sidecar holding [`DatasetMeta`].

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{check_index, Error, Result};
use crate::fsc::Fsc;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub node: usize,
    pub obs: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<Step>,
    /// The episode ended in a terminal state rather than at the step cap.
    pub terminated: bool,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub behavior_id: String,
    pub k: usize,
    pub seed: u64,
    pub trajectories: usize,
    pub max_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    episode_id: usize,
    t: usize,
    node: usize,
    obs: usize,
    action: usize,
    reward: f64,
    done: u8,
}

impl Dataset {
    pub fn num_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    /// Recompute memory nodes by replaying the logged observations and
    /// actions through `structure` (e.g. a longer observation window).
    pub fn replay(&self, structure: &Fsc) -> Result<Dataset> {
        let episodes = self
            .episodes
            .iter()
            .map(|ep| {
                let mut n = structure.initial_node();
                let steps = ep
                    .steps
                    .iter()
                    .map(|st| {
                        check_index("observation", st.obs, structure.num_observations())?;
                        check_index("action", st.action, structure.num_actions())?;
                        let out = Step { node: n, ..*st };
                        n = structure.eta(n, st.obs, st.action);
                        Ok(out)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Episode {
                    steps,
                    terminated: ep.terminated,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = self.meta.clone();
        meta.k = structure.window().unwrap_or(0);
        Ok(Dataset { episodes, meta })
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (e, ep) in self.episodes.iter().enumerate() {
            let last = ep.steps.len().saturating_sub(1);
            for (t, st) in ep.steps.iter().enumerate() {
                w.serialize(CsvRow {
                    episode_id: e,
                    t,
                    node: st.node,
                    obs: st.obs,
                    action: st.action,
                    reward: st.reward,
                    done: u8::from(ep.terminated && t == last),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read, meta: DatasetMeta) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(input);
        let mut episodes: Vec<Episode> = Vec::new();
        let mut current: Option<usize> = None;
        for row in r.deserialize() {
            let row: CsvRow = row?;
            if current != Some(row.episode_id) {
                if current.is_some_and(|c| row.episode_id <= c) {
                    return Err(Error::CorruptDataset(format!(
                        "episode ids are not increasing at episode {}",
                        row.episode_id
                    )));
                }
                current = Some(row.episode_id);
                episodes.push(Episode::default());
            }
            let ep = episodes.last_mut().expect("pushed above");
            if ep.terminated {
                return Err(Error::CorruptDataset(format!(
                    "episode {} continues after its done flag",
                    row.episode_id
                )));
            }
            if row.t != ep.steps.len() {
                return Err(Error::CorruptDataset(format!(
                    "episode {} step {} out of order",
                    row.episode_id, row.t
                )));
            }
            ep.steps.push(Step {
                node: row.node,
                obs: row.obs,
                action: row.action,
                reward: row.reward,
            });
            ep.terminated = row.done != 0;
        }
        Ok(Dataset { episodes, meta })
    }

    /// Write `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.write_csv(std::fs::File::create(stem.with_extension("csv"))?)?;
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    /// Read `<stem>.csv`, with the sidecar `<stem>.json` when present.
    pub fn load(stem: impl AsRef<Path>) -> Result<Dataset> {
        let stem = stem.as_ref();
        let meta_path = stem.with_extension("json");
        let meta = if meta_path.exists() {
            serde_json::from_str(&std::fs::read_to_string(meta_path)?)?
        } else {
            DatasetMeta::default()
        };
        Dataset::read_csv(std::fs::File::open(stem.with_extension("csv"))?, meta)
    }
}

fn simulate_episode(env: &EnvSpec, behavior: &Fsc, max_steps: usize, seed: u64) -> Result<Episode> {
    let pomdp = &env.pomdp;
    let mut rng = seeded(seed);
    let (mut s, mut z) = pomdp.reset(&mut rng);
    let mut n = behavior.initial_node();
    let mut ep = Episode::default();
    for _ in 0..max_steps {
        let (a, n2) = behavior.step(n, z, &mut rng)?;
        let (s2, z2, r) = pomdp.step(s, a, &mut rng)?;
        ep.steps.push(Step {
            node: n,
            obs: z,
            action: a,
            reward: r,
        });
        if pomdp.is_terminal(s2) {
            ep.terminated = true;
            break;
        }
        s = s2;
        z = z2;
        n = n2;
    }
    Ok(ep)
}

fn check_behavior(env: &EnvSpec, behavior: &Fsc) -> Result<()> {
    if behavior.num_observations() != env.pomdp.num_observations()
        || behavior.num_actions() != env.pomdp.num_actions()
    {
        return Err(Error::InvalidParameter(
            "behavior controller does not match the environment".into(),
        ));
    }
    Ok(())
}

/// Simulate `num_trajectories` episodes of `behavior` in `env`. Episode `i`
/// uses the stream seeded by `derive_seed(seed, [i])`.
pub fn collect_dataset(
    env: &EnvSpec,
    behavior: &Fsc,
    num_trajectories: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Dataset> {
    check_behavior(env, behavior)?;
    let episodes = (0..num_trajectories)
        .into_par_iter()
        .map(|i| simulate_episode(env, behavior, max_steps, derive_seed(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        episodes,
        meta: DatasetMeta {
            env: env.name.clone(),
            behavior_id: String::new(),
            k: behavior.window().unwrap_or(0),
            seed,
            trajectories: num_trajectories,
            max_steps,
        },
    })
}

/// Collect whole episodes until at least `min_steps` steps are logged.
pub fn collect_until_steps(
    env: &EnvSpec,
    behavior: &Fsc,
    min_steps: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Dataset> {
    check_behavior(env, behavior)?;
    let mut episodes = Vec::new();
    let mut total = 0;
    while total < min_steps {
        let ep = simulate_episode(env, behavior, max_steps, derive_seed(seed, &[episodes.len() as u64]))?;
        total += ep.steps.len();
        episodes.push(ep);
    }
    let trajectories = episodes.len();
    Ok(Dataset {
        episodes,
        meta: DatasetMeta {
            env: env.name.clone(),
            behavior_id: String::new(),
            k: behavior.window().unwrap_or(0),
            seed,
            trajectories,
            max_steps,
        },
    })
}

/// Occurrence counts over flattened history states `n * |Z| + z`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub num_history_states: usize,
    pub num_actions: usize,
    /// `#D(<n,z>, a)`, indexed by `h * |A| + a`.
    pub visits: Vec<u64>,
    /// `#D(<n,z>, a, <n',z'>)` for within-episode successors.
    pub transitions: Vec<BTreeMap<usize, u64>>,
    /// Episode-final occurrences of each pair.
    pub final_steps: Vec<u64>,
    /// `R_total(<n,z>, a)`.
    pub reward_sums: Vec<f64>,
    /// First history state of each episode.
    pub initial: Vec<u64>,
    pub episodes: u64,
}

impl CountTable {
    pub fn zeros(num_history_states: usize, num_actions: usize) -> Self {
        let pairs = num_history_states * num_actions;
        CountTable {
            num_history_states,
            num_actions,
            visits: vec![0; pairs],
            transitions: vec![BTreeMap::new(); pairs],
            final_steps: vec![0; pairs],
            reward_sums: vec![0.0; pairs],
            initial: vec![0; num_history_states],
            episodes: 0,
        }
    }

    pub fn visits(&self, history_state: usize, action: usize) -> u64 {
        self.visits[history_state * self.num_actions + action]
    }

    pub fn max_visits(&self) -> u64 {
        self.visits.iter().copied().max().unwrap_or(0)
    }

    /// Add another table's counts into this one.
    pub fn merge(&mut self, other: &CountTable) -> Result<()> {
        if (self.num_history_states, self.num_actions) != (other.num_history_states, other.num_actions) {
            return Err(Error::InvalidParameter("count tables have different shapes".into()));
        }
        for i in 0..self.visits.len() {
            self.visits[i] += other.visits[i];
            self.final_steps[i] += other.final_steps[i];
            self.reward_sums[i] += other.reward_sums[i];
            for (&j, &c) in &other.transitions[i] {
                *self.transitions[i].entry(j).or_insert(0) += c;
            }
        }
        for (a, b) in self.initial.iter_mut().zip(&other.initial) {
            *a += b;
        }
        self.episodes += other.episodes;
        Ok(())
    }
}

/// Count a dataset over the history states of `fsc`, checking that the
/// logged nodes follow `fsc`'s memory update.
pub fn count(dataset: &Dataset, fsc: &Fsc) -> Result<CountTable> {
    let (nz, na) = (fsc.num_observations(), fsc.num_actions());
    let mut table = CountTable::zeros(fsc.num_history_states(), na);
    for (e, ep) in dataset.episodes.iter().enumerate() {
        let Some(first) = ep.steps.first() else { continue };
        if first.node != fsc.initial_node() {
            return Err(Error::CorruptDataset(format!(
                "episode {e} starts at node {}, expected {}",
                first.node,
                fsc.initial_node()
            )));
        }
        table.episodes += 1;
        table.initial[first.node * nz + first.obs] += 1;
        for (t, st) in ep.steps.iter().enumerate() {
            check_index("memory node", st.node, fsc.num_nodes())?;
            check_index("observation", st.obs, nz)?;
            check_index("action", st.action, na)?;
            let h = st.node * nz + st.obs;
            let pair = h * na + st.action;
            table.visits[pair] += 1;
            table.reward_sums[pair] += st.reward;
            match ep.steps.get(t + 1) {
                Some(next) => {
                    let expected = fsc.eta(st.node, st.obs, st.action);
                    if next.node != expected {
                        return Err(Error::CorruptDataset(format!(
                            "episode {e} step {}: node {} does not follow the memory update (expected {expected})",
                            t + 1,
                            next.node
                        )));
                    }
                    check_index("observation", next.obs, nz)?;
                    *table.transitions[pair].entry(next.node * nz + next.obs).or_insert(0) += 1;
                }
                None => table.final_steps[pair] += 1,
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::envs::make_tiger;
    use crate::fsc::make_k_window_fsc;
    use crate::pomdp::tests::single_state;

    fn tiger_behavior(k: usize) -> Fsc {
        let f = make_k_window_fsc(k, 2, 3).unwrap();
        let rows = vec![vec![0.8, 0.1, 0.1]; f.num_history_states()];
        f.with_action_map(rows).unwrap()
    }

    #[test]
    fn empty_dataset() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(1);
        let d = collect_dataset(&env, &b, 0, 300, 1).unwrap();
        assert!(d.episodes.is_empty());
        let c = count(&d, &b).unwrap();
        assert_eq!(c.max_visits(), 0);
        assert!(c.transitions.iter().all(BTreeMap::is_empty));
    }

    #[test]
    fn single_state_capped_episode() {
        let env = EnvSpec::from_pomdp("one", single_state(0.5)).unwrap();
        let b = make_k_window_fsc(1, 1, 1).unwrap();
        let d = collect_dataset(&env, &b, 1, 5, 1).unwrap();
        assert_eq!(d.num_steps(), 5);
        let c = count(&d, &b).unwrap();
        assert_eq!(c.visits(0, 0), 5);
        assert_eq!(c.transitions[0][&0], 4);
        assert_eq!(c.final_steps[0], 1);
    }

    #[test]
    fn hand_counts() {
        let b = make_k_window_fsc(1, 1, 1).unwrap();
        let d = Dataset {
            episodes: vec![Episode {
                steps: (1..=3)
                    .map(|r| Step { node: 0, obs: 0, action: 0, reward: r as f64 })
                    .collect(),
                terminated: false,
            }],
            meta: DatasetMeta::default(),
        };
        let c = count(&d, &b).unwrap();
        assert_eq!(c.visits(0, 0), 3);
        assert_eq!(c.transitions[0][&0], 2);
        assert_eq!(c.reward_sums[0], 6.0);
    }

    #[test]
    fn tiger_windows_follow_shift_law() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(3);
        let d = collect_dataset(&env, &b, 100, 300, 42).unwrap();
        let labels = b.labels().unwrap();
        for ep in &d.episodes {
            let mut window: VecDeque<Option<usize>> = vec![None; 2].into();
            for st in &ep.steps {
                assert_eq!(labels[st.node], window.iter().copied().collect::<Vec<_>>());
                window.pop_front();
                window.push_back(Some(st.obs));
            }
        }
        count(&d, &b).unwrap();
    }

    #[test]
    fn counts_match_linear_scan() {
        let env = make_tiger(0.7).unwrap();
        let b = tiger_behavior(2);
        let d = collect_dataset(&env, &b, 200, 300, 5).unwrap();
        let c = count(&d, &b).unwrap();
        let mut brute = vec![0u64; c.visits.len()];
        for ep in &d.episodes {
            for st in &ep.steps {
                brute[(st.node * 2 + st.obs) * 3 + st.action] += 1;
            }
        }
        assert_eq!(brute, c.visits);
        for i in 0..c.visits.len() {
            let succ: u64 = c.transitions[i].values().sum();
            assert_eq!(succ + c.final_steps[i], c.visits[i]);
        }
    }

    #[test]
    fn corrupt_node_sequence_is_rejected() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(2);
        let mut d = collect_dataset(&env, &b, 50, 300, 3).unwrap();
        let ep = d.episodes.iter_mut().find(|e| e.steps.len() > 1).unwrap();
        ep.steps[1].node = 0;
        assert!(matches!(count(&d, &b), Err(Error::CorruptDataset(_))));
    }

    #[test]
    fn counts_are_additive() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(2);
        let d1 = collect_dataset(&env, &b, 40, 300, 1).unwrap();
        let d2 = collect_dataset(&env, &b, 60, 300, 2).unwrap();
        let mut both = d1.clone();
        both.episodes.extend(d2.episodes.clone());
        let mut c = count(&d1, &b).unwrap();
        c.merge(&count(&d2, &b).unwrap()).unwrap();
        assert_eq!(c, count(&both, &b).unwrap());
    }

    #[test]
    fn replay_reproduces_nodes() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(2);
        let d = collect_dataset(&env, &b, 30, 300, 9).unwrap();
        assert_eq!(d.replay(&b).unwrap().episodes, d.episodes);
        let wider = make_k_window_fsc(3, 2, 3).unwrap();
        let d3 = d.replay(&wider).unwrap();
        count(&d3, &wider).unwrap();
    }

    #[test]
    fn csv_round_trip_is_byte_exact() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(2);
        let d = collect_dataset(&env, &b, 25, 300, 4).unwrap();
        let mut first = Vec::new();
        d.write_csv(&mut first).unwrap();
        let back = Dataset::read_csv(first.as_slice(), d.meta.clone()).unwrap();
        assert_eq!(back, d);
        let mut second = Vec::new();
        back.write_csv(&mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn collection_is_deterministic() {
        let env = make_tiger(0.85).unwrap();
        let b = tiger_behavior(1);
        assert_eq!(
            collect_dataset(&env, &b, 20, 300, 77).unwrap(),
            collect_dataset(&env, &b, 20, 300, 77).unwrap()
        );
    }
}
