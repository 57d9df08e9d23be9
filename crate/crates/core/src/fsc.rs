//! Finite-state controllers.
//!
//! A controller has memory nodes `N`, an initial node, a stochastic action
//! map `psi(a | n, z)` and a deterministic memory update `eta(n, z, a)`.
//! The pair `<n, z>` is a [`HistoryState`]; it is flattened to the index
//! `n * |Z| + z` everywhere an MDP over history states is built.
//!
//! The k-window structure stores the last `k - 1` observations in the node
//! (oldest first, `None` for positions before the episode started). Together
//! with the current observation, `<n, z>` encodes the last `k` observations,
//! so a k-window controller has `(|Z| + 1)^(k - 1)` nodes.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::rng::sample_index;

const ROW_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HistoryState {
    pub node: usize,
    pub obs: usize,
}

impl HistoryState {
    pub fn index(self, num_observations: usize) -> usize {
        self.node * num_observations + self.obs
    }

    pub fn from_index(index: usize, num_observations: usize) -> Self {
        HistoryState {
            node: index / num_observations,
            obs: index % num_observations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FscFile", into = "FscFile")]
pub struct Fsc {
    num_nodes: usize,
    num_observations: usize,
    num_actions: usize,
    initial_node: usize,
    /// Row `n * |Z| + z`.
    action_map: Vec<Vec<f64>>,
    /// Entry `(n * |Z| + z) * |A| + a`.
    memory_update: Vec<usize>,
    /// Window contents of each node, present for k-window controllers.
    labels: Option<Vec<Vec<Option<usize>>>>,
}

impl Fsc {
    /// Build a controller, checking every invariant.
    pub fn new(
        initial_node: usize,
        action_map: Vec<Vec<Vec<f64>>>,
        memory_update: Vec<Vec<Vec<usize>>>,
        labels: Option<Vec<Vec<Option<usize>>>>,
    ) -> Result<Self> {
        let num_nodes = action_map.len();
        if num_nodes == 0 || memory_update.len() != num_nodes {
            return Err(Error::InvalidModel(
                "controller needs matching, nonempty action map and memory update".into(),
            ));
        }
        let num_observations = action_map[0].len();
        let num_actions = action_map[0].first().map_or(0, Vec::len);
        if num_observations == 0 || num_actions == 0 {
            return Err(Error::InvalidModel(
                "controller needs at least one observation and action".into(),
            ));
        }
        check_index("initial node", initial_node, num_nodes)?;
        let mut flat_psi = Vec::with_capacity(num_nodes * num_observations);
        let mut flat_eta = Vec::with_capacity(num_nodes * num_observations * num_actions);
        for (n, (rows, updates)) in action_map.into_iter().zip(memory_update).enumerate() {
            if rows.len() != num_observations || updates.len() != num_observations {
                return Err(Error::InvalidModel(format!("node {n} has wrong observation count")));
            }
            for (z, (row, upd)) in rows.into_iter().zip(updates).enumerate() {
                check_row(&row, num_actions)
                    .map_err(|e| Error::InvalidModel(format!("psi(n={n}, z={z}): {e}")))?;
                if upd.len() != num_actions {
                    return Err(Error::InvalidModel(format!(
                        "eta(n={n}, z={z}) has wrong action count"
                    )));
                }
                for &next in &upd {
                    check_index("memory node", next, num_nodes)?;
                }
                flat_psi.push(row);
                flat_eta.extend(upd);
            }
        }
        if let Some(l) = &labels {
            if l.len() != num_nodes {
                return Err(Error::InvalidModel("label count differs from node count".into()));
            }
        }
        Ok(Fsc {
            num_nodes,
            num_observations,
            num_actions,
            initial_node,
            action_map: flat_psi,
            memory_update: flat_eta,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_observations(&self) -> usize {
        self.num_observations
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_history_states(&self) -> usize {
        self.num_nodes * self.num_observations
    }

    pub fn initial_node(&self) -> usize {
        self.initial_node
    }

    pub fn labels(&self) -> Option<&[Vec<Option<usize>>]> {
        self.labels.as_deref()
    }

    /// Window length `k` for k-window controllers.
    pub fn window(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.first().map_or(0, Vec::len) + 1)
    }

    pub fn psi(&self, node: usize, obs: usize) -> &[f64] {
        &self.action_map[node * self.num_observations + obs]
    }

    /// Action distribution of a flattened history state.
    pub fn row(&self, history_state: usize) -> &[f64] {
        &self.action_map[history_state]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.action_map
    }

    pub fn eta(&self, node: usize, obs: usize, action: usize) -> usize {
        self.memory_update[(node * self.num_observations + obs) * self.num_actions + action]
    }

    /// Sample an action from `psi(.|n,z)` and advance the memory.
    pub fn step<R: Rng + ?Sized>(
        &self,
        node: usize,
        obs: usize,
        rng: &mut R,
    ) -> Result<(usize, usize)> {
        check_index("memory node", node, self.num_nodes)?;
        check_index("observation", obs, self.num_observations)?;
        let action = sample_index(self.psi(node, obs), rng);
        Ok((action, self.eta(node, obs, action)))
    }

    /// Same nodes and memory update with a new action map.
    pub fn with_action_map(&self, rows: Vec<Vec<f64>>) -> Result<Fsc> {
        if rows.len() != self.num_history_states() {
            return Err(Error::IncompletePolicy(format!(
                "table has {} rows, controller has {} history states",
                rows.len(),
                self.num_history_states()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            check_row(row, self.num_actions).map_err(|e| {
                let h = HistoryState::from_index(i, self.num_observations);
                Error::IncompletePolicy(format!("row (n={}, z={}): {e}", h.node, h.obs))
            })?;
        }
        Ok(Fsc {
            action_map: rows,
            ..self.clone()
        })
    }

    /// True when both controllers have the same nodes, initial node and
    /// memory update.
    pub fn same_structure(&self, other: &Fsc) -> bool {
        self.num_nodes == other.num_nodes
            && self.num_observations == other.num_observations
            && self.num_actions == other.num_actions
            && self.initial_node == other.initial_node
            && self.memory_update == other.memory_update
    }

    /// Node reached after following `obs`/`actions` from the initial node.
    pub fn node_after(&self, history: &[(usize, usize)]) -> usize {
        history
            .iter()
            .fold(self.initial_node, |n, &(z, a)| self.eta(n, z, a))
    }

    /// Re-express this k-window controller on a longer window structure.
    ///
    /// Each node of `target` keeps its last `k - 1` observations and takes the
    /// action distribution of the matching node here, so the lifted policy
    /// ignores the extra window slots.
    pub fn lift_to(&self, target: &Fsc) -> Result<Fsc> {
        let (Some(k), Some(k2)) = (self.window(), target.window()) else {
            return Err(Error::InvalidParameter(
                "lifting needs two k-window controllers".into(),
            ));
        };
        if k2 < k
            || target.num_observations != self.num_observations
            || target.num_actions != self.num_actions
        {
            return Err(Error::InvalidParameter(format!(
                "cannot lift a {k}-window controller onto a {k2}-window structure"
            )));
        }
        let zc = self.num_observations;
        let labels = target.labels.as_ref().expect("window checked");
        let mut rows = Vec::with_capacity(target.num_history_states());
        for label in labels {
            let suffix = &label[label.len() - (k - 1)..];
            let n = window_index(suffix, zc);
            for z in 0..zc {
                rows.push(self.psi(n, z).to_vec());
            }
        }
        target.with_action_map(rows)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

fn check_row(row: &[f64], num_actions: usize) -> std::result::Result<(), String> {
    if row.len() != num_actions {
        return Err(format!("has {} entries, expected {num_actions}", row.len()));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("has a negative or non-finite entry".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Index of a padded window, read as a base-(|Z|+1) number with the oldest
/// entry most significant and the pad symbol as digit 0.
fn window_index(window: &[Option<usize>], num_observations: usize) -> usize {
    window.iter().fold(0, |acc, w| {
        acc * (num_observations + 1) + w.map_or(0, |z| z + 1)
    })
}

/// The k-window memory structure with a uniform action map.
pub fn make_k_window_fsc(k: usize, num_observations: usize, num_actions: usize) -> Result<Fsc> {
    if k == 0 {
        return Err(Error::InvalidParameter("window length must be at least 1".into()));
    }
    if num_observations == 0 || num_actions == 0 {
        return Err(Error::InvalidParameter(
            "need at least one observation and action".into(),
        ));
    }
    let width = k - 1;
    let base = num_observations + 1;
    let num_nodes = base.pow(width as u32);
    let labels: Vec<Vec<Option<usize>>> = (0..num_nodes)
        .map(|mut idx| {
            let mut label = vec![None; width];
            for slot in label.iter_mut().rev() {
                let digit = idx % base;
                idx /= base;
                *slot = digit.checked_sub(1);
            }
            label
        })
        .collect();
    let uniform = vec![1.0 / num_actions as f64; num_actions];
    let action_map = vec![vec![uniform; num_observations]; num_nodes];
    let memory_update = labels
        .iter()
        .map(|label| {
            (0..num_observations)
                .map(|z| {
                    let next = if width == 0 {
                        0
                    } else {
                        let mut shifted: Vec<Option<usize>> = label[1..].to_vec();
                        shifted.push(Some(z));
                        window_index(&shifted, num_observations)
                    };
                    vec![next; num_actions]
                })
                .collect()
        })
        .collect();
    Fsc::new(0, action_map, memory_update, Some(labels))
}

/// A controller with the structure of `structure` and the given action table.
pub fn fsc_from_table(structure: &Fsc, action_table: Vec<Vec<f64>>) -> Result<Fsc> {
    structure.with_action_map(action_table)
}

#[derive(Serialize, Deserialize)]
struct FscFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Vec<Option<usize>>>>,
    initial_node: usize,
    /// `[n][z][a]`
    action_map: Vec<Vec<Vec<f64>>>,
    /// `[n][z][a]`
    memory_update: Vec<Vec<Vec<usize>>>,
}

impl From<Fsc> for FscFile {
    fn from(f: Fsc) -> Self {
        let (zc, ac) = (f.num_observations, f.num_actions);
        let action_map = f.action_map.chunks(zc).map(<[_]>::to_vec).collect();
        let memory_update = f
            .memory_update
            .chunks(zc * ac)
            .map(|node| node.chunks(ac).map(<[_]>::to_vec).collect())
            .collect();
        FscFile {
            labels: f.labels,
            initial_node: f.initial_node,
            action_map,
            memory_update,
        }
    }
}

impl TryFrom<FscFile> for Fsc {
    type Error = Error;

    fn try_from(f: FscFile) -> Result<Self> {
        Fsc::new(f.initial_node, f.action_map, f.memory_update, f.labels)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::rng::seeded;

    #[test]
    fn memoryless_window() {
        let f = make_k_window_fsc(1, 4, 2).unwrap();
        assert_eq!(f.num_nodes(), 1);
        assert_eq!(f.num_history_states(), 4);
        assert_eq!(f.window(), Some(1));
    }

    #[test]
    fn node_counts() {
        let f2 = make_k_window_fsc(2, 2, 3).unwrap();
        assert_eq!(f2.num_nodes(), 3);
        assert_eq!(f2.num_history_states(), 6);
        assert_eq!(
            f2.labels().unwrap(),
            &[vec![None], vec![Some(0)], vec![Some(1)]]
        );
        assert_eq!(make_k_window_fsc(3, 2, 3).unwrap().num_nodes(), 9);
        assert_eq!(make_k_window_fsc(4, 6, 4).unwrap().num_nodes(), 343);
    }

    #[test]
    fn window_shift() {
        let f = make_k_window_fsc(2, 2, 3).unwrap();
        let mut rng = seeded(1);
        let (_, next) = f.step(f.initial_node(), 0, &mut rng).unwrap();
        assert_eq!(f.labels().unwrap()[next], vec![Some(0)]);
    }

    #[test]
    fn point_mass_action() {
        let f = make_k_window_fsc(1, 2, 2).unwrap();
        let f = f
            .with_action_map(vec![vec![1.0, 0.0], vec![1.0, 0.0]])
            .unwrap();
        let mut rng = seeded(9);
        assert!((0..100).all(|_| f.step(0, 1, &mut rng).unwrap().0 == 0));
    }

    #[test]
    fn action_frequency_within_binomial_band() {
        let f = make_k_window_fsc(1, 1, 2)
            .unwrap()
            .with_action_map(vec![vec![0.25, 0.75]])
            .unwrap();
        let mut rng = seeded(77);
        let n = 100_000;
        let hits = (0..n).filter(|_| f.step(0, 0, &mut rng).unwrap().0 == 1).count();
        let freq = hits as f64 / n as f64;
        assert!((0.7457..=0.7543).contains(&freq), "{freq}");
    }

    #[test]
    fn table_round_trip_and_rejection() {
        let f = make_k_window_fsc(2, 2, 2).unwrap();
        let table: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        let g = fsc_from_table(&f, table.clone()).unwrap();
        let h = fsc_from_table(&g, g.rows().to_vec()).unwrap();
        assert_eq!(g, h);
        let mut bad = table;
        bad[3] = vec![0.5, 0.6];
        assert!(matches!(fsc_from_table(&f, bad), Err(Error::IncompletePolicy(_))));
        assert!(matches!(
            fsc_from_table(&f, vec![vec![0.5, 0.5]]),
            Err(Error::IncompletePolicy(_))
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let f = make_k_window_fsc(3, 2, 3).unwrap();
        let rows: Vec<Vec<f64>> = (0..f.num_history_states())
            .map(|i| {
                let x = 1.0 / (i as f64 + 3.0);
                vec![x, 2.0 * x, 1.0 - 3.0 * x]
            })
            .collect();
        let f = f.with_action_map(rows).unwrap();
        let back = Fsc::from_json_str(&f.to_json_string().unwrap()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn lifting_ignores_extra_slots() {
        let small = make_k_window_fsc(2, 2, 2).unwrap();
        let rows = vec![
            vec![0.1, 0.9],
            vec![0.2, 0.8],
            vec![0.3, 0.7],
            vec![0.4, 0.6],
            vec![0.5, 0.5],
            vec![0.6, 0.4],
        ];
        let small = small.with_action_map(rows).unwrap();
        let big = make_k_window_fsc(3, 2, 2).unwrap();
        let lifted = small.lift_to(&big).unwrap();
        let labels = big.labels().unwrap();
        for (n, label) in labels.iter().enumerate() {
            let sn = window_index(&label[1..], 2);
            for z in 0..2 {
                assert_eq!(lifted.psi(n, z), small.psi(sn, z));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn window_matches_reference_deque(
                k in 1usize..5,
                zs in prop::collection::vec(0usize..3, 0..12),
                a in 0usize..2,
            ) {
                let f = make_k_window_fsc(k, 3, 2).unwrap();
                let mut deque: VecDeque<Option<usize>> = vec![None; k - 1].into();
                let mut n = f.initial_node();
                for &z in &zs {
                    n = f.eta(n, z, a);
                    if k > 1 {
                        deque.pop_front();
                        deque.push_back(Some(z));
                    }
                    let expected: Vec<Option<usize>> = deque.iter().copied().collect();
                    prop_assert_eq!(&f.labels().unwrap()[n], &expected);
                }
                // eta is deterministic
                prop_assert_eq!(f.node_after(&zs.iter().map(|&z| (z, a)).collect::<Vec<_>>()), n);
            }
        }
    }
}
