//! Fully observable tabular MDPs over history states.
//!
//! Rows are stored sparsely and may be undefined (an estimated MDP has no row
//! for a pair that never occurred in the data). The performance of a policy
//! is the value under the initial-state distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Q-values closer than this are treated as tied; ties go to the lowest action.
pub const TIE_TOL: f64 = 1e-10;

/// Sparse transition row: `(next_state, probability)` sorted by state.
pub type Row = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Indexed by `s * num_actions + a`; `None` for undefined rows.
    pub transitions: Vec<Option<Row>>,
    /// Indexed by `s * num_actions + a`; zero for undefined rows.
    pub rewards: Vec<f64>,
    pub discount: f64,
    /// Distribution of the first state of an episode.
    pub initial: Vec<f64>,
    /// Visit count per pair; zero for oracle-built MDPs.
    pub counts: Vec<u64>,
    /// Successor counts per pair; empty rows for oracle-built MDPs.
    pub pair_counts: Vec<Vec<(usize, u64)>>,
    /// Absorbing zero-reward state that terminal transitions lead to.
    pub sink: Option<usize>,
    /// States the construction never reached; their rows are undefined.
    pub unreached: Vec<usize>,
    /// Occupancy weight left unexpanded by a finite-horizon construction.
    pub truncation_mass: f64,
}

/// Output of [`value_iteration`].
#[derive(Clone, Debug)]
pub struct Solution {
    pub values: Vec<f64>,
    /// `q[s * num_actions + a]`; `-inf` for undefined rows.
    pub q_values: Vec<f64>,
    pub greedy: Vec<usize>,
}

impl TabularMdp {
    /// An MDP with every row undefined and no counts.
    pub fn empty(num_states: usize, num_actions: usize, discount: f64) -> Self {
        let pairs = num_states * num_actions;
        TabularMdp {
            num_states,
            num_actions,
            transitions: vec![None; pairs],
            rewards: vec![0.0; pairs],
            discount,
            initial: vec![0.0; num_states],
            counts: vec![0; pairs],
            pair_counts: vec![Vec::new(); pairs],
            sink: None,
            unreached: Vec::new(),
            truncation_mass: 0.0,
        }
    }

    /// Build from dense tables `transition[s][a][s']` and `reward[s][a]`.
    pub fn from_dense(
        transition: &[Vec<Vec<f64>>],
        reward: &[Vec<f64>],
        discount: f64,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let ns = transition.len();
        let na = transition.first().map_or(0, Vec::len);
        let mut mdp = TabularMdp::empty(ns, na, discount);
        for s in 0..ns {
            for a in 0..na {
                let row: Row = transition[s][a]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(j, &p)| (j, p))
                    .collect();
                mdp.set_row(s, a, row, reward[s][a]);
            }
        }
        mdp.initial = initial;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    pub fn row(&self, s: usize, a: usize) -> Option<&Row> {
        self.transitions[self.pair(s, a)].as_ref()
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[self.pair(s, a)]
    }

    pub fn is_defined(&self, s: usize, a: usize) -> bool {
        self.transitions[self.pair(s, a)].is_some()
    }

    pub fn set_row(&mut self, s: usize, a: usize, row: Row, reward: f64) {
        let i = self.pair(s, a);
        self.transitions[i] = Some(row);
        self.rewards[i] = reward;
    }

    /// Dense copy of a row, zeros when undefined.
    pub fn dense_row(&self, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.num_states];
        if let Some(row) = self.row(s, a) {
            for &(j, p) in row {
                out[j] += p;
            }
        }
        out
    }

    /// Check row normalization and count consistency.
    pub fn validate(&self) -> Result<()> {
        let pairs = self.num_states * self.num_actions;
        if self.transitions.len() != pairs
            || self.rewards.len() != pairs
            || self.counts.len() != pairs
            || self.pair_counts.len() != pairs
            || self.initial.len() != self.num_states
        {
            return Err(Error::InvalidModel("table sizes are inconsistent".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidModel(format!("discount {} outside [0, 1)", self.discount)));
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if let Some(row) = row {
                let sum: f64 = row.iter().map(|(_, p)| p).sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&(j, p)| j >= self.num_states || p < 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "row (s={}, a={}) is not a distribution (sum {sum})",
                        i / self.num_actions,
                        i % self.num_actions
                    )));
                }
            }
            let succ: u64 = self.pair_counts[i].iter().map(|(_, c)| c).sum();
            if succ != self.counts[i] && !(self.counts[i] == 0 && self.pair_counts[i].is_empty()) {
                return Err(Error::InvalidModel(format!(
                    "pair {i}: successor counts sum to {succ}, visits are {}",
                    self.counts[i]
                )));
            }
        }
        Ok(())
    }

    /// Copy in which every undefined row leads to a zero-reward absorbing
    /// sink (added if the MDP has none).
    pub fn close_undefined_to_sink(&self) -> TabularMdp {
        let mut out = self.clone();
        let sink = match out.sink {
            Some(s) => s,
            None => {
                out.num_states += 1;
                let s = out.num_states - 1;
                out.transitions.extend((0..out.num_actions).map(|_| None));
                out.rewards.extend(std::iter::repeat_n(0.0, out.num_actions));
                out.counts.extend(std::iter::repeat_n(0, out.num_actions));
                out.pair_counts.extend((0..out.num_actions).map(|_| Vec::new()));
                out.initial.push(0.0);
                out.sink = Some(s);
                s
            }
        };
        for a in 0..out.num_actions {
            let i = out.pair(sink, a);
            out.transitions[i] = Some(vec![(sink, 1.0)]);
            out.rewards[i] = 0.0;
        }
        for i in 0..out.transitions.len() {
            if out.transitions[i].is_none() {
                out.transitions[i] = Some(vec![(sink, 1.0)]);
                out.rewards[i] = 0.0;
            }
        }
        out
    }

    /// `sum_s initial(s) * values(s)`.
    pub fn performance(&self, values: &[f64]) -> f64 {
        self.initial.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    fn backup(&self, s: usize, a: usize, values: &[f64]) -> Option<f64> {
        self.row(s, a).map(|row| {
            self.reward(s, a) + self.discount * row.iter().map(|&(j, p)| p * values[j]).sum::<f64>()
        })
    }

    /// Q-values for the given state values; `-inf` on undefined rows.
    pub fn q_values(&self, values: &[f64]) -> Vec<f64> {
        (0..self.num_states)
            .flat_map(|s| (0..self.num_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.backup(s, a, values).unwrap_or(f64::NEG_INFINITY))
            .collect()
    }

    /// States reachable from the initial distribution when following the
    /// actions with positive probability in `policy`.
    pub fn reachable(&self, policy: &[Vec<f64>]) -> Vec<bool> {
        let mut seen = vec![false; self.num_states];
        let mut stack: Vec<usize> = (0..self.num_states).filter(|&s| self.initial[s] > 0.0).collect();
        for &s in &stack {
            seen[s] = true;
        }
        while let Some(s) = stack.pop() {
            for (a, &p) in policy[s].iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                if let Some(row) = self.row(s, a) {
                    for &(j, q) in row {
                        if q > 0.0 && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        seen
    }
}

/// Lowest action whose Q-value is within [`TIE_TOL`] of the best defined one.
pub fn greedy_action(q_row: &[f64]) -> Option<usize> {
    let best = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return None;
    }
    q_row.iter().position(|&q| q >= best - TIE_TOL)
}

/// Deterministic policy table with one-hot rows.
pub fn one_hot_policy(actions: &[usize], num_actions: usize) -> Vec<Vec<f64>> {
    actions
        .iter()
        .map(|&a| {
            let mut row = vec![0.0; num_actions];
            row[a] = 1.0;
            row
        })
        .collect()
}

/// Bellman optimality iteration until the values are within `tol` of the
/// optimum (which also bounds the sup-norm Bellman residual by `tol`).
///
/// Only defined rows enter the maximum. States with no defined row keep value
/// zero; reaching one under the greedy policy is a missing-data error.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<Solution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let gamma = mdp.discount;
    let stop = if gamma > 0.0 { tol * (1.0 - gamma) / gamma } else { f64::INFINITY };
    let mut values = vec![0.0; ns];
    loop {
        let mut delta: f64 = 0.0;
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                let v = (0..na)
                    .filter_map(|a| mdp.backup(s, a, &values))
                    .fold(f64::NEG_INFINITY, f64::max);
                if v == f64::NEG_INFINITY {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        for (old, new) in values.iter().zip(&next) {
            delta = delta.max((old - new).abs());
        }
        values = next;
        if delta <= stop {
            break;
        }
    }
    let q_values = mdp.q_values(&values);
    let mut greedy = Vec::with_capacity(ns);
    let mut stuck = Vec::new();
    for s in 0..ns {
        match greedy_action(&q_values[s * na..(s + 1) * na]) {
            Some(a) => greedy.push(a),
            None => {
                stuck.push(s);
                greedy.push(0);
            }
        }
    }
    if !stuck.is_empty() {
        let reach = mdp.reachable(&one_hot_policy(&greedy, na));
        if let Some(&s) = stuck.iter().find(|&&s| reach[s]) {
            return Err(Error::MissingData { state: s, action: None });
        }
    }
    Ok(Solution {
        values,
        q_values,
        greedy,
    })
}

/// Evaluate a stochastic policy table (`policy[s][a]`) to within `tol` of the
/// fixed point of its Bellman operator.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &[Vec<f64>], tol: f64) -> Result<Vec<f64>> {
    policy_evaluation_from(mdp, policy, tol, vec![0.0; mdp.num_states])
}

/// [`policy_evaluation`] started from `init` values.
pub fn policy_evaluation_from(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    tol: f64,
    init: Vec<f64>,
) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    if policy.len() != ns || policy.iter().any(|r| r.len() != na) || init.len() != ns {
        return Err(Error::IncompletePolicy(format!(
            "policy table does not cover {ns} states x {na} actions"
        )));
    }
    let reach = mdp.reachable(policy);
    // Collapse the policy into one sparse row per state.
    let mut rows: Vec<Row> = vec![Vec::new(); ns];
    let mut rewards = vec![0.0; ns];
    for s in 0..ns {
        let mut dense: Vec<(usize, f64)> = Vec::new();
        for (a, &p) in policy[s].iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            match mdp.row(s, a) {
                Some(row) => {
                    rewards[s] += p * mdp.reward(s, a);
                    dense.extend(row.iter().map(|&(j, q)| (j, p * q)));
                }
                None if reach[s] => {
                    return Err(Error::MissingData { state: s, action: Some(a) });
                }
                None => {}
            }
        }
        dense.sort_unstable_by_key(|e| e.0);
        let mut merged: Row = Vec::with_capacity(dense.len());
        for (j, p) in dense {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += p,
                _ => merged.push((j, p)),
            }
        }
        rows[s] = merged;
    }
    let gamma = mdp.discount;
    // |V_k+1 - V*| <= gamma / (1 - gamma) * |V_k+1 - V_k|
    let stop = if gamma > 0.0 { tol * (1.0 - gamma) / gamma } else { f64::INFINITY };
    let mut values = init;
    loop {
        let mut delta: f64 = 0.0;
        // Gauss-Seidel sweep
        for s in 0..ns {
            let v = rewards[s] + gamma * rows[s].iter().map(|&(j, p)| p * values[j]).sum::<f64>();
            delta = delta.max((v - values[s]).abs());
            values[s] = v;
        }
        if delta <= stop {
            break;
        }
    }
    Ok(values)
}
