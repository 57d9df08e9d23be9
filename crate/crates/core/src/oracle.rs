//! Exact finite-history MDP of a known POMDP.
//!
//! For a memory structure `(N, n0, eta)` the history state `<n, z>` stands for
//! every observation history that leads the controller to node `n` with
//! current observation `z`. Its belief `b(s | <n, z>)` is the
//! occupancy-weighted average of the beliefs of those histories under a
//! weighting policy, and
//!
//! ```text
//! T_H(<n', z'> | <n, z>, a) = sum_s b(s|<n,z>) sum_s' T(s'|s,a) O(z'|s',a) [n' = eta(n, z, a)]
//! R_H(<n, z>, a)            = sum_s b(s|<n,z>) R(s, a)
//! ```
//!
//! Transitions into terminal POMDP states go to an absorbing sink.
//!
//! Enumerating histories one by one grows exponentially with the horizon.
//! Because `P(h) b(s | h)` is the joint probability of the history and the
//! hidden state, the aggregated beliefs are obtained exactly by propagating
//! the joint law of `(s_t, weighting node, structure node, z_t)` forward and
//! summing it per `<n, z>`.

use crate::error::{Error, Result};
use crate::fsc::Fsc;
use crate::mdp::{Row, TabularMdp};
use crate::pomdp::Pomdp;

/// How visits at time `t` are weighted when averaging beliefs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OccupancyWeighting {
    /// Weight `gamma^t`.
    Discounted,
    /// Weight 1: the visit frequencies an episode-capped dataset converges to.
    Undiscounted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    pub horizon: usize,
    pub weighting: OccupancyWeighting,
}

impl OracleOptions {
    /// `k + ceil(log(1e-6) / log(gamma))`, capped at 300, discounted weights.
    pub fn default_for(discount: f64, k: usize) -> Self {
        let tail = if discount > 0.0 {
            (1e-6f64.ln() / discount.ln()).ceil() as usize
        } else {
            1
        };
        OracleOptions {
            horizon: (k + tail).min(crate::DEFAULT_MAX_STEPS),
            weighting: OccupancyWeighting::Discounted,
        }
    }
}

/// Aggregated occupancy of every history state.
#[derive(Clone, Debug)]
pub struct HistoryBeliefs {
    /// Total occupancy weight per flattened history state.
    pub occupancy: Vec<f64>,
    /// `b(s | <n, z>)`, `None` when the history state was never reached.
    pub beliefs: Vec<Option<Vec<f64>>>,
    /// Unexpanded weight after the horizon: `alive * gamma^L / (1 - gamma)`
    /// for discounted weights, the still-running probability mass otherwise.
    pub truncation_mass: f64,
}

/// Propagate the joint law of state, memory and observation under
/// `weighting_policy` and aggregate it per history state of `structure`.
pub fn history_beliefs(
    pomdp: &Pomdp,
    structure: &Fsc,
    weighting_policy: &Fsc,
    opts: &OracleOptions,
) -> Result<HistoryBeliefs> {
    let (ns, na, nz) = (pomdp.num_states(), pomdp.num_actions(), pomdp.num_observations());
    for f in [structure, weighting_policy] {
        if f.num_observations() != nz || f.num_actions() != na {
            return Err(Error::InvalidParameter(
                "controller does not match the model's observations and actions".into(),
            ));
        }
    }
    if opts.horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let shared = structure.same_structure(weighting_policy);
    let nodes_s = structure.num_nodes();
    let nodes_w = weighting_policy.num_nodes();
    let pairs = if shared { nodes_s } else { nodes_s * nodes_w };
    let size = ns
        .checked_mul(pairs)
        .and_then(|x| x.checked_mul(nz))
        .filter(|&x| x <= 1 << 28)
        .ok_or_else(|| Error::InvalidParameter("joint state space too large".into()))?;

    let encode = |s: usize, nw: usize, nst: usize, z: usize| {
        let pair = if shared { nst } else { nw * nodes_s + nst };
        (s * pairs + pair) * nz + z
    };
    let decode = |idx: usize| {
        let z = idx % nz;
        let rest = idx / nz;
        let pair = rest % pairs;
        let s = rest / pairs;
        let (nw, nst) = if shared { (pair, pair) } else { (pair / nodes_s, pair % nodes_s) };
        (s, nw, nst, z)
    };

    let mut current = vec![0.0; size];
    let mut active: Vec<usize> = Vec::new();
    for s in 0..ns {
        if pomdp.initial_belief[s] == 0.0 || pomdp.is_terminal(s) {
            continue;
        }
        for z in 0..nz {
            let p = pomdp.initial_belief[s] * pomdp.initial_observation[s][z];
            if p > 0.0 {
                let i = encode(s, weighting_policy.initial_node(), structure.initial_node(), z);
                if current[i] == 0.0 {
                    active.push(i);
                }
                current[i] += p;
            }
        }
    }
    active.sort_unstable();

    let hs_count = structure.num_history_states();
    let mut joint = vec![0.0; hs_count * ns];
    let mut next = vec![0.0; size];
    let mut weight = 1.0;
    for _ in 0..opts.horizon {
        let mut touched = Vec::new();
        for &i in &active {
            let m = current[i];
            let (s, nw, nst, z) = decode(i);
            joint[(nst * nz + z) * ns + s] += weight * m;
            let psi = weighting_policy.psi(nw, z);
            for a in 0..na {
                let pa = psi[a];
                if pa == 0.0 {
                    continue;
                }
                let nw2 = weighting_policy.eta(nw, z, a);
                let nst2 = structure.eta(nst, z, a);
                for (s2, &t) in pomdp.transition[s][a].iter().enumerate() {
                    if t == 0.0 || pomdp.is_terminal(s2) {
                        continue;
                    }
                    for (z2, &o) in pomdp.observation[s2][a].iter().enumerate() {
                        if o == 0.0 {
                            continue;
                        }
                        let j = encode(s2, nw2, nst2, z2);
                        if next[j] == 0.0 {
                            touched.push(j);
                        }
                        next[j] += m * pa * t * o;
                    }
                }
            }
            current[i] = 0.0;
        }
        touched.sort_unstable();
        touched.dedup();
        std::mem::swap(&mut current, &mut next);
        active = touched;
        if opts.weighting == OccupancyWeighting::Discounted {
            weight *= pomdp.discount;
        }
        if active.is_empty() {
            break;
        }
    }
    let alive: f64 = active.iter().map(|&i| current[i]).sum();
    let truncation_mass = match opts.weighting {
        OccupancyWeighting::Discounted => alive * weight / (1.0 - pomdp.discount),
        OccupancyWeighting::Undiscounted => alive,
    };

    let mut occupancy = vec![0.0; hs_count];
    let mut beliefs = vec![None; hs_count];
    for h in 0..hs_count {
        let slice = &joint[h * ns..(h + 1) * ns];
        let total: f64 = slice.iter().sum();
        occupancy[h] = total;
        if total > 0.0 {
            beliefs[h] = Some(slice.iter().map(|x| x / total).collect());
        }
    }
    Ok(HistoryBeliefs {
        occupancy,
        beliefs,
        truncation_mass,
    })
}

/// Exact finite-history MDP with discounted occupancy weights over `horizon`
/// steps. See [`build_oracle_with`] for other weightings.
pub fn build_oracle_finite_history_mdp(
    pomdp: &Pomdp,
    structure: &Fsc,
    weighting_policy: &Fsc,
    horizon: usize,
) -> Result<TabularMdp> {
    build_oracle_with(
        pomdp,
        structure,
        weighting_policy,
        &OracleOptions {
            horizon,
            weighting: OccupancyWeighting::Discounted,
        },
    )
}

/// Exact finite-history MDP over `structure`'s history states plus a sink.
///
/// History states that the weighting policy never reaches within the horizon
/// have undefined rows and are listed in `unreached`.
pub fn build_oracle_with(
    pomdp: &Pomdp,
    structure: &Fsc,
    weighting_policy: &Fsc,
    opts: &OracleOptions,
) -> Result<TabularMdp> {
    let hb = history_beliefs(pomdp, structure, weighting_policy, opts)?;
    let (ns, na, nz) = (pomdp.num_states(), pomdp.num_actions(), pomdp.num_observations());
    let hs_count = structure.num_history_states();
    let sink = hs_count;
    let mut mdp = TabularMdp::empty(hs_count + 1, na, pomdp.discount);
    mdp.sink = Some(sink);
    mdp.truncation_mass = hb.truncation_mass;
    for a in 0..na {
        mdp.set_row(sink, a, vec![(sink, 1.0)], 0.0);
    }
    let mut dense = vec![0.0; hs_count + 1];
    for h in 0..hs_count {
        let Some(belief) = &hb.beliefs[h] else {
            mdp.unreached.push(h);
            continue;
        };
        let (n, z) = (h / nz, h % nz);
        for a in 0..na {
            dense.iter_mut().for_each(|x| *x = 0.0);
            let n2 = structure.eta(n, z, a);
            let mut reward = 0.0;
            for s in 0..ns {
                let b = belief[s];
                if b == 0.0 {
                    continue;
                }
                reward += b * pomdp.reward[s][a];
                for (s2, &t) in pomdp.transition[s][a].iter().enumerate() {
                    if t == 0.0 {
                        continue;
                    }
                    if pomdp.is_terminal(s2) {
                        dense[sink] += b * t;
                        continue;
                    }
                    for (z2, &o) in pomdp.observation[s2][a].iter().enumerate() {
                        dense[n2 * nz + z2] += b * t * o;
                    }
                }
            }
            let row: Row = dense
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(j, &p)| (j, p))
                .collect();
            mdp.set_row(h, a, row, reward);
        }
    }
    let n0 = structure.initial_node();
    for s in 0..ns {
        for z in 0..nz {
            mdp.initial[n0 * nz + z] += pomdp.initial_belief[s] * pomdp.initial_observation[s][z];
        }
    }
    Ok(mdp)
}
