//! Maximum-likelihood MDP over history states.

use crate::data::CountTable;
use crate::error::{Error, Result};
use crate::fsc::Fsc;
use crate::mdp::{Row, TabularMdp};

/// Estimate `T~(h'|h,a) = #(h,a,h') / #(h,a)` and `R~(h,a) = R_total(h,a) / #(h,a)`.
///
/// State `num_history_states` is an absorbing zero-reward sink that takes
/// the episode-final occurrences of each pair. Unvisited pairs keep an
/// undefined row; history states with no visits at all are listed in
/// `unreached`. The initial distribution is the empirical law of the first
/// history state of each episode.
pub fn estimate_mle_mdp(counts: &CountTable, structure: &Fsc, gamma: f64) -> Result<TabularMdp> {
    let hs = structure.num_history_states();
    let na = structure.num_actions();
    if counts.num_history_states != hs || counts.num_actions != na {
        return Err(Error::InvalidParameter(
            "count table does not match the memory structure".into(),
        ));
    }
    let sink = hs;
    let mut mdp = TabularMdp::empty(hs + 1, na, gamma);
    mdp.sink = Some(sink);
    for a in 0..na {
        mdp.set_row(sink, a, vec![(sink, 1.0)], 0.0);
    }
    for h in 0..hs {
        let mut seen = false;
        for a in 0..na {
            let i = h * na + a;
            let n = counts.visits[i];
            if n == 0 {
                continue;
            }
            seen = true;
            let total = n as f64;
            let mut pair_counts: Vec<(usize, u64)> =
                counts.transitions[i].iter().map(|(&j, &c)| (j, c)).collect();
            if counts.final_steps[i] > 0 {
                pair_counts.push((sink, counts.final_steps[i]));
            }
            let row: Row = pair_counts.iter().map(|&(j, c)| (j, c as f64 / total)).collect();
            mdp.set_row(h, a, row, counts.reward_sums[i] / total);
            mdp.counts[i] = n;
            mdp.pair_counts[i] = pair_counts;
        }
        if !seen {
            mdp.unreached.push(h);
        }
    }
    if counts.episodes > 0 {
        let e = counts.episodes as f64;
        for (p, &c) in mdp.initial.iter_mut().zip(&counts.initial) {
            *p = c as f64 / e;
        }
    }
    mdp.validate()?;
    Ok(mdp)
}
