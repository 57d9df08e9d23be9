//! Safe policy improvement: estimated MDP, bootstrapped set, SPIBB and the
//! safety bounds.

mod bounds;
mod mle;
mod spibb;

use serde::{Deserialize, Serialize};

pub use bounds::{
    epsilon, log_term, sufficiency_count, sufficiency_threshold, weissman_bound, zeta_bound,
    BoundInputs, BoundVariant, SafetyReport,
};
pub use mle::estimate_mle_mdp;
pub use spibb::{basic_rl_policy, bootstrapped_set, spibb_policy, BootstrapSet, SpibbConfig};

use crate::data::{count, CountTable, Dataset};
use crate::error::Result;
use crate::fsc::{make_k_window_fsc, Fsc};
use crate::mdp::TabularMdp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "SPIBB")]
    Spibb,
    #[serde(rename = "BasicRL")]
    BasicRl,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Spibb => "SPIBB",
            Algorithm::BasicRl => "BasicRL",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spibb" => Ok(Algorithm::Spibb),
            "basicrl" | "basic-rl" | "basic_rl" => Ok(Algorithm::BasicRl),
            _ => Err(crate::Error::InvalidParameter(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// A dataset counted and estimated on a `k'`-window structure, with the
/// behavior controller lifted onto it.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub structure: Fsc,
    pub behavior: Fsc,
    pub counts: CountTable,
    pub mle: TabularMdp,
}

/// Replay `dataset` through the `k_prime`-window structure, lift `behavior`
/// onto it and estimate the MDP.
pub fn estimate_for_window(dataset: &Dataset, behavior: &Fsc, k_prime: usize, gamma: f64) -> Result<Estimate> {
    let structure = make_k_window_fsc(k_prime, behavior.num_observations(), behavior.num_actions())?;
    let lifted = if behavior.same_structure(&structure) {
        behavior.clone()
    } else {
        behavior.lift_to(&structure)?
    };
    let replayed = dataset.replay(&structure)?;
    let counts = count(&replayed, &structure)?;
    let mle = estimate_mle_mdp(&counts, &structure, gamma)?;
    Ok(Estimate {
        structure,
        behavior: lifted,
        counts,
        mle,
    })
}

impl Estimate {
    /// Improved controller and its safety report. Basic RL reports no bound.
    pub fn improve(&self, algorithm: Algorithm, cfg: &SpibbConfig) -> Result<(Fsc, SafetyReport)> {
        let cfg = match algorithm {
            Algorithm::Spibb => cfg.clone(),
            Algorithm::BasicRl => SpibbConfig { n_wedge: 0, ..cfg.clone() },
        };
        let unknown = bootstrapped_set(&self.counts, cfg.n_wedge);
        spibb_policy(&self.mle, &self.behavior, &unknown, &cfg)
    }
}
