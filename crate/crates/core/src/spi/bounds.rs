//! Safety-bound formulas.
//!
//! With `L = ln(2 |S| |A| 2^m / delta)`, where `|S|` is the state count and
//! `m` the exponent count (`|Z|` for history-state bounds):
//!
//! ```text
//! epsilon     = sqrt(2 L / N)
//! zeta        = 4 V_max / (1 - gamma) * epsilon - rho(pi_I, M~) + rho(pi_b, M~)
//! sufficiency = ceil(8 V_max^2 L / (zeta^2 (1 - gamma)^2))
//! weissman    = min(1, (2^n - 2) exp(-m eps^2 / 2))
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which state space the bound is stated over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// Over histories, with a caller-supplied finite proxy for their count.
    History,
    /// Over the finite history states `<n, z>`.
    FiniteHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub variant: BoundVariant,
    pub state_count: usize,
    pub action_count: usize,
    pub obs_count: usize,
    pub n_wedge: u64,
    pub delta: f64,
    pub v_max: f64,
    pub gamma: f64,
    pub rho_improved_mle: f64,
    pub rho_behavior_mle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    /// `None` when `n_wedge = 0` (the bound is infinite).
    pub zeta: Option<f64>,
    pub epsilon: Option<f64>,
    pub rho_improved_mle: f64,
    pub rho_behavior_mle: f64,
    pub variant: BoundVariant,
    pub inputs: BoundInputs,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let ok = self.state_count > 0
            && self.action_count > 0
            && self.delta > 0.0
            && self.v_max >= 0.0
            && (0.0..1.0).contains(&self.gamma)
            && self.rho_improved_mle.is_finite()
            && self.rho_behavior_mle.is_finite();
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid bound inputs {self:?}")));
        }
        Ok(())
    }
}

impl SafetyReport {
    /// Evaluate the bound, leaving `zeta` and `epsilon` empty when `n_wedge = 0`.
    pub fn from_inputs(inputs: BoundInputs) -> Result<Self> {
        inputs.validate()?;
        let (zeta, epsilon) = if inputs.n_wedge == 0 {
            (None, None)
        } else {
            let eps = epsilon(
                inputs.state_count,
                inputs.action_count,
                inputs.obs_count,
                inputs.n_wedge,
                inputs.delta,
            )?;
            let zeta = 4.0 * inputs.v_max / (1.0 - inputs.gamma) * eps - inputs.rho_improved_mle
                + inputs.rho_behavior_mle;
            (Some(zeta), Some(eps))
        };
        Ok(SafetyReport {
            zeta,
            epsilon,
            rho_improved_mle: inputs.rho_improved_mle,
            rho_behavior_mle: inputs.rho_behavior_mle,
            variant: inputs.variant,
            inputs,
        })
    }
}

/// `ln(2 * state_count * action_count * 2^exponent_count / delta)`.
pub fn log_term(state_count: usize, action_count: usize, exponent_count: usize, delta: f64) -> f64 {
    let base = 2.0 * state_count as f64 * action_count as f64;
    let arg = base * 2f64.powi(exponent_count.min(i32::MAX as usize) as i32);
    if arg.is_finite() {
        (arg / delta).ln()
    } else {
        base.ln() + exponent_count as f64 * std::f64::consts::LN_2 - delta.ln()
    }
}

/// L1 radius `sqrt(2 L / n_wedge)`; negative log terms count as zero.
pub fn epsilon(
    state_count: usize,
    action_count: usize,
    obs_count: usize,
    n_wedge: u64,
    delta: f64,
) -> Result<f64> {
    if n_wedge == 0 {
        return Err(Error::InfiniteBound);
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} must be positive")));
    }
    let l = log_term(state_count, action_count, obs_count, delta).max(0.0);
    Ok((2.0 * l / n_wedge as f64).sqrt())
}

/// Admissible performance loss; `n_wedge = 0` is an infinite bound.
pub fn zeta_bound(inputs: &BoundInputs) -> Result<SafetyReport> {
    if inputs.n_wedge == 0 {
        return Err(Error::InfiniteBound);
    }
    SafetyReport::from_inputs(inputs.clone())
}

/// Right-hand side of the data-sufficiency condition before rounding.
pub fn sufficiency_threshold(
    zeta: f64,
    delta: f64,
    state_count: usize,
    action_count: usize,
    exponent_count: usize,
    v_max: f64,
    gamma: f64,
) -> Result<f64> {
    if !(zeta > 0.0) || !(delta > 0.0) || !(0.0..1.0).contains(&gamma) || !(v_max >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sufficiency needs zeta > 0, delta > 0, gamma in [0, 1), v_max >= 0 (got {zeta}, {delta}, {gamma}, {v_max})"
        )));
    }
    let l = log_term(state_count, action_count, exponent_count, delta).max(0.0);
    let scale = zeta * (1.0 - gamma);
    Ok(8.0 * v_max * v_max * l / (scale * scale))
}

/// Visits per pair needed for a `zeta`-safe improvement.
pub fn sufficiency_count(
    zeta: f64,
    delta: f64,
    state_count: usize,
    action_count: usize,
    exponent_count: usize,
    v_max: f64,
    gamma: f64,
) -> Result<u64> {
    let t = sufficiency_threshold(zeta, delta, state_count, action_count, exponent_count, v_max, gamma)?;
    Ok(t.ceil() as u64)
}

/// Bound on `P(|P - P~|_1 >= epsilon)` for an empirical distribution over
/// `support_size` outcomes from `m` samples.
pub fn weissman_bound(support_size: usize, m: f64, epsilon: f64) -> Result<f64> {
    if support_size < 2 || !(m >= 1.0) || !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "weissman bound needs support >= 2, m >= 1, epsilon > 0 (got {support_size}, {m}, {epsilon})"
        )));
    }
    let log_mult = if support_size < 1000 {
        (2f64.powi(support_size as i32) - 2.0).ln()
    } else {
        support_size as f64 * std::f64::consts::LN_2
    };
    Ok((log_mult - m * epsilon * epsilon / 2.0).exp().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiger_inputs(n_wedge: u64) -> BoundInputs {
        BoundInputs {
            variant: BoundVariant::FiniteHistory,
            state_count: 6,
            action_count: 3,
            obs_count: 2,
            n_wedge,
            delta: 0.05,
            v_max: 200.0,
            gamma: 0.95,
            rho_improved_mle: 1.5,
            rho_behavior_mle: 1.5,
        }
    }

    #[test]
    fn tiger_zeta() {
        let r = zeta_bound(&tiger_inputs(20)).unwrap();
        let expected = 16000.0 * (0.1 * (144.0f64 / 0.05).ln()).sqrt();
        assert!((r.zeta.unwrap() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn vanishing_log_term() {
        let mut i = tiger_inputs(20);
        i.delta = 144.0;
        assert_eq!(zeta_bound(&i).unwrap().zeta, Some(0.0));
        assert_eq!(sufficiency_count(1.0, 144.0, 6, 3, 2, 200.0, 0.95).unwrap(), 0);
    }

    #[test]
    fn zero_wedge_is_infinite() {
        assert!(matches!(zeta_bound(&tiger_inputs(0)), Err(Error::InfiniteBound)));
        let r = SafetyReport::from_inputs(tiger_inputs(0)).unwrap();
        assert_eq!((r.zeta, r.epsilon), (None, None));
    }

    #[test]
    fn zeta_decreases_in_n_wedge() {
        let z: Vec<f64> = (1..50).map(|n| zeta_bound(&tiger_inputs(n)).unwrap().zeta.unwrap()).collect();
        assert!(z.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn sufficiency_scales_with_v_max_squared() {
        let t1 = sufficiency_threshold(10.0, 0.05, 6, 3, 2, 100.0, 0.95).unwrap();
        let t2 = sufficiency_threshold(10.0, 0.05, 6, 3, 2, 200.0, 0.95).unwrap();
        assert!((t2 / t1 - 4.0).abs() < 1e-12);
        assert!(sufficiency_count(0.0, 0.05, 6, 3, 2, 1.0, 0.9).is_err());
    }

    #[test]
    fn weissman_examples() {
        let eps = 0.3;
        let m = 2.0 / (eps * eps) * std::f64::consts::LN_2;
        assert!((weissman_bound(2, m, eps).unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<f64> = (1..200).map(|m| weissman_bound(3, m as f64, 0.3).unwrap()).collect();
        assert!(b.windows(2).all(|w| w[1] <= w[0]));
        assert!(weissman_bound(1, 10.0, 0.1).is_err());
    }

    #[test]
    fn report_serializes() {
        let r = zeta_bound(&tiger_inputs(20)).unwrap();
        let back: SafetyReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
