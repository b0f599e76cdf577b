//! Terminal reward, KL-shaped episode reward, the adaptive KL coefficient
//! and top-p action masking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::RewardError;
use crate::table::ItemMask;

/// Coefficients for correct items, type-I errors (predicted but not gold)
/// and type-II errors (gold but not predicted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda_p: f64,
    pub lambda_n1: f64,
    pub lambda_n2: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_p: 1.0,
            lambda_n1: -0.2,
            lambda_n2: -2.0,
        }
    }
}

impl RewardConfig {
    // negated comparisons so NaN coefficients are rejected
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.lambda_p > 0.0) {
            return Err(RewardError::InvalidConfig("lambda_p must be positive".into()));
        }
        if !(self.lambda_n1 < 0.0) {
            return Err(RewardError::InvalidConfig("lambda_n1 must be negative".into()));
        }
        if !(self.lambda_n2 < self.lambda_n1) {
            return Err(RewardError::InvalidConfig(
                "lambda_n2 must be below lambda_n1".into(),
            ));
        }
        Ok(())
    }
}

/// `λp·|Z∩C| + λn1·|Z−C| + λn2·|C−Z|` over one item universe.
pub fn set_reward<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>, cfg: &RewardConfig) -> f64 {
    let [hit, type_one, type_two] = counts(predicted, gold);
    weigh([hit, type_one, type_two], cfg)
}

fn counts<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> [usize; 3] {
    [
        predicted.intersection(gold).count(),
        predicted.difference(gold).count(),
        gold.difference(predicted).count(),
    ]
}

fn weigh([hit, type_one, type_two]: [usize; 3], cfg: &RewardConfig) -> f64 {
    cfg.lambda_p * hit as f64 + cfg.lambda_n1 * type_one as f64 + cfg.lambda_n2 * type_two as f64
}

/// Terminal reward with column and row items pooled into one universe.
pub fn terminal_reward(predicted: &ItemMask, gold: &ItemMask, cfg: &RewardConfig) -> f64 {
    let c = counts(&predicted.columns, &gold.columns);
    let r = counts(&predicted.rows, &gold.rows);
    weigh([c[0] + r[0], c[1] + r[1], c[2] + r[2]], cfg)
}

/// Bound on the relative KL error term.
pub const KL_CLIP_BOUND: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlController {
    pub beta: f64,
    pub kl_target: f64,
    pub k_beta: f64,
}

impl Default for KlController {
    fn default() -> Self {
        KlController {
            beta: 0.1,
            kl_target: 0.05,
            k_beta: 0.1,
        }
    }
}

impl KlController {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.beta > 0.0 && self.kl_target > 0.0 && self.k_beta > 0.0) {
            return Err(RewardError::InvalidConfig(
                "beta, kl_target and k_beta must be positive".into(),
            ));
        }
        if self.k_beta * KL_CLIP_BOUND >= 1.0 {
            return Err(RewardError::InvalidConfig(
                "k_beta * 0.2 must stay below 1 to keep beta positive".into(),
            ));
        }
        Ok(())
    }

    /// `clip((kl - target) / target, -0.2, 0.2)`
    pub fn error_term(&self, observed_kl: f64) -> f64 {
        ((observed_kl - self.kl_target) / self.kl_target).clamp(-KL_CLIP_BOUND, KL_CLIP_BOUND)
    }

    /// `beta' = beta * (1 + k_beta * e)`; other fields unchanged.
    pub fn update(&self, observed_kl: f64) -> KlController {
        KlController {
            beta: self.beta * (1.0 + self.k_beta * self.error_term(observed_kl)),
            ..*self
        }
    }
}

/// Episode reward with the KL penalty: `R - beta * (log π - log θ)`, where
/// both log-probabilities are of the whole sampled sequence.
pub fn shaped_reward(terminal: f64, logprob_current: f64, logprob_reference: f64, controller: &KlController) -> f64 {
    terminal - controller.beta * (logprob_current - logprob_reference)
}

/// Free function form of [`KlController::update`].
pub fn kl_update(controller: &KlController, observed_kl: f64) -> KlController {
    controller.update(observed_kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub top_p: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { top_p: 0.9 }
    }
}

impl MaskConfig {
    pub fn new(top_p: f64) -> Result<MaskConfig, RewardError> {
        let cfg = MaskConfig { top_p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.top_p > 0.0 && self.top_p <= 1.0 {
            Ok(())
        } else {
            Err(RewardError::InvalidConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )))
        }
    }
}

/// Slack on the cumulative-mass test, so that a prefix summing to `p` up to
/// rounding counts as reaching it.
pub const PREFIX_TOLERANCE: f64 = 1e-12;

/// Tolerance on the input distribution's total mass.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Keeps the smallest prefix of actions, sorted by descending probability
/// with ties in action-id order, whose mass reaches `top_p`, and
/// renormalizes over it. Masked actions get probability zero.
pub fn top_p_mask(probs: &[f64], cfg: &MaskConfig) -> Result<Vec<f64>, RewardError> {
    if probs.is_empty() {
        return Err(RewardError::EmptyDistribution);
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(RewardError::InvalidDistribution(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(RewardError::InvalidDistribution(format!("mass {total} is not 1")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut out = vec![0.0; probs.len()];
    let mut kept = 0.0;
    for &a in &order {
        out[a] = probs[a];
        kept += probs[a];
        if kept >= cfg.top_p - PREFIX_TOLERANCE {
            break;
        }
    }
    for p in &mut out {
        *p /= kept;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[u8]) -> BTreeSet<u8> {
        items.iter().copied().collect()
    }

    #[test]
    fn terminal_reward_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(set_reward(&set(b"ab"), &set(b"ab"), &cfg), 2.0);
        assert_eq!(set_reward(&set(b"a"), &set(b"ab"), &cfg), -1.0);
        assert!((set_reward(&set(b"ac"), &set(b"ab"), &cfg) - (-1.2)).abs() < 1e-15);
    }

    #[test]
    fn pooled_over_columns_and_rows() {
        let cfg = RewardConfig::default();
        let gold = ItemMask::new([0, 1], [3]);
        let pred = ItemMask::new([0], [3, 4]);
        // columns: 1 hit, 1 miss; rows: 1 hit, 1 extra
        let want = 1.0 - 2.0 + 1.0 - 0.2;
        assert!((terminal_reward(&pred, &gold, &cfg) - want).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        let bad = RewardConfig { lambda_n2: -0.1, ..RewardConfig::default() };
        assert!(bad.validate().is_err());
        assert!(KlController::default().validate().is_ok());
        assert!(KlController { k_beta: 5.0, ..KlController::default() }.validate().is_err());
        assert!(MaskConfig::new(0.0).is_err());
        assert!(MaskConfig::new(1.0).is_ok());
    }

    #[test]
    fn shaped_reward_examples() {
        let k = KlController::default();
        assert_eq!(shaped_reward(2.0, -1.5, -1.5, &k), 2.0);
        assert!((shaped_reward(2.0, 0.0, -1.0, &k) - 1.9).abs() < 1e-12);
        assert!(shaped_reward(2.0, -2.0, -1.0, &k) > 2.0);
    }

    #[test]
    fn kl_update_examples() {
        let k = KlController::default();
        assert_eq!(kl_update(&k, 0.05).beta, 0.1);
        let up = kl_update(&k, 0.1);
        assert!((k.error_term(0.1) - 0.2).abs() < 1e-15);
        assert!((up.beta - 0.102).abs() < 1e-15);
        let down = kl_update(&k, 0.0);
        assert!((k.error_term(0.0) + 0.2).abs() < 1e-15);
        assert!((down.beta - 0.098).abs() < 1e-15);
        assert_eq!(up.kl_target, k.kl_target);
        assert_eq!(up.k_beta, k.k_beta);
    }

    #[test]
    fn top_p_examples() {
        let cfg = MaskConfig::default();
        let out = top_p_mask(&[0.5, 0.3, 0.15, 0.05], &cfg).unwrap();
        let want = [10.0 / 19.0, 6.0 / 19.0, 3.0 / 19.0, 0.0];
        for (o, w) in out.iter().zip(want) {
            assert!((o - w).abs() < 1e-12);
        }
        assert_eq!(top_p_mask(&[0.5, 0.5], &cfg).unwrap(), vec![0.5, 0.5]);
        assert_eq!(top_p_mask(&[1.0], &cfg).unwrap(), vec![1.0]);
        assert_eq!(top_p_mask(&[], &cfg), Err(RewardError::EmptyDistribution));
        assert!(top_p_mask(&[0.5, 0.2], &cfg).is_err());
    }

    #[test]
    fn top_p_ties_keep_lower_ids() {
        let cfg = MaskConfig::new(0.5).unwrap();
        assert_eq!(top_p_mask(&[0.25, 0.25, 0.25, 0.25], &cfg).unwrap(), vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn prefix_reaching_p_up_to_rounding_stops() {
        // 0.6 + 0.3 rounds to 0.8999999999999999
        let out = top_p_mask(&[0.6, 0.3, 0.1], &MaskConfig::default()).unwrap();
        assert_eq!(out[2], 0.0);
    }
}
