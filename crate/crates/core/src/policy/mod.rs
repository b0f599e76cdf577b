//! Item-level reduction policies.
//!
//! A policy scores each remaining candidate (a column, or a row of the
//! column-reduced table) with a linear function of its features, scores a
//! STOP action from its own features, and takes a softmax over both. An
//! episode appends one selected item per step until STOP.
//!
//! Actions are ordered as the remaining candidates in table order followed
//! by STOP, so argmax ties resolve to the earliest candidate.

mod features;

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use features::{slot, word_tokens, Featurizer, ItemVec, StopVec, ITEM_FEATURES, PARAM_DIM, STOP_FEATURES};

use crate::error::PolicyError;
use crate::prompt::Stage;
use crate::reward::{set_reward, shaped_reward, top_p_mask, KlController, MaskConfig, RewardConfig};
use crate::table::{apply_mask, ItemMask, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Item(usize),
    Stop,
}

/// Linear softmax policy for one stage plus the frozen reference copy used
/// by the KL penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    stage: Stage,
    weights: Vec<f64>,
    reference_weights: Vec<f64>,
}

impl Policy {
    /// Zero-initialized policy; the reference starts equal to the weights.
    pub fn new(stage: Stage) -> Policy {
        Policy {
            stage,
            weights: vec![0.0; PARAM_DIM],
            reference_weights: vec![0.0; PARAM_DIM],
        }
    }

    pub fn with_weights(stage: Stage, weights: Vec<f64>) -> Policy {
        assert_eq!(weights.len(), PARAM_DIM, "weight dimension");
        Policy {
            stage,
            reference_weights: weights.clone(),
            weights,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference_weights(&self) -> &[f64] {
        &self.reference_weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), PARAM_DIM, "weight dimension");
        self.weights = weights;
    }

    /// Snapshots the current weights as the reference policy. Called once,
    /// when reinforcement updates begin.
    pub fn freeze_reference(&mut self) {
        self.reference_weights = self.weights.clone();
    }

    /// SHA-256 over the reference weights' bit patterns.
    pub fn reference_hash(&self) -> String {
        hash_weights(&self.reference_weights)
    }
}

pub fn hash_weights(w: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in w {
        h.update(x.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Items chosen so far in an episode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub selected: Vec<usize>,
}

impl EpisodeState {
    pub fn step(&self) -> usize {
        self.selected.len()
    }

    fn remaining(&self, n: usize) -> Vec<usize> {
        let chosen: BTreeSet<usize> = self.selected.iter().copied().collect();
        (0..n).filter(|i| !chosen.contains(i)).collect()
    }
}

/// The feature view of one decision: candidate ids with their features and
/// the STOP features. Self-contained so updates can re-score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub candidates: Vec<usize>,
    pub item_features: Vec<ItemVec>,
    pub stop_features: StopVec,
}

impl Decision {
    pub fn new(featurizer: &Featurizer, state: &EpisodeState) -> Decision {
        let candidates = state.remaining(featurizer.n_candidates());
        let n_sel = state.selected.len();
        Decision {
            item_features: candidates.iter().map(|&c| featurizer.item(c, n_sel)).collect(),
            stop_features: featurizer.stop(n_sel),
            candidates,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.candidates.len() + 1
    }

    pub fn action(&self, index: usize) -> Action {
        self.candidates.get(index).map_or(Action::Stop, |&c| Action::Item(c))
    }

    pub fn index_of(&self, action: Action) -> Option<usize> {
        match action {
            Action::Stop => Some(self.candidates.len()),
            Action::Item(c) => self.candidates.iter().position(|&x| x == c),
        }
    }

    pub fn scores(&self, weights: &[f64]) -> Vec<f64> {
        let (item_w, stop_w) = weights.split_at(ITEM_FEATURES);
        let mut s: Vec<f64> = self.item_features.iter().map(|f| dot(item_w, f)).collect();
        s.push(dot(stop_w, &self.stop_features));
        s
    }

    pub fn log_probs(&self, weights: &[f64]) -> Vec<f64> {
        log_softmax(&self.scores(weights))
    }

    /// Feature vector of an action in the full parameter space.
    fn action_features(&self, index: usize) -> [f64; PARAM_DIM] {
        let mut out = [0.0; PARAM_DIM];
        if index < self.candidates.len() {
            out[..ITEM_FEATURES].copy_from_slice(&self.item_features[index]);
        } else {
            out[ITEM_FEATURES..].copy_from_slice(&self.stop_features);
        }
        out
    }

    /// `∇ log p(action)` = φ(action) − E_p[φ].
    fn grad_log_prob(&self, weights: &[f64], index: usize) -> [f64; PARAM_DIM] {
        let probs: Vec<f64> = self.log_probs(weights).iter().map(|l| l.exp()).collect();
        let mut g = self.action_features(index);
        for (b, p) in probs.iter().enumerate() {
            let phi = self.action_features(b);
            for k in 0..PARAM_DIM {
                g[k] -= p * phi[k];
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Features of one candidate in a given state.
pub fn featurize(question: &str, table: &Table, stage: Stage, candidate: usize, state: &EpisodeState) -> ItemVec {
    Featurizer::new(question, table, stage).item(candidate, state.selected.len())
}

/// Probabilities over the remaining candidates then STOP.
pub fn action_distribution(
    policy: &Policy,
    question: &str,
    table: &Table,
    state: &EpisodeState,
) -> Vec<(Action, f64)> {
    let d = Decision::new(&Featurizer::new(question, table, policy.stage), state);
    let lp = d.log_probs(&policy.weights);
    lp.iter().enumerate().map(|(i, l)| (d.action(i), l.exp())).collect()
}

/// One recorded step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EpisodeState,
    pub decision: Decision,
    pub action: Action,
    /// log-probability under the sampling-time weights (unmasked softmax)
    pub logprob_current: f64,
    pub logprob_reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub stage: Stage,
    pub steps: Vec<Step>,
    pub terminal_reward: f64,
}

impl Trajectory {
    pub fn selected(&self) -> BTreeSet<usize> {
        self.steps
            .iter()
            .filter_map(|s| match s.action {
                Action::Item(i) => Some(i),
                Action::Stop => None,
            })
            .collect()
    }

    pub fn logprob_current(&self) -> f64 {
        self.steps.iter().map(|s| s.logprob_current).sum()
    }

    pub fn logprob_reference(&self) -> f64 {
        self.steps.iter().map(|s| s.logprob_reference).sum()
    }

    /// Mean over steps of `log π − log θ` for the sampled actions.
    pub fn sampled_kl(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps
            .iter()
            .map(|s| s.logprob_current - s.logprob_reference)
            .sum::<f64>()
            / self.steps.len() as f64
    }
}

/// Samples an episode: at each step the action distribution is top-p
/// masked and renormalized, and one action is drawn. Recorded
/// log-probabilities are those of the unmasked softmax. The episode ends at
/// STOP or after `max_steps` actions. `gold`, when given, sets the terminal
/// reward; otherwise it is zero.
#[allow(clippy::too_many_arguments)]
pub fn sample_episode(
    policy: &Policy,
    question: &str,
    table: &Table,
    gold: Option<&BTreeSet<usize>>,
    mask: &MaskConfig,
    reward: &RewardConfig,
    seed: u64,
    max_steps: usize,
) -> Trajectory {
    let featurizer = Featurizer::new(question, table, policy.stage);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = EpisodeState::default();
    let mut steps = Vec::new();
    while steps.len() < max_steps {
        let decision = Decision::new(&featurizer, &state);
        let lp = decision.log_probs(&policy.weights);
        let lp_ref = decision.log_probs(&policy.reference_weights);
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let masked = top_p_mask(&normalized(&probs), mask).expect("softmax output is a distribution");
        let idx = draw(&masked, rng.random::<f64>());
        let action = decision.action(idx);
        steps.push(Step {
            state: state.clone(),
            logprob_current: lp[idx],
            logprob_reference: lp_ref[idx],
            decision,
            action,
        });
        match action {
            Action::Stop => break,
            Action::Item(i) => state.selected.push(i),
        }
    }
    let mut traj = Trajectory {
        stage: policy.stage,
        steps,
        terminal_reward: 0.0,
    };
    if let Some(g) = gold {
        traj.terminal_reward = set_reward(&traj.selected(), g, reward);
    }
    traj
}

/// Rescales away float drift so the mass check in `top_p_mask` always passes.
fn normalized(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter().map(|x| x / s).collect()
}

fn draw(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        last = i;
        acc += p;
        if u < acc {
            return i;
        }
    }
    last
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding; returns the selected set. At most one selection per
/// candidate, then STOP.
pub fn greedy_selection(policy: &Policy, question: &str, table: &Table) -> BTreeSet<usize> {
    let featurizer = Featurizer::new(question, table, policy.stage);
    let mut state = EpisodeState::default();
    loop {
        let decision = Decision::new(&featurizer, &state);
        match decision.action(argmax(&decision.scores(&policy.weights))) {
            Action::Stop => break,
            Action::Item(i) => state.selected.push(i),
        }
    }
    state.selected.into_iter().collect()
}

/// Target decisions for the gold sequence: gold items in table order, then STOP.
pub fn gold_decisions(featurizer: &Featurizer, gold: &BTreeSet<usize>) -> Vec<(Decision, usize)> {
    let mut state = EpisodeState::default();
    let mut out = Vec::new();
    for &g in gold.iter().filter(|&&g| g < featurizer.n_candidates()) {
        let d = Decision::new(featurizer, &state);
        let idx = d.index_of(Action::Item(g)).expect("gold item is a candidate");
        out.push((d, idx));
        state.selected.push(g);
    }
    let d = Decision::new(featurizer, &state);
    let stop = d.candidates.len();
    out.push((d, stop));
    out
}

/// Negative log-likelihood of the gold sequence.
pub fn sequence_nll(weights: &[f64], targets: &[(Decision, usize)]) -> f64 {
    -targets.iter().map(|(d, i)| d.log_probs(weights)[*i]).sum::<f64>()
}

/// One gradient step on the gold-sequence negative log-likelihood. Returns
/// the loss before the step.
pub fn supervised_update(policy: &mut Policy, question: &str, table: &Table, gold: &BTreeSet<usize>, learning_rate: f64) -> f64 {
    let featurizer = Featurizer::new(question, table, policy.stage);
    let targets = gold_decisions(&featurizer, gold);
    let loss = sequence_nll(&policy.weights, &targets);
    if learning_rate == 0.0 {
        return loss;
    }
    let mut grad = [0.0; PARAM_DIM];
    for (d, i) in &targets {
        let g = d.grad_log_prob(&policy.weights, *i);
        for k in 0..PARAM_DIM {
            grad[k] += g[k];
        }
    }
    for (w, g) in policy.weights.iter_mut().zip(grad) {
        *w += learning_rate * g;
    }
    loss
}

/// Optimizer settings for [`rl_update`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub learning_rate: f64,
    /// Ratio clip ε; `f64::INFINITY` disables clipping.
    pub clip_ratio: f64,
    /// Trajectories per gradient step within the single epoch.
    pub minibatch_size: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            learning_rate: 0.05,
            clip_ratio: 0.2,
            minibatch_size: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlStats {
    pub mean_reward: f64,
    pub mean_shaped_reward: f64,
    pub mean_kl: f64,
    pub beta: f64,
}

/// Batch-mean baseline, whitened by the batch standard deviation. A batch
/// whose spread is at most 1e-8 carries no signal and gets zero advantages.
pub fn advantages(shaped: &[f64]) -> Vec<f64> {
    let n = shaped.len() as f64;
    let mean = shaped.iter().sum::<f64>() / n;
    let var = shaped.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-8 {
        return vec![0.0; shaped.len()];
    }
    shaped.iter().map(|s| (s - mean) / std).collect()
}

/// Clipped surrogate `mean_traj Σ_t min(ρ A, clip(ρ, 1−ε, 1+ε) A)` with
/// `ρ = π_w(a_t|s_t) / π_old(a_t|s_t)`.
pub fn surrogate_objective(weights: &[f64], batch: &[Trajectory], advantages: &[f64], clip_ratio: f64) -> f64 {
    let mut total = 0.0;
    for (traj, &adv) in batch.iter().zip(advantages) {
        for step in &traj.steps {
            let idx = step.decision.index_of(step.action).expect("recorded action");
            let ratio = (step.decision.log_probs(weights)[idx] - step.logprob_current).exp();
            let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio);
            total += (ratio * adv).min(clipped * adv);
        }
    }
    total / batch.len() as f64
}

/// Analytic gradient of [`surrogate_objective`].
pub fn surrogate_gradient(weights: &[f64], batch: &[Trajectory], advantages: &[f64], clip_ratio: f64) -> Vec<f64> {
    let mut grad = vec![0.0; PARAM_DIM];
    for (traj, &adv) in batch.iter().zip(advantages) {
        if adv == 0.0 {
            continue;
        }
        for step in &traj.steps {
            let idx = step.decision.index_of(step.action).expect("recorded action");
            let ratio = (step.decision.log_probs(weights)[idx] - step.logprob_current).exp();
            let flat = (adv > 0.0 && ratio > 1.0 + clip_ratio) || (adv < 0.0 && ratio < 1.0 - clip_ratio);
            if flat {
                continue;
            }
            let g = step.decision.grad_log_prob(weights, idx);
            for k in 0..PARAM_DIM {
                grad[k] += adv * ratio * g[k];
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    grad
}

/// One epoch of clipped policy-gradient ascent over the batch, using
/// KL-shaped episode rewards, followed by the adaptive-β update with the
/// batch-mean sampled-action KL. Reference weights are never touched.
pub fn rl_update(
    policy: &mut Policy,
    batch: &[Trajectory],
    controller: &mut KlController,
    cfg: &RlConfig,
) -> Result<RlStats, PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    if let Some(t) = batch.iter().find(|t| t.stage != policy.stage) {
        return Err(PolicyError::StageMismatch {
            expected: policy.stage.to_string(),
            found: t.stage.to_string(),
        });
    }
    let shaped: Vec<f64> = batch
        .iter()
        .map(|t| shaped_reward(t.terminal_reward, t.logprob_current(), t.logprob_reference(), controller))
        .collect();
    let adv = advantages(&shaped);
    if adv.iter().any(|a| *a != 0.0) {
        let mb = cfg.minibatch_size.max(1);
        for (trajs, advs) in batch.chunks(mb).zip(adv.chunks(mb)) {
            let g = surrogate_gradient(&policy.weights, trajs, advs, cfg.clip_ratio);
            for (w, gk) in policy.weights.iter_mut().zip(g) {
                *w += cfg.learning_rate * gk;
            }
        }
    }
    let n = batch.len() as f64;
    let mean_kl = batch.iter().map(Trajectory::sampled_kl).sum::<f64>() / n;
    // the sampled estimator can dip below zero; the controller expects KL ≥ 0
    *controller = controller.update(mean_kl.max(0.0));
    Ok(RlStats {
        mean_reward: batch.iter().map(|t| t.terminal_reward).sum::<f64>() / n,
        mean_shaped_reward: shaped.iter().sum::<f64>() / n,
        mean_kl,
        beta: controller.beta,
    })
}

/// Two-stage greedy reduction: the column policy picks columns on the full
/// table (all columns if it picks none), then the row policy picks rows of
/// the column-reduced table. Row ids are those of the original table.
pub fn reduce_instance(col_policy: &Policy, row_policy: &Policy, question: &str, table: &Table) -> ItemMask {
    let mut columns = greedy_selection(col_policy, question, table);
    if columns.is_empty() {
        columns = (0..table.n_columns()).collect();
    }
    let col_mask = ItemMask {
        columns: columns.clone(),
        rows: (0..table.n_rows()).collect(),
    };
    let reduced = apply_mask(table, &col_mask).expect("columns within bounds and non-empty");
    let rows = greedy_selection(row_policy, question, &reduced);
    ItemMask { columns, rows }
}

/// On-disk checkpoint record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stage: Stage,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub reference_weights: Vec<f64>,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, config_hash: &str) -> Checkpoint {
        Checkpoint {
            stage: policy.stage,
            feature_dim: PARAM_DIM,
            weights: policy.weights.clone(),
            reference_weights: policy.reference_weights.clone(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn into_policy(self) -> Result<Policy, PolicyError> {
        if self.feature_dim != PARAM_DIM || self.weights.len() != PARAM_DIM || self.reference_weights.len() != PARAM_DIM {
            return Err(PolicyError::Checkpoint(format!(
                "expected dimension {PARAM_DIM}, found {}",
                self.feature_dim
            )));
        }
        Ok(Policy {
            stage: self.stage,
            weights: self.weights,
            reference_weights: self.reference_weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))
    }
}
