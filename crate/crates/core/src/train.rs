//! Two-stage training: supervised epochs on oracle masks, then KL-penalized
//! policy-gradient iterations with periodic evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::eval::{evaluate_reductions, summarize_reductions, MetricGrid};
use crate::par::{item_seed, Exec};
use crate::policy::{rl_update, sample_episode, supervised_update, Policy, RlConfig, RlStats, Trajectory};
use crate::prompt::Stage;
use crate::reward::{kl_update, KlController, MaskConfig, RewardConfig};
use crate::table::{apply_mask, ItemMask, QaInstance, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub sft_epochs: usize,
    pub sft_learning_rate: f64,
    pub rl: RlConfig,
    /// Training instances per RL update.
    pub batch_size: usize,
    /// Episodes sampled per training instance in each RL update.
    pub episodes_per_instance: usize,
    pub iterations: usize,
    pub eval_interval: usize,
    /// Sampled episodes per evaluation instance when estimating mean reward.
    pub eval_episodes: usize,
    pub reward: RewardConfig,
    pub kl: KlController,
    pub mask: MaskConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            sft_epochs: 20,
            sft_learning_rate: 0.1,
            rl: RlConfig {
                learning_rate: 0.2,
                ..RlConfig::default()
            },
            batch_size: 32,
            episodes_per_instance: 8,
            iterations: 10,
            eval_interval: 3,
            eval_episodes: 32,
            reward: RewardConfig::default(),
            kl: KlController::default(),
            mask: MaskConfig::default(),
        }
    }
}

/// A training instance resolved against its table.
struct Example<'a> {
    question: &'a str,
    table: &'a Table,
    /// table with only the gold columns, all rows kept
    column_reduced: Table,
    gold: &'a ItemMask,
}

fn examples<'a>(corpus: &'a Corpus, instances: &'a [QaInstance]) -> Vec<Example<'a>> {
    instances
        .iter()
        .filter_map(|inst| {
            let gold = inst.gold_mask.as_ref()?;
            let table = corpus.table(&inst.table_id)?;
            let keep = ItemMask {
                columns: gold.columns.clone(),
                rows: (0..table.n_rows()).collect(),
            };
            Some(Example {
                question: &inst.question,
                table,
                column_reduced: apply_mask(table, &keep).ok()?,
                gold,
            })
        })
        .collect()
}

/// One evaluation point of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub metrics: MetricGrid,
    pub column_reward: f64,
    pub row_reward: f64,
    /// `column_reward + row_reward`
    pub mean_reward: f64,
    pub column_beta: f64,
    pub row_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub column: RlStats,
    pub row: RlStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean gold-sequence loss per supervised epoch, column then row stage.
    pub sft_loss: Vec<(f64, f64)>,
    /// Iteration 0 is the supervised-only policy.
    pub evals: Vec<EvalPoint>,
    pub iterations: Vec<IterationStats>,
}

impl TrainReport {
    pub fn supervised(&self) -> &EvalPoint {
        &self.evals[0]
    }

    pub fn last(&self) -> &EvalPoint {
        self.evals.last().expect("at least the supervised evaluation")
    }
}

pub struct Trained {
    pub column: Policy,
    pub row: Policy,
    pub report: TrainReport,
}

fn max_steps(table: &Table, stage: Stage) -> usize {
    1 + match stage {
        Stage::Column => table.n_columns(),
        Stage::Row => table.n_rows(),
    }
}

fn rollouts(
    policy: &Policy,
    batch: &[&Example],
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Vec<Trajectory> {
    let stage = policy.stage();
    exec.map(batch, |i, ex| {
        let (table, gold) = match stage {
            Stage::Column => (ex.table, &ex.gold.columns),
            Stage::Row => (&ex.column_reduced, &ex.gold.rows),
        };
        sample_episode(
            policy,
            ex.question,
            table,
            Some(gold),
            &cfg.mask,
            &cfg.reward,
            item_seed(seed, i as u64),
            max_steps(table, stage),
        )
    })
}

fn mean_sampled_reward(policy: &Policy, eval: &[Example], cfg: &TrainConfig, exec: Exec) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let k = cfg.eval_episodes.max(1);
    let refs: Vec<&Example> = eval.iter().flat_map(|e| std::iter::repeat_n(e, k)).collect();
    // fixed seed: every evaluation sees the same random numbers
    let trajs = rollouts(policy, &refs, cfg, item_seed(cfg.seed, u64::MAX), exec);
    trajs.iter().map(|t| t.terminal_reward).sum::<f64>() / trajs.len() as f64
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    iteration: usize,
    column: &Policy,
    row: &Policy,
    col_kl: &KlController,
    row_kl: &KlController,
    corpus: &Corpus,
    eval_instances: &[QaInstance],
    eval: &[Example],
    cfg: &TrainConfig,
    exec: Exec,
) -> EvalPoint {
    let results = evaluate_reductions(column, row, corpus, eval_instances, exec);
    let column_reward = mean_sampled_reward(column, eval, cfg, exec);
    let row_reward = mean_sampled_reward(row, eval, cfg, exec);
    EvalPoint {
        iteration,
        metrics: summarize_reductions(&results),
        column_reward,
        row_reward,
        mean_reward: column_reward + row_reward,
        column_beta: col_kl.beta,
        row_beta: row_kl.beta,
    }
}

/// Trains both stage policies on `train` and evaluates on `eval`. Instances
/// without a gold mask or with an unknown table are skipped.
pub fn train(corpus: &Corpus, train: &[QaInstance], eval: &[QaInstance], cfg: &TrainConfig, exec: Exec) -> Trained {
    let train_ex = examples(corpus, train);
    let eval_ex = examples(corpus, eval);
    let eval_instances: Vec<QaInstance> = eval.iter().filter(|i| i.gold_mask.is_some()).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut column = Policy::new(Stage::Column);
    let mut row = Policy::new(Stage::Row);

    let mut sft_loss = Vec::new();
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    for _ in 0..cfg.sft_epochs {
        order.shuffle(&mut rng);
        let (mut lc, mut lr) = (0.0, 0.0);
        for &i in &order {
            let ex = &train_ex[i];
            lc += supervised_update(&mut column, ex.question, ex.table, &ex.gold.columns, cfg.sft_learning_rate);
            lr += supervised_update(&mut row, ex.question, &ex.column_reduced, &ex.gold.rows, cfg.sft_learning_rate);
        }
        let n = train_ex.len().max(1) as f64;
        sft_loss.push((lc / n, lr / n));
    }
    column.freeze_reference();
    row.freeze_reference();

    let mut col_kl = cfg.kl;
    let mut row_kl = cfg.kl;
    let mut evals = vec![evaluate(0, &column, &row, &col_kl, &row_kl, corpus, &eval_instances, &eval_ex, cfg, exec)];
    let mut iterations = Vec::new();
    for it in 1..=cfg.iterations {
        order.shuffle(&mut rng);
        let mut col_stats = Vec::new();
        let mut row_stats = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let k = cfg.episodes_per_instance.max(1);
            let batch: Vec<&Example> = chunk.iter().flat_map(|&i| std::iter::repeat_n(&train_ex[i], k)).collect();
            let seed = item_seed(cfg.seed, ((it as u64) << 32) | b as u64);
            let trajs = rollouts(&column, &batch, cfg, seed, exec);
            col_stats.push(grouped_update(&mut column, &trajs, k, &mut col_kl, &cfg.rl));
            let trajs = rollouts(&row, &batch, cfg, seed ^ 0x5EED, exec);
            row_stats.push(grouped_update(&mut row, &trajs, k, &mut row_kl, &cfg.rl));
        }
        if !col_stats.is_empty() {
            iterations.push(IterationStats {
                iteration: it,
                column: mean_stats(&col_stats),
                row: mean_stats(&row_stats),
            });
        }
        if cfg.eval_interval > 0 && it % cfg.eval_interval == 0 {
            evals.push(evaluate(it, &column, &row, &col_kl, &row_kl, corpus, &eval_instances, &eval_ex, cfg, exec));
        }
    }
    Trained {
        column,
        row,
        report: TrainReport {
            sft_loss,
            evals,
            iterations,
        },
    }
}

/// Runs one update per instance group so each group's mean reward is its
/// own baseline. β stays fixed across the groups of a batch and is updated
/// once afterwards with the batch-mean KL.
fn grouped_update(
    policy: &mut Policy,
    trajs: &[Trajectory],
    group: usize,
    controller: &mut KlController,
    cfg: &RlConfig,
) -> RlStats {
    let stats: Vec<RlStats> = trajs
        .chunks(group)
        .map(|g| {
            let mut c = *controller;
            rl_update(policy, g, &mut c, cfg).expect("nonempty group of this policy's stage")
        })
        .collect();
    let mut out = mean_stats(&stats);
    *controller = kl_update(controller, out.mean_kl.max(0.0));
    out.beta = controller.beta;
    out
}

fn mean_stats(s: &[RlStats]) -> RlStats {
    let n = s.len() as f64;
    RlStats {
        mean_reward: s.iter().map(|x| x.mean_reward).sum::<f64>() / n,
        mean_shaped_reward: s.iter().map(|x| x.mean_shaped_reward).sum::<f64>() / n,
        mean_kl: s.iter().map(|x| x.mean_kl).sum::<f64>() / n,
        beta: s.last().unwrap().beta,
    }
}

