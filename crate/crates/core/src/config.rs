//! Run configuration: a flat `key = value` file merged with command-line
//! overrides. Keys are the long flag names; `_` and `-` are interchangeable.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::eval::{BucketEdges, SynthConfig, DEFAULT_THRESHOLDS};
use crate::oracle::{OracleConfig, OracleMode};
use crate::par::Exec;
use crate::policy::RlConfig;
use crate::prompt::PromptBudget;
use crate::reward::{KlController, MaskConfig, RewardConfig};
use crate::train::TrainConfig;

/// Every recognized key with its help text. Path-valued keys are listed in
/// [`PATH_KEYS`].
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "RNG seed (required)"),
    ("out", "output directory"),
    ("tables", "directory of .csv/.tsv tables"),
    ("instances", "instance file (JSON lines)"),
    ("eval-instances", "held-out instance file used for evaluation during training"),
    ("checkpoints", "directory holding column_policy.json and row_policy.json"),
    ("mode", "oracle mode: single_pass or fixed_point"),
    ("top-p", "top-p action mask threshold"),
    ("lambda-p", "reward per correctly selected item"),
    ("lambda-n1", "reward per selected non-gold item"),
    ("lambda-n2", "reward per missed gold item"),
    ("beta", "initial KL coefficient"),
    ("kl-target", "target KL"),
    ("k-beta", "KL controller gain"),
    ("learning-rate", "learning rate for both phases unless overridden"),
    ("sft-learning-rate", "supervised learning rate"),
    ("rl-learning-rate", "policy-gradient learning rate"),
    ("sft-epochs", "supervised epochs"),
    ("clip-ratio", "ratio clip for the surrogate objective"),
    ("minibatch-size", "trajectories per gradient step"),
    ("batch-size", "instances per RL batch"),
    ("episodes-per-instance", "episodes sampled per instance per RL batch"),
    ("iterations", "RL iterations"),
    ("eval-interval", "evaluate every N RL iterations"),
    ("eval-episodes", "sampled episodes per instance when estimating reward"),
    ("buckets", "comma-separated lower token-bucket edges"),
    ("budget", "downstream answerer token budget"),
    ("answerer", "downstream answerer: simulated or remote"),
    ("thresholds", "comma-separated token thresholds for stats"),
    ("n-instances", "instances to generate"),
    ("columns", "column range for generated tables, e.g. 6-12"),
    ("rows", "row range for generated tables, e.g. 20-60"),
    ("test-fraction", "fraction of generated instances held out as test"),
    ("questions-per-table", "generated questions per table"),
    ("exec", "parallel or sequential"),
];

pub const PATH_KEYS: &[&str] = &["out", "tables", "instances", "eval-instances", "checkpoints"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    UnknownKey(String),
    Syntax { line: usize, text: String },
    BadValue { key: String, value: String, reason: String },
    MissingSeed,
    Io(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key '{k}'"),
            ConfigError::Syntax { line, text } => write!(f, "config line {line}: expected key = value, got '{text}'"),
            ConfigError::BadValue { key, value, reason } => write!(f, "bad value '{value}' for {key}: {reason}"),
            ConfigError::MissingSeed => write!(f, "a seed is required (--seed or `seed = N` in the config file)"),
            ConfigError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn canonical_key(k: &str) -> String {
    k.trim().replace('_', "-").to_lowercase()
}

/// Parses a flat config file. `#` starts a comment; blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        let key = canonical_key(k);
        if !KEYS.iter().any(|(name, _)| *name == key) {
            return Err(ConfigError::UnknownKey(key));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswererKind {
    Simulated,
    Remote,
}

impl FromStr for AnswererKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simulated" => Ok(AnswererKind::Simulated),
            "remote" => Ok(AnswererKind::Remote),
            _ => Err("expected simulated or remote".into()),
        }
    }
}

impl fmt::Display for AnswererKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswererKind::Simulated => "simulated",
            AnswererKind::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub instances: Option<PathBuf>,
    pub eval_instances: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub seed: u64,
    pub oracle: OracleConfig,
    pub train: TrainConfig,
    pub buckets: BucketEdges,
    pub budget: PromptBudget,
    pub answerer: AnswererKind,
    pub thresholds: Vec<usize>,
    pub synth: SynthConfig,
    pub test_fraction: f64,
    pub exec: Exec,
}

fn bad(key: &str, value: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    let (a, b) = s.split_once('-').unwrap_or((s, s));
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

struct Lookup<'a>(&'a BTreeMap<String, String>);

impl<'a> Lookup<'a> {
    fn get(&self, k: &str) -> Option<&'a str> {
        self.0.get(k).map(String::as_str)
    }

    fn num<T: FromStr>(&self, k: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get(k) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| bad(k, v, e)),
        }
    }
}

impl RunConfig {
    /// Builds a config from merged `key -> value` settings; unset keys take
    /// their defaults. The seed has no default.
    pub fn from_settings(settings: &BTreeMap<String, String>) -> Result<RunConfig, ConfigError> {
        for k in settings.keys() {
            if !KEYS.iter().any(|(name, _)| name == k) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        let lookup = Lookup(settings);
        let get = |k: &str| lookup.get(k);
        let path = |k: &str| get(k).map(PathBuf::from);

        let seed: u64 = match get("seed") {
            None => return Err(ConfigError::MissingSeed),
            Some(v) => v.parse().map_err(|e| bad("seed", v, e))?,
        };
        let mode: OracleMode = lookup.num("mode", OracleMode::default())?;

        let reward = RewardConfig {
            lambda_p: lookup.num("lambda-p", RewardConfig::default().lambda_p)?,
            lambda_n1: lookup.num("lambda-n1", RewardConfig::default().lambda_n1)?,
            lambda_n2: lookup.num("lambda-n2", RewardConfig::default().lambda_n2)?,
        };
        reward.validate().map_err(|e| bad("lambda-*", "", e))?;
        let kl = KlController {
            beta: lookup.num("beta", KlController::default().beta)?,
            kl_target: lookup.num("kl-target", KlController::default().kl_target)?,
            k_beta: lookup.num("k-beta", KlController::default().k_beta)?,
        };
        kl.validate().map_err(|e| bad("beta/kl-target/k-beta", "", e))?;
        let top_p: f64 = lookup.num("top-p", MaskConfig::default().top_p)?;
        let mask = MaskConfig::new(top_p).map_err(|e| bad("top-p", &top_p.to_string(), e))?;

        let d = TrainConfig::default();
        let lr: Option<f64> = get("learning-rate").map(|v| v.parse().map_err(|e| bad("learning-rate", v, e))).transpose()?;
        let train = TrainConfig {
            seed,
            sft_epochs: lookup.num("sft-epochs", d.sft_epochs)?,
            sft_learning_rate: lookup.num("sft-learning-rate", lr.unwrap_or(d.sft_learning_rate))?,
            rl: RlConfig {
                learning_rate: lookup.num("rl-learning-rate", lr.unwrap_or(d.rl.learning_rate))?,
                clip_ratio: lookup.num("clip-ratio", d.rl.clip_ratio)?,
                minibatch_size: lookup.num("minibatch-size", d.rl.minibatch_size)?,
            },
            batch_size: lookup.num("batch-size", d.batch_size)?,
            episodes_per_instance: lookup.num("episodes-per-instance", d.episodes_per_instance)?,
            iterations: lookup.num("iterations", d.iterations)?,
            eval_interval: lookup.num("eval-interval", d.eval_interval)?,
            eval_episodes: lookup.num("eval-episodes", d.eval_episodes)?,
            reward,
            kl,
            mask,
        };
        for (k, v) in [
            ("batch-size", train.batch_size),
            ("episodes-per-instance", train.episodes_per_instance),
            ("minibatch-size", train.rl.minibatch_size),
        ] {
            if v == 0 {
                return Err(bad(k, "0", "must be positive"));
            }
        }

        let buckets = match get("buckets") {
            None => BucketEdges::default(),
            Some(v) => v.parse().map_err(|e| bad("buckets", v, e))?,
        };
        let budget_tokens: usize = lookup.num("budget", 512)?;
        let budget = PromptBudget::new(budget_tokens).map_err(|e| bad("budget", &budget_tokens.to_string(), e))?;
        let thresholds = match get("thresholds") {
            None => DEFAULT_THRESHOLDS.to_vec(),
            Some(v) => parse_list(v).ok_or_else(|| bad("thresholds", v, "expected comma-separated integers"))?,
        };
        let range = |k: &str, default: (usize, usize)| match get(k) {
            None => Ok(default),
            Some(v) => parse_range(v).ok_or_else(|| bad(k, v, "expected LO-HI")),
        };
        let (c0, c1) = range("columns", (6, 12))?;
        let (r0, r1) = range("rows", (20, 60))?;
        let mut synth = SynthConfig::new(seed, lookup.num("n-instances", 250)?, c0..=c1, r0..=r1);
        synth.questions_per_table = lookup.num("questions-per-table", synth.questions_per_table)?;
        let test_fraction: f64 = lookup.num("test-fraction", 0.2)?;
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(bad("test-fraction", &test_fraction.to_string(), "must lie in [0, 1]"));
        }
        let exec = match get("exec").unwrap_or("parallel") {
            "parallel" => Exec::Parallel,
            "sequential" => Exec::Sequential,
            v => return Err(bad("exec", v, "expected parallel or sequential")),
        };

        Ok(RunConfig {
            out: path("out"),
            tables: path("tables"),
            instances: path("instances"),
            eval_instances: path("eval-instances"),
            checkpoints: path("checkpoints"),
            seed,
            oracle: OracleConfig::new(mode),
            train,
            buckets,
            budget,
            answerer: lookup.num("answerer", AnswererKind::Simulated)?,
            thresholds,
            synth,
            test_fraction,
            exec,
        })
    }

    /// Every non-path setting in canonical `key = value` form, sorted by key.
    /// The execution strategy is left out: it never changes results.
    pub fn canonical_settings(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut kv: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("mode", self.oracle.mode.to_string()),
            ("top-p", t.mask.top_p.to_string()),
            ("lambda-p", t.reward.lambda_p.to_string()),
            ("lambda-n1", t.reward.lambda_n1.to_string()),
            ("lambda-n2", t.reward.lambda_n2.to_string()),
            ("beta", t.kl.beta.to_string()),
            ("kl-target", t.kl.kl_target.to_string()),
            ("k-beta", t.kl.k_beta.to_string()),
            ("sft-learning-rate", t.sft_learning_rate.to_string()),
            ("rl-learning-rate", t.rl.learning_rate.to_string()),
            ("sft-epochs", t.sft_epochs.to_string()),
            ("clip-ratio", t.rl.clip_ratio.to_string()),
            ("minibatch-size", t.rl.minibatch_size.to_string()),
            ("batch-size", t.batch_size.to_string()),
            ("episodes-per-instance", t.episodes_per_instance.to_string()),
            ("iterations", t.iterations.to_string()),
            ("eval-interval", t.eval_interval.to_string()),
            ("eval-episodes", t.eval_episodes.to_string()),
            ("buckets", list(self.buckets.edges())),
            ("budget", self.budget.max_tokens().to_string()),
            ("answerer", self.answerer.to_string()),
            ("thresholds", list(&self.thresholds)),
            ("n-instances", self.synth.n_instances.to_string()),
            ("columns", format!("{}-{}", self.synth.columns.start(), self.synth.columns.end())),
            ("rows", format!("{}-{}", self.synth.rows.start(), self.synth.rows.end())),
            ("test-fraction", self.test_fraction.to_string()),
            ("questions-per-table", self.synth.questions_per_table.to_string()),
        ];
        kv.sort_by(|a, b| a.0.cmp(b.0));
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// SHA-256 of [`RunConfig::canonical_settings`]. Paths are excluded so
    /// identical settings hash the same wherever the run lives; the corpus
    /// hash covers input contents.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical_settings() {
            h.update(format!("{k} = {v}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn to_config_text(&self) -> String {
        self.canonical_settings().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn seed_is_required() {
        assert_eq!(RunConfig::from_settings(&BTreeMap::new()), Err(ConfigError::MissingSeed));
    }

    #[test]
    fn defaults() {
        let c = RunConfig::from_settings(&settings(&[("seed", "3")])).unwrap();
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.train.eval_interval, 3);
        assert_eq!(c.train.mask.top_p, 0.9);
        assert_eq!(c.oracle.mode, OracleMode::FixedPoint);
        assert_eq!(c.buckets, BucketEdges::default());
        assert_eq!(c.thresholds, vec![4096, 8192]);
    }

    #[test]
    fn file_parsing_and_round_trip() {
        let m = parse_config_text("# run\nseed = 9\nlambda_n2 = -3  # harsher\n\ntop-p=0.5\n").unwrap();
        let c = RunConfig::from_settings(&m).unwrap();
        assert_eq!(c.train.reward.lambda_n2, -3.0);
        assert_eq!(c.train.mask.top_p, 0.5);
        let again = RunConfig::from_settings(&parse_config_text(&c.to_config_text()).unwrap()).unwrap();
        assert_eq!(again.hash(), c.hash());
        assert!(matches!(parse_config_text("nonsense"), Err(ConfigError::Syntax { line: 1, .. })));
        assert_eq!(parse_config_text("wat = 1"), Err(ConfigError::UnknownKey("wat".into())));
    }

    #[test]
    fn learning_rate_fans_out() {
        let c = RunConfig::from_settings(&settings(&[("seed", "1"), ("learning-rate", "0")])).unwrap();
        assert_eq!((c.train.sft_learning_rate, c.train.rl.learning_rate), (0.0, 0.0));
        let c = RunConfig::from_settings(&settings(&[("seed", "1"), ("learning-rate", "0"), ("rl-learning-rate", "0.3")]))
            .unwrap();
        assert_eq!((c.train.sft_learning_rate, c.train.rl.learning_rate), (0.0, 0.3));
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = RunConfig::from_settings(&settings(&[("seed", "1"), ("out", "/a")])).unwrap();
        let b = RunConfig::from_settings(&settings(&[("seed", "1"), ("out", "/b")])).unwrap();
        let c = RunConfig::from_settings(&settings(&[("seed", "2")])).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_values() {
        for (k, v) in [("top-p", "0"), ("lambda-n1", "0.5"), ("buckets", "5,1"), ("budget", "3"), ("mode", "x"), ("columns", "a-b")] {
            let r = RunConfig::from_settings(&settings(&[("seed", "1"), (k, v)]));
            assert!(matches!(r, Err(ConfigError::BadValue { .. })), "{k}={v}: {r:?}");
        }
    }
}
