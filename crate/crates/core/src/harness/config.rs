//! TOML run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{make_synthetic_dataset, IdxSpec, Splits, SyntheticSpec};
use crate::adversary::{AttackConfig, InitMode};
use crate::engine::{LossKind, LrSchedule, OptimState};
use crate::error::{Error, Result};
use crate::trainer::{default_training_attack, DeatCriterion, Strategy, StrategyConfig};

pub const STRATEGY_NAMES: &[&str] = &[
    "standard", "pgd", "free", "ufgsm", "deat", "mdeat", "mpgd", "mufgsm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub strategy: StrategySection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default = "default_lr")]
    pub lr: LrSchedule,
    #[serde(default = "default_eval")]
    pub eval: Vec<EvalAdversary>,
    #[serde(default = "default_validation")]
    pub validation: EvalAdversary,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_lr() -> LrSchedule {
    LrSchedule::Multistep {
        base: 0.05,
        milestones: vec![5, 7],
        factor: 0.1,
    }
}

fn default_eval() -> Vec<EvalAdversary> {
    vec![
        EvalAdversary::new("FGSM", 1, LossKind::CrossEntropy),
        EvalAdversary::new("PGD-100", 100, LossKind::CrossEntropy),
        EvalAdversary::new("CW-20", 20, LossKind::Margin),
    ]
}

fn default_validation() -> EvalAdversary {
    EvalAdversary::new("PGD-20", 20, LossKind::CrossEntropy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Idx(IdxSpec),
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<Splits> {
        match self {
            DatasetSpec::Synthetic(spec) => make_synthetic_dataset(spec, seed),
            DatasetSpec::Idx(spec) => spec.load(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { hidden: vec![32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    /// One of [`STRATEGY_NAMES`], optionally with a count suffix such as `pgd-7`.
    pub name: String,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replays: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frac: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
    #[serde(default = "one")]
    pub checkpoint_stride: usize,
}

fn default_epochs() -> usize {
    8
}

fn default_batch_size() -> usize {
    64
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_domain: Option<bool>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            alpha: None,
            init: None,
            clamp_domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self {
            momentum: OptimState::DEFAULT_MOMENTUM,
            weight_decay: OptimState::DEFAULT_WEIGHT_DECAY,
        }
    }
}

/// An evaluation adversary. Always starts from zero and clamps to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalAdversary {
    pub name: String,
    pub steps: usize,
    /// Defaults to epsilon for one step and epsilon / 4 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

impl EvalAdversary {
    pub fn new(name: &str, steps: usize, loss: LossKind) -> Self {
        Self {
            name: name.into(),
            steps,
            alpha: None,
            loss,
        }
    }

    pub fn attack(&self, epsilon: f64) -> AttackConfig {
        let alpha = self
            .alpha
            .unwrap_or(if self.steps == 1 { epsilon } else { epsilon / 4.0 });
        AttackConfig {
            loss: self.loss,
            ..AttackConfig::pgd(epsilon, alpha, self.steps)
        }
    }
}

/// Splits `pgd-7` into `("pgd", Some(7))`.
fn split_name(name: &str) -> (String, Option<usize>) {
    let lower = name.trim().to_ascii_lowercase();
    if let Some((base, n)) = lower.rsplit_once('-') {
        if let Ok(n) = n.parse() {
            return (base.to_string(), Some(n));
        }
    }
    (lower, None)
}

fn pick(suffix: Option<usize>, field: Option<usize>, key: &str, default: usize) -> Result<usize> {
    match (suffix, field) {
        (Some(a), Some(b)) if a != b => Err(Error::config(
            format!("strategy.{key}"),
            format!("{b} disagrees with the count {a} in strategy.name"),
        )),
        (Some(a), _) | (None, Some(a)) => Ok(a),
        (None, None) => Ok(default),
    }
}

impl StrategySection {
    pub fn strategy(&self) -> Result<Strategy> {
        let (base, suffix) = split_name(&self.name);
        let no_suffix = |s: Strategy| match suffix {
            Some(_) => Err(Error::config("strategy.name", format!("`{}` takes no count suffix", base))),
            None => Ok(s),
        };
        match base.as_str() {
            "standard" => no_suffix(Strategy::Standard),
            "pgd" | "pgd_at" => Ok(Strategy::PgdAt { steps: pick(suffix, self.steps, "steps", 7)? }),
            "free" => Ok(Strategy::Free { replays: pick(suffix, self.replays, "replays", 8)? }),
            "ufgsm" | "u-fgsm" => no_suffix(Strategy::Ufgsm),
            "deat" => match self.frac {
                Some(frac) if suffix.is_none() && self.d.is_none() => {
                    Ok(Strategy::Deat { criterion: DeatCriterion::Accuracy { frac } })
                }
                Some(_) => Err(Error::config("strategy.frac", "give either an interval d or an accuracy frac")),
                None => Ok(Strategy::Deat {
                    criterion: DeatCriterion::Interval { d: pick(suffix, self.d, "d", 3)? },
                }),
            },
            "mdeat" | "m-deat" => no_suffix(Strategy::Mdeat),
            "mpgd" | "m+pgd" => Ok(Strategy::Mpgd { max_steps: pick(suffix, self.steps, "steps", 7)? }),
            "mufgsm" | "m+u-fgsm" => no_suffix(Strategy::Mufgsm {
                window: self.window.unwrap_or(2),
                gamma: self.gamma.unwrap_or(1.5),
            }),
            _ => Err(Error::config(
                "strategy.name",
                format!("unknown strategy `{}`, expected one of {}", self.name, STRATEGY_NAMES.join(", ")),
            )),
        }
    }
}

impl RunConfig {
    /// A config with every default applied.
    pub fn minimal(strategy: &str) -> Self {
        parse_config(&format!("[strategy]\nname = \"{strategy}\"\n[dataset]\nkind = \"synthetic\"\n"))
            .expect("built-in defaults are valid")
    }

    pub fn strategy_config(&self) -> Result<StrategyConfig> {
        let strategy = self.strategy.strategy()?;
        let a = &self.attack;
        let mut attack = default_training_attack(&strategy, a.epsilon);
        if let Some(alpha) = a.alpha {
            attack.alpha = alpha;
        }
        if let Some(init) = a.init {
            attack.init = init;
        }
        if let Some(clamp) = a.clamp_domain {
            attack.clamp_domain = clamp;
        }
        let mut cfg = StrategyConfig::new(strategy, self.strategy.epochs, attack);
        cfg.batch_size = self.strategy.batch_size;
        cfg.lr = self.lr.clone();
        cfg.momentum = self.optim.momentum;
        cfg.weight_decay = self.optim.weight_decay;
        if !matches!(strategy, Strategy::Mufgsm { .. }) {
            cfg.gamma = self.strategy.gamma.unwrap_or(1.0);
        }
        cfg.cap = self.strategy.cap;
        cfg.seed = self.seed;
        cfg.checkpoint_stride = self.strategy.checkpoint_stride;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = self.strategy_config()?;
        cfg.validate()?;
        if !(self.attack.epsilon > 0.0) {
            return Err(Error::config("attack.epsilon", format!("must be positive, got {}", self.attack.epsilon)));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        if !(self.optim.weight_decay >= 0.0) {
            return Err(Error::config("optim.weight_decay", "must be non-negative"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "layer widths must be at least 1"));
        }
        if let DatasetSpec::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        for (i, adv) in self.eval.iter().chain(std::iter::once(&self.validation)).enumerate() {
            adv.attack(self.attack.epsilon).validate().map_err(|e| match e {
                Error::Config { path, message } => {
                    let section = if i < self.eval.len() { format!("eval[{i}]") } else { "validation".into() };
                    Error::config(path.replacen("attack", &section, 1), message)
                }
                e => e,
            })?;
        }
        Ok(())
    }

    /// Applies command-line overrides and re-validates.
    pub fn with_overrides(mut self, seed: Option<u64>, out_dir: Option<PathBuf>, strategy: Option<String>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out_dir {
            self.out_dir = o;
        }
        if let Some(name) = strategy {
            self.strategy.name = name;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| Error::config("", e.message().to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { String::new() } else { path }, e.inner().message().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}
