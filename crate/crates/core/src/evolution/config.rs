use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::policy::PolicySpec;
use crate::selector::{Scheme, SelectorSpec};

/// One slice of the Fig. 5 style rollout partition. Base and EMA record
/// from identical initial states; pairing rollout `i` of both decides the
/// slice. `P5` is an extra EMA pass with randomized initial states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolPart {
    /// Base succeeded, EMA failed (base trajectory).
    P1,
    /// Both succeeded (base trajectory).
    P2,
    /// Both succeeded (EMA trajectory).
    P3,
    /// EMA succeeded, base failed (EMA trajectory).
    P4,
    /// EMA successes from randomized initial states.
    P5,
}

impl PoolPart {
    pub const ALL: [PoolPart; 5] = [PoolPart::P1, PoolPart::P2, PoolPart::P3, PoolPart::P4, PoolPart::P5];

    pub fn as_str(self) -> &'static str {
        match self {
            PoolPart::P1 => "P1",
            PoolPart::P2 => "P2",
            PoolPart::P3 => "P3",
            PoolPart::P4 => "P4",
            PoolPart::P5 => "P5",
        }
    }
}

/// A set of pool parts, written like `P1+P2+P5`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PoolFilter(pub Vec<PoolPart>);

impl PoolFilter {
    pub fn contains(&self, p: PoolPart) -> bool {
        self.0.contains(&p)
    }
}

impl fmt::Display for PoolFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|p| p.as_str()).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for PoolFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = Vec::new();
        for name in s.split('+') {
            let name = name.trim();
            let p = PoolPart::ALL
                .into_iter()
                .find(|p| p.as_str().eq_ignore_ascii_case(name))
                .ok_or_else(|| format!("unknown pool part '{name}' (expected P1..P5)"))?;
            if !parts.contains(&p) {
                parts.push(p);
            }
        }
        parts.sort();
        Ok(PoolFilter(parts))
    }
}

impl TryFrom<String> for PoolFilter {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<PoolFilter> for String {
    fn from(p: PoolFilter) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Expert demos per task.
    pub shots: usize,
    /// Rollouts per model per task each round.
    pub rollouts: usize,
    /// Demos kept per task each round when the selector is on.
    pub select_k: usize,
    pub tau: f64,
    pub delta: f32,
    pub max_rounds: u32,
    pub eval_episodes: usize,
    pub m_aug: bool,
    pub e_aug: bool,
    pub use_selector: bool,
    pub scheme: Scheme,
    pub retrain_from_scratch: bool,
    pub sequence_only_selector: bool,
    /// Retrain the selector on the whole pool before each round's scoring.
    pub retrain_selector: bool,
    /// Record the paired base/EMA partition and keep only these parts.
    pub pool_filter: Option<PoolFilter>,
    /// Expert demos start from randomized initial states.
    pub expert_aug: bool,
    pub init_steps: usize,
    pub round_steps: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub stop_on_convergence: bool,
    pub policy: PolicySpec,
    pub selector: SelectorSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            shots: 8,
            rollouts: 25,
            select_k: 15,
            tau: 0.999,
            delta: 0.05,
            max_rounds: 5,
            eval_episodes: 50,
            m_aug: true,
            e_aug: true,
            use_selector: true,
            scheme: Scheme::Ascending,
            retrain_from_scratch: false,
            sequence_only_selector: false,
            retrain_selector: false,
            pool_filter: None,
            expert_aug: true,
            init_steps: 3000,
            round_steps: 1500,
            patience: 2,
            min_delta: 0.005,
            stop_on_convergence: true,
            policy: PolicySpec::default(),
            selector: SelectorSpec::default(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("override '{0}' is not of the form key=value")]
    BadOverride(String),
    #[error("invalid value for '{key}': {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.shots < 1 {
            return bad("shots must be at least 1".into());
        }
        if self.select_k > 2 * self.rollouts {
            return bad(format!("select_k {} exceeds twice the rollouts ({})", self.select_k, 2 * self.rollouts));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1)", self.tau));
        }
        if !(self.delta >= 0.0) {
            return bad(format!("delta {} must be non-negative", self.delta));
        }
        if self.eval_episodes < 1 {
            return bad("eval_episodes must be at least 1".into());
        }
        if self.policy.batch < 1 || self.selector.batch < 1 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.policy.lr > 0.0) || !(self.selector.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.policy.hidden.contains(&0) || self.selector.hidden == 0 || self.selector.layers == 0 {
            return bad("layer sizes must be positive".into());
        }
        if !(self.min_delta >= 0.0) || self.patience < 1 {
            return bad("convergence needs patience >= 1 and min_delta >= 0".into());
        }
        Ok(())
    }

    /// Parses a JSON config; missing keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides with dotted keys (`policy.lr=3e-4`).
    /// Values are read as JSON when possible and as bare strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.to_string()))?;
            let key = key.trim();
            let slot = lookup(&mut tree, key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            serde_json::from_value::<Self>(tree.clone()).map_err(|e| ConfigError::BadValue {
                key: key.to_string(),
                msg: e.to_string(),
            })?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn selector_spec(&self) -> SelectorSpec {
        SelectorSpec {
            sequence_only: self.sequence_only_selector,
            ..self.selector.clone()
        }
    }
}

fn lookup<'a>(tree: &'a mut Value, dotted: &str) -> Option<&'a mut Value> {
    let mut cur = tree;
    for part in dotted.split('.') {
        cur = cur.as_object_mut()?.get_mut(part)?;
    }
    Some(cur)
}
