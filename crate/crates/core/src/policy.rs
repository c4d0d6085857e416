//! Return-conditioned repair classifier.
//!
//! Features are laid out as `[obs (T x 21) | past actions (T x 2) | rtg (T) |
//! rul (0 or 1)]`. Training deduplicates identical samples into weights and
//! balances the two classes by inverse frequency.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labeling::{Action, Dataset, TransitionSample};
use crate::neural::{self, softmax, Head, Loss, ModelHeader, Mlp, Sample, Standardizer, TrainConfig};

pub const ROLE: &str = "policy";
pub const BLOCK_ORDER: [&str; 4] = ["obs", "actions", "rtg", "rul"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub window: usize,
    pub obs_dim: usize,
    pub uses_rul: bool,
}

impl FeatureLayout {
    pub fn input_dim(&self) -> usize {
        self.window * self.obs_dim + self.window * Action::COUNT + self.window + usize::from(self.uses_rul)
    }

    pub fn features(
        &self,
        obs_window: &[f64],
        action_window: &[Action],
        rtg_window: &[f64],
        rul: Option<f64>,
    ) -> Result<Vec<f64>> {
        let t = self.window;
        let checks = [
            ("observation window", t * self.obs_dim, obs_window.len()),
            ("action window", t, action_window.len()),
            ("return-to-go window", t, rtg_window.len()),
        ];
        for (context, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension {
                    context,
                    expected,
                    got,
                });
            }
        }
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(obs_window);
        for a in action_window {
            x.extend_from_slice(&a.one_hot());
        }
        x.extend_from_slice(rtg_window);
        match (self.uses_rul, rul) {
            (true, Some(r)) => x.push(r),
            (false, _) => {}
            (true, None) => return Err(Error::Validation("policy expects a RUL input".into())),
        }
        Ok(x)
    }

    fn sample_features(&self, s: &TransitionSample) -> Result<Vec<f64>> {
        self.features(&s.obs_window, &s.action_window, &s.rtg_window, if self.uses_rul { s.rul } else { None })
    }
}

/// How a scalar target return is turned into the rtg window at rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// The target fills every position of the window at every step.
    #[default]
    Replicate,
    /// Realized rewards are subtracted from the target as the episode
    /// proceeds, floored at the lowest rtg seen in training.
    Decrement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub uses_rul: bool,
    pub class_weighting: bool,
    pub train: TrainConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            uses_rul: false,
            class_weighting: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub layout: FeatureLayout,
    pub horizon: usize,
    pub net: Mlp,
    pub min_rtg: f64,
    pub max_rtg: f64,
    pub min_train_return: f64,
    pub max_train_return: f64,
    /// SHA-256 over the training features and labels.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub window: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub uses_rul: bool,
    pub layout: Vec<String>,
    pub input_dim: usize,
    pub min_rtg: f64,
    pub max_rtg: f64,
    pub min_train_return: f64,
    pub max_train_return: f64,
    pub fingerprint: String,
}

pub fn train_policy(dataset: &Dataset, config: &PolicyConfig) -> Result<PolicyModel> {
    let meta = &dataset.meta;
    if config.uses_rul && !meta.has_rul {
        return Err(Error::Config("uses_rul is set but the dataset carries no RUL labels".into()));
    }
    if dataset.samples.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let layout = FeatureLayout {
        window: meta.window,
        obs_dim: meta.obs_dim,
        uses_rul: config.uses_rul,
    };
    let feats = crate::par::try_map(&dataset.samples, |s| layout.sample_features(s))?;

    let mut hasher = Sha256::new();
    let mut index: HashMap<(Vec<u64>, usize), usize> = HashMap::new();
    let mut unique: Vec<Sample> = Vec::new();
    let mut multiplicity: Vec<f64> = Vec::new();
    for (x, s) in feats.into_iter().zip(&dataset.samples) {
        let label = s.label.index();
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        for b in &key {
            hasher.update(b.to_le_bytes());
        }
        hasher.update([label as u8]);
        match index.get(&(key.clone(), label)) {
            Some(&i) => multiplicity[i] += 1.0,
            None => {
                index.insert((key, label), unique.len());
                unique.push(Sample::class(x, label));
                multiplicity.push(1.0);
            }
        }
    }
    let mut class_count = [0.0f64; Action::COUNT];
    for (s, m) in unique.iter().zip(&multiplicity) {
        if let neural::Target::Class(c) = s.target {
            class_count[c] += m;
        }
    }
    if class_count.contains(&0.0) {
        return Err(Error::Validation(
            "dataset has a single action class; no repair examples, raise repair_prob".into(),
        ));
    }
    let total: f64 = class_count.iter().sum();
    let class_weight: Vec<f64> = class_count
        .iter()
        .map(|&c| {
            if config.class_weighting {
                total / (Action::COUNT as f64 * c)
            } else {
                1.0
            }
        })
        .collect();
    let weights: Vec<f64> = unique
        .iter()
        .zip(&multiplicity)
        .map(|(s, m)| match s.target {
            neural::Target::Class(c) => m * class_weight[c],
            neural::Target::Value(_) => unreachable!(),
        })
        .collect();

    let mut net = neural::mlp_init(
        &[layout.input_dim(), config.hidden, Action::COUNT],
        Head::Logits,
        config.train.seed,
    )?;
    if config.train.standardize {
        net.scaler = Some(weighted_standardizer(&unique, &multiplicity, layout.input_dim()));
    }
    let (net, _) = neural::train_weighted(net, &unique, &weights, &config.train, Loss::CrossEntropy)?;

    let returns = &meta.episode_returns;
    Ok(PolicyModel {
        layout,
        horizon: meta.horizon,
        net,
        min_rtg: meta.min_rtg,
        max_rtg: meta.max_rtg,
        min_train_return: returns.iter().cloned().fold(f64::INFINITY, f64::min),
        max_train_return: returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        fingerprint: hex::encode(hasher.finalize()),
    })
}

/// Standardization statistics of the full dataset computed from its unique
/// rows and their multiplicities.
fn weighted_standardizer(rows: &[Sample], mult: &[f64], dim: usize) -> Standardizer {
    let wsum: f64 = mult.iter().sum();
    let mut mean = vec![0.0; dim];
    for (s, w) in rows.iter().zip(mult) {
        for (m, x) in mean.iter_mut().zip(&s.x) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= wsum);
    let mut var = vec![0.0; dim];
    for (s, w) in rows.iter().zip(mult) {
        for ((v, x), m) in var.iter_mut().zip(&s.x).zip(&mean) {
            *v += w * (x - m) * (x - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let sd = (v / wsum).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    Standardizer { mean, std }
}

impl PolicyModel {
    /// Action and class probabilities for an explicit rtg window. Ties go to
    /// Continue.
    pub fn act(
        &self,
        obs_window: &[f64],
        action_window: &[Action],
        rtg_window: &[f64],
        rul: Option<f64>,
    ) -> Result<(Action, [f64; 2])> {
        let x = self.layout.features(obs_window, action_window, rtg_window, rul)?;
        let logits = self.net.forward(&x)?;
        let p = softmax(&logits);
        let action = if p[1] > p[0] { Action::Repair } else { Action::Continue };
        Ok((action, [p[0], p[1]]))
    }

    pub fn meta(&self) -> PolicyMeta {
        PolicyMeta {
            window: self.layout.window,
            horizon: self.horizon,
            obs_dim: self.layout.obs_dim,
            uses_rul: self.layout.uses_rul,
            layout: BLOCK_ORDER.iter().map(|s| s.to_string()).collect(),
            input_dim: self.layout.input_dim(),
            min_rtg: self.min_rtg,
            max_rtg: self.max_rtg,
            min_train_return: self.min_train_return,
            max_train_return: self.max_train_return,
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let f = |v: f64| format!("{v:.16e}");
        let header = ModelHeader {
            role: ROLE.into(),
            meta: vec![
                ("window_length".into(), self.layout.window.to_string()),
                ("horizon".into(), self.horizon.to_string()),
                ("obs_dim".into(), self.layout.obs_dim.to_string()),
                ("uses_rul".into(), self.layout.uses_rul.to_string()),
                ("layout".into(), BLOCK_ORDER.join(",")),
                ("min_rtg".into(), f(self.min_rtg)),
                ("max_rtg".into(), f(self.max_rtg)),
                ("min_train_return".into(), f(self.min_train_return)),
                ("max_train_return".into(), f(self.max_train_return)),
                ("fingerprint".into(), self.fingerprint.clone()),
            ],
        };
        self.net.to_text(&header)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (net, header) = Mlp::from_text(text)?;
        if header.role != ROLE {
            return Err(Error::Format(format!("expected a '{ROLE}' model, found '{}'", header.role)));
        }
        let get = |k: &str| header.get(k).ok_or_else(|| Error::Format(format!("missing meta {k}")));
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad meta {k}: {v:?}")))
        }
        if get("layout")? != BLOCK_ORDER.join(",") {
            return Err(Error::Format("unsupported feature layout".into()));
        }
        let layout = FeatureLayout {
            window: parse("window_length", get("window_length")?)?,
            obs_dim: parse("obs_dim", get("obs_dim")?)?,
            uses_rul: parse("uses_rul", get("uses_rul")?)?,
        };
        if net.input_dim() != layout.input_dim() || net.output_dim() != Action::COUNT {
            return Err(Error::Format("network shape does not match the feature layout".into()));
        }
        Ok(Self {
            layout,
            horizon: parse("horizon", get("horizon")?)?,
            net,
            min_rtg: parse("min_rtg", get("min_rtg")?)?,
            max_rtg: parse("max_rtg", get("max_rtg")?)?,
            min_train_return: parse("min_train_return", get("min_train_return")?)?,
            max_train_return: parse("max_train_return", get("max_train_return")?)?,
            fingerprint: get("fingerprint")?.to_string(),
        })
    }

    /// Writes `<stem>.txt` (the network) and `<stem>.json` (layout sidecar).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        let json = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(dir.join(format!("{stem}.txt")))?)
    }
}

/// Decision with the scalar target copied into every rtg position.
pub fn select_action(
    policy: &PolicyModel,
    obs_window: &[f64],
    action_window: &[Action],
    target_return: f64,
    rul: Option<f64>,
) -> Result<(Action, [f64; 2])> {
    let rtg = vec![target_return; policy.layout.window];
    policy.act(obs_window, action_window, &rtg, rul)
}

/// Online rtg window for one episode.
#[derive(Debug, Clone)]
pub struct Conditioner {
    mode: Conditioning,
    window: usize,
    target: f64,
    floor: f64,
    spent: f64,
    history: Vec<f64>,
}

impl Conditioner {
    pub fn new(policy: &PolicyModel, mode: Conditioning, target: f64) -> Self {
        Self {
            mode,
            window: policy.layout.window,
            target,
            floor: policy.min_rtg.min(target),
            spent: 0.0,
            history: vec![target],
        }
    }

    /// Window for the current step, oldest first.
    pub fn window(&self) -> Vec<f64> {
        match self.mode {
            Conditioning::Replicate => vec![self.target; self.window],
            Conditioning::Decrement => {
                let k = self.history.len() - 1;
                (0..self.window)
                    .map(|j| self.history[(k + j + 1).saturating_sub(self.window)])
                    .collect()
            }
        }
    }

    /// Record the reward realized by the current step and advance.
    pub fn advance(&mut self, reward: f64) {
        self.spent += reward;
        self.history.push((self.target - self.spent).max(self.floor));
    }
}
