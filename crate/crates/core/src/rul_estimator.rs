//! Remaining-useful-life regression from a window of normalized sensors.
//!
//! A feed-forward net on the flattened, left-padded window stands in for a
//! recurrent model. Targets are z-scored for training and mapped back at
//! inference, and predictions are clamped at zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{label_rul, obs_window};
use crate::neural::{self, Head, Loss, ModelHeader, Mlp, Sample, TrainConfig};
use crate::trajdata::{Trajectory, N_SENSORS};

pub const ROLE: &str = "rul";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RulConfig {
    pub window: usize,
    /// Piecewise-linear cap on the labels; `None` keeps raw RUL.
    pub cap: Option<f64>,
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for RulConfig {
    fn default() -> Self {
        Self {
            window: 30,
            cap: None,
            hidden: 100,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulModel {
    pub window: usize,
    pub cap: Option<f64>,
    pub net: Mlp,
    pub target_mean: f64,
    pub target_std: f64,
    /// R² on the training cycles.
    pub train_r2: f64,
}

pub fn clamp_rul(raw: f64) -> f64 {
    raw.max(0.0)
}

fn windows_of(traj: &Trajectory, window: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..traj.len()).map(move |k| obs_window(|i| &traj.cycles[i].sensors, k, window))
}

pub fn train_rul(train: &[Trajectory], config: &RulConfig) -> Result<RulModel> {
    if train.is_empty() {
        return Err(Error::Validation("no training trajectories".into()));
    }
    if config.window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let per_traj = crate::par::try_map(train, |t| {
        let labels = label_rul(t, config.cap)?;
        Ok::<_, Error>(
            windows_of(t, config.window)
                .zip(labels)
                .collect::<Vec<_>>(),
        )
    })?;
    let pairs: Vec<(Vec<f64>, f64)> = per_traj.into_iter().flatten().collect();
    let labels: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let n = labels.len() as f64;
    let target_mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|y| (y - target_mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::Undefined(
            "RUL labels are all identical (is the cap zero?); R² is undefined",
        ));
    }
    let target_std = var.sqrt();
    let samples: Vec<Sample> = pairs
        .into_iter()
        .map(|(x, y)| Sample::value(x, (y - target_mean) / target_std))
        .collect();
    let net = neural::mlp_init(
        &[config.window * N_SENSORS, config.hidden, 1],
        Head::Linear,
        config.train.seed,
    )?;
    let (net, _) = neural::train(net, &samples, &config.train, Loss::SquaredError)?;
    let mut model = RulModel {
        window: config.window,
        cap: config.cap,
        net,
        target_mean,
        target_std,
        train_r2: f64::NAN,
    };
    let preds = crate::par::try_map(&samples, |s| model.predict_window(&s.x))?;
    model.train_r2 = neural::r_squared(&preds, &labels)?;
    Ok(model)
}

impl RulModel {
    /// Prediction for one flattened window.
    pub fn predict_window(&self, window: &[f64]) -> Result<f64> {
        let raw = self.net.forward(window)?[0];
        Ok(clamp_rul(raw * self.target_std + self.target_mean))
    }

    /// Prediction at the last entry of an observation history.
    pub fn predict_from_history(&self, history: &[[f64; N_SENSORS]]) -> Result<f64> {
        if history.is_empty() {
            return Err(Error::Validation("empty observation history".into()));
        }
        let w = obs_window(|i| &history[i], history.len() - 1, self.window);
        self.predict_window(&w)
    }

    pub fn to_text(&self) -> String {
        let header = ModelHeader {
            role: ROLE.into(),
            meta: vec![
                ("window_length".into(), self.window.to_string()),
                (
                    "cap".into(),
                    self.cap.map_or("none".into(), |c| format!("{c:.16e}")),
                ),
                ("target_mean".into(), format!("{:.16e}", self.target_mean)),
                ("target_std".into(), format!("{:.16e}", self.target_std)),
                ("train_r2".into(), format!("{:.16e}", self.train_r2)),
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
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("bad meta {k}")))
        };
        let window: usize = get("window_length")?
            .parse()
            .map_err(|_| Error::Format("bad window_length".into()))?;
        if net.input_dim() != window * N_SENSORS || net.output_dim() != 1 {
            return Err(Error::Format("network shape does not match the window length".into()));
        }
        let cap = match get("cap")? {
            "none" => None,
            _ => Some(num("cap")?),
        };
        Ok(Self {
            window,
            cap,
            net,
            target_mean: num("target_mean")?,
            target_std: num("target_std")?,
            train_r2: num("train_r2")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// One non-negative estimate per cycle, each computed from that cycle's
/// history only.
pub fn predict_rul(model: &RulModel, traj: &Trajectory) -> Result<Vec<f64>> {
    windows_of(traj, model.window)
        .map(|w| model.predict_window(&w))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulReport {
    pub r2: f64,
    pub n_cycles: usize,
    /// Mean absolute error over each unit's first `edge` cycles, averaged
    /// over units.
    pub early_mae: f64,
    /// Same over each unit's last `edge` cycles.
    pub late_mae: f64,
    pub edge: usize,
}

pub fn evaluate_rul(model: &RulModel, trajs: &[Trajectory], edge: usize) -> Result<RulReport> {
    if trajs.is_empty() || edge == 0 {
        return Err(Error::Validation("need at least one trajectory and a positive edge".into()));
    }
    let per = crate::par::try_map(trajs, |t| {
        let truth = label_rul(t, model.cap)?;
        let pred = predict_rul(model, t)?;
        Ok::<_, Error>((truth, pred))
    })?;
    let mut all_t = Vec::new();
    let mut all_p = Vec::new();
    let (mut early, mut late) = (0.0, 0.0);
    for (truth, pred) in &per {
        let e = edge.min(truth.len());
        let mae = |r: std::ops::Range<usize>| {
            r.clone().map(|i| (truth[i] - pred[i]).abs()).sum::<f64>() / r.len() as f64
        };
        early += mae(0..e);
        late += mae(truth.len() - e..truth.len());
        all_t.extend_from_slice(truth);
        all_p.extend_from_slice(pred);
    }
    Ok(RulReport {
        r2: neural::r_squared(&all_p, &all_t)?,
        n_cycles: all_t.len(),
        early_mae: early / per.len() as f64,
        late_mae: late / per.len() as f64,
        edge,
    })
}
