//! Offline dataset construction: random repair injection, cost-model rewards,
//! horizon return-to-go, RUL labels and fixed-length history windows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::trajdata::{Trajectory, N_SENSORS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Continue = 0,
    Repair = 1,
}

impl Action {
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Action::Continue),
            1 => Some(Action::Repair),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Action::Continue => [1.0, 0.0],
            Action::Repair => [0.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Terminal {
    Failure,
    Repaired,
    TruncatedEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: [f64; N_SENSORS],
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub unit_id: u32,
    pub steps: Vec<Step>,
    pub terminal: Terminal,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.steps.len();
        if n == 0 {
            return Err(Error::Validation(format!("unit {}: empty episode", self.unit_id)));
        }
        if let Some(i) = self.steps[..n - 1]
            .iter()
            .position(|s| s.action == Action::Repair)
        {
            return Err(Error::Validation(format!(
                "unit {}: repair at step {i} before the final step",
                self.unit_id
            )));
        }
        let last = self.steps[n - 1].action;
        match (self.terminal, last) {
            (Terminal::Repaired, Action::Repair) => Ok(()),
            (Terminal::Failure | Terminal::TruncatedEnd, Action::Continue) => Ok(()),
            (t, a) => Err(Error::Validation(format!(
                "unit {}: terminal {t:?} inconsistent with final action {a:?}",
                self.unit_id
            ))),
        }
    }
}

/// Stochastic costs and profits, all in profit units, plus the number of
/// cycles a repair must be issued ahead of failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub failure_base: f64,
    pub failure_jitter: f64,
    pub repair_base: f64,
    pub repair_jitter: f64,
    pub profit_base: f64,
    pub profit_jitter: f64,
    pub lead_time: usize,
    pub seed: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            failure_base: 250.0,
            failure_jitter: 50.0,
            repair_base: 25.0,
            repair_jitter: 5.0,
            profit_base: 1.0,
            profit_jitter: 0.2,
            lead_time: 10,
            seed: 0,
        }
    }
}

impl CostModel {
    pub fn zero_jitter() -> Self {
        Self {
            failure_jitter: 0.0,
            repair_jitter: 0.0,
            profit_jitter: 0.0,
            ..Self::default()
        }
    }

    pub fn has_jitter(&self) -> bool {
        self.failure_jitter > 0.0 || self.repair_jitter > 0.0 || self.profit_jitter > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("failure", self.failure_base, self.failure_jitter),
            ("repair", self.repair_base, self.repair_jitter),
            ("profit", self.profit_base, self.profit_jitter),
        ];
        for (name, base, jitter) in pairs {
            if !(base > 0.0) {
                return Err(Error::Config(format!("{name} base must be positive")));
            }
            if !(jitter >= 0.0 && jitter < base) {
                return Err(Error::Config(format!(
                    "{name} jitter must lie in [0, base), got {jitter}"
                )));
            }
        }
        Ok(())
    }

    pub fn profit(&self, rng: &mut seeds::Rng) -> f64 {
        jittered(rng, self.profit_base, self.profit_jitter)
    }

    pub fn repair_cost(&self, rng: &mut seeds::Rng) -> f64 {
        jittered(rng, self.repair_base, self.repair_jitter)
    }

    pub fn failure_cost(&self, rng: &mut seeds::Rng) -> f64 {
        jittered(rng, self.failure_base, self.failure_jitter)
    }
}

fn jittered(rng: &mut seeds::Rng, base: f64, half_width: f64) -> f64 {
    if half_width > 0.0 {
        base + rng.random_range(-half_width..=half_width)
    } else {
        base
    }
}

/// Walk a trajectory and, on every cycle before its last, issue a repair with
/// probability `repair_prob`. A repair ends the episode; the rest of the
/// trajectory is dropped because repaired units restart as new and the other
/// trajectories already cover fresh-unit life.
pub fn inject_repairs(traj: &Trajectory, repair_prob: f64, seed: u64) -> Result<Vec<Episode>> {
    if !(0.0..1.0).contains(&repair_prob) && repair_prob != 1.0 {
        return Err(Error::Config(format!(
            "repair_prob must lie in [0, 1), got {repair_prob}"
        )));
    }
    let mut rng = seeds::stream(seed, "inject", &[traj.unit_id as u64]);
    let n = traj.len();
    let mut steps = Vec::with_capacity(n);
    for (k, c) in traj.cycles.iter().enumerate() {
        let repair = k + 1 < n && repair_prob > 0.0 && rng.random_bool(repair_prob);
        steps.push(Step {
            obs: c.sensors,
            action: if repair { Action::Repair } else { Action::Continue },
            reward: 0.0,
        });
        if repair {
            return Ok(vec![Episode {
                unit_id: traj.unit_id,
                steps,
                terminal: Terminal::Repaired,
            }]);
        }
    }
    Ok(vec![Episode {
        unit_id: traj.unit_id,
        steps,
        terminal: if traj.ends_in_failure {
            Terminal::Failure
        } else {
            Terminal::TruncatedEnd
        },
    }])
}

/// Fill step rewards: every operated cycle earns a profit draw, a final repair
/// subtracts a repair-cost draw and a failure subtracts a failure-cost draw.
pub fn assign_rewards(mut episode: Episode, cost: &CostModel) -> Episode {
    let mut rng = seeds::stream(cost.seed, "rewards", &[episode.unit_id as u64]);
    for s in &mut episode.steps {
        s.reward = cost.profit(&mut rng);
    }
    if let Some(last) = episode.steps.last_mut() {
        match episode.terminal {
            Terminal::Repaired => last.reward -= cost.repair_cost(&mut rng),
            Terminal::Failure => last.reward -= cost.failure_cost(&mut rng),
            Terminal::TruncatedEnd => {}
        }
    }
    episode
}

/// `out[k] = rewards[k] + ... + rewards[min(k + horizon, n - 1)]`.
pub fn compute_rtg(rewards: &[f64], horizon: usize) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|k| {
            let end = k.saturating_add(horizon).min(n - 1);
            let mut s = 0.0;
            for r in &rewards[k..=end] {
                s += r;
            }
            s
        })
        .collect()
}

/// Cycles remaining until the failure cycle, optionally capped.
pub fn label_rul(traj: &Trajectory, cap: Option<f64>) -> Result<Vec<f64>> {
    if !traj.ends_in_failure {
        return Err(Error::Validation(format!(
            "unit {} does not end in failure; its RUL is unknown",
            traj.unit_id
        )));
    }
    let last = traj.cycles.last().map(|c| c.cycle).unwrap_or(0);
    Ok(traj
        .cycles
        .iter()
        .map(|c| {
            let r = (last - c.cycle) as f64;
            cap.map_or(r, |cap| r.min(cap))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    /// `window` rows of `N_SENSORS`, oldest first.
    pub obs_window: Vec<f64>,
    pub action_window: Vec<Action>,
    pub rtg_window: Vec<f64>,
    pub rul: Option<f64>,
    pub label: Action,
}

impl TransitionSample {
    pub fn window(&self) -> usize {
        self.rtg_window.len()
    }

    pub fn current_obs(&self) -> &[f64] {
        &self.obs_window[self.obs_window.len() - N_SENSORS..]
    }
}

/// Index into a left-padded window: position `j` of the window ending at `k`.
fn padded(k: usize, window: usize, j: usize) -> Option<usize> {
    (k + j + 1).checked_sub(window)
}

/// Observation window ending at `k`, left-padded by repeating `obs[0]`.
pub fn obs_window<'a>(
    obs: impl Fn(usize) -> &'a [f64; N_SENSORS],
    k: usize,
    window: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(window * N_SENSORS);
    for j in 0..window {
        out.extend_from_slice(obs(padded(k, window, j).unwrap_or(0)));
    }
    out
}

/// One sample per step. Windows cover steps `k-T+1..=k` (observations and
/// return-to-go) and `k-T..=k-1` (actions).
pub fn build_windows(
    episode: &Episode,
    rtg: &[f64],
    rul: Option<&[f64]>,
    window: usize,
) -> Result<Vec<TransitionSample>> {
    let n = episode.len();
    if window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if rtg.len() != n {
        return Err(Error::Dimension {
            context: "return-to-go vs episode",
            expected: n,
            got: rtg.len(),
        });
    }
    if let Some(r) = rul {
        if r.len() != n {
            return Err(Error::Dimension {
                context: "rul labels vs episode",
                expected: n,
                got: r.len(),
            });
        }
    }
    let samples = (0..n)
        .map(|k| {
            let action_window = (0..window)
                .map(|j| match (k + j).checked_sub(window) {
                    Some(i) => episode.steps[i].action,
                    None => Action::Continue,
                })
                .collect();
            let rtg_window = (0..window)
                .map(|j| rtg[padded(k, window, j).unwrap_or(0)])
                .collect();
            TransitionSample {
                obs_window: obs_window(|i| &episode.steps[i].obs, k, window),
                action_window,
                rtg_window,
                rul: rul.map(|r| r[k]),
                label: episode.steps[k].action,
            }
        })
        .collect();
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub window: usize,
    pub horizon: usize,
    pub repair_prob: f64,
    pub rul_cap: Option<f64>,
    pub with_rul: bool,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            window: 30,
            horizon: 100,
            repair_prob: 0.02,
            rul_cap: None,
            with_rul: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub window: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub has_rul: bool,
    pub repair_prob: f64,
    pub rul_cap: Option<f64>,
    pub seed: u64,
    pub cost: CostModel,
    pub n_samples: usize,
    pub n_repairs: usize,
    /// Total return of every labeled episode, in trajectory order.
    pub episode_returns: Vec<f64>,
    pub min_rtg: f64,
    pub max_rtg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<TransitionSample>,
}

/// Labeled episode plus its per-step targets, before windowing.
#[derive(Debug, Clone)]
pub struct LabeledEpisode {
    pub episode: Episode,
    pub rtg: Vec<f64>,
    pub rul: Option<Vec<f64>>,
}

pub fn label_trajectory(
    traj: &Trajectory,
    config: &LabelConfig,
    cost: &CostModel,
) -> Result<Vec<LabeledEpisode>> {
    let rul_full = if config.with_rul {
        Some(label_rul(traj, config.rul_cap)?)
    } else {
        None
    };
    inject_repairs(traj, config.repair_prob, config.seed)?
        .into_iter()
        .map(|ep| {
            let ep = assign_rewards(ep, cost);
            ep.validate()?;
            let rtg = compute_rtg(&ep.rewards(), config.horizon);
            let rul = rul_full.as_ref().map(|r| r[..ep.len()].to_vec());
            Ok(LabeledEpisode {
                episode: ep,
                rtg,
                rul,
            })
        })
        .collect()
}

/// Label every trajectory (in parallel, one RNG stream per unit) and window
/// the result into training samples.
pub fn build_dataset(trajs: &[Trajectory], config: &LabelConfig, cost: &CostModel) -> Result<Dataset> {
    cost.validate()?;
    if config.window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let per_traj = crate::par::try_map(trajs, |t| {
        let eps = label_trajectory(t, config, cost)?;
        let mut samples = Vec::new();
        for e in &eps {
            samples.extend(build_windows(&e.episode, &e.rtg, e.rul.as_deref(), config.window)?);
        }
        let returns: Vec<f64> = eps.iter().map(|e| e.episode.total_return()).collect();
        let rtg_range = eps.iter().flat_map(|e| e.rtg.iter()).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        );
        Ok::<_, Error>((samples, returns, rtg_range))
    })?;
    let mut samples = Vec::new();
    let mut episode_returns = Vec::new();
    let (mut min_rtg, mut max_rtg) = (f64::INFINITY, f64::NEG_INFINITY);
    for (s, r, (lo, hi)) in per_traj {
        samples.extend(s);
        episode_returns.extend(r);
        min_rtg = min_rtg.min(lo);
        max_rtg = max_rtg.max(hi);
    }
    let n_repairs = samples.iter().filter(|s| s.label == Action::Repair).count();
    Ok(Dataset {
        meta: DatasetMeta {
            window: config.window,
            horizon: config.horizon,
            obs_dim: N_SENSORS,
            has_rul: config.with_rul,
            repair_prob: config.repair_prob,
            rul_cap: config.rul_cap,
            seed: config.seed,
            cost: cost.clone(),
            n_samples: samples.len(),
            n_repairs,
            episode_returns,
            min_rtg,
            max_rtg,
        },
        samples,
    })
}

impl Dataset {
    /// One line per sample: observation window, one-hot action window,
    /// return-to-go window, RUL (when present), label index.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let mut first = true;
            let mut put = |out: &mut String, v: f64| {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            };
            for &v in &s.obs_window {
                put(&mut out, v);
            }
            for a in &s.action_window {
                for v in a.one_hot() {
                    put(&mut out, v);
                }
            }
            for &v in &s.rtg_window {
                put(&mut out, v);
            }
            if self.meta.has_rul {
                put(&mut out, s.rul.unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, " {}", s.label.index());
        }
        out
    }

    pub fn from_text(meta: DatasetMeta, text: &str) -> Result<Self> {
        let t = meta.window;
        let width = t * meta.obs_dim + 2 * t + t + usize::from(meta.has_rul) + 1;
        let mut samples = Vec::with_capacity(meta.n_samples);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("not a number: {tok:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != width {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {width} fields, found {}", vals.len()),
                });
            }
            let (obs, rest) = vals.split_at(t * meta.obs_dim);
            let (acts, rest) = rest.split_at(2 * t);
            let (rtg, rest) = rest.split_at(t);
            let action_window = acts
                .chunks(2)
                .map(|p| if p[1] > p[0] { Action::Repair } else { Action::Continue })
                .collect();
            let (rul, label) = if meta.has_rul {
                (Some(rest[0]), rest[1])
            } else {
                (None, rest[0])
            };
            let label = Action::from_index(label as usize).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("label must be 0 or 1, got {label}"),
            })?;
            samples.push(TransitionSample {
                obs_window: obs.to_vec(),
                action_window,
                rtg_window: rtg.to_vec(),
                rul,
                label,
            });
        }
        Ok(Self { meta, samples })
    }

    /// Writes `<stem>.txt` and the `<stem>.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.meta)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta: DatasetMeta =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Self::from_text(meta, &fs::read_to_string(dir.join(format!("{stem}.txt")))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::CycleRecord;

    fn traj(unit_id: u32, len: usize, fails: bool) -> Trajectory {
        let cycles = (0..len)
            .map(|i| CycleRecord {
                cycle: i as u32 + 1,
                settings: [0.0; 3],
                sensors: [1.0 + i as f64; N_SENSORS],
            })
            .collect();
        Trajectory::new(unit_id, cycles, fails).unwrap()
    }

    fn continues(unit_id: u32, n: usize, terminal: Terminal) -> Episode {
        let mut steps: Vec<Step> = (0..n)
            .map(|i| Step {
                obs: [i as f64; N_SENSORS],
                action: Action::Continue,
                reward: 0.0,
            })
            .collect();
        if terminal == Terminal::Repaired {
            steps.last_mut().unwrap().action = Action::Repair;
        }
        Episode {
            unit_id,
            steps,
            terminal,
        }
    }

    #[test]
    fn no_injection_runs_to_failure() {
        let eps = inject_repairs(&traj(1, 40, true), 0.0, 1).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].len(), 40);
        assert_eq!(eps[0].terminal, Terminal::Failure);
        let eps = inject_repairs(&traj(1, 40, false), 0.0, 1).unwrap();
        assert_eq!(eps[0].terminal, Terminal::TruncatedEnd);
    }

    #[test]
    fn certain_injection_repairs_immediately() {
        let eps = inject_repairs(&traj(2, 40, true), 1.0 - 1e-300, 1).unwrap();
        assert_eq!(eps[0].len(), 1);
        assert_eq!(eps[0].terminal, Terminal::Repaired);
        assert_eq!(eps[0].steps[0].action, Action::Repair);
    }

    #[test]
    fn bad_probability_rejected() {
        assert!(inject_repairs(&traj(1, 5, true), -0.1, 0).is_err());
        assert!(inject_repairs(&traj(1, 5, true), 1.5, 0).is_err());
    }

    #[test]
    fn repair_count_is_binomial() {
        // 1000 trajectories x 10 cycles = 10 000 cycles; only the first nine
        // cycles of each unit (and only until the first repair) are trials.
        let p = 0.01;
        let mut repairs = 0usize;
        let mut trials = 0usize;
        for u in 0..1000 {
            let ep = &inject_repairs(&traj(u, 10, true), p, 77).unwrap()[0];
            trials += ep.len().min(9);
            repairs += usize::from(ep.terminal == Terminal::Repaired);
        }
        let mean = trials as f64 * p;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!((repairs as f64 - mean).abs() <= 3.0 * sd, "{repairs} vs {mean} +- {sd}");
        assert!((70..=130).contains(&repairs), "{repairs}");
    }

    #[test]
    fn zero_jitter_reward_arithmetic() {
        let cost = CostModel::zero_jitter();
        let failed = assign_rewards(continues(1, 30, Terminal::Failure), &cost);
        let r = failed.rewards();
        assert!(r[..29].iter().all(|&v| v == 1.0));
        assert_eq!(r[29], -249.0);
        assert_eq!(failed.total_return(), -220.0);

        let repaired = assign_rewards(continues(1, 50, Terminal::Repaired), &cost);
        assert_eq!(repaired.total_return(), 25.0);

        let truncated = assign_rewards(continues(1, 96, Terminal::TruncatedEnd), &cost);
        assert_eq!(truncated.total_return(), 96.0);
    }

    #[test]
    fn jittered_rewards_stay_in_bounds_and_are_seeded() {
        let cost = CostModel {
            seed: 4,
            ..Default::default()
        };
        let a = assign_rewards(continues(3, 20, Terminal::Failure), &cost);
        let b = assign_rewards(continues(3, 20, Terminal::Failure), &cost);
        assert_eq!(a, b);
        for s in &a.steps[..19] {
            assert!((0.8..=1.2).contains(&s.reward));
        }
        let last = a.steps[19].reward;
        assert!((0.8 - 300.0..=1.2 - 200.0).contains(&last), "{last}");
    }

    #[test]
    fn rtg_examples() {
        assert_eq!(compute_rtg(&[0.0; 5], 3), vec![0.0; 5]);
        assert_eq!(
            compute_rtg(&[1.0, 1.0, 1.0, -249.0], 2),
            vec![3.0, -247.0, -248.0, -249.0]
        );
        let r = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(compute_rtg(&r, 10), vec![10.0, 9.0, 7.0, 4.0]);
        assert_eq!(compute_rtg(&r, 0), r.to_vec());
        assert!(compute_rtg(&[], 4).is_empty());
    }

    #[test]
    fn rul_labels() {
        assert_eq!(
            label_rul(&traj(1, 5, true), None).unwrap(),
            vec![4.0, 3.0, 2.0, 1.0, 0.0]
        );
        let capped = label_rul(&traj(1, 200, true), Some(130.0)).unwrap();
        assert!(capped[..70].iter().all(|&v| v == 130.0));
        assert_eq!(capped[70], 129.0);
        assert_eq!(*capped.last().unwrap(), 0.0);
        assert!(label_rul(&traj(1, 5, false), None).is_err());
    }

    #[test]
    fn window_padding() {
        let ep = continues(1, 5, Terminal::Failure);
        let rtg: Vec<f64> = (0..5).map(|i| 10.0 * i as f64).collect();
        let w = build_windows(&ep, &rtg, None, 3).unwrap();
        assert_eq!(w.len(), 5);
        let s = &w[1];
        let rows: Vec<f64> = s.obs_window.chunks(N_SENSORS).map(|r| r[0]).collect();
        assert_eq!(rows, vec![0.0, 0.0, 1.0]);
        assert_eq!(s.rtg_window, vec![0.0, 0.0, 10.0]);
        assert_eq!(s.action_window, vec![Action::Continue; 3]);

        let w1 = build_windows(&ep, &rtg, None, 1).unwrap();
        assert_eq!(w1[0].obs_window, ep.steps[0].obs.to_vec());
        assert_eq!(w1[0].action_window, vec![Action::Continue]);
        assert_eq!(w1[3].rtg_window, vec![30.0]);
    }

    #[test]
    fn repair_label_on_final_window() {
        let ep = continues(1, 4, Terminal::Repaired);
        let w = build_windows(&ep, &[0.0; 4], Some(&[3.0, 2.0, 1.0, 0.0]), 2).unwrap();
        assert_eq!(w[3].label, Action::Repair);
        assert!(w[..3].iter().all(|s| s.label == Action::Continue));
        assert_eq!(w[2].rul, Some(1.0));
    }

    #[test]
    fn window_length_mismatch() {
        let ep = continues(1, 4, Terminal::Failure);
        assert!(build_windows(&ep, &[0.0; 3], None, 2).is_err());
        assert!(build_windows(&ep, &[0.0; 4], Some(&[0.0; 5]), 2).is_err());
        assert!(build_windows(&ep, &[0.0; 4], None, 0).is_err());
    }

    #[test]
    fn episode_validation() {
        let mut ep = continues(1, 4, Terminal::Repaired);
        assert!(ep.validate().is_ok());
        ep.steps[1].action = Action::Repair;
        assert!(ep.validate().is_err());
        let ep = continues(1, 4, Terminal::Failure);
        assert!(ep.validate().is_ok());
        let mut ep = continues(1, 4, Terminal::Failure);
        ep.terminal = Terminal::Repaired;
        assert!(ep.validate().is_err());
    }

    #[test]
    fn dataset_text_round_trip() {
        let trajs: Vec<Trajectory> = (1..=4).map(|u| traj(u, 12 + u as usize, true)).collect();
        let cfg = LabelConfig {
            window: 4,
            horizon: 5,
            repair_prob: 0.1,
            seed: 3,
            ..Default::default()
        };
        let ds = build_dataset(&trajs, &cfg, &CostModel::default()).unwrap();
        assert_eq!(ds.meta.n_samples, ds.samples.len());
        let back = Dataset::from_text(ds.meta.clone(), &ds.to_text()).unwrap();
        assert_eq!(back, ds);
    }
}
