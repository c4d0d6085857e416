//! Replay environment: steps a decision rule through a recorded trajectory and
//! scores the resulting episode.
//!
//! Every operated cycle earns a profit draw. A repair ends the episode with
//! the repair cost, unless fewer than `lead_time` true cycles remain before
//! failure, in which case the unit fails on the way to the shop and the
//! failure cost applies instead. The terminal cycle of a trajectory is never
//! queried.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{obs_window, Action, CostModel};
use crate::policy::{Conditioner, Conditioning, PolicyModel};
use crate::rul_estimator::RulModel;
use crate::seeds;
use crate::trajdata::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutTerminal {
    Failure,
    Repaired,
    TruncatedEnd,
    LateRepairFailure,
}

impl RolloutTerminal {
    pub fn name(self) -> &'static str {
        match self {
            Self::Failure => "failure",
            Self::Repaired => "repaired",
            Self::TruncatedEnd => "truncated_end",
            Self::LateRepairFailure => "late_repair_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub unit_id: u32,
    pub draw: u64,
    pub steps_operated: usize,
    pub terminal: RolloutTerminal,
    pub total_return: f64,
    pub action_trace: Vec<Action>,
}

#[derive(Debug, Clone, Copy)]
pub enum DecisionRule<'a> {
    Policy {
        policy: &'a PolicyModel,
        target: f64,
        mode: Conditioning,
        /// Estimator feeding the policy's RUL input, when it has one.
        rul: Option<&'a RulModel>,
    },
    NoAction,
    /// Repair once the true RUL is at or below the threshold.
    OracleRul(f64),
    /// Repair once the estimated RUL is at or below the threshold.
    EstimatedRul(&'a RulModel, f64),
    /// Repair at a fixed 0-based cycle index.
    RepairAt(usize),
}

impl DecisionRule<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Policy { policy, .. } if policy.layout.uses_rul => "policy_rul",
            Self::Policy { .. } => "policy",
            Self::NoAction => "no_action",
            Self::OracleRul(_) => "oracle_rul",
            Self::EstimatedRul(..) => "estimated_rul",
            Self::RepairAt(_) => "repair_at",
        }
    }

    pub fn target(&self) -> Option<f64> {
        match self {
            Self::Policy { target, .. } => Some(*target),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::OracleRul(t) | Self::EstimatedRul(_, t) if !(*t >= 0.0) => {
                Err(Error::Config(format!("RUL threshold must be non-negative, got {t}")))
            }
            Self::Policy { policy, rul, .. } if policy.layout.uses_rul && rul.is_none() => Err(Error::Config(
                "the policy takes a RUL input but no estimator was supplied".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn rollout(traj: &Trajectory, rule: &DecisionRule, cost: &CostModel, draw: u64) -> Result<RolloutOutcome> {
    rule.validate()?;
    let n = traj.len();
    if n == 0 {
        return Err(Error::Validation(format!("unit {} has no cycles", traj.unit_id)));
    }
    if matches!(rule, DecisionRule::OracleRul(_)) && !traj.ends_in_failure {
        return Err(Error::Validation(format!(
            "the RUL oracle needs a failing trajectory; unit {} has no failure point",
            traj.unit_id
        )));
    }
    // terminal costs first so every rule sees the same per-cycle profits
    let mut rng = seeds::stream(cost.seed, "rollout", &[traj.unit_id as u64, draw]);
    let failure_cost = cost.failure_cost(&mut rng);
    let repair_cost = cost.repair_cost(&mut rng);

    let mut conditioner = match rule {
        DecisionRule::Policy {
            policy, target, mode, ..
        } => Some(Conditioner::new(policy, *mode, *target)),
        _ => None,
    };
    let sensors = |i: usize| &traj.cycles[i].sensors;
    let mut trace = Vec::with_capacity(n);
    let mut total = 0.0;
    for k in 0..n {
        let profit = cost.profit(&mut rng);
        total += profit;
        let remaining = n - 1 - k;
        if remaining == 0 {
            trace.push(Action::Continue);
            let terminal = if traj.ends_in_failure {
                total -= failure_cost;
                RolloutTerminal::Failure
            } else {
                RolloutTerminal::TruncatedEnd
            };
            return Ok(outcome(traj, draw, trace, terminal, total));
        }
        let action = match rule {
            DecisionRule::NoAction => Action::Continue,
            DecisionRule::RepairAt(m) => {
                if k == *m {
                    Action::Repair
                } else {
                    Action::Continue
                }
            }
            DecisionRule::OracleRul(thr) => {
                if remaining as f64 <= *thr {
                    Action::Repair
                } else {
                    Action::Continue
                }
            }
            DecisionRule::EstimatedRul(model, thr) => {
                let est = model.predict_window(&obs_window(sensors, k, model.window))?;
                if est <= *thr {
                    Action::Repair
                } else {
                    Action::Continue
                }
            }
            DecisionRule::Policy { policy, rul, .. } => {
                let t = policy.layout.window;
                let obs = obs_window(sensors, k, t);
                let actions: Vec<Action> = (0..t)
                    .map(|j| (k + j).checked_sub(t).map_or(Action::Continue, |i| trace[i]))
                    .collect();
                let rul_in = match rul {
                    Some(m) if policy.layout.uses_rul => {
                        Some(m.predict_window(&obs_window(sensors, k, m.window))?)
                    }
                    _ => None,
                };
                let rtg = conditioner.as_ref().expect("policy rules carry a conditioner").window();
                policy.act(&obs, &actions, &rtg, rul_in)?.0
            }
        };
        trace.push(action);
        if action == Action::Repair {
            let terminal = if traj.ends_in_failure && remaining < cost.lead_time {
                total -= failure_cost;
                RolloutTerminal::LateRepairFailure
            } else {
                total -= repair_cost;
                RolloutTerminal::Repaired
            };
            return Ok(outcome(traj, draw, trace, terminal, total));
        }
        if let Some(c) = conditioner.as_mut() {
            c.advance(profit);
        }
    }
    unreachable!("the loop returns on the last cycle")
}

fn outcome(traj: &Trajectory, draw: u64, trace: Vec<Action>, terminal: RolloutTerminal, total: f64) -> RolloutOutcome {
    RolloutOutcome {
        unit_id: traj.unit_id,
        draw,
        steps_operated: trace.len(),
        terminal,
        total_return: total,
        action_trace: trace,
    }
}

/// Aggregate of one rule over trajectories and jitter draws.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub rule: String,
    pub target_return: Option<f64>,
    /// Unit-major: all draws of the first unit, then the next unit.
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub n_units: usize,
    pub n_draws: usize,
    pub outcomes: Vec<RolloutOutcome>,
}

/// Mean and population standard deviation, summed in slice order.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn evaluate(trajs: &[Trajectory], rule: &DecisionRule, cost: &CostModel, n_draws: usize) -> Result<EvalRecord> {
    if trajs.is_empty() {
        return Err(Error::Validation("no trajectories to evaluate".into()));
    }
    if n_draws == 0 {
        return Err(Error::Config("n_draws must be at least 1".into()));
    }
    cost.validate()?;
    let outcomes = crate::par::map_range(trajs.len() * n_draws, |i| {
        rollout(&trajs[i / n_draws], rule, cost, (i % n_draws) as u64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let returns: Vec<f64> = outcomes.iter().map(|o| o.total_return).collect();
    let (mean, std) = summarize(&returns);
    Ok(EvalRecord {
        rule: rule.name().to_string(),
        target_return: rule.target(),
        returns,
        mean,
        std,
        n_units: trajs.len(),
        n_draws,
        outcomes,
    })
}

/// CSV of every rollout in the given records.
pub fn outcomes_csv(records: &[EvalRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["unit_id", "rule", "target_return", "terminal", "steps_operated", "total_return", "draw"])?;
    for r in records {
        let target = r.target_return.map_or(String::new(), |t| t.to_string());
        for o in &r.outcomes {
            w.write_record([
                o.unit_id.to_string(),
                r.rule.clone(),
                target.clone(),
                o.terminal.name().to_string(),
                o.steps_operated.to_string(),
                o.total_return.to_string(),
                o.draw.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
