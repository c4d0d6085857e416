//! Target-return sweeps, correlation summaries, CSV tables and SVG charts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::CostModel;
use crate::policy::{Conditioning, PolicyModel};
use crate::rul_estimator::RulModel;
use crate::simenv::{evaluate, DecisionRule, EvalRecord};
use crate::trajdata::Trajectory;

pub const DEFAULT_GRID_STEPS: usize = 25;
pub const CSV_COLUMNS: [&str; 6] = ["rule", "target_return", "mean", "std", "n_units", "n_draws"];
pub const SVG_WIDTH: f64 = 960.0;
pub const SVG_HEIGHT: f64 = 540.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCurve {
    pub label: String,
    pub grid: Vec<f64>,
    pub records: Vec<EvalRecord>,
    pub baselines: Vec<EvalRecord>,
    pub argmax_target: f64,
}

impl SweepCurve {
    pub fn means(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean).collect()
    }

    pub fn argmax_mean(&self) -> f64 {
        self.records
            .iter()
            .find(|r| r.target_return == Some(self.argmax_target))
            .map_or(f64::NAN, |r| r.mean)
    }
}

/// `steps` evenly spaced targets over `[0.5 * min_return, 1.5 * max_return]`.
pub fn default_grid(min_return: f64, max_return: f64, steps: usize) -> Result<Vec<f64>> {
    linspace(0.5 * min_return, 1.5 * max_return, steps)
}

pub fn linspace(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config("grid needs at least one finite point".into()));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    if !(hi > lo) {
        return Err(Error::Config(format!("grid bounds must increase, got [{lo}, {hi}]")));
    }
    let last = steps - 1;
    Ok((0..steps)
        .map(|i| if i == last { hi } else { lo + (hi - lo) * i as f64 / last as f64 })
        .collect())
}

/// Everything a sweep needs besides the grid.
#[derive(Debug, Clone, Copy)]
pub struct SweepSetup<'a> {
    pub policy: &'a PolicyModel,
    /// Estimator for the policy's RUL input.
    pub policy_rul: Option<&'a RulModel>,
    /// Estimator for the estimated-RUL baseline.
    pub baseline_rul: Option<&'a RulModel>,
    pub trajs: &'a [Trajectory],
    pub cost: &'a CostModel,
    pub n_draws: usize,
    pub mode: Conditioning,
}

impl<'a> SweepSetup<'a> {
    fn policy_rule(&self, target: f64) -> DecisionRule<'a> {
        DecisionRule::Policy {
            policy: self.policy,
            target,
            mode: self.mode,
            rul: self.policy_rul,
        }
    }

    pub fn evaluate_target(&self, target: f64) -> Result<EvalRecord> {
        evaluate(self.trajs, &self.policy_rule(target), self.cost, self.n_draws)
    }

    /// Baselines at the cost model's lead time. The oracle is skipped when a
    /// trajectory has no failure point; the estimated-RUL rule needs an
    /// estimator.
    pub fn baselines(&self) -> Result<Vec<EvalRecord>> {
        let thr = self.cost.lead_time as f64;
        let mut rules = vec![DecisionRule::NoAction];
        if self.trajs.iter().all(|t| t.ends_in_failure) {
            rules.push(DecisionRule::OracleRul(thr));
        }
        if let Some(m) = self.baseline_rul {
            rules.push(DecisionRule::EstimatedRul(m, thr));
        }
        rules
            .iter()
            .map(|r| evaluate(self.trajs, r, self.cost, self.n_draws))
            .collect()
    }

    pub fn sweep(&self, grid: &[f64]) -> Result<SweepCurve> {
        if grid.is_empty() {
            return Err(Error::Config("empty target grid".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("target grid must be strictly increasing".into()));
        }
        let records = crate::par::try_map(grid, |&t| self.evaluate_target(t))?;
        let baselines = self.baselines()?;
        let mut best = 0;
        for (i, r) in records.iter().enumerate() {
            if r.mean > records[best].mean {
                best = i;
            }
        }
        Ok(SweepCurve {
            label: self.policy_rule(0.0).name().to_string(),
            grid: grid.to_vec(),
            records,
            baselines,
            argmax_target: grid[best],
        })
    }

    /// Correlation on the training-return support and the out-of-distribution
    /// probe at three times the largest training return.
    pub fn summary(&self, curve: &SweepCurve) -> Result<SweepSummary> {
        let (lo, hi) = (self.policy.min_train_return, self.policy.max_train_return);
        let (ts, ms): (Vec<f64>, Vec<f64>) = curve
            .grid
            .iter()
            .zip(curve.means())
            .filter(|(t, _)| (lo..=hi).contains(*t))
            .map(|(t, m)| (*t, m))
            .unzip();
        let in_dist_correlation = correlation(&ts, &ms).ok();
        let ood_target = 3.0 * hi;
        let ood_mean = self.evaluate_target(ood_target)?.mean;
        let baseline = |name: &str| curve.baselines.iter().find(|b| b.rule == name).map(|b| b.mean);
        Ok(SweepSummary {
            rule: curve.label.clone(),
            mode: self.mode,
            argmax_target: curve.argmax_target,
            argmax_mean: curve.argmax_mean(),
            in_dist_points: ts.len(),
            in_dist_correlation,
            ood_target,
            ood_mean,
            no_action_mean: baseline("no_action"),
            oracle_mean: baseline("oracle_rul"),
            estimated_rul_mean: baseline("estimated_rul"),
            min_train_return: lo,
            max_train_return: hi,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rule: String,
    pub mode: Conditioning,
    pub argmax_target: f64,
    pub argmax_mean: f64,
    pub in_dist_points: usize,
    /// `None` when fewer than two grid points fall on the training support or
    /// their means do not vary.
    pub in_dist_correlation: Option<f64>,
    pub ood_target: f64,
    pub ood_mean: f64,
    pub no_action_mean: Option<f64>,
    pub oracle_mean: Option<f64>,
    pub estimated_rul_mean: Option<f64>,
    pub min_train_return: f64,
    pub max_train_return: f64,
}

/// Pearson correlation coefficient.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            context: "correlation",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Undefined("correlation needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("correlation is undefined for a constant series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One row per grid point of every curve, then one row per distinct
/// baseline.
pub fn emit_csv(curves: &[SweepCurve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    let mut row = |r: &EvalRecord| {
        w.write_record([
            r.rule.clone(),
            r.target_return.map_or(String::new(), |t| t.to_string()),
            r.mean.to_string(),
            r.std.to_string(),
            r.n_units.to_string(),
            r.n_draws.to_string(),
        ])
    };
    for c in curves {
        for r in &c.records {
            row(r)?;
        }
    }
    let mut seen = Vec::new();
    for c in curves {
        for b in &c.baselines {
            if !seen.contains(&b.rule) {
                seen.push(b.rule.clone());
                row(b)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Affine map from data coordinates to the SVG plot area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub bottom: f64,
}

impl Axes {
    fn fit(curves: &[SweepCurve]) -> Self {
        let xs = curves.iter().flat_map(|c| c.grid.iter().copied());
        let ys = curves
            .iter()
            .flat_map(|c| c.records.iter().chain(&c.baselines).map(|r| r.mean));
        let (x_min, x_max) = padded_range(xs, 0.0);
        let (y_min, y_max) = padded_range(ys, 0.05);
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
            left: 90.0,
            right: 720.0,
            top: 40.0,
            bottom: 470.0,
        }
    }

    pub fn x(&self, v: f64) -> f64 {
        self.left + (v - self.x_min) / (self.x_max - self.x_min) * (self.right - self.left)
    }

    pub fn y(&self, v: f64) -> f64 {
        self.bottom - (v - self.y_min) / (self.y_max - self.y_min) * (self.bottom - self.top)
    }
}

fn padded_range(vals: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo > 0.0 {
        let p = (hi - lo) * pad;
        (lo - p, hi + p)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const BASELINE_COLORS: [&str; 3] = ["#444444", "#7f7f7f", "#bcbd22"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean realized return against target return: a polyline per curve and a
/// dashed horizontal line per baseline.
pub fn emit_svg(curves: &[SweepCurve]) -> Result<String> {
    if curves.is_empty() || curves.iter().any(|c| c.records.is_empty()) {
        return Err(Error::Validation("nothing to plot".into()));
    }
    let ax = Axes::fit(curves);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        ax.left,
        ax.top,
        ax.right - ax.left,
        ax.bottom - ax.top
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = ax.x_min + f * (ax.x_max - ax.x_min);
        let px = ax.x(xv);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{b5}" stroke="black"/><text x="{px:.2}" y="{bt}" text-anchor="middle">{xv:.1}</text>"#,
            b = ax.bottom,
            b5 = ax.bottom + 5.0,
            bt = ax.bottom + 20.0
        );
        let yv = ax.y_min + f * (ax.y_max - ax.y_min);
        let py = ax.y(yv);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{l5}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/><text x="{lt}" y="{py:.2}" text-anchor="end" dominant-baseline="middle">{yv:.1}</text>"#,
            l = ax.left,
            l5 = ax.left - 5.0,
            lt = ax.left - 8.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">expected reward (target return)</text>"#,
        (ax.left + ax.right) / 2.0,
        SVG_HEIGHT - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">average cumulative reward</text>"#,
        (ax.top + ax.bottom) / 2.0,
        (ax.top + ax.bottom) / 2.0
    );

    let mut legend: Vec<(String, String, bool)> = Vec::new();
    let mut seen = Vec::new();
    let mut bi = 0;
    for c in curves {
        for b in &c.baselines {
            if seen.contains(&b.rule) {
                continue;
            }
            seen.push(b.rule.clone());
            let color = BASELINE_COLORS[bi % BASELINE_COLORS.len()];
            bi += 1;
            let py = ax.y(b.mean);
            let _ = writeln!(
                s,
                r#"<line class="baseline" data-rule="{r}" x1="{}" y1="{py:.4}" x2="{}" y2="{py:.4}" stroke="{color}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                ax.left,
                ax.right,
                r = escape(&b.rule)
            );
            legend.push((b.rule.clone(), color.to_string(), true));
        }
    }
    for (ci, c) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let pts: Vec<String> = c
            .grid
            .iter()
            .zip(&c.records)
            .map(|(t, r)| format!("{:.4},{:.4}", ax.x(*t), ax.y(r.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-rule="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&c.label),
            pts.join(" ")
        );
        legend.push((c.label.clone(), color.to_string(), false));
    }
    let lx = ax.right + 20.0;
    for (i, (name, color, dashed)) in legend.iter().enumerate() {
        let ly = ax.top + 10.0 + 22.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{ly}" dominant-baseline="middle">{}</text>"#,
            lx + 30.0,
            lx + 38.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rule: &str, target: Option<f64>, mean: f64) -> EvalRecord {
        EvalRecord {
            rule: rule.into(),
            target_return: target,
            returns: vec![mean],
            mean,
            std: 0.0,
            n_units: 1,
            n_draws: 1,
            outcomes: vec![],
        }
    }

    fn curve(grid: &[f64], means: &[f64]) -> SweepCurve {
        SweepCurve {
            label: "policy".into(),
            grid: grid.to_vec(),
            records: grid.iter().zip(means).map(|(t, m)| rec("policy", Some(*t), *m)).collect(),
            baselines: vec![rec("no_action", None, -100.0), rec("oracle_rul", None, 90.5)],
            argmax_target: grid[0],
        }
    }

    #[test]
    fn correlation_examples() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert!((correlation(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((correlation(&t, &neg).unwrap() + 1.0).abs() < 1e-15);
        let r = correlation(&[0.0, 1.0, 2.0], &[0.0, 2.0, 3.0]).unwrap();
        let oracle = 3.0 / (2.0f64.sqrt() * (14.0f64 / 3.0).sqrt());
        assert!((r - oracle).abs() < 1e-12);
        assert!((r - 0.982).abs() < 5e-4);
        assert!(correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(correlation(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn grids() {
        let g = default_grid(-100.0, 80.0, 25).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], -50.0);
        assert_eq!(g[24], 120.0);
        assert_eq!(linspace(3.0, 3.0, 1).unwrap(), vec![3.0]);
        assert!(linspace(3.0, 1.0, 4).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = curve(&[-10.0, 0.5, 33.25], &[1.0 / 3.0, -7.125, 2.0f64.sqrt()]);
        let text = emit_csv(&[c.clone()]).unwrap();
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 3 + 2);
        for (row, rec) in rows.iter().zip(&c.records) {
            assert_eq!(row[1].parse::<f64>().unwrap(), rec.target_return.unwrap());
            assert_eq!(row[2].parse::<f64>().unwrap(), rec.mean);
        }
        assert_eq!(&rows[3][0], "no_action");
        assert_eq!(&rows[3][1], "");
    }

    #[test]
    fn svg_is_well_formed_and_ordered() {
        let c = curve(&[0.0, 10.0, 20.0, 30.0], &[5.0, 40.0, 12.0, -3.0]);
        let svg = emit_svg(&[c.clone()]).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let root = doc.root_element();
        assert_eq!(root.attribute("viewBox"), Some("0 0 960 540"));
        let poly = doc.descendants().find(|n| n.has_tag_name("polyline")).unwrap();
        let pts: Vec<(f64, f64)> = poly
            .attribute("points")
            .unwrap()
            .split_whitespace()
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        assert_eq!(pts.len(), 4);
        for i in 0..4 {
            for j in 0..4 {
                let (mi, mj) = (c.records[i].mean, c.records[j].mean);
                if mi > mj {
                    assert!(pts[i].1 < pts[j].1);
                }
            }
        }
        let dashed = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("baseline"))
            .count();
        assert_eq!(dashed, 2);
        assert!(emit_svg(&[]).is_err());
    }

    #[test]
    fn single_point_svg() {
        let c = curve(&[7.0], &[1.0]);
        let svg = emit_svg(&[c]).unwrap();
        assert!(roxmltree::Document::parse(&svg).is_ok());
    }
}
