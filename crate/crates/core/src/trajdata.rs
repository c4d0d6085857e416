//! Run-to-failure trajectories: C-MAPSS text I/O, the train/test split and a
//! seeded synthetic degradation generator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const N_SETTINGS: usize = 3;
pub const N_SENSORS: usize = 21;
/// unit, cycle, settings, sensors
pub const MIN_COLUMNS: usize = 2 + N_SETTINGS + N_SENSORS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    pub settings: [f64; N_SETTINGS],
    pub sensors: [f64; N_SENSORS],
}

impl CycleRecord {
    fn is_finite(&self) -> bool {
        self.settings.iter().chain(&self.sensors).all(|v| v.is_finite())
    }
}

/// One unit's life. Training units run to failure; test units are truncated
/// before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub unit_id: u32,
    pub cycles: Vec<CycleRecord>,
    pub ends_in_failure: bool,
}

impl Trajectory {
    pub fn new(unit_id: u32, cycles: Vec<CycleRecord>, ends_in_failure: bool) -> Result<Self> {
        let t = Self {
            unit_id,
            cycles,
            ends_in_failure,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles.is_empty() {
            return Err(Error::Validation(format!("unit {} has no cycles", self.unit_id)));
        }
        for (i, c) in self.cycles.iter().enumerate() {
            if c.cycle as usize != i + 1 {
                return Err(Error::Validation(format!(
                    "unit {}: cycle indices must run 1, 2, 3, ... without gaps (found {} at position {})",
                    self.unit_id,
                    c.cycle,
                    i + 1
                )));
            }
            if !c.is_finite() {
                return Err(Error::Validation(format!(
                    "unit {}: non-finite value at cycle {}",
                    self.unit_id, c.cycle
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn sensor_rows(&self) -> impl Iterator<Item = &[f64; N_SENSORS]> {
        self.cycles.iter().map(|c| &c.sensors)
    }
}

/// Parse whitespace-delimited C-MAPSS text. Lines starting with `#` and blank
/// lines are skipped; columns beyond the 26th are ignored.
pub fn parse_cmapss(text: &str, ends_in_failure: bool) -> Result<Vec<Trajectory>> {
    let mut order: Vec<u32> = Vec::new();
    let mut by_unit: HashMap<u32, Vec<CycleRecord>> = HashMap::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut vals = [0.0f64; MIN_COLUMNS];
        let mut n = 0;
        for tok in trimmed.split_whitespace() {
            if n == MIN_COLUMNS {
                break;
            }
            vals[n] = tok.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("field {} is not numeric: {tok:?}", n + 1),
            })?;
            n += 1;
        }
        if n < MIN_COLUMNS {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least {MIN_COLUMNS} columns, found {n}"),
            });
        }
        let unit = as_index(vals[0]).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("unit id must be a non-negative integer, got {}", vals[0]),
        })?;
        let cycle = as_index(vals[1]).filter(|&c| c >= 1).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("cycle index must be a positive integer, got {}", vals[1]),
        })?;
        let mut settings = [0.0; N_SETTINGS];
        settings.copy_from_slice(&vals[2..2 + N_SETTINGS]);
        let mut sensors = [0.0; N_SENSORS];
        sensors.copy_from_slice(&vals[2 + N_SETTINGS..MIN_COLUMNS]);

        by_unit
            .entry(unit)
            .or_insert_with(|| {
                order.push(unit);
                Vec::new()
            })
            .push(CycleRecord {
                cycle,
                settings,
                sensors,
            });
    }

    order
        .into_iter()
        .map(|u| Trajectory::new(u, by_unit.remove(&u).unwrap_or_default(), ends_in_failure))
        .collect()
}

fn as_index(v: f64) -> Option<u32> {
    (v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64).then_some(v as u32)
}

pub fn read_cmapss(path: &Path, ends_in_failure: bool) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    parse_cmapss(&text, ends_in_failure)
}

/// Serialize in C-MAPSS column order. Values use the shortest exact decimal
/// representation, so parsing the output gives back identical trajectories.
pub fn write_cmapss(trajs: &[Trajectory], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        for l in h.lines() {
            let _ = writeln!(out, "# {l}");
        }
    }
    for t in trajs {
        for c in &t.cycles {
            let _ = write!(out, "{} {}", t.unit_id, c.cycle);
            for v in c.settings.iter().chain(&c.sensors) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Split into (train, test): the first 250 units train when there are more
/// than 250, otherwise the first floor(25N/26).
pub fn split_train_test(trajs: Vec<Trajectory>) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let n = trajs.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 trajectories to split, got {n}"
        )));
    }
    if trajs.windows(2).any(|w| w[0].unit_id >= w[1].unit_id) {
        return Err(Error::Validation(
            "trajectories must be ordered by increasing unit id".into(),
        ));
    }
    let n_train = split_point(n);
    let mut train = trajs;
    let test = train.split_off(n_train);
    Ok((train, test))
}

pub fn split_point(n: usize) -> usize {
    if n > 250 {
        250
    } else {
        25 * n / 26
    }
}

/// Synthetic multi-regime degradation.
///
/// Each unit carries a hidden health `h` that starts in
/// `initial_health_range` and falls by a per-unit wear rate every cycle. The
/// unit fails on the first cycle with `h < failure_threshold`. Each cycle
/// draws an operating regime uniformly; the sensors read
/// `offset[r][i] * (1 + sensitivity[i] * max(0, 1 - h)^drift_exponent)` plus
/// Gaussian noise with standard deviation `noise_scale * |offset[r][i]|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_units: usize,
    pub n_regimes: usize,
    pub wear_rate_range: (f64, f64),
    pub initial_health_range: (f64, f64),
    pub failure_threshold: f64,
    pub noise_scale: f64,
    /// Standard deviation of the operating-setting jitter around each regime
    /// center.
    pub setting_noise: f64,
    pub regime_settings: Vec<[f64; N_SETTINGS]>,
    pub sensor_regime_offsets: Vec<[f64; N_SENSORS]>,
    pub sensor_sensitivity: [f64; N_SENSORS],
    pub drift_exponent: f64,
    pub first_unit_id: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let (regime_settings, sensor_regime_offsets) = regime_table(6);
        Self {
            n_units: 26,
            n_regimes: 6,
            wear_rate_range: (0.0055, 0.0075),
            initial_health_range: (1.0, 1.2),
            failure_threshold: 0.2,
            noise_scale: 0.002,
            setting_noise: 0.001,
            regime_settings,
            sensor_regime_offsets,
            sensor_sensitivity: DEFAULT_SENSITIVITY,
            drift_exponent: 1.5,
            first_unit_id: 1,
            seed: 0,
        }
    }
}

/// Degradation response per sensor. The zeros mirror the flat channels of
/// the turbofan data.
const DEFAULT_SENSITIVITY: [f64; N_SENSORS] = [
    0.0, 0.012, 0.018, 0.025, 0.0, 0.0, -0.015, 0.008, 0.02, 0.0, 0.03, -0.016, 0.008, 0.015,
    0.022, 0.0, 0.014, 0.0, 0.0, -0.02, -0.018,
];

const BASE_SENSORS: [f64; N_SENSORS] = [
    518.67, 642.68, 1590.5, 1408.9, 14.62, 21.61, 553.4, 2388.1, 9065.0, 1.3, 47.5, 521.4, 2388.1,
    8143.8, 8.44, 0.03, 393.2, 2388.0, 100.0, 38.8, 23.3,
];

const FD002_SETTINGS: [[f64; N_SETTINGS]; 6] = [
    [0.0, 0.0, 100.0],
    [10.0, 0.25, 100.0],
    [20.0, 0.7, 100.0],
    [25.0, 0.62, 60.0],
    [35.0, 0.84, 100.0],
    [42.0, 0.84, 100.0],
];

/// Regime centers and multiplicative sensor offsets for `k` regimes. The
/// first six centers are the turbofan FD002 operating points.
pub fn regime_table(k: usize) -> (Vec<[f64; N_SETTINGS]>, Vec<[f64; N_SENSORS]>) {
    let settings = (0..k)
        .map(|r| {
            if r < FD002_SETTINGS.len() {
                FD002_SETTINGS[r]
            } else {
                let j = r as f64;
                [5.0 * j, 0.1 * (j % 9.0), 60.0 + 10.0 * (j % 5.0)]
            }
        })
        .collect();
    let offsets = (0..k)
        .map(|r| {
            let mut row = [0.0; N_SENSORS];
            for (i, v) in row.iter_mut().enumerate() {
                let wobble = ((i * 7 + r * 3) % 5) as f64 * 0.04;
                *v = BASE_SENSORS[i] * (0.6 + 0.12 * r as f64 + wobble);
            }
            row
        })
        .collect();
    (settings, offsets)
}

impl SynthConfig {
    pub fn with_regimes(mut self, k: usize) -> Self {
        let (s, o) = regime_table(k);
        self.n_regimes = k;
        self.regime_settings = s;
        self.sensor_regime_offsets = o;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_regimes == 0 {
            return bad("n_regimes must be at least 1".into());
        }
        if self.regime_settings.len() != self.n_regimes
            || self.sensor_regime_offsets.len() != self.n_regimes
        {
            return bad(format!(
                "regime tables must have {} rows (settings: {}, offsets: {})",
                self.n_regimes,
                self.regime_settings.len(),
                self.sensor_regime_offsets.len()
            ));
        }
        let (lo, hi) = self.wear_rate_range;
        if !(hi > 0.0) || !(lo > 0.0) || lo > hi {
            return bad(format!("wear_rate_range must be positive and ordered, got [{lo}, {hi}]"));
        }
        if !(self.failure_threshold > 0.0) {
            return bad("failure_threshold must be positive".into());
        }
        let (h0, h1) = self.initial_health_range;
        if !(h0 >= self.failure_threshold) || h0 > h1 {
            return bad(format!(
                "initial_health_range [{h0}, {h1}] must be ordered and start at or above the failure threshold"
            ));
        }
        if !(self.noise_scale >= 0.0) || !(self.setting_noise >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if !(self.drift_exponent > 0.0) {
            return bad("drift_exponent must be positive".into());
        }
        Ok(())
    }

    /// Closed-form bounds on generated lifetimes (cycles, failure cycle
    /// included).
    pub fn lifetime_bounds(&self) -> (usize, usize) {
        let life = |h0: f64, w: f64| ((h0 - self.failure_threshold) / w).floor() as usize + 2;
        (
            life(self.initial_health_range.0, self.wear_rate_range.1),
            life(self.initial_health_range.1, self.wear_rate_range.0),
        )
    }
}

/// Health at 1-based `cycle` for a unit with initial health `h0` and wear `w`.
pub fn health_at(h0: f64, w: f64, cycle: u32) -> f64 {
    h0 - (cycle - 1) as f64 * w
}

/// Per-unit hidden state, exposed for tests and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitParams {
    pub initial_health: f64,
    pub wear_rate: f64,
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<Trajectory>> {
    Ok(synth_generate_with_params(config)?
        .into_iter()
        .map(|(t, _)| t)
        .collect())
}

pub fn synth_generate_with_params(config: &SynthConfig) -> Result<Vec<(Trajectory, UnitParams)>> {
    config.validate()?;
    let ids: Vec<u32> = (0..config.n_units as u32)
        .map(|i| config.first_unit_id + i)
        .collect();
    let units = crate::par::map(&ids, |&id| synth_unit(config, id));
    units.into_iter().collect()
}

const MAX_SYNTH_CYCLES: u32 = 1_000_000;

fn synth_unit(cfg: &SynthConfig, unit_id: u32) -> Result<(Trajectory, UnitParams)> {
    let mut rng = seeds::stream(cfg.seed, "synth-unit", &[unit_id as u64]);
    let h0 = uniform(&mut rng, cfg.initial_health_range);
    let w = uniform(&mut rng, cfg.wear_rate_range);
    let mut cycles = Vec::new();
    let mut cycle = 1u32;
    loop {
        let h = health_at(h0, w, cycle);
        let r = rng.random_range(0..cfg.n_regimes);
        let center = &cfg.regime_settings[r];
        let mut settings = [0.0; N_SETTINGS];
        for (s, c) in settings.iter_mut().zip(center) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *s = c + cfg.setting_noise * z;
        }
        let wear = (1.0 - h).max(0.0).powf(cfg.drift_exponent);
        let mut sensors = [0.0; N_SENSORS];
        for (i, s) in sensors.iter_mut().enumerate() {
            let offset = cfg.sensor_regime_offsets[r][i];
            let z: f64 = StandardNormal.sample(&mut rng);
            *s = offset * (1.0 + cfg.sensor_sensitivity[i] * wear) + cfg.noise_scale * offset.abs() * z;
        }
        cycles.push(CycleRecord {
            cycle,
            settings,
            sensors,
        });
        if h < cfg.failure_threshold {
            break;
        }
        cycle += 1;
        if cycle > MAX_SYNTH_CYCLES {
            return Err(Error::Config(format!(
                "unit {unit_id} did not fail within {MAX_SYNTH_CYCLES} cycles"
            )));
        }
    }
    Ok((
        Trajectory::new(unit_id, cycles, true)?,
        UnitParams {
            initial_health: h0,
            wear_rate: w,
        },
    ))
}

fn uniform(rng: &mut seeds::Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}
