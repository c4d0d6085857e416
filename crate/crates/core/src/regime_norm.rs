//! Operating-regime normalization.
//!
//! Operating settings are clustered with k-means; each sensor's expected value
//! in a regime is the mean of that sensor over the training cycles assigned to
//! it. Normalized readings are ratios `s / s_hat`, so a reading at its regime
//! mean maps to 1.0 and only the degradation trend remains.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::trajdata::{Trajectory, N_SENSORS, N_SETTINGS};

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-8;
/// Fitted means smaller than this in magnitude cannot be divided by.
pub const MIN_ABS_MEAN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeNormalizer {
    pub centroids: Vec<[f64; N_SETTINGS]>,
    pub regime_sensor_means: Vec<[f64; N_SENSORS]>,
}

impl RegimeNormalizer {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Nearest centroid; ties go to the lowest regime index.
    pub fn assign(&self, settings: &[f64; N_SETTINGS]) -> usize {
        nearest(&self.centroids, settings).0
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.k());
        for row in &self.centroids {
            push_row(&mut s, row);
        }
        for row in &self.regime_sensor_means {
            push_row(&mut s, row);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let k: usize = lines
            .next()
            .and_then(|l| l.trim().parse().ok())
            .ok_or_else(|| Error::Format("normalizer header must be the regime count".into()))?;
        let mut centroids = Vec::with_capacity(k);
        for _ in 0..k {
            centroids.push(parse_row::<N_SETTINGS>(lines.next())?);
        }
        let mut means = Vec::with_capacity(k);
        for _ in 0..k {
            means.push(parse_row::<N_SENSORS>(lines.next())?);
        }
        Ok(Self {
            centroids,
            regime_sensor_means: means,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn push_row(s: &mut String, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
    let _ = writeln!(s, "{}", cells.join(" "));
}

fn parse_row<const N: usize>(line: Option<&str>) -> Result<[f64; N]> {
    let line = line.ok_or_else(|| Error::Format("normalizer table is truncated".into()))?;
    let mut out = [0.0; N];
    let mut n = 0;
    for tok in line.split_whitespace() {
        if n == N {
            return Err(Error::Format(format!("expected {N} values per row")));
        }
        out[n] = tok
            .parse()
            .map_err(|_| Error::Format(format!("bad number {tok:?}")))?;
        n += 1;
    }
    if n != N {
        return Err(Error::Format(format!("expected {N} values per row, got {n}")));
    }
    Ok(out)
}

fn dist2(a: &[f64; N_SETTINGS], b: &[f64; N_SETTINGS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[[f64; N_SETTINGS]], p: &[f64; N_SETTINGS]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Fit regime centroids (k-means++ seeding, Lloyd iterations) and per-regime
/// sensor means over every cycle of `train`.
pub fn fit_regimes(train: &[Trajectory], k: usize, seed: u64) -> Result<RegimeNormalizer> {
    if k == 0 {
        return Err(Error::Config("regime count must be at least 1".into()));
    }
    let points: Vec<[f64; N_SETTINGS]> = train
        .iter()
        .flat_map(|t| t.cycles.iter().map(|c| c.settings))
        .collect();
    let mut distinct = HashSet::new();
    for p in &points {
        distinct.insert(p.map(f64::to_bits));
        if distinct.len() >= k {
            break;
        }
    }
    if distinct.len() < k {
        return Err(Error::Validation(format!(
            "only {} distinct operating settings for {k} regimes",
            distinct.len()
        )));
    }

    let mut rng = seeds::rng(seed);
    let mut centroids = kmeans_pp(&points, k, &mut rng);
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let mut served = vec![0.0f64; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (r, d) = nearest(&centroids, p);
            assignment[i] = r;
            served[i] = d;
        }
        let mut sums = vec![[0.0; N_SETTINGS]; k];
        let mut counts = vec![0usize; k];
        for (p, &r) in points.iter().zip(&assignment) {
            counts[r] += 1;
            for (s, v) in sums[r].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for r in 0..k {
            let next = if counts[r] == 0 {
                // empty regime: restart it at the point worst served by the
                // current centroids
                let mut far = 0;
                for (i, &d) in served.iter().enumerate() {
                    if d > served[far] {
                        far = i;
                    }
                }
                served[far] = -1.0;
                points[far]
            } else {
                sums[r].map(|s| s / counts[r] as f64)
            };
            shift = shift.max(dist2(&centroids[r], &next).sqrt());
            centroids[r] = next;
        }
        if shift < TOLERANCE {
            break;
        }
    }

    let mut sums = vec![[0.0; N_SENSORS]; k];
    let mut counts = vec![0usize; k];
    for t in train {
        for c in &t.cycles {
            let r = nearest(&centroids, &c.settings).0;
            counts[r] += 1;
            for (s, v) in sums[r].iter_mut().zip(&c.sensors) {
                *s += v;
            }
        }
    }
    if let Some(r) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Validation(format!(
            "regime {r} has no training cycles after clustering"
        )));
    }
    let means: Vec<[f64; N_SENSORS]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| s.map(|v| v / n as f64))
        .collect();
    if means.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite regime sensor mean".into()));
    }
    Ok(RegimeNormalizer {
        centroids,
        regime_sensor_means: means,
    })
}

fn kmeans_pp(points: &[[f64; N_SETTINGS]], k: usize, rng: &mut seeds::Rng) -> Vec<[f64; N_SETTINGS]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Divide each sensor by its regime's fitted mean. Settings, cycle indices and
/// length are untouched.
pub fn normalize(traj: &Trajectory, norm: &RegimeNormalizer) -> Result<Trajectory> {
    let mut out = traj.clone();
    for c in &mut out.cycles {
        let r = norm.assign(&c.settings);
        let means = &norm.regime_sensor_means[r];
        for (i, (s, m)) in c.sensors.iter_mut().zip(means).enumerate() {
            if m.abs() < MIN_ABS_MEAN {
                return Err(Error::Normalization { sensor: i, regime: r });
            }
            *s /= m;
        }
    }
    Ok(out)
}

pub fn normalize_all(trajs: &[Trajectory], norm: &RegimeNormalizer) -> Result<Vec<Trajectory>> {
    crate::par::try_map(trajs, |t| normalize(t, norm))
}
