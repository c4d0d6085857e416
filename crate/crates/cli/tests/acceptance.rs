//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 4 needs the FD002 files: set RULRL_FD002_DIR to a directory
//! holding train_FD002.txt and test_FD002.txt.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use rulrl::labeling::{build_dataset, compute_rtg, CostModel, LabelConfig};
use rulrl::neural::{grad_check, mlp_init, Head, Loss, Sample};
use rulrl::policy::{train_policy, Conditioning, FeatureLayout, PolicyConfig, PolicyModel};
use rulrl::regime_norm::{fit_regimes, normalize, normalize_all};
use rulrl::rul_estimator::{evaluate_rul, train_rul, RulConfig};
use rulrl::seeds;
use rulrl::simenv::{evaluate, rollout, DecisionRule, RolloutTerminal};
use rulrl::sweep_report::{default_grid, SweepSetup, SweepSummary, DEFAULT_GRID_STEPS};
use rulrl::trajdata::{
    read_cmapss, split_train_test, synth_generate, CycleRecord, SynthConfig, Trajectory, N_SENSORS,
};

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn failed(e: impl std::fmt::Display) -> Outcome {
    judge(false, format!("error: {e}"))
}

/// Runs one criterion and folds the runtime limit into its verdict.
fn check(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let mut out = f();
    let took = t0.elapsed();
    if matches!(out.verdict, Verdict::Pass) && took > limit {
        out.verdict = Verdict::Fail;
        out.detail.push_str(&format!("; over the {limit:?} limit"));
    }
    let tag = match out.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("criterion {n} [{tag}] {name} ({:.1}s): {}", took.as_secs_f64(), out.detail);
    !matches!(out.verdict, Verdict::Fail)
}

fn flat_unit(unit: u32, len: usize, fails: bool) -> Trajectory {
    let cycles = (0..len)
        .map(|k| CycleRecord {
            cycle: k as u32 + 1,
            settings: [0.0; 3],
            sensors: [1.0; N_SENSORS],
        })
        .collect();
    Trajectory::new(unit, cycles, fails).unwrap()
}

fn random_batch(rng: &mut seeds::Rng, dim: usize, n: usize, classes: bool) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if classes {
                Sample::class(x, i % 2)
            } else {
                Sample::value(x, rng.random_range(-2.0..2.0))
            }
        })
        .collect()
}

fn c1_gradients() -> Outcome {
    // Short window keeps finite differences over every parameter quick;
    // the hidden width and head match the trained nets.
    let layout = FeatureLayout {
        window: 4,
        obs_dim: N_SENSORS,
        uses_rul: true,
    };
    let rul_in = 4 * N_SENSORS;
    let mut worst_policy = 0.0f64;
    let mut worst_rul = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = seeds::stream(seed, "acceptance-grad", &[]);
        let mut run = || -> rulrl::Result<(f64, f64)> {
            let p = mlp_init(&[layout.input_dim(), 100, 2], Head::Logits, seed)?;
            let r = mlp_init(&[rul_in, 100, 1], Head::Linear, seed)?;
            let pb = random_batch(&mut rng, layout.input_dim(), 6, true);
            let rb = random_batch(&mut rng, rul_in, 6, false);
            Ok((
                grad_check(&p, &pb, Loss::CrossEntropy)?,
                grad_check(&r, &rb, Loss::SquaredError)?,
            ))
        };
        match run() {
            Ok((p, r)) => {
                worst_policy = worst_policy.max(p);
                worst_rul = worst_rul.max(r);
            }
            Err(e) => return failed(e),
        }
    }
    judge(
        worst_policy < 1e-4 && worst_rul < 1e-4,
        format!("max relative error policy {worst_policy:.2e}, rul {worst_rul:.2e} (limit 1e-4)"),
    )
}

fn c2_rtg() -> Outcome {
    let mut rng = seeds::stream(2, "acceptance-rtg", &[]);
    let mut mismatches = 0;
    let (mut h_zero, mut h_long) = (0, 0);
    for case in 0..1000 {
        let n = rng.random_range(1..=80usize);
        let rewards: Vec<f64> = (0..n)
            .map(|_| match rng.random_range(0..4) {
                0 => -250.0,
                1 => -25.0,
                _ => rng.random_range(0.5..1.5),
            })
            .collect();
        let h = match case % 4 {
            0 => 0,
            1 => n + rng.random_range(0..20usize),
            _ => rng.random_range(0..n),
        };
        h_zero += usize::from(h == 0);
        h_long += usize::from(h >= n);
        let got = compute_rtg(&rewards, h);
        let want: Vec<f64> = (0..n)
            .map(|k| {
                let mut s = 0.0;
                for (j, r) in rewards.iter().enumerate() {
                    if j >= k && j <= k + h {
                        s += r;
                    }
                }
                s
            })
            .collect();
        // same summation order, so equality is exact
        if got != want {
            mismatches += 1;
        }
    }
    judge(
        mismatches == 0 && h_zero > 0 && h_long > 0,
        format!("{mismatches} mismatches in 1000 cases ({h_zero} with H = 0, {h_long} with H >= length)"),
    )
}

fn c3_accounting() -> Outcome {
    let cost = CostModel::zero_jitter();
    let lead = cost.lead_time;
    let mut checked = 0;
    let mut wrong = Vec::new();
    for len in 2..=60usize {
        let t = flat_unit(len as u32, len, true);
        let l = len as f64;
        let mut expect = |rule: DecisionRule, want: f64, terminal: RolloutTerminal| {
            checked += 1;
            match rollout(&t, &rule, &cost, 0) {
                Ok(o) if o.total_return == want && o.terminal == terminal => {}
                Ok(o) => wrong.push(format!("L={len} {}: {} ({:?})", rule.name(), o.total_return, o.terminal)),
                Err(e) => wrong.push(format!("L={len}: {e}")),
            }
        };
        expect(DecisionRule::NoAction, l - 250.0, RolloutTerminal::Failure);
        if len > lead {
            expect(DecisionRule::OracleRul(lead as f64), l - 35.0, RolloutTerminal::Repaired);
        }
        // repair after m operated cycles, with at least the lead time left
        for m in 1..len {
            if len - m >= lead {
                expect(DecisionRule::RepairAt(m - 1), m as f64 - 25.0, RolloutTerminal::Repaired);
            }
        }
    }
    judge(
        wrong.is_empty() && checked > 1000,
        format!("{checked} closed-form cases, {} wrong {:?}", wrong.len(), wrong.iter().take(3).collect::<Vec<_>>()),
    )
}

fn c4_fd002() -> Outcome {
    let Ok(dir) = std::env::var("RULRL_FD002_DIR") else {
        return Outcome {
            verdict: Verdict::Skip,
            detail: "RULRL_FD002_DIR not set".into(),
        };
    };
    match fd002(Path::new(&dir)) {
        Ok(o) => o,
        Err(e) => failed(e),
    }
}

fn fd002(dir: &Path) -> rulrl::Result<Outcome> {
    let all = read_cmapss(&dir.join("train_FD002.txt"), true)?;
    let original_test = read_cmapss(&dir.join("test_FD002.txt"), false)?;
    let (train, last) = split_train_test(all)?;
    let cost = CostModel::default();
    let no_action_last = evaluate(&last, &DecisionRule::NoAction, &cost, 10)?.mean;
    let no_action_test = evaluate(&original_test, &DecisionRule::NoAction, &cost, 10)?.mean;
    let oracle = evaluate(&last, &DecisionRule::OracleRul(cost.lead_time as f64), &cost, 10)?.mean;

    // reported only
    let norm = fit_regimes(&train, 6, seeds::derive(4, "normalize"))?;
    let train_n = normalize_all(&train, &norm)?;
    let last_n = normalize_all(&last, &norm)?;
    let rul = train_rul(&train_n, &RulConfig::default())?;
    let estimated = evaluate(&last_n, &DecisionRule::EstimatedRul(&rul, cost.lead_time as f64), &cost, 10)?.mean;
    let ds = build_dataset(&train_n, &LabelConfig::default(), &cost)?;
    let policy = train_policy(&ds, &PolicyConfig::default())?;
    let setup = SweepSetup {
        policy: &policy,
        policy_rul: None,
        baseline_rul: None,
        trajs: &last_n,
        cost: &cost,
        n_draws: 10,
        mode: Conditioning::default(),
    };
    let grid = default_grid(policy.min_train_return, policy.max_train_return, DEFAULT_GRID_STEPS)?;
    let curve = setup.sweep(&grid)?;

    let ok = (no_action_last + 135.7).abs() <= 25.0 && (no_action_test - 96.0).abs() <= 10.0 && (oracle - 88.3).abs() <= 10.0;
    Ok(judge(
        ok,
        format!(
            "no_action last-10 {no_action_last:.1} (-135.7 ± 25), no_action test {no_action_test:.1} (96 ± 10), \
             oracle_rul {oracle:.1} (88.3 ± 10); reported: estimated_rul {estimated:.1}, policy peak {:.1} at target {:.1}",
            curve.argmax_mean(),
            curve.argmax_target
        ),
    ))
}

/// Synthetic setup shared by criteria 5 and 6: 200 training and 20 test
/// failing units, zero-jitter evaluation.
struct Synthetic {
    policy: PolicyModel,
    test: Vec<Trajectory>,
}

fn synthetic() -> rulrl::Result<Synthetic> {
    let cfg = SynthConfig {
        n_units: 220,
        seed: 11,
        ..Default::default()
    };
    let all = synth_generate(&cfg)?;
    let (train, test) = all.split_at(200);
    let norm = fit_regimes(train, cfg.n_regimes, 1)?;
    let train = normalize_all(train, &norm)?;
    let test = normalize_all(test, &norm)?;
    let label = LabelConfig {
        seed: 5,
        ..Default::default()
    };
    let ds = build_dataset(&train, &label, &CostModel::default())?;
    let mut pc = PolicyConfig::default();
    pc.train.seed = 9;
    Ok(Synthetic {
        policy: train_policy(&ds, &pc)?,
        test,
    })
}

fn summaries(s: &Synthetic) -> rulrl::Result<Vec<SweepSummary>> {
    let zero = CostModel::zero_jitter();
    let grid = default_grid(s.policy.min_train_return, s.policy.max_train_return, DEFAULT_GRID_STEPS)?;
    [Conditioning::default(), Conditioning::Decrement]
        .into_iter()
        .map(|mode| {
            let setup = SweepSetup {
                policy: &s.policy,
                policy_rul: None,
                baseline_rul: None,
                trajs: &s.test,
                cost: &zero,
                n_draws: 1,
                mode,
            };
            setup.summary(&setup.sweep(&grid)?)
        })
        .collect()
}

fn c5_quality(all: &[SweepSummary]) -> Outcome {
    let s = &all[0];
    let (Some(oracle), Some(no_action)) = (s.oracle_mean, s.no_action_mean) else {
        return failed("missing baselines");
    };
    let ok = s.argmax_mean >= no_action + 50.0 && s.argmax_mean >= 0.7 * oracle;
    let other = &all[1];
    judge(
        ok,
        format!(
            "{:?} conditioning: peak {:.2} at target {:.1}; need >= no_action {:.2} + 50 and >= 0.7 x oracle {:.2} = {:.2} \
             (reported: {:?} conditioning peak {:.2})",
            s.mode,
            s.argmax_mean,
            s.argmax_target,
            no_action,
            oracle,
            0.7 * oracle,
            other.mode,
            other.argmax_mean
        ),
    )
}

fn c6_conditioning(all: &[SweepSummary]) -> Outcome {
    let s = &all[0];
    let corr_ok = s.in_dist_correlation.is_some_and(|c| c >= 0.5);
    let ood_ok = s.ood_mean <= s.argmax_mean;
    let other = &all[1];
    judge(
        corr_ok && ood_ok,
        format!(
            "{:?} conditioning: correlation {:?} over {} in-distribution targets (need >= 0.5); mean at 3 x max target {:.2} vs peak {:.2} \
             (reported: {:?} conditioning correlation {:?})",
            s.mode,
            s.in_dist_correlation.map(|c| (c * 1000.0).round() / 1000.0),
            s.in_dist_points,
            s.ood_mean,
            s.argmax_mean,
            other.mode,
            other.in_dist_correlation.map(|c| (c * 1000.0).round() / 1000.0)
        ),
    )
}

fn variance(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

fn c7_normalization() -> rulrl::Result<Outcome> {
    let cfg = SynthConfig {
        n_units: 30,
        noise_scale: 0.0,
        setting_noise: 0.0,
        seed: 7,
        ..Default::default()
    };
    let train = synth_generate(&cfg)?;
    let norm = fit_regimes(&train, cfg.n_regimes, 3)?;
    // one probe cycle per regime at the same health
    let mut worst = 0.0f64;
    for health in [1.0, 0.8, 0.5, 0.3] {
        let wear = 1.0f64 - health;
        let cycles: Vec<CycleRecord> = (0..cfg.n_regimes)
            .map(|r| CycleRecord {
                cycle: r as u32 + 1,
                settings: cfg.regime_settings[r],
                sensors: std::array::from_fn(|i| {
                    cfg.sensor_regime_offsets[r][i] * (1.0 + cfg.sensor_sensitivity[i] * wear.max(0.0).powf(cfg.drift_exponent))
                }),
            })
            .collect();
        let raw = Trajectory::new(1, cycles, false)?;
        let normed = normalize(&raw, &norm)?;
        for i in 0..N_SENSORS {
            let rv = variance(&raw.cycles.iter().map(|c| c.sensors[i]).collect::<Vec<_>>());
            let nv = variance(&normed.cycles.iter().map(|c| c.sensors[i]).collect::<Vec<_>>());
            if rv > 0.0 {
                worst = worst.max(nv / rv);
            }
        }
    }
    Ok(judge(
        worst < 0.01,
        format!("largest normalized/raw across-regime variance ratio {:.3e} (limit 1e-2)", worst),
    ))
}

/// Failing unit whose sensor 0 is the remaining life.
fn planted(unit: u32, len: usize) -> Trajectory {
    let cycles = (0..len)
        .map(|k| {
            let mut sensors = [1.0; N_SENSORS];
            sensors[0] = (len - 1 - k) as f64;
            CycleRecord {
                cycle: k as u32 + 1,
                settings: [0.0; 3],
                sensors,
            }
        })
        .collect();
    Trajectory::new(unit, cycles, true).unwrap()
}

fn c8_rul() -> rulrl::Result<Outcome> {
    let mut cfg = RulConfig::default();
    cfg.train.seed = 8;
    let train: Vec<Trajectory> = (1..=20).map(|u| planted(u, 60 + 5 * u as usize)).collect();
    let held: Vec<Trajectory> = (30..36).map(|u| planted(u, 70 + 4 * u as usize)).collect();
    let planted_r2 = evaluate_rul(&train_rul(&train, &cfg)?, &held, 20)?.r2;

    let synth = SynthConfig {
        n_units: 60,
        seed: 12,
        ..Default::default()
    };
    let all = synth_generate(&synth)?;
    let (tr, te) = all.split_at(50);
    let norm = fit_regimes(tr, synth.n_regimes, 1)?;
    let model = train_rul(&normalize_all(tr, &norm)?, &cfg)?;
    let rep = evaluate_rul(&model, &normalize_all(te, &norm)?, 20)?;
    Ok(judge(
        planted_r2 > 0.99 && rep.late_mae <= rep.early_mae,
        format!(
            "planted held-out R² {planted_r2:.4} (need > 0.99); synthetic held-out MAE first 20 cycles {:.2}, last 20 cycles {:.2}, R² {:.3}",
            rep.early_mae, rep.late_mae, rep.r2
        ),
    ))
}

const PIPELINE_CONFIG: &str = r#"{
  "seed": 17,
  "data": {"synth": {"n_units": 60}},
  "label": {"window": 10, "horizon": 60, "repair_prob": 0.03},
  "use_rul": true,
  "rul": {"window": 10, "train": {"epochs": 5}},
  "policy": {"train": {"epochs": 5}},
  "sweep": {"steps": 8, "n_draws": 3}
}"#;

fn c9_determinism() -> rulrl::Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let config = tmp.path().join("config.json");
    std::fs::write(&config, PIPELINE_CONFIG)?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        for stage in ["pipeline", "evaluate"] {
            let argv = ["rulrl", stage, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
            let code = rulrl_cli::run(argv);
            if code != 0 {
                return Ok(failed(format!("{stage} exited with {code}")));
            }
        }
        let mut csvs: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .map(|n| {
                let bytes = std::fs::read(out.join(&n)).unwrap();
                (n, bytes)
            })
            .collect();
        csvs.sort();
        runs.push(csvs);
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    Ok(judge(
        !runs[0].is_empty() && runs[0] == runs[1],
        format!("CSV artifacts {names:?} byte-identical across two runs: {}", runs[0] == runs[1]),
    ))
}

fn main() {
    // `cargo test` passes harness flags; a filter that does not name this
    // suite skips it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let secs = Duration::from_secs;
    let mut ok = true;
    ok &= check(1, "gradient correctness", secs(10), c1_gradients);
    ok &= check(2, "return-to-go oracle", secs(5), c2_rtg);
    ok &= check(3, "episode accounting", secs(5), c3_accounting);
    ok &= check(4, "FD002 baseline numbers", secs(600), c4_fd002);

    let t0 = Instant::now();
    let synth = synthetic().and_then(|s| summaries(&s));
    let shared = t0.elapsed();
    let synth = &synth;
    let run_on = |f: fn(&[SweepSummary]) -> Outcome| {
        move || match synth {
            Ok(all) => f(all),
            Err(e) => failed(e),
        }
    };
    // both criteria share one training run, whose time counts against each
    let limit = secs(300).saturating_sub(shared);
    ok &= check(5, "desk-scale policy quality", limit, run_on(c5_quality));
    ok &= check(6, "conditioning behavior", limit, run_on(c6_conditioning));
    println!("(criteria 5 and 6 share {:.1}s of training and sweeping)", shared.as_secs_f64());

    ok &= check(7, "normalization effect", secs(5), || c7_normalization().unwrap_or_else(failed));
    ok &= check(8, "RUL estimator sanity", secs(120), || c8_rul().unwrap_or_else(failed));
    ok &= check(9, "pipeline determinism", secs(300), || c9_determinism().unwrap_or_else(failed));
    if !ok {
        println!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed or skipped");
}
