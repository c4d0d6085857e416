//! `rulrl` command line: each subcommand runs one stage of the pipeline and
//! reads or writes fixed file names inside the output directory.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use rulrl::labeling::{build_dataset, CostModel, Dataset, LabelConfig};
use rulrl::policy::{train_policy, PolicyConfig, PolicyModel};
use rulrl::regime_norm::{fit_regimes, normalize_all, RegimeNormalizer};
use rulrl::rul_estimator::{evaluate_rul, train_rul, RulConfig, RulModel};
use rulrl::simenv::{evaluate, outcomes_csv, DecisionRule, EvalRecord};
use rulrl::sweep_report::{default_grid, emit_csv, emit_svg, SweepCurve, SweepSetup, SweepSummary};
use rulrl::trajdata::{read_cmapss, split_train_test, synth_generate, write_cmapss, Trajectory};
use rulrl::{seeds, Error, Result};

pub use config::RunConfig;
use config::DataSource;

pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const TRAIN_RAW: &str = "train_raw.txt";
    pub const TEST_RAW: &str = "test_raw.txt";
    pub const EXTRA_RAW: &str = "extra_raw.txt";
    pub const REGIMES: &str = "regimes.txt";
    pub const TRAIN_NORM: &str = "train_norm.txt";
    pub const TEST_NORM: &str = "test_norm.txt";
    pub const EXTRA_NORM: &str = "extra_norm.txt";
    pub const DATASET: &str = "dataset";
    pub const RUL_MODEL: &str = "rul_model.txt";
    pub const RUL_REPORT: &str = "rul_report.json";
    pub const POLICY: &str = "policy";
    pub const POLICY_RUL: &str = "policy_rul";
    pub const OUTCOMES: &str = "outcomes.csv";
    pub const EVALUATION: &str = "evaluation.json";
    pub const CURVE_CSV: &str = "curve.csv";
    pub const CURVE_SVG: &str = "curve.svg";
    pub const SUMMARY: &str = "summary.json";
    pub const EXTRA_CURVE_CSV: &str = "curve_extra.csv";
    pub const EXTRA_CURVE_SVG: &str = "curve_extra.svg";
    pub const EXTRA_SUMMARY: &str = "summary_extra.json";
}

/// Stage names; each also labels the seed derived for it.
pub const STAGES: [&str; 8] = [
    "synth",
    "normalize",
    "build-dataset",
    "train-rul",
    "train-policy",
    "evaluate",
    "sweep",
    "report",
];

#[derive(Debug, Parser)]
#[command(name = "rulrl", about = "Return-conditioned maintenance policies from run-to-failure data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Working directory for all stage files.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (also settable through RULRL_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    /// Train and use the RUL estimator.
    #[arg(long)]
    use_rul: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic units, or load C-MAPSS files, and split them.
    Synth(Common),
    /// Fit operating regimes on the training units and normalize all units.
    Normalize(Common),
    /// Inject repairs, assign rewards and window the training units.
    BuildDataset(Common),
    /// Train the RUL estimator.
    TrainRul(Common),
    /// Train the return-conditioned policy (and its RUL variant).
    TrainPolicy(Common),
    /// Score baselines and the policy at one target on the test units.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Target return; defaults to the largest training return.
        #[arg(long, allow_negative_numbers = true)]
        target: Option<f64>,
    },
    /// Sweep the target return and write the curve table.
    Sweep(Common),
    /// Render the curve table as SVG.
    Report(Common),
    /// Run every stage in order.
    Pipeline(Common),
}

/// Parsed arguments plus the resolved configuration.
pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&out)?;
        Ok(Self { config, out })
    }

    pub fn seed(&self, stage: &str) -> u64 {
        seeds::derive(self.config.seed, stage)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.path(name), contents)?;
        Ok(())
    }

    fn read_units(&self, name: &str, ends_in_failure: bool) -> Result<Vec<Trajectory>> {
        self.require(name)?;
        read_cmapss(&self.path(name), ends_in_failure)
    }

    fn require(&self, name: &str) -> Result<()> {
        if self.has(name) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "missing {} (run the earlier stages first)",
                self.path(name).display()
            )))
        }
    }

    fn has(&self, name: &str) -> bool {
        self.path(name).exists()
    }
}

/// Entry point shared by the binary and the tests. Returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let (stages, common, target): (Vec<&str>, Common, Option<f64>) = match cli.command {
        Command::Synth(c) => (vec!["synth"], c, None),
        Command::Normalize(c) => (vec!["normalize"], c, None),
        Command::BuildDataset(c) => (vec!["build-dataset"], c, None),
        Command::TrainRul(c) => (vec!["train-rul"], c, None),
        Command::TrainPolicy(c) => (vec!["train-policy"], c, None),
        Command::Evaluate { common, target } => (vec!["evaluate"], common, target),
        Command::Sweep(c) => (vec!["sweep"], c, None),
        Command::Report(c) => (vec!["report"], c, None),
        Command::Pipeline(c) => (
            vec!["synth", "normalize", "build-dataset", "train-rul", "train-policy", "sweep", "report"],
            c,
            None,
        ),
    };
    let ctx = match setup(&common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config: {e}");
            return 1;
        }
    };
    let pipeline = stages.len() > 1;
    let stages: Vec<&str> = stages
        .into_iter()
        .filter(|s| !(pipeline && *s == "train-rul" && !ctx.config.use_rul))
        .collect();
    for stage in &stages {
        if let Err(e) = run_stage(&ctx, stage, target) {
            eprintln!("error: stage {stage}: {e}");
            return 1;
        }
    }
    if let Err(e) = write_manifest(&ctx, &stages) {
        eprintln!("error: manifest: {e}");
        return 1;
    }
    0
}

fn setup(common: &Common) -> Result<Context> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if common.threads.is_some() {
        config.threads = common.threads;
    }
    if common.use_rul {
        config.use_rul = true;
    }
    let threads = config.threads.or_else(|| {
        std::env::var("RULRL_THREADS")
            .ok()
            .and_then(|v| v.trim().parse().ok())
    });
    if let Some(n) = threads {
        rulrl::par::init_global_threads(n);
    }
    Context::new(config, common.out.clone())
}

pub fn run_stage(ctx: &Context, stage: &str, target: Option<f64>) -> Result<()> {
    match stage {
        "synth" => stage_synth(ctx),
        "normalize" => stage_normalize(ctx),
        "build-dataset" => stage_build_dataset(ctx),
        "train-rul" => stage_train_rul(ctx),
        "train-policy" => stage_train_policy(ctx),
        "evaluate" => stage_evaluate(ctx, target),
        "sweep" => stage_sweep(ctx),
        "report" => stage_report(ctx),
        other => Err(Error::Config(format!("unknown stage {other}"))),
    }
}

fn stage_synth(ctx: &Context) -> Result<()> {
    let cfg = &ctx.config;
    let seed = ctx.seed("synth");
    let (units, header) = match cfg.data.source {
        DataSource::Synth => {
            let synth = rulrl::trajdata::SynthConfig {
                seed,
                ..cfg.data.synth.clone()
            };
            (
                synth_generate(&synth)?,
                format!("synthetic run-to-failure units, seed {seed}"),
            )
        }
        DataSource::Cmapss => {
            let p = cfg.data.train_path.as_ref().expect("validated");
            (read_cmapss(p, true)?, format!("units from {}", p.display()))
        }
    };
    let (train, test) = split_train_test(units)?;
    ctx.write(files::TRAIN_RAW, &write_cmapss(&train, Some(&header)))?;
    ctx.write(files::TEST_RAW, &write_cmapss(&test, Some(&header)))?;
    if let (DataSource::Cmapss, Some(p)) = (cfg.data.source, &cfg.data.test_path) {
        let extra = read_cmapss(p, false)?;
        ctx.write(
            files::EXTRA_RAW,
            &write_cmapss(&extra, Some(&format!("units from {}", p.display()))),
        )?;
    }
    eprintln!("synth: {} training and {} test units", train.len(), test.len());
    Ok(())
}

fn stage_normalize(ctx: &Context) -> Result<()> {
    let train = ctx.read_units(files::TRAIN_RAW, true)?;
    let test = ctx.read_units(files::TEST_RAW, true)?;
    let norm = fit_regimes(&train, ctx.config.k_regimes, ctx.seed("normalize"))?;
    norm.save(&ctx.path(files::REGIMES))?;
    let header = "regime-normalized sensors";
    ctx.write(files::TRAIN_NORM, &write_cmapss(&normalize_all(&train, &norm)?, Some(header)))?;
    ctx.write(files::TEST_NORM, &write_cmapss(&normalize_all(&test, &norm)?, Some(header)))?;
    if ctx.has(files::EXTRA_RAW) {
        let extra = ctx.read_units(files::EXTRA_RAW, false)?;
        ctx.write(files::EXTRA_NORM, &write_cmapss(&normalize_all(&extra, &norm)?, Some(header)))?;
    }
    eprintln!("normalize: {} regimes", norm.k());
    Ok(())
}

/// Labeling configuration with its seed derived from the master seed.
pub fn label_config(ctx: &Context) -> LabelConfig {
    LabelConfig {
        seed: ctx.seed("build-dataset"),
        with_rul: ctx.config.label.with_rul || ctx.config.use_rul,
        ..ctx.config.label.clone()
    }
}

/// Cost model for training labels.
pub fn label_cost(ctx: &Context) -> CostModel {
    CostModel {
        seed: ctx.seed("label-cost"),
        ..ctx.config.cost.clone()
    }
}

fn stage_build_dataset(ctx: &Context) -> Result<()> {
    let train = ctx.read_units(files::TRAIN_NORM, true)?;
    let ds = build_dataset(&train, &label_config(ctx), &label_cost(ctx))?;
    ds.save(&ctx.out, files::DATASET)?;
    eprintln!(
        "build-dataset: {} samples, {} repairs",
        ds.meta.n_samples, ds.meta.n_repairs
    );
    Ok(())
}

pub fn rul_config(ctx: &Context) -> RulConfig {
    let mut c = ctx.config.rul.clone();
    c.train.seed = ctx.seed("train-rul");
    c
}

#[derive(Debug, Serialize)]
struct RulReportFile {
    train_r2: f64,
    test: rulrl::rul_estimator::RulReport,
}

fn stage_train_rul(ctx: &Context) -> Result<()> {
    let train = ctx.read_units(files::TRAIN_NORM, true)?;
    let test = ctx.read_units(files::TEST_NORM, true)?;
    let model = train_rul(&train, &rul_config(ctx))?;
    model.save(&ctx.path(files::RUL_MODEL))?;
    let report = RulReportFile {
        train_r2: model.train_r2,
        test: evaluate_rul(&model, &test, 20)?,
    };
    ctx.write(files::RUL_REPORT, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    eprintln!("train-rul: train R² {:.3}, test R² {:.3}", report.train_r2, report.test.r2);
    Ok(())
}

pub fn policy_config(ctx: &Context, uses_rul: bool) -> PolicyConfig {
    let mut c = ctx.config.policy.clone();
    c.uses_rul = uses_rul;
    c.train.seed = ctx.seed(if uses_rul { "train-policy-rul" } else { "train-policy" });
    c
}

fn stage_train_policy(ctx: &Context) -> Result<()> {
    ctx.require(&format!("{}.txt", files::DATASET))?;
    let ds = Dataset::load(&ctx.out, files::DATASET)?;
    let p = train_policy(&ds, &policy_config(ctx, false))?;
    p.save(&ctx.out, files::POLICY)?;
    if ctx.config.use_rul {
        let p = train_policy(&ds, &policy_config(ctx, true))?;
        p.save(&ctx.out, files::POLICY_RUL)?;
    }
    eprintln!("train-policy: training returns [{:.1}, {:.1}]", p.min_train_return, p.max_train_return);
    Ok(())
}

struct Models {
    policies: Vec<PolicyModel>,
    rul: Option<RulModel>,
}

fn load_models(ctx: &Context) -> Result<Models> {
    ctx.require(&format!("{}.txt", files::POLICY))?;
    if ctx.config.use_rul {
        ctx.require(files::RUL_MODEL)?;
        ctx.require(&format!("{}.txt", files::POLICY_RUL))?;
    }
    let mut policies = vec![PolicyModel::load(&ctx.out, files::POLICY)?];
    let rul = if ctx.config.use_rul || ctx.has(files::RUL_MODEL) {
        Some(RulModel::load(&ctx.path(files::RUL_MODEL))?)
    } else {
        None
    };
    if ctx.config.use_rul {
        policies.push(PolicyModel::load(&ctx.out, files::POLICY_RUL)?);
    }
    Ok(Models { policies, rul })
}

fn setups<'a>(ctx: &Context, models: &'a Models, trajs: &'a [Trajectory], cost: &'a CostModel) -> Vec<SweepSetup<'a>> {
    models
        .policies
        .iter()
        .map(|p| SweepSetup {
            policy: p,
            policy_rul: if p.layout.uses_rul { models.rul.as_ref() } else { None },
            baseline_rul: models.rul.as_ref(),
            trajs,
            cost,
            n_draws: ctx.config.sweep.n_draws,
            mode: ctx.config.sweep.mode,
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct EvaluationEntry {
    rule: String,
    target_return: Option<f64>,
    mean: f64,
    std: f64,
    n_units: usize,
    n_draws: usize,
}

fn stage_evaluate(ctx: &Context, target: Option<f64>) -> Result<()> {
    let models = load_models(ctx)?;
    let test = ctx.read_units(files::TEST_NORM, true)?;
    let cost = ctx.config.eval_cost(ctx.seed("evaluate"));
    let mut records: Vec<EvalRecord> = Vec::new();
    for (i, s) in setups(ctx, &models, &test, &cost).iter().enumerate() {
        if i == 0 {
            records.extend(s.baselines()?);
        }
        records.push(s.evaluate_target(target.unwrap_or(s.policy.max_train_return))?);
    }
    ctx.write(files::OUTCOMES, &outcomes_csv(&records)?)?;
    let entries: Vec<EvaluationEntry> = records
        .iter()
        .map(|r| EvaluationEntry {
            rule: r.rule.clone(),
            target_return: r.target_return,
            mean: r.mean,
            std: r.std,
            n_units: r.n_units,
            n_draws: r.n_draws,
        })
        .collect();
    ctx.write(files::EVALUATION, &(serde_json::to_string_pretty(&entries)? + "\n"))?;
    for e in &entries {
        eprintln!("evaluate: {:<14} mean {:>9.2}  std {:>8.2}", e.rule, e.mean, e.std);
    }
    Ok(())
}

/// Target grid for a policy under the run configuration.
pub fn grid_for(ctx: &Context, policy: &PolicyModel) -> Result<Vec<f64>> {
    match &ctx.config.sweep.grid {
        Some(g) => Ok(g.clone()),
        None => default_grid(policy.min_train_return, policy.max_train_return, ctx.config.sweep.steps),
    }
}

fn stage_sweep(ctx: &Context) -> Result<()> {
    let models = load_models(ctx)?;
    let cost = ctx.config.eval_cost(ctx.seed("sweep"));
    let mut sets = vec![(files::TEST_NORM, true, files::CURVE_CSV, files::SUMMARY)];
    if ctx.has(files::EXTRA_NORM) {
        sets.push((files::EXTRA_NORM, false, files::EXTRA_CURVE_CSV, files::EXTRA_SUMMARY));
    }
    for (units, fails, csv_name, summary_name) in sets {
        let trajs = ctx.read_units(units, fails)?;
        let mut curves = Vec::new();
        let mut summaries: Vec<SweepSummary> = Vec::new();
        for s in setups(ctx, &models, &trajs, &cost) {
            let curve = s.sweep(&grid_for(ctx, s.policy)?)?;
            summaries.push(s.summary(&curve)?);
            curves.push(curve);
        }
        ctx.write(csv_name, &emit_csv(&curves)?)?;
        ctx.write(summary_name, &(serde_json::to_string_pretty(&summaries)? + "\n"))?;
        for s in &summaries {
            eprintln!(
                "sweep: {} on {units}: best target {:.1} -> mean {:.2}",
                s.rule, s.argmax_target, s.argmax_mean
            );
        }
    }
    Ok(())
}

/// Rebuild curves from a curve table: rows with a target belong to the
/// policy curve named in `rule`, the rest are baselines.
pub fn curves_from_csv(text: &str) -> Result<Vec<SweepCurve>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut by_rule: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    let mut baselines = Vec::new();
    for row in reader.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Format(format!("bad number in column {i} of the curve table")))
        };
        let count = |i: usize| -> Result<usize> {
            row.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Format(format!("bad count in column {i} of the curve table")))
        };
        let rule = row.get(0).unwrap_or("").to_string();
        let target = match row.get(1).unwrap_or("") {
            "" => None,
            _ => Some(num(1)?),
        };
        let rec = EvalRecord {
            rule: rule.clone(),
            target_return: target,
            returns: Vec::new(),
            mean: num(2)?,
            std: num(3)?,
            n_units: count(4)?,
            n_draws: count(5)?,
            outcomes: Vec::new(),
        };
        if target.is_some() {
            if !order.contains(&rule) {
                order.push(rule.clone());
            }
            by_rule.entry(rule).or_default().push(rec);
        } else {
            baselines.push(rec);
        }
    }
    let curves = order
        .into_iter()
        .map(|rule| {
            let records = by_rule.remove(&rule).unwrap_or_default();
            let grid: Vec<f64> = records.iter().map(|r| r.target_return.unwrap_or(f64::NAN)).collect();
            let best = records
                .iter()
                .enumerate()
                .fold(0, |b, (i, r)| if r.mean > records[b].mean { i } else { b });
            SweepCurve {
                label: rule,
                argmax_target: grid[best],
                grid,
                records,
                baselines: baselines.clone(),
            }
        })
        .collect();
    Ok(curves)
}

fn stage_report(ctx: &Context) -> Result<()> {
    let mut pairs = vec![(files::CURVE_CSV, files::CURVE_SVG)];
    if ctx.has(files::EXTRA_CURVE_CSV) {
        pairs.push((files::EXTRA_CURVE_CSV, files::EXTRA_CURVE_SVG));
    }
    for (csv_name, svg_name) in pairs {
        if !ctx.has(csv_name) {
            return Err(Error::Config(format!("missing {csv_name} (run sweep first)")));
        }
        let curves = curves_from_csv(&std::fs::read_to_string(ctx.path(csv_name))?)?;
        ctx.write(svg_name, &emit_svg(&curves)?)?;
        eprintln!("report: wrote {svg_name}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    parallel: bool,
    stages: &'a [&'a str],
    master_seed: u64,
    seeds: BTreeMap<&'static str, u64>,
    config: &'a RunConfig,
    files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Rewrites `manifest.json` and `config.json` from the current contents of
/// the output directory.
fn write_manifest(ctx: &Context, stages: &[&str]) -> Result<()> {
    // Results do not depend on the thread count, so it is left out.
    let config = RunConfig {
        threads: None,
        ..ctx.config.clone()
    };
    ctx.write(files::CONFIG, &(serde_json::to_string_pretty(&config)? + "\n"))?;
    let mut seeds = BTreeMap::new();
    for s in STAGES.iter().chain(&["label-cost", "train-policy-rul"]) {
        seeds.insert(*s, ctx.seed(s));
    }
    let mut names: Vec<String> = std::fs::read_dir(&ctx.out)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != files::MANIFEST)
        .collect();
    names.sort();
    let mut hashes = BTreeMap::new();
    for n in names {
        hashes.insert(n.clone(), sha256_file(&ctx.path(&n))?);
    }
    let m = Manifest {
        tool: "rulrl",
        version: env!("CARGO_PKG_VERSION"),
        parallel: rulrl::par::is_parallel(),
        stages,
        master_seed: ctx.config.seed,
        seeds,
        config: &config,
        files: hashes,
    };
    ctx.write(files::MANIFEST, &(serde_json::to_string_pretty(&m)? + "\n"))
}

/// Loads the regime model from a run directory.
pub fn load_regimes(dir: &Path) -> Result<RegimeNormalizer> {
    RegimeNormalizer::load(&dir.join(files::REGIMES))
}

/// Evaluates one decision rule on the failing test units of a run
/// directory.
pub fn evaluate_rule(ctx: &Context, rule: &DecisionRule, cost: &CostModel) -> Result<EvalRecord> {
    let test = ctx.read_units(files::TEST_NORM, true)?;
    evaluate(&test, rule, cost, ctx.config.sweep.n_draws)
}
