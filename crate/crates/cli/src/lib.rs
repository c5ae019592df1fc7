//! Command-line front end: dataset generation, training, closed-loop
//! evaluation, τ sweeps and the variant ablation.

pub mod manifest;
mod output;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dualmoe_core::checkpoint::Checkpoint;
use dualmoe_core::eval::{evaluate, EvalConfig, EvalReport};
use dualmoe_core::model::{Model, Variant};
use dualmoe_core::numerics::ParamSet;
use dualmoe_core::sim::{Perturbation, ScenarioKind, DEFAULT_TIME_LIMIT};
use dualmoe_core::trainer::dataset::{self, MANIFEST_FILE};
use dualmoe_core::trainer::{train, Dataset, GenConfig, TrainConfig};
use dualmoe_core::{Error, ErrorKind, Result};
use log::info;
use serde::Serialize;

use manifest::{config_hash, RunManifest};
use output::Output;
use report::{AblationRun, SweepRow};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "dualmoe", version, about = "Dual-aware mixture-of-experts driving policy on a synthetic benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record oracle clips into a dataset directory.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint in closed loop.
    Eval(EvalArgs),
    /// Evaluate a checkpoint over a grid of uncertainty thresholds.
    SweepTau(SweepArgs),
    /// Train and evaluate every model variant over several seeds.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory; must not already hold a dataset.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub clips_per_scenario: usize,
    /// Comma-separated scenario names; all kinds when omitted.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Vec<String>,
    /// Comma-separated relative clip counts, one per kind in id order.
    #[arg(long, value_delimiter = ',')]
    pub proportions: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_TIME_LIMIT)]
    pub time_limit: f64,
    /// Record the undisturbed oracle only.
    #[arg(long)]
    pub no_perturbation: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub episodes_per_scenario: usize,
    /// Uncertainty threshold; the checkpoint's value when omitted.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TIME_LIMIT)]
    pub time_limit: f64,
    /// Report directory.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    #[arg(long, default_value_t = 1.0)]
    pub to: f64,
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    #[arg(long, default_value_t = 20)]
    pub episodes_per_scenario: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TIME_LIMIT)]
    pub time_limit: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Base TOML training config; the variant and seed are overridden per run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.to_vec())]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 20)]
    pub episodes_per_scenario: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    /// Keep one checkpoint per run under `checkpoints/`.
    #[arg(long)]
    pub keep_checkpoints: bool,
}

/// Process exit code for an error: 2 config, 3 data, 4 model, 5 i/o, 1 other.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Model => 4,
        ErrorKind::Io => 5,
        ErrorKind::Internal => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::SweepTau(a) => sweep_tau(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

fn gen_config(a: &GenDataArgs) -> Result<GenConfig> {
    let scenarios = if a.scenarios.is_empty() {
        ScenarioKind::ALL.to_vec()
    } else {
        let mut ks = Vec::new();
        for name in &a.scenarios {
            let k = ScenarioKind::from_name(name.trim())
                .ok_or_else(|| Error::Config(format!("unknown scenario `{name}`")))?;
            if !ks.contains(&k) {
                ks.push(k);
            }
        }
        ks.sort();
        ks
    };
    let proportions = match a.proportions.len() {
        0 => [1.0; ScenarioKind::COUNT],
        ScenarioKind::COUNT => a.proportions.clone().try_into().expect("length checked"),
        n => {
            return Err(Error::Config(format!(
                "expected {} proportions, got {n}",
                ScenarioKind::COUNT
            )))
        }
    };
    let config = GenConfig {
        seed: a.seed,
        clips_per_scenario: a.clips_per_scenario,
        scenarios,
        proportions,
        val_fraction: a.val_fraction,
        time_limit: a.time_limit,
        perturbation: if a.no_perturbation {
            Perturbation::NONE
        } else {
            Perturbation::default()
        },
    };
    config.validate()?;
    Ok(config)
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let config = gen_config(a)?;
    if a.out.join(MANIFEST_FILE).exists() {
        return Err(Error::Config(format!("{} already holds a dataset", a.out.display())));
    }
    let mut run = RunManifest::start("gen-data", config_hash(&config), config.seed);
    let mut out = Output::create(&a.out)?;
    out.path(dataset::CLIP_DIR);
    let manifest_path = out.path(MANIFEST_FILE);
    out.path(manifest::RUN_MANIFEST_FILE);
    info!("generating {} clips into {}", config.total_clips(), a.out.display());
    let m = dataset::generate(&config, out.root())?;
    run.dataset_manifest_hash = Some(dataset::hash_file(&manifest_path)?);
    run.finish(out.root())?;
    let val = m.clips.iter().filter(|c| c.split == dataset::Split::Val).count();
    info!("wrote {} clips ({} train, {} val)", m.clips.len(), m.clips.len() - val, val);
    out.commit();
    Ok(())
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut config = load_train_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(v) = a.variant {
        config.variant = v;
    }
    config.validate()?;
    let data = Dataset::load(&a.data)?;
    let mut run = RunManifest::start("train", config_hash(&config), config.seed);
    run.dataset_manifest_hash = Some(data.manifest_hash.clone());
    let mut out = Output::create(&a.out)?;
    let log_path = out.path(report::TRAIN_LOG_CSV);
    let ckpt_path = out.path(CHECKPOINT_FILE);
    let config_path = out.path(CONFIG_FILE);
    out.path(manifest::RUN_MANIFEST_FILE);
    info!(
        "training {} on {} samples for {} epochs",
        config.variant,
        data.train.len(),
        config.epochs
    );
    let trained = train(&config, &data.train, &data.val, |e| {
        info!(
            "epoch {} lr {:e} loss {:.4} val router accuracy {}",
            e.epoch,
            e.lr,
            e.loss.total,
            e.val_router_accuracy.map_or("-".into(), |a| format!("{:.3}", a))
        );
    })?;
    let ckpt = Checkpoint::new(trained.model, trained.params, config.clone(), data.manifest_hash.clone());
    run.checkpoint_hash = Some(ckpt.save(&ckpt_path)?);
    fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    report::train_log(&run.hash(), &trained.log).write(&log_path)?;
    run.finish(out.root())?;
    out.commit();
    Ok(())
}

fn eval_config(variant: Variant, episodes: usize, seed: u64, tau: f64, time_limit: f64) -> Result<EvalConfig> {
    let c = EvalConfig {
        episodes_per_scenario: episodes,
        seed,
        tau,
        variant,
        time_limit,
    };
    c.validate()?;
    Ok(c)
}

/// Identity of an evaluation: the settings plus the evaluated checkpoint.
#[derive(Serialize)]
struct EvalIdentity<'a, T: Serialize> {
    settings: &'a T,
    train_config: &'a TrainConfig,
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let (ckpt, sha) = Checkpoint::load(&a.checkpoint)?;
    let tau = a.tau.unwrap_or(ckpt.header.tau);
    let config = eval_config(ckpt.header.variant, a.episodes_per_scenario, a.seed, tau, a.time_limit)?;
    let mut run = RunManifest::start(
        "eval",
        config_hash(&EvalIdentity {
            settings: &config,
            train_config: &ckpt.header.config,
        }),
        a.seed,
    );
    run.dataset_manifest_hash = Some(ckpt.header.dataset_manifest_hash.clone());
    run.checkpoint_hash = Some(sha);
    let mut out = Output::create(&a.report)?;
    let paths: Vec<PathBuf> = [
        report::METRICS_CSV,
        report::PER_SCENARIO_CSV,
        report::UTILIZATION_CSV,
        report::EPISODES_CSV,
        report::TRACES_CSV,
        manifest::RUN_MANIFEST_FILE,
    ]
    .iter()
    .map(|n| out.path(n))
    .collect();
    info!(
        "evaluating {} episodes per scenario at tau {}",
        config.episodes_per_scenario, config.tau
    );
    let (r, traces) = evaluate(&ckpt.model, &ckpt.params, &config)?;
    let h = run.hash();
    report::metrics(&h, &r).write(&paths[0])?;
    report::per_scenario(&h, &r).write(&paths[1])?;
    report::utilization(&h, &r).write(&paths[2])?;
    report::episodes(&h, &r).write(&paths[3])?;
    report::traces(&h, &traces).write(&paths[4])?;
    run.finish(out.root())?;
    log_summary(&r);
    out.commit();
    Ok(())
}

fn log_summary(r: &EvalReport) {
    info!(
        "success {:.1}% driving score {:.2} router accuracy {:.1}% global {:.1}%",
        r.metrics.success_rate,
        r.metrics.driving_score,
        r.routing.overall_accuracy,
        r.routing.global_utilization()
    );
}

/// Grid `from, from + step, …` up to `to` inclusive.
pub fn tau_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&from) || !(0.0..=1.0).contains(&to) || from > to {
        return Err(Error::Config(format!("tau range [{from}, {to}] must lie within [0, 1]")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("tau step {step} must be positive")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((from + i as f64 * step) * 1e9).round() / 1e9)
        .map(|t| t.min(to))
        .collect())
}

#[derive(Serialize)]
struct SweepSettings {
    taus: Vec<f64>,
    episodes_per_scenario: usize,
    seed: u64,
    time_limit: f64,
}

fn sweep_tau(a: &SweepArgs) -> Result<()> {
    let taus = tau_grid(a.from, a.to, a.step)?;
    eval_config(Variant::DualAware, a.episodes_per_scenario, a.seed, 0.5, a.time_limit)?;
    let (ckpt, sha) = Checkpoint::load(&a.checkpoint)?;
    let settings = SweepSettings {
        taus: taus.clone(),
        episodes_per_scenario: a.episodes_per_scenario,
        seed: a.seed,
        time_limit: a.time_limit,
    };
    let mut run = RunManifest::start(
        "sweep-tau",
        config_hash(&EvalIdentity {
            settings: &settings,
            train_config: &ckpt.header.config,
        }),
        a.seed,
    );
    run.dataset_manifest_hash = Some(ckpt.header.dataset_manifest_hash.clone());
    run.checkpoint_hash = Some(sha);
    let mut out = Output::create(&a.out)?;
    let csv_path = out.path(report::SWEEP_CSV);
    let svg_path = out.path(report::SWEEP_SVG);
    out.path(manifest::RUN_MANIFEST_FILE);
    let rows = sweep_rows(&ckpt.model, &ckpt.params, ckpt.header.variant, &taus, a)?;
    let h = run.hash();
    report::sweep(&h, &rows).write(&csv_path)?;
    fs::write(&svg_path, report::sweep_svg(&h, &rows)).map_err(|e| Error::io(&svg_path, e))?;
    run.finish(out.root())?;
    out.commit();
    Ok(())
}

fn sweep_rows(model: &Model, ps: &ParamSet, variant: Variant, taus: &[f64], a: &SweepArgs) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let config = eval_config(variant, a.episodes_per_scenario, a.seed, tau, a.time_limit)?;
        let (r, _) = evaluate(model, ps, &config)?;
        info!("tau {tau:.2}");
        log_summary(&r);
        rows.push(SweepRow {
            tau,
            global_utilization: r.routing.global_utilization(),
            router_accuracy: r.routing.overall_accuracy,
            metrics: r.metrics,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct AblationSettings<'a> {
    base: &'a TrainConfig,
    seeds: &'a [u64],
    variants: &'a [Variant],
    episodes_per_scenario: usize,
    eval_seed: u64,
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let mut base = load_train_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        base.epochs = e;
    }
    base.validate()?;
    if a.seeds.is_empty() || a.variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    eval_config(Variant::DualAware, a.episodes_per_scenario, a.eval_seed, base.tau, DEFAULT_TIME_LIMIT)?;
    let data = Dataset::load(&a.data)?;
    let mut run = RunManifest::start(
        "ablate",
        config_hash(&AblationSettings {
            base: &base,
            seeds: &a.seeds,
            variants: &a.variants,
            episodes_per_scenario: a.episodes_per_scenario,
            eval_seed: a.eval_seed,
        }),
        a.seeds[0],
    );
    run.dataset_manifest_hash = Some(data.manifest_hash.clone());
    let mut out = Output::create(&a.out)?;
    let table_path = out.path(report::ABLATION_CSV);
    let runs_path = out.path(report::ABLATION_RUNS_CSV);
    out.path(manifest::RUN_MANIFEST_FILE);
    let ckpt_dir = out.path("checkpoints");
    if a.keep_checkpoints {
        fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    let mut runs = Vec::new();
    for &seed in &a.seeds {
        for &variant in &a.variants {
            let config = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            info!("ablation: training {variant} with seed {seed}");
            let t = train(&config, &data.train, &data.val, |e| {
                info!("epoch {} loss {:.4}", e.epoch, e.loss.total)
            })?;
            let eval = eval_config(variant, a.episodes_per_scenario, a.eval_seed, config.tau, DEFAULT_TIME_LIMIT)?;
            let (r, _) = evaluate(&t.model, &t.params, &eval)?;
            log_summary(&r);
            if a.keep_checkpoints {
                let p = ckpt_dir.join(format!("{variant}_{seed}.ckpt"));
                Checkpoint::new(t.model, t.params, config, data.manifest_hash.clone()).save(&p)?;
            }
            runs.push(AblationRun {
                variant,
                seed,
                metrics: r.metrics,
            });
        }
    }
    let h = run.hash();
    report::ablation_runs(&h, &runs).write(&runs_path)?;
    report::ablation_table(&h, &runs).write(&table_path)?;
    run.finish(out.root())?;
    out.commit();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tau_grid_has_eleven_points() {
        let g = tau_grid(0.0, 1.0, 0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[10], 1.0);
    }

    #[test]
    fn bad_tau_grid_is_a_config_error() {
        for (f, t, s) in [(0.0, 1.5, 0.1), (0.5, 0.2, 0.1), (0.0, 1.0, 0.0)] {
            assert_eq!(exit_code(&tau_grid(f, t, s).unwrap_err()), 2);
        }
    }

    #[test]
    fn cli_parses_every_subcommand() {
        let parse = |args: &[&str]| Cli::try_parse_from(args).unwrap();
        parse(&["dualmoe", "gen-data", "--out", "d", "--scenarios", "merging,give_way"]);
        parse(&["dualmoe", "train", "--data", "d", "--out", "o", "--variant", "scenario_moe"]);
        parse(&["dualmoe", "eval", "--checkpoint", "c", "--report", "r", "--tau", "0.3"]);
        parse(&["dualmoe", "sweep-tau", "--checkpoint", "c", "--out", "s"]);
        let c = parse(&["dualmoe", "ablate", "--data", "d", "--out", "a", "--seeds", "0,1,2"]);
        match c.command {
            Command::Ablate(a) => {
                assert_eq!(a.seeds, vec![0, 1, 2]);
                assert_eq!(a.variants, Variant::ALL.to_vec());
            }
            _ => panic!("expected ablate"),
        }
        assert!(Cli::try_parse_from(["dualmoe", "train", "--data", "d", "--out", "o", "--variant", "x"]).is_err());
    }
}
