//! Command-line toolkit: model building, correlation fitting, DDMAC
//! training, heuristic grid search, policy evaluation/comparison, and
//! structural-importance reports, all driven by one TOML experiment config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure.

use std::fs;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use detpomdp::artifact::{
    sha256_hex, ModelArtifact, PolicyCheckpoint, RunManifest,
};
use detpomdp::config::ExperimentConfig;
use detpomdp::ddmac::{train, write_curves_csv, DdmacPolicy};
use detpomdp::environment::{evaluate_policy, CostReport, Environment, Policy};
use detpomdp::error::Error;
use detpomdp::exec::ExecMode;
use detpomdp::heuristics::{grid_search, HeuristicPolicy, HeuristicRule};
use detpomdp::reliability::SystemModel;
use detpomdp::rng::derive_seed;

#[derive(Parser)]
#[command(name = "detpomdp", version, about = "Inspection-and-maintenance planning toolkit")]
struct Cli {
    /// Run embarrassingly-parallel loops sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model construction and correlation fitting.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Train a decentralized actor-critic policy.
    Train(TrainArgs),
    /// Heuristic decision rules.
    Heuristics {
        #[command(subcommand)]
        command: HeuristicsCommand,
    },
    /// Evaluate one policy over many episodes.
    Evaluate(EvaluateArgs),
    /// Side-by-side cost decomposition of a trained policy and a heuristic.
    Compare(CompareArgs),
    /// Structural reliability reports.
    Reliability {
        #[command(subcommand)]
        command: ReliabilityCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Build grids, transition tables, observation model, and fitted
    /// correlation structure into a model file.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Manifest path (defaults to `<out>.manifest.json`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit loading coefficients and report the reconstructed correlations.
    FitCorrelation {
        #[arg(long)]
        config: PathBuf,
        /// Optional JSON output of the fitted structure.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training-curve CSV output path.
    #[arg(long)]
    curves: PathBuf,
    /// Manifest path (defaults to `<out>.manifest.json`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Override the configured episode count.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum HeuristicsCommand {
    /// Two-stage grid search over inspection-interval rules.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Output CSV (`delta_ins, n_ins, stage, mean_cost, stderr, n_episodes`).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    episodes: usize,
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "rule")]
    checkpoint: Option<PathBuf>,
    /// Heuristic rule to evaluate, as `delta_ins,n_ins`.
    #[arg(long)]
    rule: Option<String>,
    /// Take actor argmax actions instead of sampling.
    #[arg(long)]
    greedy: bool,
    /// Directory receiving one per-step CSV per episode (first 20 episodes).
    #[arg(long)]
    episodes_log: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    episodes: usize,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Heuristic rule as `delta_ins,n_ins`.
    #[arg(long)]
    rule: String,
    #[arg(long)]
    greedy: bool,
}

#[derive(Subcommand)]
enum ReliabilityCommand {
    /// Single-element importance of every hotspot of the configured frame.
    Sei {
        #[arg(long)]
        config: PathBuf,
        /// Episode log CSV from `evaluate --episodes-log` for per-hotspot
        /// action frequencies.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    configure_threads();
    let mode = if cli.sequential { ExecMode::Sequential } else { ExecMode::default() };
    match run(cli.command, mode) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

/// Maps error categories onto the documented exit codes.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_)
        | Error::Diverged(_)
        | Error::ImpossibleObservation { .. }
        | Error::EmptyTransitionRow { .. } => 3,
        _ => 2,
    }
}

/// `DETPOMDP_THREADS` caps the rayon pool size.
fn configure_threads() {
    if let Ok(v) = std::env::var("DETPOMDP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        } else {
            eprintln!("warning: DETPOMDP_THREADS={v} is not a number; ignored");
        }
    }
}

fn run(command: Command, mode: ExecMode) -> Result<(), Error> {
    match command {
        Command::Model { command } => match command {
            ModelCommand::Build { config, out, manifest } => cmd_model_build(&config, &out, manifest, mode),
            ModelCommand::FitCorrelation { config, out } => cmd_fit_correlation(&config, out),
        },
        Command::Train(args) => cmd_train(args, mode),
        Command::Heuristics { command } => match command {
            HeuristicsCommand::Search { config, seed, out } => cmd_search(&config, seed, &out, mode),
        },
        Command::Evaluate(args) => cmd_evaluate(args, mode),
        Command::Compare(args) => cmd_compare(args, mode),
        Command::Reliability { command } => match command {
            ReliabilityCommand::Sei { config, log } => cmd_sei(&config, log),
        },
    }
}

fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf, String), Error> {
    let cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(path)?;
    let hash = sha256_hex(text.as_bytes());
    Ok((cfg, base, hash))
}

fn cmd_model_build(
    config_path: &Path,
    out: &Path,
    manifest_path: Option<PathBuf>,
    mode: ExecMode,
) -> Result<(), Error> {
    let (cfg, base, config_hash) = load_config(config_path)?;
    let mut manifest = RunManifest::new("model build", config_hash, vec![]);
    let t0 = Instant::now();
    let env = cfg.build_environment(&base, mode)?;
    manifest.record_timing("build", t0.elapsed().as_secs_f64());
    let artifact = ModelArtifact::from_environment(&env);
    artifact.save(out)?;
    manifest.record_output(out);
    let manifest_path = manifest_path.unwrap_or_else(|| default_manifest_path(out));
    manifest.save(&manifest_path)?;
    println!(
        "model: {} crack bins x {} rate states, {} components, hash {}",
        env.model.grids.n_crack,
        env.model.grids.n_rate,
        env.config.n_components,
        artifact.content_hash()?
    );
    println!("wrote {} and {}", out.display(), manifest_path.display());
    Ok(())
}

fn default_manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_fit_correlation(config_path: &Path, out: Option<PathBuf>) -> Result<(), Error> {
    let (cfg, _, _) = load_config(config_path)?;
    let structure = detpomdp::correlation::fit_loadings(
        &cfg.correlation,
        cfg.environment.n_components,
        cfg.correlation_fit_seed,
    )?;
    println!(
        "fitted {} hyperparameter(s), {} states each, residual {:.3e}",
        structure.n_hyper, structure.n_alpha_states, structure.fit_residual
    );
    let n = structure.n_components();
    for i in 0..n.min(6) {
        let row: Vec<String> =
            (0..n.min(6)).map(|j| format!("{:6.3}", structure.reconstructed_rho(i, j))).collect();
        println!("  rho[{i}][..] = {}", row.join(" "));
    }
    if let Some(path) = out {
        let text = serde_json::to_string_pretty(&structure).map_err(Error::from)?;
        fs::write(&path, text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs, mode: ExecMode) -> Result<(), Error> {
    let (mut cfg, base, config_hash) = load_config(&args.config)?;
    let mut train_cfg = cfg
        .training
        .take()
        .ok_or_else(|| Error::Config("config has no [training] section".into()))?;
    if let Some(episodes) = args.episodes {
        train_cfg.episodes = episodes;
    }
    let env = cfg.build_environment(&base, mode)?;
    let mut manifest = RunManifest::new("train", config_hash, vec![args.seed]);

    let t0 = Instant::now();
    let outcome = train(&env, &train_cfg, args.seed)?;
    manifest.record_timing("train", t0.elapsed().as_secs_f64());

    let ckpt = PolicyCheckpoint::new(&env.config, train_cfg, outcome.nets)?;
    ckpt.save(&args.out)?;
    manifest.record_output(&args.out);

    let mut curves = Vec::new();
    write_curves_csv(&mut curves, &outcome.curves)?;
    fs::write(&args.curves, curves)?;
    manifest.record_output(&args.curves);

    let manifest_path = args.manifest.unwrap_or_else(|| default_manifest_path(&args.out));
    manifest.save(&manifest_path)?;

    if let Some(last) = outcome.curves.last() {
        println!(
            "trained {} episodes; final moving-average cost {:.3}",
            last.episode, last.mean_cost
        );
    }
    println!("wrote {}, {}, {}", args.out.display(), args.curves.display(), manifest_path.display());
    Ok(())
}

fn cmd_search(config_path: &Path, seed: u64, out: &Path, mode: ExecMode) -> Result<(), Error> {
    let (cfg, base, config_hash) = load_config(config_path)?;
    let protocol = cfg.heuristics.unwrap_or_default();
    let env = cfg.build_environment(&base, mode)?;
    let mut manifest = RunManifest::new("heuristics search", config_hash, vec![seed]);
    let t0 = Instant::now();
    let result = grid_search(&env, &protocol, seed, mode)?;
    manifest.record_timing("search", t0.elapsed().as_secs_f64());
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    fs::write(out, csv)?;
    manifest.record_output(out);
    manifest.save(&default_manifest_path(out))?;
    let best = result.best();
    println!(
        "best rule: delta_ins={} n_ins={} mean cost {:.4} +/- {:.4} ({} episodes)",
        best.rule.delta_ins, best.rule.n_ins, best.mean_cost, best.stderr, best.n_episodes
    );
    Ok(())
}

fn parse_rule(text: &str) -> Result<HeuristicRule, Error> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("rule must be `delta_ins,n_ins`, got {text:?}")));
    }
    let delta_ins = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad delta_ins in rule {text:?}")))?;
    let n_ins = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad n_ins in rule {text:?}")))?;
    Ok(HeuristicRule { delta_ins, n_ins })
}

/// Builds the policy requested on the command line, verifying checkpoint
/// binding for trained policies.
fn build_policy(
    env: &Environment,
    checkpoint: Option<&Path>,
    rule: Option<&str>,
    greedy: bool,
) -> Result<(Box<dyn Policy>, String), Error> {
    match (checkpoint, rule) {
        (Some(path), None) => {
            let ckpt = PolicyCheckpoint::load(path)?;
            ckpt.verify_env(&env.config)?;
            let label = format!("checkpoint {}", path.display());
            Ok((Box::new(DdmacPolicy { nets: ckpt.nets, greedy }), label))
        }
        (None, Some(text)) => {
            let rule = parse_rule(text)?;
            rule.validate(env.config.horizon_years, env.config.n_components)?;
            let label = format!("heuristic delta_ins={} n_ins={}", rule.delta_ins, rule.n_ins);
            Ok((Box::new(HeuristicPolicy { rule }), label))
        }
        _ => Err(Error::Config("pass exactly one of --checkpoint or --rule".into())),
    }
}

fn cmd_evaluate(args: EvaluateArgs, mode: ExecMode) -> Result<(), Error> {
    if args.episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".into()));
    }
    let (cfg, base, _) = load_config(&args.config)?;
    let env = cfg.build_environment(&base, mode)?;
    let (policy, label) =
        build_policy(&env, args.checkpoint.as_deref(), args.rule.as_deref(), args.greedy)?;
    let report = evaluate_policy(policy.as_ref(), &env, args.episodes, args.seed, mode)?;
    println!("policy: {label}");
    print_report(&report);
    if let Some(dir) = args.episodes_log {
        fs::create_dir_all(&dir)?;
        let n_logged = args.episodes.min(20);
        for i in 0..n_logged {
            let episode_seed = derive_seed(args.seed, &[i as u64]);
            let mut csv = Vec::new();
            env.run_episode_logged(policy.as_ref(), episode_seed, &mut csv)?;
            fs::write(dir.join(format!("episode_{i:03}.csv")), csv)?;
        }
        println!("wrote {n_logged} episode logs under {}", dir.display());
    }
    Ok(())
}

fn print_report(r: &CostReport) {
    println!("  episodes          {}", r.n_episodes);
    println!("  mean total cost   {:.4} +/- {:.4}", r.mean_cost, r.stderr);
    println!("  campaign          {:.4}", r.mean_campaign);
    println!("  inspection        {:.4}", r.mean_inspection);
    println!("  repair            {:.4}", r.mean_repair);
    println!("  risk/failure      {:.4}", r.mean_risk);
}

fn cmd_compare(args: CompareArgs, mode: ExecMode) -> Result<(), Error> {
    if args.episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".into()));
    }
    let (cfg, base, _) = load_config(&args.config)?;
    let env = cfg.build_environment(&base, mode)?;
    let (trained, trained_label) =
        build_policy(&env, Some(&args.checkpoint), None, args.greedy)?;
    let (heuristic, heuristic_label) = build_policy(&env, None, Some(&args.rule), false)?;
    let a = evaluate_policy(trained.as_ref(), &env, args.episodes, args.seed, mode)?;
    let b = evaluate_policy(heuristic.as_ref(), &env, args.episodes, args.seed, mode)?;
    println!("cost decomposition over {} episodes (seed {})", args.episodes, args.seed);
    println!("{:<18} {:>14} {:>14}", "category", "trained", "heuristic");
    println!("{:<18} {:>14.4} {:>14.4}", "campaign", a.mean_campaign, b.mean_campaign);
    println!("{:<18} {:>14.4} {:>14.4}", "inspection", a.mean_inspection, b.mean_inspection);
    println!("{:<18} {:>14.4} {:>14.4}", "repair", a.mean_repair, b.mean_repair);
    println!("{:<18} {:>14.4} {:>14.4}", "risk/failure", a.mean_risk, b.mean_risk);
    println!("{:<18} {:>14.4} {:>14.4}", "total", a.mean_cost, b.mean_cost);
    println!("{:<18} {:>14.4} {:>14.4}", "stderr", a.stderr, b.stderr);
    println!("trained: {trained_label}");
    println!("heuristic: {heuristic_label}");
    Ok(())
}

fn cmd_sei(config_path: &Path, log: Option<PathBuf>) -> Result<(), Error> {
    let (cfg, base, _) = load_config(config_path)?;
    let system = cfg.build_system(&base)?;
    let frame = match &system {
        SystemModel::Frame(f) => f,
        SystemModel::KOutOfN { .. } => {
            return Err(Error::Config(
                "single-element importance requires a frame system".into(),
            ))
        }
    };
    let n_hotspots = cfg.environment.n_components;
    frame.validate(n_hotspots)?;
    // baseline: every hotspot at its own marginal failure probability (here
    // a uniform reference level so the ranking reflects structure alone)
    let p_ref = vec![0.01; n_hotspots];
    let sei = frame.importance_ranking(&p_ref, ExecMode::default())?;
    let mut ranking: Vec<(usize, f64)> = sei.into_iter().enumerate().collect();
    ranking.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let repair_counts = match log {
        Some(path) => Some(repair_frequencies(&path, n_hotspots)?),
        None => None,
    };
    println!("{:<10} {:>14} {:>14}", "hotspot", "sei", "repair_freq");
    for (h, sei) in &ranking {
        match &repair_counts {
            Some(freq) => println!("{:<10} {:>14.6e} {:>14.4}", h, sei, freq[*h]),
            None => println!("{:<10} {:>14.6e} {:>14}", h, sei, "-"),
        }
    }
    Ok(())
}

/// Per-component repair frequency from one or more `evaluate
/// --episodes-log` CSVs (a file or a directory of them).
fn repair_frequencies(path: &Path, n_components: usize) -> Result<Vec<f64>, Error> {
    let mut counts = vec![0usize; n_components];
    let mut rows = 0usize;
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    for file in files {
        let text = fs::read_to_string(&file)?;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 3 {
                continue;
            }
            let component: usize = cols[1]
                .parse()
                .map_err(|_| Error::Config(format!("bad component column in {}", file.display())))?;
            if component >= n_components {
                return Err(Error::Config(format!(
                    "component {component} out of range in {}",
                    file.display()
                )));
            }
            rows += 1;
            if cols[2] == "repair" {
                counts[component] += 1;
            }
        }
    }
    if rows == 0 {
        return Err(Error::Config(format!("no rows found in {}", path.display())));
    }
    let steps_per_component = rows as f64 / n_components as f64;
    Ok(counts.iter().map(|&c| c as f64 / steps_per_component).collect())
}
