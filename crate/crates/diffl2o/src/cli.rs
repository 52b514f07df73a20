//! Command-line entry point: wires config files to training, sampling,
//! benchmarking, ablations, bound evaluation, and exports.
//!
//! Exit codes: 0 success, 1 config/usage error, 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{
    atomic_write, measure_training_time, run_comparison, run_guidance_ablation, run_oracle_ablation,
    train_family, train_family_ele, write_runs, ExperimentConfig, REFERENCE_VALUES,
};
use crate::bounds::{diffl2o_gaussian_bound, BoundInput};
use crate::config::ConfigMap;
use crate::diffl2o::{
    backward_sample, ele_backward_sample, GuidanceSpec, GuidanceVariant, OracleVariant,
};
use crate::error::{Error, Result};
use crate::net::DenoiserNet;
use crate::rngutil::{derive_seed, rng_from_seed};
use crate::schedule::{dump_csv, linear_beta, ContinuousSchedule};
use crate::trajectory::AnalyticOptimizerConfig;

#[derive(Parser, Debug)]
#[command(
    name = "diff-l2o",
    about = "Diffusion-based learned optimizer: train denoisers to generate solutions of optimization problems, benchmark them against analytic optimizers, and evaluate PAC-Bayes generalization bounds.",
    version
)]
struct Cli {
    /// Config file (flat `key = value` lines; unknown keys are errors)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed; all randomness derives from it
    #[arg(long, global = true, default_value_t = 0)]
    root_seed: u64,

    /// Directory for artifacts
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,

    /// Worker threads (default: available cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Config overrides, key=value (repeatable)
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a denoiser on an optimizee family and write a checkpoint
    Train,
    /// Sample solutions with a trained checkpoint and write trajectories
    Sample {
        /// Checkpoint path (default: <output_dir>/model.net)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train + evaluate all configured methods; write runs/ and summary.json
    Bench,
    /// Compare oracle co-training variants (noisy/fixed/partial/perfect/ours)
    AblateOracle,
    /// Compare guidance variants (gradient/global/all) at 10 and full steps
    AblateGuidance,
    /// Evaluate the Gaussian generalization bound; print term breakdown
    Bound,
    /// Export learned vs ground-truth solution clouds for a 2-dim problem
    ExportDist,
    /// Write the discrete + continuous schedule tables as CSV
    ScheduleDump,
    /// Measure wall-clock training time for the configured family
    Time,
}

fn load_config(cli: &Cli) -> Result<ConfigMap> {
    let mut cfg = match &cli.config {
        Some(path) => ConfigMap::from_file(path)?,
        None => ConfigMap::parse_str("")?,
    };
    cfg.apply_overrides(&cli.overrides)?;
    Ok(cfg)
}

fn model_path(out_dir: &Path) -> PathBuf {
    out_dir.join("model.net")
}

fn save_net(net: &DenoiserNet, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    net.write_checkpoint(&mut bytes)?;
    atomic_write(path, &bytes)
}

fn load_net(path: &Path) -> Result<DenoiserNet> {
    let bytes = std::fs::read(path)?;
    DenoiserNet::read_checkpoint(&mut bytes.as_slice())
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    let ele: bool = raw.get_or("ele", false)?;
    raw.finish()?;
    let net = if ele {
        train_family_ele(&cfg, cli.root_seed)?
    } else {
        train_family(&cfg, cli.root_seed)?.0
    };
    let path = model_path(&cli.output_dir);
    save_net(&net, &path)?;
    println!("trained {} on {} {}x{}; checkpoint: {}", if ele { "element-wise denoiser" } else { "denoiser" }, cfg.kind.name(), cfg.dims.0, cfg.dims.1, path.display());
    Ok(())
}

fn cmd_sample(cli: &Cli, model: Option<&Path>) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    let ele: bool = raw.get_or("ele", false)?;
    let count: usize = raw.get_or("sample_count", 5)?;
    raw.finish()?;
    let default_model = model_path(&cli.output_dir);
    let net = load_net(model.unwrap_or(&default_model))?;
    let sched = cfg.schedule()?;
    let insts = crate::bench::sample_family(&cfg, derive_seed(cli.root_seed, 2), count)?;
    std::fs::create_dir_all(&cli.output_dir)?;
    for (i, inst) in insts.iter().enumerate() {
        let seed = derive_seed(derive_seed(cli.root_seed, 6), i as u64);
        let mut rng = rng_from_seed(seed);
        let traj = if ele {
            ele_backward_sample(&net, inst, &sched, &mut rng, seed)?
        } else {
            let gspec = GuidanceSpec::for_instance(cfg.guidance, inst);
            backward_sample(&net, inst, &gspec, &sched, &mut rng, seed)?
        };
        let mut bytes = Vec::new();
        traj.write_csv(&mut bytes)?;
        let path = cli.output_dir.join(format!("sample-{i}.csv"));
        atomic_write(&path, &bytes)?;
        println!(
            "sample {i}: final loss {:.6e} -> {}",
            traj.final_loss().unwrap_or(f64::NAN),
            path.display()
        );
    }
    Ok(())
}

fn cmd_bench(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    raw.finish()?;
    let records = run_comparison(&cfg, cli.root_seed)?;
    let summary = write_runs(&records, &cli.output_dir, cli.root_seed)?;
    println!("{} records; summary: {}", records.len(), summary.display());
    Ok(())
}

fn cmd_ablate_oracle(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    let variants: Vec<OracleVariant> = match raw.get_list("oracle_variants") {
        Some(names) => names.iter().map(|n| OracleVariant::parse(n)).collect::<Result<_>>()?,
        None => vec![
            OracleVariant::Noisy,
            OracleVariant::Fixed,
            OracleVariant::Partial,
            OracleVariant::Perfect,
            OracleVariant::Ours,
        ],
    };
    raw.finish()?;
    let table = run_oracle_ablation(&cfg, &variants, cli.root_seed)?;
    for (name, log_loss) in &table {
        println!("{name:>8}: median log10 loss = {log_loss:.4}");
    }
    let json = serde_json::to_string_pretty(&table)
        .map_err(|e| Error::Format(format!("table serialization failed: {e}")))?;
    let path = cli.output_dir.join("oracle-ablation.json");
    atomic_write(&path, (json + "\n").as_bytes())?;
    println!("table: {}", path.display());
    Ok(())
}

fn cmd_ablate_guidance(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    let variants: Vec<GuidanceVariant> = match raw.get_list("guidance_variants") {
        Some(names) => names.iter().map(|n| GuidanceVariant::parse(n)).collect::<Result<_>>()?,
        None => vec![GuidanceVariant::Gradient, GuidanceVariant::Global, GuidanceVariant::All],
    };
    raw.finish()?;
    let table = run_guidance_ablation(&cfg, &variants, cli.root_seed)?;
    let printable: std::collections::BTreeMap<String, f64> = table
        .iter()
        .map(|((v, t), l)| (format!("{v}@{t}"), *l))
        .collect();
    for (name, log_loss) in &printable {
        println!("{name:>12}: median log10 loss = {log_loss:.4}");
    }
    let json = serde_json::to_string_pretty(&printable)
        .map_err(|e| Error::Format(format!("table serialization failed: {e}")))?;
    let path = cli.output_dir.join("guidance-ablation.json");
    atomic_write(&path, (json + "\n").as_bytes())?;
    println!("table: {}", path.display());
    Ok(())
}

fn parse_vector(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad vector entry '{s}'"))))
        .collect()
}

fn cmd_bound(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let mu = parse_vector(&raw.require::<String>("mu")?)?;
    let inp = BoundInput {
        n: raw.require("n")?,
        k: mu.len(),
        alpha_bar_t: raw.require("alpha_bar_t")?,
        mu_hat: parse_vector(&raw.require::<String>("mu_hat")?)?,
        sigma_hat_diag: parse_vector(&raw.require::<String>("sigma_hat")?)?,
        mu,
        delta: raw.get_or("delta", 0.05)?,
        m_term: raw.get_or("m_term", 1.0)?,
    };
    raw.finish()?;
    let terms = diffl2o_gaussian_bound(&inp)?;
    println!("diversity (k log(1-abar_t))            : {:+.6e}", terms.diversity);
    println!("bias (||mu_hat - mu||^2, as printed)   : {:+.6e}", terms.bias);
    println!("  bias under the KL scaling /(1-abar_t): {:+.6e}", terms.bias_kl_scaled);
    println!("variance (-log|S| - k + tr(S)/(1-abar)): {:+.6e}", terms.variance);
    println!("task (log(M/delta))                    : {:+.6e}", terms.task);
    println!("bound ((sum)/n)                        : {:+.6e}", terms.total);
    Ok(())
}

fn cmd_export_dist(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    let n_points: usize = raw.get_or("n_points", 5000)?;
    let true_lr: f64 = raw.get_or("true_lr", 0.01)?;
    let true_steps: usize = raw.get_or("true_steps", 100)?;
    raw.finish()?;
    if cfg.dims.0 != 2 {
        return Err(Error::Config("distribution export needs dim_n = 2".into()));
    }
    let (net, gspec) = train_family(&cfg, cli.root_seed)?;
    let inst = crate::bench::sample_family(&cfg, derive_seed(cli.root_seed, 2), 1)?.remove(0);
    let sched = cfg.schedule()?;
    let (learned, truth) = crate::bench::export_distribution(
        &net,
        &inst,
        &gspec,
        n_points,
        &AnalyticOptimizerConfig::gd(true_lr, true_steps),
        &sched,
        cli.root_seed,
        &cli.output_dir,
    )?;
    println!(
        "wrote {} learned and {} ground-truth points to {}",
        learned.len(),
        truth.len(),
        cli.output_dir.display()
    );
    Ok(())
}

fn cmd_schedule_dump(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let t_max: usize = raw.get_or("t_max", 100)?;
    let beta_min: f64 = raw.get_or("beta_min", 1e-5)?;
    let beta_max: f64 = raw.get_or("beta_max", 2e-2)?;
    let family: String = raw.get_or("sde_family", "vp".to_string())?;
    raw.finish()?;
    let disc = linear_beta(t_max, beta_min, beta_max)?;
    let cont = match family.to_ascii_lowercase().as_str() {
        "vp" => ContinuousSchedule::vp(beta_min, beta_max - beta_min)?,
        "ve" => ContinuousSchedule::ve(),
        "edm" => ContinuousSchedule::edm(),
        other => return Err(Error::Config(format!("unknown sde_family '{other}'"))),
    };
    let mut bytes = Vec::new();
    dump_csv(&disc, &cont, &mut bytes)?;
    let path = cli.output_dir.join("schedule.csv");
    atomic_write(&path, &bytes)?;
    println!("schedule table: {}", path.display());
    Ok(())
}

fn cmd_time(cli: &Cli) -> Result<()> {
    let raw = load_config(cli)?;
    let cfg = ExperimentConfig::from_config(&raw)?;
    raw.finish()?;
    let secs = measure_training_time(&cfg, cli.root_seed)?;
    let reference = REFERENCE_VALUES
        .iter()
        .find(|r| r.name == "train_time_lasso5_seconds")
        .map(|r| r.value)
        .unwrap_or(f64::NAN);
    println!(
        "training {} {}x{} took {secs:.2}s (published 5-dim Lasso reference: {reference}s, annotation only)",
        cfg.kind.name(),
        cfg.dims.0,
        cfg.dims.1
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        // may already be initialized (e.g. repeated dispatch in one process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    std::fs::create_dir_all(&cli.output_dir)?;
    match &cli.command {
        Command::Train => cmd_train(cli),
        Command::Sample { model } => cmd_sample(cli, model.as_deref()),
        Command::Bench => cmd_bench(cli),
        Command::AblateOracle => cmd_ablate_oracle(cli),
        Command::AblateGuidance => cmd_ablate_guidance(cli),
        Command::Bound => cmd_bound(cli),
        Command::ExportDist => cmd_export_dist(cli),
        Command::ScheduleDump => cmd_schedule_dump(cli),
        Command::Time => cmd_time(cli),
    }
}

/// Parse argv and execute; returns the process exit code.
/// 0 = success, 1 = config/usage error, 2 = runtime failure.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are successes, not usage errors
            use clap::error::ErrorKind;
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    0
                }
                _ => {
                    eprintln!("{err}");
                    1
                }
            };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}
