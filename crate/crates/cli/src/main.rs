//! `dhvt` command line: cost reports, gradient checks, training, evaluation,
//! attention export, and config generation for the published variants.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dhvt_cli::checkpoint::{load_checkpoint, LoadedStore};
use dhvt_cli::data::{Normalization, Split};
use dhvt_cli::error::{CliError, Result};
use dhvt_cli::export::{export_attention, ImageSource};
use dhvt_cli::gradcheck::{run_gradcheck, GradcheckOptions};
use dhvt_cli::run_config::RunConfig;
use dhvt_cli::trainer::{evaluate_on, train};
use dhvt_core::accounting::{count_macs, count_params, CostReport};
use dhvt_core::model::{build_model, variant_config, ModelConfig, VariantDataset, VariantTier};

#[derive(Parser)]
#[command(name = "dhvt", version, about = "Hybrid vision transformer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact parameter and MAC counts for a config or published variant.
    Count {
        /// Model config JSON file.
        #[arg(long, conflicts_with_all = ["variant", "dataset", "patch"])]
        config: Option<PathBuf>,
        /// Variant tier: dhvt-t or dhvt-s.
        #[arg(long, requires = "dataset", requires = "patch")]
        variant: Option<String>,
        /// Variant dataset: cifar, domain or imagenet.
        #[arg(long)]
        dataset: Option<String>,
        /// Variant patch size.
        #[arg(long)]
        patch: Option<usize>,
        /// Emit the full report as JSON instead of a table.
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the backward pass (always f64).
    Gradcheck {
        /// Model config JSON file; defaults to a micro full model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
    },
    /// Train per a run-config JSON file.
    Train {
        #[arg(long)]
        run: PathBuf,
        /// Override the run config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the data of a run config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Data split: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Export per-layer attention (CSV) and head-token maps (PGM).
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// "gray" or a path to a PNG at the model resolution.
        #[arg(long, default_value = "gray")]
        image: String,
        /// Comma-separated encoder layer indices.
        #[arg(long, default_value = "0")]
        layers: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit a published variant's model config as JSON.
    MakeConfig {
        /// dhvt-t or dhvt-s.
        #[arg(long)]
        variant: String,
        /// cifar, domain or imagenet.
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        patch: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn parse_tier(s: &str) -> Result<VariantTier> {
    match s.to_ascii_lowercase().as_str() {
        "dhvt-t" | "t" | "tiny" => Ok(VariantTier::Tiny),
        "dhvt-s" | "s" | "small" => Ok(VariantTier::Small),
        other => Err(CliError::Config(format!(
            "unknown variant {other}; expected dhvt-t or dhvt-s"
        ))),
    }
}

fn parse_dataset(s: &str) -> Result<VariantDataset> {
    match s.to_ascii_lowercase().as_str() {
        "cifar" | "cifar100" | "cifar-100" => Ok(VariantDataset::Cifar),
        "domain" | "domainnet" => Ok(VariantDataset::Domain),
        "imagenet" | "imagenet1k" | "imagenet-1k" => Ok(VariantDataset::ImageNet),
        other => Err(CliError::Config(format!(
            "unknown dataset {other}; expected cifar, domain or imagenet"
        ))),
    }
}

fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let cfg: ModelConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(CliError::Core)?;
    Ok(cfg)
}

fn micro_config() -> ModelConfig {
    ModelConfig::new((8, 8), 4, 16, 1, 2, 3)
}

fn resolve_config(
    config: Option<PathBuf>,
    variant: Option<String>,
    dataset: Option<String>,
    patch: Option<usize>,
) -> Result<ModelConfig> {
    match (config, variant) {
        (Some(path), _) => load_model_config(&path),
        (None, Some(v)) => {
            let tier = parse_tier(&v)?;
            let ds = parse_dataset(dataset.as_deref().ok_or_else(|| {
                CliError::Config("--variant needs --dataset and --patch".into())
            })?)?;
            let p = patch
                .ok_or_else(|| CliError::Config("--variant needs --dataset and --patch".into()))?;
            variant_config(tier, ds, p).map_err(CliError::Core)
        }
        (None, None) => Err(CliError::Config(
            "provide either --config or --variant/--dataset/--patch".into(),
        )),
    }
}

fn cmd_count(cfg: &ModelConfig, json: bool, seed: u64) -> Result<()> {
    let store = build_model::<f32>(cfg, seed).map_err(CliError::Core)?;
    let report = count_params(&store).merge(count_macs(cfg).map_err(CliError::Core)?);
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Format(e.to_string()))?
        );
        return Ok(());
    }
    let params1 = CostReport::rollup(&report.params, 1);
    let macs1 = CostReport::rollup(&report.macs, 1);
    let mut names: Vec<&String> = params1.keys().collect();
    for name in macs1.keys() {
        if !params1.contains_key(name) {
            names.push(name);
        }
    }
    println!("{:<28} {:>14} {:>16}", "submodule", "params", "macs");
    for name in names {
        println!(
            "{:<28} {:>14} {:>16}",
            name,
            params1.get(name).copied().unwrap_or(0),
            macs1.get(name).copied().unwrap_or(0)
        );
    }
    println!("{:-<60}", "");
    println!(
        "{:<28} {:>14} {:>16}",
        "total", report.total_params, report.total_macs
    );
    println!(
        "params: {:.2}M   gflops: {:.3}   (with attention products: {:.3})",
        report.total_params as f64 / 1e6,
        report.gflops(),
        report.total_macs as f64 / 1e9,
    );
    Ok(())
}

fn cmd_gradcheck(cfg: &ModelConfig, opts: &GradcheckOptions) -> Result<()> {
    let report = run_gradcheck(cfg, opts)?;
    println!(
        "checked {} sampled parameters: max rel err {:.3e} (worst {})",
        report.checked, report.max_rel_err, report.worst
    );
    if report.passed() {
        println!("gradcheck PASS at tolerance {:.0e}", report.tolerance);
        Ok(())
    } else {
        for o in &report.offenders {
            eprintln!(
                "  offender {}[{}] rel err {:.3e}",
                o.name, o.index, o.rel_err
            );
        }
        Err(CliError::Gradcheck(format!(
            "{} of {} sampled parameters exceed tolerance {:.0e}; worst {} at {:.3e}",
            report.offenders.len(),
            report.checked,
            report.tolerance,
            report.worst,
            report.max_rel_err
        )))
    }
}

fn cmd_train(run: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut rc = RunConfig::from_file(run)?;
    if let Some(dir) = out {
        rc.out_dir = dir;
    }
    let outcome = train(&rc)?;
    for entry in &outcome.log {
        println!(
            "epoch {:>4}  steps {:>6}  loss {:.6}  train_acc {:.4}  eval_acc {:.4}  lr {:.3e}",
            entry.epoch,
            entry.steps_done,
            entry.mean_loss,
            entry.train_accuracy,
            entry.eval_accuracy,
            entry.lr
        );
    }
    if let Some(steps) = outcome.steps_to_target {
        println!("reached target train accuracy after {steps} steps");
    }
    if let Some(steps) = outcome.steps_to_target_eval {
        println!("reached target eval accuracy after {steps} steps");
    }
    println!(
        "final train accuracy {:.4}, eval accuracy {:.4} (best {:.4}); checkpoint: {}",
        outcome.final_train_accuracy,
        outcome.final_eval_accuracy,
        outcome.best_eval_accuracy,
        outcome.checkpoint_final.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, run: &Path, split: &str) -> Result<()> {
    let rc = RunConfig::from_file(run)?;
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(CliError::Config(format!(
                "unknown split {other}; expected train or test"
            )))
        }
    };
    let data = rc.data.load(split)?;
    let (cfg, store) = load_checkpoint(checkpoint)?;
    let accuracy = match store {
        LoadedStore::F32(mut s) => evaluate_on(&mut s, &cfg, &data, rc.batch_size)?,
        LoadedStore::F64(mut s) => evaluate_on(&mut s, &cfg, &data, rc.batch_size)?,
    };
    println!("samples: {}  accuracy: {:.4}", data.len(), accuracy);
    Ok(())
}

fn cmd_export(checkpoint: &Path, image: &str, layers: &str, out: &Path) -> Result<()> {
    let (cfg, mut store) = load_checkpoint(checkpoint)?;
    let layer_list: Vec<usize> = layers
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Config(format!("bad layer index {s}: {e}")))
        })
        .collect::<Result<_>>()?;
    if layer_list.is_empty() {
        return Err(CliError::Config("no layer indices given".into()));
    }
    let source = ImageSource::parse(image);
    let outcome = export_attention(
        &cfg,
        &mut store,
        &source,
        &layer_list,
        &Normalization::identity(),
        out,
    )?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if outcome.head_maps_skipped {
        eprintln!(
            "note: checkpoint was trained without head tokens; only averaged attention exported"
        );
    }
    Ok(())
}

fn cmd_make_config(
    variant: &str,
    dataset: &str,
    patch: usize,
    output: Option<PathBuf>,
) -> Result<()> {
    let cfg = variant_config(parse_tier(variant)?, parse_dataset(dataset)?, patch)
        .map_err(CliError::Core)?;
    let json = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Format(e.to_string()))?;
    match output {
        Some(path) => {
            std::fs::write(&path, json).map_err(|e| CliError::io(&path, e))?;
            println!("wrote {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Count {
            config,
            variant,
            dataset,
            patch,
            json,
            seed,
        } => {
            let cfg = resolve_config(config, variant, dataset, patch)?;
            cmd_count(&cfg, json, seed)
        }
        Command::Gradcheck {
            config,
            tolerance,
            samples,
            seed,
            batch,
        } => {
            let cfg = match config {
                Some(path) => load_model_config(&path)?,
                None => micro_config(),
            };
            cmd_gradcheck(
                &cfg,
                &GradcheckOptions {
                    samples,
                    tolerance,
                    seed,
                    batch,
                    corrupt: None,
                },
            )
        }
        Command::Train { run: r, out } => cmd_train(&r, out),
        Command::Eval {
            checkpoint,
            run: r,
            split,
        } => cmd_eval(&checkpoint, &r, &split),
        Command::ExportAttention {
            checkpoint,
            image,
            layers,
            out,
        } => cmd_export(&checkpoint, &image, &layers, &out),
        Command::MakeConfig {
            variant,
            dataset,
            patch,
            output,
        } => cmd_make_config(&variant, &dataset, patch, output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
