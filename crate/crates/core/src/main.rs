//! Command-line entry points: dataset generation, training, attack sweeps,
//! evaluation, and plotting, all driven by one strict-schema TOML config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 training aborted,
//! 1 anything else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use veriface::attack::MaskGeometry;
use veriface::checkpoint::load_model;
use veriface::config::{ExperimentConfig, GeneratorRegistry};
use veriface::error::Error;
use veriface::eval::{
    attack_reports, evaluate_suite, plot_image_grid, plot_location_heatmap, plot_metric_report,
    plot_roc_pr, plot_training_curves, MetricReport,
};
use veriface::synth::save_png;
use veriface::train::{early_stop_select, train, Regime, RunLog, StopGradAudit};

#[derive(Parser)]
#[command(
    name = "veriface",
    about = "Patch-robust face verification: train, attack, evaluate",
    version
)]
struct Cli {
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Pin to one worker thread. Results are bitwise identical either way;
    /// this only stabilizes wall-time measurements.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset to per-identity PNG folders plus a
    /// JSON manifest.
    DatasetGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured regime and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured regime (proposed | weak_at | doa).
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured attacks against a checkpoint and write JSON
    /// reports plus location-heatmap data.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to the named attacks (repeatable).
        #[arg(long = "attack")]
        attacks: Vec<String>,
    },
    /// Score the checkpoint across attacks and test-time augmentations;
    /// write the metric table (JSON + CSV) and plots.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-plot from persisted artifacts.
    Plot {
        #[arg(long)]
        run_log: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a configuration profile to edit and reuse.
    InitConfig {
        /// paper_defaults | toy
        #[arg(long, default_value = "paper_defaults")]
        profile: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = if cli.deterministic { 1 } else { cli.jobs };
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Dataset(_) | Error::Checkpoint(_) => 2,
                Error::TrainingAborted(_) => 3,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::InitConfig { profile, out } => {
            let cfg = match profile.as_str() {
                "paper_defaults" => ExperimentConfig::paper_defaults(),
                "toy" => ExperimentConfig::toy(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown profile '{other}' (expected paper_defaults or toy)"
                    )))
                }
            };
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&out, cfg.to_toml()?)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::DatasetGen { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let dataset = cfg.build_dataset()?;
            std::fs::create_dir_all(&out)?;
            let mut files: BTreeMap<u32, Vec<String>> = BTreeMap::new();
            for subset in [
                veriface::synth::Subset::Train,
                veriface::synth::Subset::Validation,
                veriface::synth::Subset::Test,
            ] {
                for &id in dataset.identities(subset) {
                    let name = dataset.identity_names[&id].clone();
                    let dir = out.join(&name);
                    std::fs::create_dir_all(&dir)?;
                    for (k, img) in dataset.images_of(id).iter().enumerate() {
                        let rel = format!("{name}/{k:03}.png");
                        save_png(img, &out.join(&rel))?;
                        files.entry(id).or_default().push(rel);
                    }
                }
            }
            let manifest = dataset.manifest(Some(&files));
            std::fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            println!(
                "wrote {} images for {} identities under {}",
                dataset.num_images(),
                files.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            regime,
            out,
        } => {
            let cfg = load_config(&config, cli.seed)?;
            let mut train_cfg = cfg.train_config();
            if let Some(r) = regime {
                train_cfg.regime = match r.as_str() {
                    "proposed" => Regime::Proposed,
                    "weak_at" => Regime::WeakAt,
                    "doa" => Regime::Doa,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown regime '{other}' (expected proposed, weak_at or doa)"
                        )))
                    }
                };
            }
            let regime_name = match train_cfg.regime {
                Regime::Proposed => "proposed",
                Regime::WeakAt => "weak_at",
                Regime::Doa => "doa",
            };
            let run_dir = out.unwrap_or_else(|| {
                cfg.output_dir
                    .join(format!("train-{regime_name}-seed{}", train_cfg.seed))
            });
            std::fs::create_dir_all(&run_dir)?;
            std::fs::write(run_dir.join("config.toml"), cfg.to_toml()?)?;

            let dataset = cfg.build_dataset()?;
            let registry = GeneratorRegistry::with_builtins();
            let generator = registry.build(&cfg.generator, &cfg.factor_spec())?;
            let gen_ref = matches!(train_cfg.regime, Regime::Proposed).then_some(&*generator);

            let mut audit = StopGradAudit::default();
            let audit_ref = matches!(train_cfg.regime, Regime::Proposed).then_some(&mut audit);
            let output = train(&train_cfg, &dataset, gen_ref, Some(&run_dir), audit_ref)?;

            plot_training_curves(&output.log, &run_dir.join("plots"))?;
            let best = early_stop_select(&output.checkpoints, train_cfg.early_stop_metric)?;
            let link = run_dir.join("best");
            let _ = std::fs::remove_file(&link);
            #[cfg(unix)]
            std::os::unix::fs::symlink("checkpoints/best.json", &link)?;
            #[cfg(not(unix))]
            std::fs::copy(run_dir.join("checkpoints/best.json"), &link)?;

            let last = output.log.records.last();
            println!(
                "finished {} steps; best step {} (val_loss {:.4}, val_auroc {:.4}); final val_auroc {:.4}; run dir {}",
                train_cfg.total_steps,
                best.step,
                best.val_loss,
                best.val_auroc,
                last.map(|r| r.val_auroc).unwrap_or(f64::NAN),
                run_dir.display()
            );
            if output.log.records.iter().any(|r| r.diverged) {
                println!("divergence marker set: validation loss exceeded its running minimum");
            }
            Ok(())
        }
        Command::Attack {
            config,
            checkpoint,
            out,
            attacks,
        } => {
            let cfg = load_config(&config, cli.seed)?;
            let (model, _, _) = load_model(&checkpoint)?;
            let dataset = cfg.build_dataset()?;
            let registry = GeneratorRegistry::with_builtins();
            let generator = registry.build(&cfg.generator, &cfg.factor_spec())?;
            let mut suite = cfg.suite_config();
            if !attacks.is_empty() {
                let mut kinds = Vec::new();
                for a in &attacks {
                    kinds.push(veriface::eval::AttackKind::parse(a)?);
                }
                suite.attacks = kinds;
            }
            std::fs::create_dir_all(&out)?;
            let (reports, locations) = attack_reports(&model, &dataset, Some(&*generator), &suite)?;
            std::fs::write(
                out.join("reports.json"),
                serde_json::to_string_pretty(&reports)?,
            )?;
            let spec = cfg.factor_spec();
            let geom = MaskGeometry::square_patch(spec.image_size.0, spec.image_size.1);
            let heatmap = serde_json::json!({
                "grid_rows": geom.positions(spec.image_size.0),
                "grid_cols": geom.positions(spec.image_size.1),
                "positions": locations,
            });
            std::fs::write(
                out.join("heatmap.json"),
                serde_json::to_string_pretty(&heatmap)?,
            )?;
            println!(
                "wrote {} attack reports to {}",
                reports.len(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            config,
            checkpoint,
            out,
        } => {
            let cfg = load_config(&config, cli.seed)?;
            let (model, _, _) = load_model(&checkpoint)?;
            let dataset = cfg.build_dataset()?;
            let registry = GeneratorRegistry::with_builtins();
            let generator = registry.build(&cfg.generator, &cfg.factor_spec())?;
            let suite = cfg.suite_config();
            std::fs::create_dir_all(&out)?;
            let output = evaluate_suite(&model, &dataset, Some(&*generator), &suite)?;
            std::fs::write(
                out.join("metrics.json"),
                serde_json::to_string_pretty(&output.report)?,
            )?;
            std::fs::write(out.join("metrics.csv"), output.report.to_csv())?;
            plot_metric_report(&output.report, &out)?;
            for (key, set) in &output.scores {
                let name = key.replace('|', "_");
                plot_roc_pr(&set.scores, &set.labels, &name, &out.join("curves"))?;
            }
            if !output.square_locations.is_empty() {
                let spec = cfg.factor_spec();
                let geom = MaskGeometry::square_patch(spec.image_size.0, spec.image_size.1);
                plot_location_heatmap(
                    &output.square_locations,
                    &geom.positions(spec.image_size.0),
                    &geom.positions(spec.image_size.1),
                    &out.join("square_patch_heatmap.png"),
                )?;
            }
            if !output.distal_pairs.is_empty() {
                let targets: Vec<_> = output.distal_pairs.iter().map(|(t, _)| t).collect();
                let distals: Vec<_> = output.distal_pairs.iter().map(|(_, d)| d).collect();
                plot_image_grid(&[targets, distals], &out.join("distal_grid.png"))?;
            }
            println!("wrote metrics and plots to {}", out.display());
            Ok(())
        }
        Command::Plot {
            run_log,
            report,
            heatmap,
            out,
        } => {
            if run_log.is_none() && report.is_none() && heatmap.is_none() {
                return Err(Error::Config(
                    "plot needs --run-log, --report, or --heatmap".into(),
                ));
            }
            std::fs::create_dir_all(&out)?;
            if let Some(path) = run_log {
                let log = RunLog::from_csv(&std::fs::read_to_string(&path)?)?;
                plot_training_curves(&log, &out)?;
            }
            if let Some(path) = report {
                let report: MetricReport =
                    serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                plot_metric_report(&report, &out)?;
            }
            if let Some(path) = heatmap {
                let data: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                let as_usize_vec = |v: &serde_json::Value| -> Vec<usize> {
                    v.as_array()
                        .map(|a| {
                            a.iter()
                                .filter_map(|x| x.as_u64().map(|u| u as usize))
                                .collect()
                        })
                        .unwrap_or_default()
                };
                let rows = as_usize_vec(&data["grid_rows"]);
                let cols = as_usize_vec(&data["grid_cols"]);
                let positions: Vec<(usize, usize)> = data["positions"]
                    .as_array()
                    .map(|a| {
                        a.iter()
                            .filter_map(|p| {
                                let pair = p.as_array()?;
                                Some((
                                    pair.first()?.as_u64()? as usize,
                                    pair.get(1)?.as_u64()? as usize,
                                ))
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                plot_location_heatmap(&positions, &rows, &cols, &out.join("heatmap.png"))?;
            }
            println!("wrote plots to {}", out.display());
            Ok(())
        }
    }
}
