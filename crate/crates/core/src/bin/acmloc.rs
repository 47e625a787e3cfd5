use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde_json::json;

use acmloc::data::{generate_synthetic, SyntheticSpec};
use acmloc::evaluation::render_table;
use acmloc::harness::pipeline::{evaluate_dataset, infer, load_config_dataset, select};
use acmloc::harness::{plot_traces, run_ablation_matrix, train, AblationMatrix, TrainConfig};
use acmloc::localization::{read_detections, write_detections};
use acmloc::{Checkpoint32, Error};

#[derive(Parser)]
#[command(name = "acmloc", version, about = "Weakly-supervised temporal action localization")]
struct Cli {
    /// JSON run configuration (profile defaults are used for missing fields).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// `key=value` override with a dotted key, e.g. `hyper.alpha=0.5`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration.
    Config,
    /// Train on the training subset and save a checkpoint.
    Train {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write detections for the evaluation subset.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Subset to run on; defaults to the config's evaluation subset.
        #[arg(long)]
        subset: Option<String>,
    },
    /// Score a detection file against the annotations.
    Eval {
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        subset: Option<String>,
    },
    /// Train and evaluate every cell of an experiment matrix.
    Ablate {
        /// Preset (branches, branch-stack, auxiliary, snippets) or a matrix JSON file.
        #[arg(long)]
        matrix: String,
        /// Text table output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON array of `{name, report}` objects.
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Write CAS and attention traces of one video as CSV and SVG.
    Plot {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        video: String,
        /// Output stem; `.csv` and `.svg` are appended.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(path) => TrainConfig::load(path, &cli.overrides)?,
        None => TrainConfig::from_value(json!({}), &cli.overrides)?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| anyhow!(Error::Validation(format!("no {what} path given on the command line or in the config"))))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth { spec, out } => {
            let mut spec: SyntheticSpec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() })?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let dataset = generate_synthetic(&spec)?;
            dataset.save(out)?;
            println!("{}", json!({"videos": dataset.len(), "classes": dataset.num_classes(), "out": out}));
        }
        Command::Config => print!("{}", load_config(&cli)?.to_json()),
        Command::Train { checkpoint } => {
            let mut config = load_config(&cli)?;
            config.checkpoint = Some(required(checkpoint.clone(), &config.checkpoint, "checkpoint")?);
            let dataset = load_config_dataset(&config)?;
            let train_set = select(&dataset, config.train_subset.as_deref())?;
            let outcome = match &config.log {
                Some(path) => {
                    let file = File::create(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                    let mut w = BufWriter::new(file);
                    let outcome = train(&config, &train_set, Some(&mut w))?;
                    w.flush().with_context(|| format!("flushing {}", path.display()))?;
                    outcome
                }
                None => train(&config, &train_set, None)?,
            };
            println!(
                "{}",
                json!({
                    "steps": outcome.steps,
                    "final_epoch_loss": outcome.epoch_losses.last(),
                    "checkpoint": config.checkpoint,
                })
            );
        }
        Command::Infer { checkpoint, out, subset } => {
            let config = load_config(&cli)?;
            let ckpt = Checkpoint32::load(&required(checkpoint.clone(), &config.checkpoint, "checkpoint")?)?;
            let out = required(out.clone(), &config.detections, "detections")?;
            let dataset = load_config_dataset(&config)?;
            let eval_set = select(&dataset, subset.as_deref().or(config.eval_subset.as_deref()))?;
            let mut hp = config.hyper.clone();
            hp.num_classes = dataset.num_classes();
            let detections = infer(&ckpt.network, &hp, &eval_set, config.resample)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
            }
            write_detections(&out, &detections)?;
            let count: usize = detections.values().map(Vec::len).sum();
            println!("{}", json!({"videos": detections.len(), "detections": count, "out": out}));
        }
        Command::Eval { detections, out, subset } => {
            let config = load_config(&cli)?;
            let detections = read_detections(&required(detections.clone(), &config.detections, "detections")?)?;
            let dataset = load_config_dataset(&config)?;
            let eval_set = select(&dataset, subset.as_deref().or(config.eval_subset.as_deref()))?;
            let report = evaluate_dataset(&detections, &eval_set, &config.hyper.tiou_grid)?;
            if let Some(path) = out.clone().or(config.report.clone()) {
                write_text(&path, &report.to_json())?;
            }
            print!("{}", render_table(&[("eval".to_string(), &report)]));
        }
        Command::Ablate { matrix, out, reports } => {
            let config = load_config(&cli)?;
            let matrix = AblationMatrix::resolve(matrix)?;
            let dataset = if matrix.cells.is_empty() {
                acmloc::data::Dataset { classes: Vec::new(), videos: Vec::new() }
            } else {
                load_config_dataset(&config)?
            };
            let results = run_ablation_matrix(&config, &dataset, &matrix)?;
            let rows: Vec<(String, &_)> = results.iter().map(|(n, r)| (n.clone(), r)).collect();
            let table = render_table(&rows);
            if let Some(path) = out {
                write_text(path, &table)?;
            }
            if let Some(path) = reports {
                let doc: Vec<_> = results.iter().map(|(n, r)| json!({"name": n, "report": r})).collect();
                write_text(path, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
            }
            print!("{table}");
        }
        Command::Plot { checkpoint, video, out } => {
            let config = load_config(&cli)?;
            let ckpt = Checkpoint32::load(&required(checkpoint.clone(), &config.checkpoint, "checkpoint")?)?;
            let dataset = load_config_dataset(&config)?;
            let mut hp = config.hyper.clone();
            hp.num_classes = dataset.num_classes();
            let (csv, svg) = plot_traces(&ckpt.network, &hp, &dataset, video, config.resample, out)?;
            println!("{}", json!({"csv": csv, "svg": svg}));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<Error>().map_or("error", Error::kind);
            eprintln!("{}", json!({"error": kind, "message": format!("{e:#}")}));
            ExitCode::FAILURE
        }
    }
}
