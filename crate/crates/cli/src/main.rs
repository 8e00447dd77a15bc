mod config;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{load_json, ExperimentConfig, GenStreamConfig, PolicyEntry};
use eenn_core::eval::{
    evaluate, final_classifier_accuracy, suggest_grid, sweep, write_csv, write_svg_scatter,
    SweepRecord,
};
use eenn_core::model::{ExitModel, Model};
use eenn_core::stream::{write_stream, StreamSample};

#[derive(Parser)]
#[command(
    name = "eenn",
    about = "Early-exit network runtime: generate streams, inspect models, run evaluations and threshold sweeps",
    version
)]
struct Cli {
    /// Override the experiment's output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the stream generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stream JSONL file from a generator config.
    GenStream {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a model's per-exit cost table.
    Inspect { model: PathBuf },
    /// Evaluate every configured policy once at its scalar parameters.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep every configured policy over its grid; write CSV and SVG.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Suggest a threshold grid from observed exit-0 distances.
    SuggestGrid {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
    },
}

/// Log verbosity from EENN_LOG: quiet (0), info (1, default), debug (2).
fn verbosity() -> u8 {
    static LEVEL: OnceLock<u8> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        match std::env::var("EENN_LOG")
            .unwrap_or_default()
            .to_ascii_lowercase()
            .as_str()
        {
            "quiet" | "0" => 0,
            "debug" | "2" => 2,
            _ => 1,
        }
    })
}

fn info(msg: impl AsRef<str>) {
    if verbosity() >= 1 {
        eprintln!("{}", msg.as_ref());
    }
}

fn debug(msg: impl AsRef<str>) {
    if verbosity() >= 2 {
        eprintln!("debug: {}", msg.as_ref());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenStream { config, output } => cmd_gen_stream(&config, cli.seed, output),
        Command::Inspect { model } => cmd_inspect(&model),
        Command::Run { config } => cmd_run(&config, cli.seed, cli.output_dir),
        Command::Sweep { config } => cmd_sweep(&config, cli.seed, cli.output_dir),
        Command::SuggestGrid { config, count } => cmd_suggest_grid(&config, cli.seed, count),
    }
}

fn cmd_gen_stream(path: &Path, seed: Option<u64>, output: Option<PathBuf>) -> Result<()> {
    let mut cfg: GenStreamConfig = load_json(path)?;
    if let Some(seed) = seed {
        cfg.generator.set_seed(seed);
    }
    let samples = cfg.generator.build()?;
    let out = output.unwrap_or(cfg.output);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating directory {}", parent.display()))?;
    }
    write_stream(&samples, &out)?;
    info(format!(
        "wrote {} samples (seed {}) to {}",
        samples.len(),
        cfg.generator.seed(),
        out.display()
    ));
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let model = Model::load(path)?;
    let exits = model.num_exits();
    println!("model: {}", path.display());
    match &model {
        Model::Graph(graph) => {
            println!("type: layered");
            println!("input shape: {:?}", graph.input_shape());
        }
        Model::Oracle(oracle) => {
            println!("type: oracle");
            println!("input shape: [{}]", oracle.spec().input_dim);
        }
    }
    println!("classes: {}", model.num_classes());
    println!(
        "score mode: {}",
        match model.score_mode() {
            eenn_core::model::ScoreMode::Logits => "logits",
            eenn_core::model::ScoreMode::Probabilities => "probabilities",
        }
    );
    println!("exits: {exits}");
    println!(
        "{:>4} {:>16} {:>12} {:>14}",
        "exit", "cumulative_macs", "branch_macs", "cascade_macs"
    );
    for exit in 0..exits {
        let branch = match &model {
            Model::Graph(graph) => graph.branch_macs(exit),
            Model::Oracle(oracle) => eenn_core::layer::MacCount(
                oracle
                    .spec()
                    .branch_macs
                    .as_ref()
                    .map(|b| b[exit])
                    .unwrap_or(0),
            ),
        };
        println!(
            "{:>4} {:>16} {:>12} {:>14}",
            exit,
            model.direct_macs(exit).to_string(),
            branch.to_string(),
            model.cascade_macs(exit).to_string()
        );
    }
    println!("single-exit reference: {} MACs", model.single_exit_macs());
    println!("full network: {} MACs", model.full_macs());
    Ok(())
}

struct Experiment {
    model: Model,
    stream: Vec<StreamSample>,
    policies: Vec<PolicyEntry>,
    output_dir: PathBuf,
}

fn load_experiment(
    path: &Path,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
) -> Result<Experiment> {
    let cfg: ExperimentConfig = load_json(path)?;
    cfg.validate()?;
    let model =
        Model::load(&cfg.model).with_context(|| format!("model {}", cfg.model.display()))?;
    let stream = cfg.build_stream(seed)?;
    debug(format!(
        "loaded {} samples, model with {} exits",
        stream.len(),
        model.num_exits()
    ));
    Ok(Experiment {
        model,
        stream,
        policies: cfg.policies,
        output_dir: output_dir.unwrap_or(cfg.output_dir),
    })
}

fn record_line(record: &SweepRecord) -> String {
    format!(
        "policy={} labeling={} threshold={} accuracy={:.4} mean_macs={:.1} relative_macs={:.4} scenes={}",
        record.policy,
        record.labeling_mode.name(),
        record.threshold,
        record.accuracy,
        record.mean_macs,
        record.relative_macs,
        record.num_scenes
    )
}

fn cmd_run(path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<()> {
    let exp = load_experiment(path, seed, output_dir)?;
    fs::create_dir_all(&exp.output_dir)
        .with_context(|| format!("creating output dir {}", exp.output_dir.display()))?;
    let mut records = Vec::new();
    for (i, entry) in exp.policies.iter().enumerate() {
        let record = evaluate(
            &exp.model,
            &exp.stream,
            entry.kind,
            &entry.to_policy_config(),
        )
        .with_context(|| format!("policies[{i}] ({})", entry.kind.name()))?;
        println!("{}", record_line(&record));
        records.push(record);
    }
    let csv_path = exp.output_dir.join("run.csv");
    write_csv(&records, &csv_path)?;
    info(format!("wrote {}", csv_path.display()));
    Ok(())
}

/// Unique output stem per policy entry; repeated kinds get a counter suffix.
fn file_stem(used: &mut HashMap<String, usize>, kind_name: &str) -> String {
    let n = used.entry(kind_name.to_string()).or_insert(0);
    *n += 1;
    if *n == 1 {
        kind_name.to_string()
    } else {
        format!("{kind_name}_{n}")
    }
}

fn cmd_sweep(path: &Path, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<()> {
    let exp = load_experiment(path, seed, output_dir)?;

    // Validate grids before any compute.
    for (i, entry) in exp.policies.iter().enumerate() {
        match &entry.grid {
            None => bail!("policies[{i}].grid: missing threshold grid for sweep"),
            Some(grid) if grid.is_empty() => {
                bail!("policies[{i}].grid: empty threshold grid")
            }
            Some(_) => {}
        }
    }

    fs::create_dir_all(&exp.output_dir)
        .with_context(|| format!("creating output dir {}", exp.output_dir.display()))?;

    let reference_accuracy = final_classifier_accuracy(&exp.model, &exp.stream)?;
    info(format!(
        "single-exit reference accuracy: {reference_accuracy:.4}"
    ));

    let mut used_names = HashMap::new();
    let mut combined: Vec<SweepRecord> = Vec::new();
    for (i, entry) in exp.policies.iter().enumerate() {
        let grid = entry.grid.as_ref().expect("validated above");
        info(format!(
            "sweeping {} over {} grid points",
            entry.kind.name(),
            grid.len()
        ));
        let records = sweep(
            &exp.model,
            &exp.stream,
            entry.kind,
            &entry.to_policy_config(),
            grid,
        )
        .with_context(|| format!("policies[{i}] ({})", entry.kind.name()))?;

        let stem = file_stem(&mut used_names, entry.kind.name());
        let csv_path = exp.output_dir.join(format!("sweep_{stem}.csv"));
        write_csv(&records, &csv_path)?;
        let svg_path = exp.output_dir.join(format!("sweep_{stem}.svg"));
        write_svg_scatter(&records, &svg_path)?;
        debug(format!(
            "wrote {} and {}",
            csv_path.display(),
            svg_path.display()
        ));

        // Headline summary: cheapest config within 5 points of the reference.
        let best = records
            .iter()
            .filter(|r| r.accuracy >= reference_accuracy - 0.05)
            .min_by(|a, b| {
                a.relative_macs
                    .partial_cmp(&b.relative_macs)
                    .expect("finite")
            });
        match best {
            Some(r) => println!(
                "{}: best within 5 points of reference: threshold={} relative_macs={:.4} accuracy={:.4}",
                r.policy, r.threshold, r.relative_macs, r.accuracy
            ),
            None => println!(
                "{}: no grid point within 5 points of reference accuracy {reference_accuracy:.4}",
                entry.kind.name()
            ),
        }
        combined.extend(records);
    }

    let combined_csv = exp.output_dir.join("sweep.csv");
    write_csv(&combined, &combined_csv)?;
    let combined_svg = exp.output_dir.join("sweep_combined.svg");
    write_svg_scatter(&combined, &combined_svg)?;
    info(format!(
        "wrote {} and {}",
        combined_csv.display(),
        combined_svg.display()
    ));
    Ok(())
}

fn cmd_suggest_grid(path: &Path, seed: Option<u64>, count: usize) -> Result<()> {
    let exp = load_experiment(path, seed, None)?;
    let grid = suggest_grid(&exp.model, &exp.stream, count)?;
    for value in grid {
        println!("{value}");
    }
    Ok(())
}
