//! MXGNet command line: dataset generation, training, evaluation, the
//! search-space-reduction experiment, the gradient suite and the syllogism
//! experiment.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mxgnet_core::error::Error;
use mxgnet_core::harness::{
    self, evaluate_matrix, evaluate_syllogism, manifest_warning, read_checkpoint, run_generate,
    train_matrix, train_ssr, train_syllogism, ExperimentConfig, TaskStyle,
};
use mxgnet_core::model::{MxgNet, SyllogismNet};
use mxgnet_core::numerics::child_seed;
use mxgnet_core::ssr::SELECT_THRESHOLD;
use mxgnet_core::taskgen::dataset::{read_dataset, read_syllogisms};

#[derive(Parser)]
#[command(name = "mxgnet", about = "Multiplex graph networks for diagrammatic reasoning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate dataset splits into a directory.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on generated datasets.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding train/val splits and the manifest.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint and metrics.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file (.mxg1 or .mxgs).
        #[arg(long)]
        data: PathBuf,
        /// Where to write the report and per-task records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the search-space-reduction model and print the ranked gate
    /// table.
    Ssr {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hard-selection threshold on |gate|.
        #[arg(long, default_value_t = SELECT_THRESHOLD)]
        threshold: f64,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Generate, train and evaluate the Euler-syllogism experiment.
    Syllogism {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
    },
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

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load_config(&common)?;
            let files = run_generate(&cfg, &out)?;
            println!("wrote {}", files.train.display());
            if let Some(v) = files.val {
                println!("wrote {}", v.display());
            }
            if let Some(t) = files.test {
                println!("wrote {}", t.display());
            }
            println!("wrote {}", files.manifest.display());
            Ok(())
        }
        Command::Train { common, data, out } => {
            let cfg = load_config(&common)?;
            if let Some(w) = manifest_warning(&cfg, &data)? {
                eprintln!("warning: {w}");
            }
            match cfg.style {
                TaskStyle::Syllogism => {
                    let train = read_syllogisms(&data.join("train.mxgs"))?;
                    let val = read_syllogisms(&data.join("val.mxgs"))?;
                    let art = train_syllogism(&cfg, &train, &val, &out)?;
                    println!(
                        "trained {} epochs, best val accuracy {:.4} (early stop: {})",
                        art.outcome.epochs_run, art.outcome.best_val_acc, art.outcome.stopped_early
                    );
                }
                _ => {
                    let train = read_dataset(&data.join("train.mxg1"))?;
                    let val = read_dataset(&data.join("val.mxg1"))?;
                    let art = train_matrix(&cfg, &train, &val, &out)?;
                    println!(
                        "trained {} epochs, best val accuracy {:.4} (early stop: {})",
                        art.outcome.epochs_run, art.outcome.best_val_acc, art.outcome.stopped_early
                    );
                }
            }
            Ok(())
        }
        Command::Eval { common, checkpoint, data, out } => {
            let cfg = load_config(&common)?;
            match cfg.style {
                TaskStyle::Syllogism => {
                    let instances = read_syllogisms(&data)?;
                    let model = SyllogismNet::new(cfg.syllogism_config())?;
                    let mut store = model.new_store::<f32>(0);
                    let records = read_checkpoint::<f32>(&checkpoint)?;
                    harness::load_into_store(records, &mut store)?;
                    let report = evaluate_syllogism(
                        &model,
                        &store,
                        &instances,
                        cfg.training.batch_size,
                        child_seed(cfg.seed, 0x5EED),
                    )?;
                    print_json(&report, out.as_deref())?;
                }
                _ => {
                    let instances = read_dataset(&data)?;
                    let model = MxgNet::new(cfg.model_config()?)?;
                    let mut store = model.new_store::<f32>(0);
                    let records = read_checkpoint::<f32>(&checkpoint)?;
                    harness::load_into_store(records, &mut store)?;
                    let (report, records) = evaluate_matrix(
                        &model,
                        &store,
                        &instances,
                        cfg.training.batch_size,
                        child_seed(cfg.seed, 0x5EED),
                    )?;
                    if let Some(dir) = &out {
                        std::fs::create_dir_all(dir)?;
                        let mut lines = String::new();
                        for r in &records {
                            lines.push_str(&serde_json::to_string(r).expect("record"));
                            lines.push('\n');
                        }
                        std::fs::write(dir.join("records.jsonl"), lines)?;
                        std::fs::write(
                            dir.join("report.json"),
                            serde_json::to_string_pretty(&report).expect("report"),
                        )?;
                    }
                    println!("{}", serde_json::to_string_pretty(&report).expect("report"));
                }
            }
            Ok(())
        }
        Command::Ssr { common, data, out, threshold } => {
            let cfg = load_config(&common)?;
            if let Some(w) = manifest_warning(&cfg, &data)? {
                eprintln!("warning: {w}");
            }
            let train = read_dataset(&data.join("train.mxg1"))?;
            let (table, _ckpt) = train_ssr(&cfg, &train, &out)?;
            print!("{}", table.ranked_report());
            let selected = table.select(threshold);
            println!("selected {} subsets above |gate| > {threshold}:", selected.len());
            for s in &selected {
                println!("  {s}");
            }
            std::fs::write(out.join("gates.txt"), table.ranked_report())?;
            Ok(())
        }
        Command::Gradcheck => {
            let report = harness::run_gradcheck()?;
            print!("{}", report.render());
            if report.all_pass() {
                Ok(())
            } else {
                Err(Error::Usage("gradient check failed".into()))
            }
        }
        Command::Syllogism { common, out } => {
            let cfg = load_config(&common)?;
            if cfg.style != TaskStyle::Syllogism {
                return Err(Error::Config(
                    "syllogism subcommand needs style = \"syllogism\"".into(),
                ));
            }
            let data_dir = out.join("data");
            run_generate(&cfg, &data_dir)?;
            let train = read_syllogisms(&data_dir.join("train.mxgs"))?;
            let val = read_syllogisms(&data_dir.join("val.mxgs"))?;
            let art = train_syllogism(&cfg, &train, &val, &out.join("run"))?;
            println!(
                "trained {} epochs, best val conclusion accuracy {:.4}",
                art.outcome.epochs_run, art.outcome.best_val_acc
            );
            if let Some(test_path) = existing(&data_dir.join("test.mxgs")) {
                let test = read_syllogisms(&test_path)?;
                let model = SyllogismNet::new(cfg.syllogism_config())?;
                let mut store = model.new_store::<f32>(0);
                let records = read_checkpoint::<f32>(&art.checkpoint)?;
                harness::load_into_store(records, &mut store)?;
                let report = evaluate_syllogism(
                    &model,
                    &store,
                    &test,
                    cfg.training.batch_size,
                    child_seed(cfg.seed, 0x5EED),
                )?;
                println!("test conclusion accuracy {:.4}", report.answer_acc);
            }
            Ok(())
        }
    }
}

fn print_json<S: serde::Serialize>(value: &S, out: Option<&Path>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serialize");
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn existing(p: &Path) -> Option<PathBuf> {
    p.exists().then(|| p.to_path_buf())
}
