//! `ciskip` — train, evaluate and apply a CI-skip predictor.
//!
//! Exit codes: 0 success (or a Skip decision from `tag`), 1 Build decision
//! from `tag`, 2 any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ciskip_core::dataset::{load_csv, write_csv, Dataset, FeatureSchema, Label};
use ciskip_core::gitfeat::{build_dataset, load_runs_csv, ExtensionConfig};
use ciskip_core::synth::{gen_synth, gen_synth_workflow};
use ciskip_core::trainer::{cross_project, evaluate, within_project, RewardMetric, TrainConfig};
use ciskip_core::tree::{feature_importance, greedy_gini_build, load_model, save_model};

#[derive(Parser)]
#[command(name = "ciskip", version, about = "Predict whether a commit can skip CI")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Gini,
}

#[derive(Subcommand)]
enum Command {
    /// Mine a labeled feature dataset from a git repository
    Extract {
        /// Path to the repository
        #[arg(long)]
        repo: PathBuf,
        /// Branch whose first-parent history is mined
        #[arg(long, default_value = "main")]
        branch: String,
        /// CI runs log (commit_hash,build_result,committer,timestamp)
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Append the three workflow features (requires --runs)
        #[arg(long)]
        workflow: bool,
        /// JSON file overriding the file-category extension sets
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with a planted ground-truth tree
    GenSynth {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        /// Fraction of rows labeled Skip, in (0,1)
        #[arg(long, default_value_t = 0.10)]
        fraction: f64,
        /// Depth of the planted tree
        #[arg(long, default_value_t = 2)]
        depth: usize,
        /// Label-flip probability
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Emit the paired 29/26-column workflow corpus instead
        #[arg(long)]
        workflow: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset with a stratified 80/20 within-project split
    Train {
        /// Dataset CSV (schema sidecar expected next to it)
        #[arg(long)]
        data: PathBuf,
        /// Tree depth; overrides the config file
        #[arg(long)]
        depth: Option<usize>,
        /// Training episodes; overrides the config file
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sweep depth over 3..=5 and keep the best train-set F1
        #[arg(long)]
        sweep: bool,
        /// Use AUC instead of F1 as the shaping reward
        #[arg(long)]
        auc_reward: bool,
        /// Also fit a reference learner on the same split
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// JSON run config mirroring the training parameters
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model against a labeled dataset
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional directory for report.csv; always prints to stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-project-out evaluation over several dataset CSVs
    Cross {
        /// Two or more dataset CSVs, schema-compatible
        #[arg(long, num_args = 2.., required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank features by their share of the model's impurity reduction
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide one commit: prints the message, tagged iff classified Skip
    Tag {
        #[arg(long)]
        model: PathBuf,
        /// Schema sidecar the model was trained against
        #[arg(long)]
        schema: PathBuf,
        /// Single-row feature CSV for the commit
        #[arg(long)]
        features: PathBuf,
        /// Commit message to (maybe) tag
        #[arg(long)]
        message: String,
    },
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("schema.json")
}

/// Load a dataset and swap in its sidecar schema when one exists, so model
/// digests verify against the schema the data was written with.
fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let ds = load_csv(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let schema = FeatureSchema::read_sidecar(&sidecar)?;
        let expect: Vec<&str> = ds.schema.features().iter().map(|f| f.name.as_str()).collect();
        let got: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
        anyhow::ensure!(
            expect == got,
            "sidecar {} does not list the CSV's columns",
            sidecar.display()
        );
        let provenance = ds.provenance.clone();
        return Ok(Dataset::new(schema, ds.rows, provenance)?);
    }
    Ok(ds)
}

fn write_dataset(ds: &Dataset, dir: &Path, stem: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_csv(ds, &csv)?;
    ds.schema.write_sidecar(&sidecar_path(&csv))?;
    Ok(csv)
}

fn base_config(config: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match config {
        None => Ok(TrainConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn apply_overrides(
    cfg: &mut TrainConfig,
    depth: Option<usize>,
    episodes: Option<usize>,
    seed: Option<u64>,
) {
    if let Some(d) = depth {
        cfg.depth = d;
    }
    if let Some(m) = episodes {
        cfg.episodes = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
}

const REPORT_HEADER: &str = "project,split,precision,recall,f1,auc";

fn write_report(dir: &Path, rows: &[String]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = String::from(REPORT_HEADER);
    for row in rows {
        text.push('\n');
        text.push_str(row);
    }
    text.push('\n');
    std::fs::write(dir.join("report.csv"), text)?;
    Ok(())
}

fn cmd_extract(
    repo: &Path,
    branch: &str,
    runs: Option<&Path>,
    workflow: bool,
    config: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    anyhow::ensure!(!(workflow && runs.is_none()), "--workflow requires --runs <csv>");
    let ext_cfg = match config {
        Some(p) => ExtensionConfig::load(p)?,
        None => ExtensionConfig::default(),
    };
    let runs = runs.map(load_runs_csv).transpose()?;
    let ds = build_dataset(repo, branch, runs.as_deref(), workflow, &ext_cfg)?;
    let csv = write_dataset(&ds, out, "dataset")?;
    let (skip, build) = ds.class_counts();
    println!(
        "{}: {} commits ({skip} skip / {build} build), {} features",
        csv.display(),
        ds.len(),
        ds.schema.k()
    );
    Ok(())
}

fn cmd_gen_synth(
    rows: usize,
    fraction: f64,
    depth: usize,
    noise: f64,
    workflow: bool,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    if workflow {
        let (wlf, clf) = gen_synth_workflow(rows, noise, seed)?;
        let a = write_dataset(&wlf, out, "dataset_wlf")?;
        let b = write_dataset(&clf, out, "dataset_clf")?;
        println!("{}\n{}", a.display(), b.display());
        return Ok(());
    }
    let synth = gen_synth(rows, fraction, depth, noise, seed)?;
    let csv = write_dataset(&synth.dataset, out, "dataset")?;
    save_model(&synth.planted, &synth.dataset.schema, &out.join("planted_tree.json"))?;
    let (skip, build) = synth.dataset.class_counts();
    println!("{}: {skip} skip / {build} build, planted depth {depth}", csv.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    depth: Option<usize>,
    episodes: Option<usize>,
    seed: Option<u64>,
    sweep: bool,
    auc_reward: bool,
    baseline: Option<Baseline>,
    config: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let ds = load_dataset(data)?;
    let mut cfg = base_config(config)?;
    apply_overrides(&mut cfg, depth, episodes, seed);
    if auc_reward {
        cfg.reward_metric = RewardMetric::Auc;
    }
    cfg.validate()?;

    let depths: Vec<usize> = if sweep { vec![3, 4, 5] } else { vec![cfg.depth] };
    let mut best: Option<(usize, ciskip_core::TrainReport, ciskip_core::EvalScores)> = None;
    for d in depths {
        let mut run_cfg = cfg.clone();
        run_cfg.depth = d;
        let (report, eval) = within_project(&ds, &run_cfg)?;
        let better = match &best {
            None => true,
            Some((_, b, _)) => report.best_train_f1 > b.best_train_f1,
        };
        if better {
            best = Some((d, report, eval));
        }
    }
    let (chosen_depth, report, eval) = best.expect("at least one depth trained");

    std::fs::create_dir_all(out)?;
    save_model(&report.best_tree, &ds.schema, &out.join("model.json"))?;
    std::fs::write(
        out.join("checkpoint.json"),
        serde_json::to_string_pretty(&report.checkpoint)?,
    )?;
    std::fs::write(
        out.join("history.json"),
        serde_json::to_string_pretty(&report.history)?,
    )?;

    let mut rows = vec![eval.csv_row(&ds.provenance, "heldout")];
    if let Some(Baseline::Gini) = baseline {
        let (train_set, test_set) =
            ciskip_core::dataset::stratified_split(&ds, 0.2, cfg.seed)?;
        let gini_tree = greedy_gini_build(&train_set, chosen_depth, 2)?;
        let gini_eval = evaluate(&gini_tree, &test_set)?;
        rows.push(gini_eval.csv_row(&ds.provenance, "heldout-gini"));
    }
    write_report(out, &rows)?;

    println!(
        "depth {chosen_depth}, train f1 {:.4}, heldout {}",
        report.best_train_f1,
        eval.as_percentages()
    );
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let ds = load_dataset(data)?;
    let tree = load_model(model, &ds.schema)?;
    let scores = evaluate(&tree, &ds)?;
    let row = scores.csv_row(&ds.provenance, "eval");
    if let Some(dir) = out {
        write_report(dir, &[row.clone()])?;
    }
    println!("{REPORT_HEADER}\n{row}");
    Ok(())
}

fn cmd_cross(
    data: &[PathBuf],
    depth: Option<usize>,
    episodes: Option<usize>,
    seed: Option<u64>,
    config: Option<&Path>,
    out: &Path,
) -> anyhow::Result<()> {
    let projects = data.iter().map(|p| load_dataset(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let mut cfg = base_config(config)?;
    apply_overrides(&mut cfg, depth, episodes, seed);
    cfg.validate()?;
    let results = cross_project(&projects, &cfg)?;
    let rows: Vec<String> = results
        .iter()
        .map(|(project, scores)| scores.csv_row(project, "cross"))
        .collect();
    write_report(out, &rows)?;
    println!("{REPORT_HEADER}");
    for row in &rows {
        println!("{row}");
    }
    Ok(())
}

fn cmd_importance(model: &Path, data: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let ds = load_dataset(data)?;
    let tree = load_model(model, &ds.schema)?;
    let shares = feature_importance(&tree, &ds)?;
    let mut ranked: Vec<(&str, f64)> = ds
        .schema
        .features()
        .iter()
        .map(|f| f.name.as_str())
        .zip(shares)
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));

    let mut text = String::from("feature,share");
    for (name, share) in &ranked {
        text.push_str(&format!("\n{name},{share}"));
    }
    text.push('\n');
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("importance.csv"), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_tag(model: &Path, schema: &Path, features: &Path, message: &str) -> anyhow::Result<u8> {
    let schema = FeatureSchema::read_sidecar(schema)?;
    let tree = load_model(model, &schema)?;
    let ds = load_csv(features)?;
    anyhow::ensure!(ds.len() == 1, "expected exactly one feature row, got {}", ds.len());
    let names: Vec<&str> = ds.schema.features().iter().map(|f| f.name.as_str()).collect();
    let expect: Vec<&str> = schema.features().iter().map(|f| f.name.as_str()).collect();
    anyhow::ensure!(names == expect, "feature columns do not match the model schema");

    let lower = message.to_ascii_lowercase();
    if lower.contains("[ci skip]") || lower.contains("[skip ci]") {
        println!("{message}");
        return Ok(0);
    }
    match tree.classify(&ds.rows[0].0) {
        Label::Skip => {
            println!("{message} [CI SKIP]");
            Ok(0)
        }
        Label::Build => {
            println!("{message}");
            Ok(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Extract { repo, branch, runs, workflow, config, out } => {
            cmd_extract(&repo, &branch, runs.as_deref(), workflow, config.as_deref(), &out)?;
            Ok(0)
        }
        Command::GenSynth { rows, fraction, depth, noise, workflow, seed, out } => {
            cmd_gen_synth(rows, fraction, depth, noise, workflow, seed, &out)?;
            Ok(0)
        }
        Command::Train { data, depth, episodes, seed, sweep, auc_reward, baseline, config, out } => {
            cmd_train(
                &data,
                depth,
                episodes,
                seed,
                sweep,
                auc_reward,
                baseline,
                config.as_deref(),
                &out,
            )?;
            Ok(0)
        }
        Command::Eval { model, data, out } => {
            cmd_eval(&model, &data, out.as_deref())?;
            Ok(0)
        }
        Command::Cross { data, depth, episodes, seed, config, out } => {
            cmd_cross(&data, depth, episodes, seed, config.as_deref(), &out)?;
            Ok(0)
        }
        Command::Importance { model, data, out } => {
            cmd_importance(&model, &data, out.as_deref())?;
            Ok(0)
        }
        Command::Tag { model, schema, features, message } => {
            cmd_tag(&model, &schema, &features, &message)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
