use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ssal::experiment::{
    self, plot_reports, run_experiment, run_grid, run_seeds, table1_arms, table2_arms, write_table, ArmOptions,
    ExperimentConfig, RunReport,
};
use ssal::features::{extract, FeatureMatrix};
use ssal::imaging::synth_dataset;
use ssal::net::{load_checkpoint, save_checkpoint, Head, Model};
use ssal::rng::{derive_seed, Key};
use ssal::select::{select_initial, select_initial_random, Method, SelectionResult};
use ssal::seg::{evaluate, train_seg};

#[derive(Parser)]
#[command(name = "ssal", version, about = "Cold-start active learning for binary segmentation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON by extension). Every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set al.budget=40`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Verbose logging.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic lesion dataset (images/, masks/, manifest.json).
    Synth {
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the reconstruction network on the pool split.
    Pretrain {
        /// Output directory for ssl.bin and ssl_loss.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool bottleneck features of the pool split into a feature store.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Pooling grid side; defaults to `al.grid`.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the initial annotation set from a feature store.
    Select {
        #[arg(long)]
        features: PathBuf,
        /// Output SelectionResult JSON.
        #[arg(long)]
        out: PathBuf,
        /// Also write the selection state (for later query rounds).
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Train a segmentation model on the ids of a selection file.
    Train {
        #[arg(long)]
        selection: PathBuf,
        /// Start from this checkpoint; a reconstruction checkpoint is transferred.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Epochs; defaults to `seg.base_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a segmentation checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for dice.csv and summary.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one arm of the full loop under `out_dir`.
    Al {
        #[command(flatten)]
        seeds: SeedArgs,
        /// Stop after this round (the run can be resumed later).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Random/representative x cold/warm grid.
    Table1 {
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Cold-start grid over cluster count and pooling grid, plus random.
    Table2 {
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, value_delimiter = ',', default_value = "5,10")]
        clusters: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        grids: Vec<usize>,
    },
    /// Plot Dice vs labeled count from persisted reports (no training).
    Plot {
        /// report.json files, or directories searched recursively for them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "Dice vs labeled samples")]
        title: String,
    },
}

#[derive(Args)]
struct SeedArgs {
    /// Repeat with these seeds and report mean and standard deviation.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW, e.g. 64x64")?;
    let h = h.parse().map_err(|_| format!("bad height in {s}"))?;
    let w = w.parse().map_err(|_| format!("bad width in {s}"))?;
    Ok((h, w))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<ssal::Error>().map_or(1, ssal::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.common;
    let config = || -> Result<ExperimentConfig> {
        Ok(ExperimentConfig::load(common.config.as_deref(), &common.overrides)?)
    };
    match cli.command {
        Command::Synth { n, size, seed, out } => {
            let ds = synth_dataset(n, size, seed)?;
            ds.save_dir(&out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Pretrain { out } => {
            let cfg = config()?;
            let split = experiment::prepare(&cfg)?;
            experiment::ensure_pretrained(&cfg, &split, &out)?;
            println!("{}", out.join("ssl.bin").display());
        }
        Command::Extract { checkpoint, grid, out } => {
            let cfg = config()?;
            let split = experiment::prepare(&cfg)?;
            let model = load_checkpoint(&checkpoint)?;
            let fm = extract(&model, &split.pool, grid.unwrap_or(cfg.al.grid))?;
            fm.save(&out)?;
            println!("{} rows x {} dims -> {}", fm.len(), fm.dim(), out.display());
        }
        Command::Select { features, out, state } => {
            let cfg = config()?;
            let fm = FeatureMatrix::load(&features)?;
            let fm = if cfg.al.standardize { fm.standardized() } else { fm };
            let init = match cfg.al.method {
                Method::Representative => {
                    select_initial(&fm, cfg.al.clusters, cfg.al.budget, cfg.seeds.kmeans, &cfg.al.kmeans)?
                }
                Method::Random => select_initial_random(fm.ids(), cfg.al.budget, cfg.seeds.selection)?,
            };
            init.result.save(&out)?;
            if let Some(p) = state {
                init.state.save(&p)?;
            }
            println!("selected {} ids -> {}", init.result.chosen.len(), out.display());
        }
        Command::Train {
            selection,
            init,
            epochs,
            out,
        } => {
            let cfg = config()?;
            let split = experiment::prepare(&cfg)?;
            let sel = SelectionResult::load(&selection)?;
            let labeled = split.pool.subset("labeled", &sel.ids())?;
            let net = cfg.net_config().with_head(Head::Segmentation);
            let mut model = Model::<f32>::build(&net, derive_seed(cfg.seeds.training, &[Key::Str("seg-init")]))?;
            if let Some(p) = init {
                let start = load_checkpoint(&p)?;
                if start.config().head == Head::Segmentation {
                    model = start;
                } else {
                    model.transfer_from(&start, cfg.al.transfer)?;
                }
            }
            let seed = derive_seed(cfg.seeds.training, &[Key::Str("seg-fit"), Key::U64(sel.iteration as u64)]);
            let losses = train_seg(&mut model, &labeled, &cfg.seg, epochs.unwrap_or(cfg.seg.base_epochs), seed)?;
            save_checkpoint(&model, &out)?;
            println!(
                "trained on {} samples, final loss {:.5} -> {}",
                labeled.len(),
                losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval { checkpoint, out } => {
            let cfg = config()?;
            let split = experiment::prepare(&cfg)?;
            let model = load_checkpoint(&checkpoint)?;
            let report = evaluate(&model, &split.test, cfg.seg.threshold)?;
            report.write(&out)?;
            println!("mean dice {:.4} over {} samples", report.mean_dice, report.n);
        }
        Command::Al { seeds, stop_after } => {
            let cfg = config()?;
            let opts = ArmOptions { stop_after };
            if seeds.seeds.is_empty() {
                let report = run_experiment(&cfg, &opts)?;
                print_report(&report);
            } else {
                let all = run_seeds(
                    &cfg,
                    &seeds.seeds,
                    |c| vec![(experiment::arm_name(c), c.clone())],
                    &opts,
                )?;
                print_summary(&cfg.out_dir, all.len());
            }
        }
        Command::Table1 { seeds } => {
            let cfg = config()?;
            run_table(&cfg, &seeds.seeds, "table1", table1_arms)?;
        }
        Command::Table2 { seeds, clusters, grids } => {
            let cfg = config()?;
            if clusters.iter().any(|&k| k > cfg.al.budget) {
                bail!(ssal::Error::Config(format!(
                    "cluster counts {clusters:?} must not exceed al.budget {}",
                    cfg.al.budget
                )));
            }
            run_table(&cfg, &seeds.seeds, "table2", |c| table2_arms(c, &clusters, &grids))?;
        }
        Command::Plot { inputs, out, title } => {
            let mut reports = Vec::new();
            for input in &inputs {
                collect_reports(input, &mut reports)?;
            }
            if reports.is_empty() {
                bail!(ssal::Error::Data("no report.json found in the given inputs".into()));
            }
            plot_reports(&out, &title, &reports)?;
            println!("{} series -> {}", reports.len(), out.display());
        }
    }
    Ok(())
}

fn run_table<A>(cfg: &ExperimentConfig, seeds: &[u64], name: &str, arms_for: A) -> Result<()>
where
    A: Fn(&ExperimentConfig) -> Vec<(String, ExperimentConfig)>,
{
    let opts = ArmOptions::default();
    if seeds.is_empty() {
        let reports = run_grid(cfg, &arms_for(cfg), &opts)?;
        let csv = cfg.out_dir.join(format!("{name}.csv"));
        write_table(&csv, &reports)?;
        plot_reports(&cfg.out_dir.join(format!("{name}_plot.svg")), name, &reports)?;
        print!("{}", fs::read_to_string(&csv).with_context(|| csv.display().to_string())?);
    } else {
        let all = run_seeds(cfg, seeds, arms_for, &opts)?;
        print_summary(&cfg.out_dir, all.len());
    }
    Ok(())
}

fn print_report(r: &RunReport) {
    println!("arm {} (split {})", r.arm, r.split_hash);
    println!("t,labeled_count,mean_dice");
    for rec in &r.records {
        println!("{},{},{:.4}", rec.t, rec.labeled_count, rec.mean_dice);
    }
    if !r.complete {
        println!("stopped early; rerun the same command to resume");
    }
}

fn print_summary(out_dir: &Path, n: usize) {
    let path = out_dir.join("summary.csv");
    info!("{n} seeds done");
    match fs::read_to_string(&path) {
        Ok(s) => print!("{s}"),
        Err(e) => eprintln!("could not read {}: {e}", path.display()),
    }
}

fn collect_reports(path: &Path, out: &mut Vec<RunReport>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| path.display().to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            if e.is_dir() {
                collect_reports(&e, out)?;
            } else if e.file_name().is_some_and(|n| n == "report.json") {
                out.push(RunReport::load(&e)?);
            }
        }
        Ok(())
    } else {
        out.push(RunReport::load(path)?);
        Ok(())
    }
}
