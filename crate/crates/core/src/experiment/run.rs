use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract, FeatureMatrix};
use crate::imaging::Dataset;
use crate::net::{load_checkpoint, save_checkpoint, Head, Model, NetConfig};
use crate::rng::{derive_seed, rng_from, Key};
use crate::select::{select_initial, select_initial_random, Method, SelectionState};
use crate::seg::{evaluate, train_seg};
use crate::ssl::{pretrain, write_loss_csv, SslConfig};

use super::config::{ExperimentConfig, SplitConfig};

/// Pool and test sets plus a fingerprint of their ids.
#[derive(Debug, Clone)]
pub struct Split {
    pub pool: Dataset,
    pub test: Dataset,
    pub hash: String,
}

/// Cut `pool_size + test_size` samples out of `data`: shuffled by `seed`
/// when `cfg.shuffle`, otherwise in id order. The two sets never overlap.
pub fn split_dataset(data: &Dataset, cfg: &SplitConfig, seed: u64) -> Result<Split> {
    let need = cfg.pool_size + cfg.test_size;
    if need > data.len() {
        return Err(Error::Data(format!(
            "split needs {need} samples ({} pool + {} test) but the dataset has {}",
            cfg.pool_size,
            cfg.test_size,
            data.len()
        )));
    }
    let mut ids = data.ids();
    if cfg.shuffle {
        use rand::seq::SliceRandom;
        ids.shuffle(&mut rng_from(derive_seed(seed, &[Key::Str("split")])));
    }
    let pool_ids = &ids[..cfg.pool_size];
    let test_ids = &ids[cfg.pool_size..need];
    let pool = data.subset(format!("{}-pool", data.name), pool_ids)?;
    let test = data.subset(format!("{}-test", data.name), test_ids)?;
    let mut keys: Vec<Key> = vec![Key::Str("pool")];
    let pool_sorted = pool.ids();
    let test_sorted = test.ids();
    keys.extend(pool_sorted.iter().map(|s| Key::Str(s)));
    keys.push(Key::Str("test"));
    keys.extend(test_sorted.iter().map(|s| Key::Str(s)));
    let hash = format!("{:016x}", derive_seed(0, &keys));
    Ok(Split { pool, test, hash })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub labeled_count: usize,
    pub mean_dice: f64,
    /// Mean loss of the last training epoch of this round.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub arm: String,
    pub config: ExperimentConfig,
    pub split_hash: String,
    pub records: Vec<IterationRecord>,
    /// Seconds spent on each round (selection, training, evaluation).
    pub wall_seconds: Vec<f64>,
    pub dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub selections: Vec<PathBuf>,
    pub complete: bool,
}

impl RunReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn final_dice(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_dice)
    }
}

/// Default arm label, e.g. `representative-warm`.
pub fn arm_name(cfg: &ExperimentConfig) -> String {
    format!(
        "{}-{}",
        cfg.al.method,
        if cfg.al.warm_start { "warm" } else { "cold" }
    )
}

#[derive(Debug, Clone, Default)]
pub struct ArmOptions {
    /// Return after finishing this round, leaving a resumable run behind.
    pub stop_after: Option<usize>,
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize, Deserialize, PartialEq)]
struct SslKey {
    net: NetConfig,
    ssl: SslConfig,
    split_hash: String,
}

/// Pretrained reconstruction model for this config and split, trained once
/// and cached under `shared_dir`.
pub fn ensure_pretrained(cfg: &ExperimentConfig, split: &Split, shared_dir: &Path) -> Result<Model<f32>> {
    mkdir(shared_dir)?;
    let key = SslKey {
        net: cfg.net_config().with_head(Head::Reconstruction),
        ssl: cfg.ssl.clone(),
        split_hash: split.hash.clone(),
    };
    let key_path = shared_dir.join("ssl_key.json");
    let ckpt = shared_dir.join("ssl.bin");
    let cached = fs::read(&key_path)
        .ok()
        .and_then(|b| serde_json::from_slice::<SslKey>(&b).ok())
        .is_some_and(|k| k == key);
    if cached && ckpt.exists() {
        info!("reusing pretrained model {}", ckpt.display());
        return load_checkpoint(&ckpt);
    }
    // stale features belong to a different encoder
    if let Ok(entries) = fs::read_dir(shared_dir) {
        for e in entries.flatten() {
            if e.path().extension().is_some_and(|x| x == "feat") {
                fs::remove_file(e.path()).map_err(|err| Error::io(e.path(), err))?;
            }
        }
    }
    info!("pretraining on {} pool images", split.pool.len());
    let start = Instant::now();
    let (model, history) = pretrain::<f32>(&split.pool, &key.net, &cfg.ssl)?;
    info!(
        "pretraining done in {:.1}s, final loss {:.5}",
        start.elapsed().as_secs_f64(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    save_checkpoint(&model, &ckpt)?;
    write_loss_csv(&shared_dir.join("ssl_loss.csv"), &history)?;
    fs::write(&key_path, serde_json::to_vec_pretty(&key)?).map_err(|e| Error::io(&key_path, e))?;
    Ok(model)
}

/// Pooled bottleneck features of the pool, cached per grid size.
pub fn ensure_features(model: &Model<f32>, split: &Split, grid: usize, shared_dir: &Path) -> Result<FeatureMatrix> {
    let path = shared_dir.join(format!("features_g{grid}.feat"));
    if path.exists() {
        let fm = FeatureMatrix::load(&path)?;
        if fm.ids() == split.pool.ids().as_slice() && fm.grid() == grid {
            return Ok(fm);
        }
    }
    let fm = extract(model, &split.pool, grid)?;
    fm.save(&path)?;
    Ok(fm)
}

fn labeled_subset(pool: &Dataset, state: &SelectionState) -> Result<Dataset> {
    let ids: Vec<&String> = state.labeled.iter().collect();
    let ds = pool.subset("labeled", &ids)?;
    if let Some(id) = ds.unlabeled_ids().first() {
        return Err(Error::Data(format!("selected sample {id} has no mask")));
    }
    Ok(ds)
}

fn write_log(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut csv = String::from("t,labeled_count,mean_dice,train_loss\n");
    for r in records {
        csv.push_str(&format!("{},{},{},{}\n", r.t, r.labeled_count, r.mean_dice, r.train_loss));
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Run one arm: initial selection, base training, then `al.iterations` query
/// rounds. Everything lands in `arm_dir`; an interrupted run resumes from its
/// last completed round.
pub fn run_arm(
    cfg: &ExperimentConfig,
    split: &Split,
    arm: &str,
    arm_dir: &Path,
    shared_dir: &Path,
    opts: &ArmOptions,
) -> Result<RunReport> {
    cfg.validate()?;
    mkdir(arm_dir)?;
    let report_path = arm_dir.join("report.json");
    let al = &cfg.al;
    let seg_net = cfg.net_config().with_head(Head::Segmentation);

    let mut report = match RunReport::load(&report_path) {
        Ok(r) if r.config == *cfg && r.split_hash == split.hash && !r.records.is_empty() => r,
        Ok(_) => {
            return Err(Error::Config(format!(
                "{} holds a run with a different config or split; use a fresh directory",
                arm_dir.display()
            )))
        }
        Err(_) => RunReport {
            arm: arm.to_string(),
            config: cfg.clone(),
            split_hash: split.hash.clone(),
            records: Vec::new(),
            wall_seconds: Vec::new(),
            dir: arm_dir.to_path_buf(),
            checkpoints: Vec::new(),
            selections: Vec::new(),
            complete: false,
        },
    };
    if report.complete {
        return Ok(report);
    }

    let needs_ssl = al.method == Method::Representative || al.warm_start;
    let mut ssl_model = None;
    let mut features = None;
    if needs_ssl {
        let m = ensure_pretrained(cfg, split, shared_dir)?;
        if al.method == Method::Representative {
            let fm = ensure_features(&m, split, al.grid, shared_dir)?;
            features = Some(if al.standardize { fm.standardized() } else { fm });
        }
        ssl_model = Some(m);
    }

    let (mut state, mut model, start_t) = if let Some(last) = report.records.last() {
        let t = last.t;
        info!("{arm}: resuming after round {t}");
        let state = SelectionState::load(&arm_dir.join(format!("state_t{t}.json")))?;
        let model = load_checkpoint(&arm_dir.join(format!("ckpt_t{t}.bin")))?;
        (state, model, t + 1)
    } else {
        let clock = Instant::now();
        let init = match al.method {
            Method::Representative => select_initial(
                features.as_ref().expect("features for representative arm"),
                al.clusters,
                al.budget,
                cfg.seeds.kmeans,
                &al.kmeans,
            )?,
            Method::Random => select_initial_random(&split.pool.ids(), al.budget, cfg.seeds.selection)?,
        };
        if let Some(c) = &init.clusters {
            c.save(&arm_dir.join("clusters.json"))?;
        }
        let sel_path = arm_dir.join("selection_t0.json");
        init.result.save(&sel_path)?;
        report.selections.push(sel_path);
        let mut model = Model::<f32>::build(&seg_net, derive_seed(cfg.seeds.training, &[Key::Str("seg-init")]))?;
        if al.warm_start {
            model.transfer_from(ssl_model.as_ref().expect("pretrained model"), al.transfer)?;
        }
        let labeled = labeled_subset(&split.pool, &init.state)?;
        let seed = derive_seed(cfg.seeds.training, &[Key::Str("seg-fit"), Key::U64(0)]);
        let losses = train_seg(&mut model, &labeled, &cfg.seg, cfg.seg.base_epochs, seed)?;
        let state = init.state;
        finish_round(cfg, split, arm, arm_dir, &mut report, &state, &model, 0, &losses, clock)?;
        (state, model, 1)
    };

    let mut t = start_t;
    while t <= al.iterations {
        if opts.stop_after.is_some_and(|s| t > s) {
            return Ok(report);
        }
        let clock = Instant::now();
        if al.recluster {
            let seed = derive_seed(cfg.seeds.kmeans, &[Key::Str("recluster"), Key::U64(t as u64)]);
            state.recluster(
                features.as_ref().expect("features for representative arm"),
                al.clusters,
                seed,
                &al.kmeans,
            )?;
        }
        let sel = state.select_next(al.batch)?;
        let sel_path = arm_dir.join(format!("selection_t{t}.json"));
        sel.save(&sel_path)?;
        report.selections.push(sel_path);
        let labeled = labeled_subset(&split.pool, &state)?;
        let seed = derive_seed(cfg.seeds.training, &[Key::Str("seg-fit"), Key::U64(t as u64)]);
        let losses = train_seg(&mut model, &labeled, &cfg.seg, cfg.seg.iter_epochs, seed)?;
        finish_round(cfg, split, arm, arm_dir, &mut report, &state, &model, t, &losses, clock)?;
        t += 1;
    }
    if opts.stop_after.is_some_and(|s| s < al.iterations) {
        return Ok(report);
    }
    report.complete = true;
    report.save(&report_path)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn finish_round(
    cfg: &ExperimentConfig,
    split: &Split,
    arm: &str,
    arm_dir: &Path,
    report: &mut RunReport,
    state: &SelectionState,
    model: &Model<f32>,
    t: usize,
    losses: &[f64],
    clock: Instant,
) -> Result<()> {
    let eval = evaluate(model, &split.test, cfg.seg.threshold)?;
    if t == cfg.al.iterations {
        eval.write(&arm_dir.join("eval"))?;
    }
    let ckpt = arm_dir.join(format!("ckpt_t{t}.bin"));
    save_checkpoint(model, &ckpt)?;
    state.save(&arm_dir.join(format!("state_t{t}.json")))?;
    let record = IterationRecord {
        t,
        labeled_count: state.labeled.len(),
        mean_dice: eval.mean_dice,
        train_loss: losses.last().copied().unwrap_or(f64::NAN),
    };
    info!(
        "{arm}: t={t} labeled={} dice={:.4} loss={:.4}",
        record.labeled_count, record.mean_dice, record.train_loss
    );
    report.records.push(record);
    report.wall_seconds.push(clock.elapsed().as_secs_f64());
    report.checkpoints.push(ckpt);
    write_log(&arm_dir.join("log.csv"), &report.records)?;
    report.save(&arm_dir.join("report.json"))
}

/// Load the data described by `cfg` and split it.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Split> {
    let data = cfg.data.load()?;
    split_dataset(&data, &cfg.split, cfg.seeds.global)
}

/// Single arm under `out_dir/<arm name>`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &ArmOptions) -> Result<RunReport> {
    let split = prepare(cfg)?;
    let arm = arm_name(cfg);
    run_arm(cfg, &split, &arm, &cfg.out_dir.join(&arm), &cfg.out_dir.join("shared"), opts)
}

/// Method x warm-start grid.
pub fn table1_arms(cfg: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let mut arms = Vec::new();
    for method in [Method::Random, Method::Representative] {
        for warm in [false, true] {
            let mut c = cfg.clone();
            c.al.method = method;
            c.al.warm_start = warm;
            arms.push((arm_name(&c), c));
        }
    }
    arms
}

/// Cold-start random baseline plus representative selection for every
/// `(clusters, grid)` pair.
pub fn table2_arms(cfg: &ExperimentConfig, ks: &[usize], grids: &[usize]) -> Vec<(String, ExperimentConfig)> {
    let mut base = cfg.clone();
    base.al.warm_start = false;
    let mut random = base.clone();
    random.al.method = Method::Random;
    let mut arms = vec![("random".to_string(), random)];
    for &k in ks {
        for &g in grids {
            let mut c = base.clone();
            c.al.method = Method::Representative;
            c.al.clusters = k;
            c.al.grid = g;
            arms.push((format!("k{k}-g{g}"), c));
        }
    }
    arms
}

/// Run every arm on one shared split; all arms must agree on the split.
pub fn run_grid(cfg: &ExperimentConfig, arms: &[(String, ExperimentConfig)], opts: &ArmOptions) -> Result<Vec<RunReport>> {
    let split = prepare(cfg)?;
    let shared = cfg.out_dir.join("shared");
    let mut reports = Vec::with_capacity(arms.len());
    for (name, arm_cfg) in arms {
        if prepare_key(arm_cfg) != prepare_key(cfg) {
            return Err(Error::Config(format!("arm {name} changes the data or split")));
        }
        let r = run_arm(arm_cfg, &split, name, &cfg.out_dir.join(name), &shared, opts)?;
        if r.split_hash != split.hash {
            return Err(Error::Data(format!("arm {name} ran on a different split")));
        }
        reports.push(r);
    }
    Ok(reports)
}

fn prepare_key(cfg: &ExperimentConfig) -> String {
    serde_json::json!([cfg.data, cfg.split, cfg.seeds.global]).to_string()
}

/// Wide CSV: one row per round, one Dice column per arm.
pub fn write_table(path: &Path, reports: &[RunReport]) -> Result<()> {
    let mut csv = String::from("t,labeled_count");
    for r in reports {
        csv.push(',');
        csv.push_str(&r.arm);
    }
    csv.push('\n');
    let rounds = reports.iter().map(|r| r.records.len()).max().unwrap_or(0);
    for i in 0..rounds {
        let first = reports.iter().find_map(|r| r.records.get(i)).expect("some arm has round i");
        csv.push_str(&format!("{},{}", first.t, first.labeled_count));
        for r in reports {
            match r.records.get(i) {
                Some(rec) => csv.push_str(&format!(",{:.6}", rec.mean_dice)),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: String,
    pub t: usize,
    pub labeled_count: usize,
    pub mean: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: f64,
    pub n: usize,
}

/// Mean and spread of Dice per arm and round across seeds.
pub fn summarize(per_seed: &[Vec<RunReport>]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let Some(first) = per_seed.first() else {
        return rows;
    };
    for (a, arm) in first.iter().enumerate() {
        for (i, rec) in arm.records.iter().enumerate() {
            let vals: Vec<f64> = per_seed
                .iter()
                .filter_map(|s| s.get(a).and_then(|r| r.records.get(i)).map(|r| r.mean_dice))
                .collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SummaryRow {
                arm: arm.arm.clone(),
                t: rec.t,
                labeled_count: rec.labeled_count,
                mean,
                std,
                n,
            });
        }
    }
    rows
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut csv = String::from("arm,t,labeled_count,mean_dice,std_dice,n\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{}\n",
            r.arm, r.t, r.labeled_count, r.mean, r.std, r.n
        ));
    }
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

/// Run `arms_for(cfg)` once per seed (each under `out_dir/seed_<s>`) and
/// write `summary.csv` to `out_dir`.
pub fn run_seeds<A>(cfg: &ExperimentConfig, seeds: &[u64], arms_for: A, opts: &ArmOptions) -> Result<Vec<Vec<RunReport>>>
where
    A: Fn(&ExperimentConfig) -> Vec<(String, ExperimentConfig)>,
{
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut all = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let c = cfg.with_seed(s);
        let reports = run_grid(&c, &arms_for(&c), opts)?;
        write_table(&c.out_dir.join("table.csv"), &reports)?;
        all.push(reports);
    }
    mkdir(&cfg.out_dir)?;
    write_summary(&cfg.out_dir.join("summary.csv"), &summarize(&all))?;
    Ok(all)
}
