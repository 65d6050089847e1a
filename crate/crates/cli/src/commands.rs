use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use isib_core::experiment::{
    adapt_row, adapt_table, build_world, evaluate, native_table, run_native_job, AdaptOutcome, NativeJob, NativeRun,
    RowKey, World,
};
use isib_core::metrics::ErrorBreakdown;
use isib_core::synthlang::{Lang, Utterance};
use isib_core::train::{init_checkpoint, train_stage1, train_stage2, Checkpoint, TrainConfig, TrainLog};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint;
use crate::cli::{Cli, Command, EvalArgs, ExperimentArgs, GenDataArgs, InitArgs, Scenario, StageArg, TokenizeArgs, TrainArgs};
use crate::config::Config;
use crate::dataset::{self, read_corpus, write_world};
use crate::error::{CliError, Result};
use crate::report::write_table;

pub const NATIVE_REPORT: &str = "native_only";
pub const ADAPT_REPORT: &str = "accent_adapted";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a, cli.seed),
        Command::InitCentroids(a) => init_centroids(&a, cli.seed),
        Command::Train(a) => train(&a, cli.seed),
        Command::Eval(a) => eval(&a),
        Command::Tokenize(a) => tokenize(&a),
        Command::Experiment(a) => experiment(&a, cli.seed),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Config> {
    Ok(Config::load(path)?.with_seed(seed))
}

pub fn gen_data(args: &GenDataArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&args.config, seed)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
    let world = build_world(&cfg.experiment.world, cfg.seed)?;
    write_world(&out, &world)?;
    eprintln!("wrote corpora for seed {} to {}", cfg.seed, out.display());
    Ok(())
}

fn data_dir(cfg: &Config, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.paths.data_dir.clone())
}

struct TrainingData {
    vocab_l1: usize,
    vocab_l2: usize,
    train_l1: Vec<Utterance>,
    train_l2: Vec<Utterance>,
}

fn read_training_data(dir: &Path) -> Result<TrainingData> {
    let langs = dataset::read_languages(dir)?;
    Ok(TrainingData {
        vocab_l1: langs.l1.vocab_size(),
        vocab_l2: langs.l2.vocab_size(),
        train_l1: read_corpus(&dir.join(dataset::TRAIN_L1))?,
        train_l2: read_corpus(&dir.join(dataset::TRAIN_L2))?,
    })
}

fn fresh_checkpoint(cfg: &Config, data: &TrainingData, init: Lang) -> Result<Checkpoint> {
    let corpus = match init {
        Lang::L1 => &data.train_l1,
        Lang::L2 => &data.train_l2,
    };
    let e = &cfg.experiment;
    Ok(init_checkpoint(&e.model, data.vocab_l1, data.vocab_l2, init, corpus, &e.lloyd, cfg.seed)?)
}

pub fn init_centroids(args: &InitArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&args.config, seed)?;
    let data = read_training_data(&data_dir(&cfg, &args.data))?;
    let ckpt = fresh_checkpoint(&cfg, &data, args.init.into())?;
    checkpoint::save(&args.out, &ckpt, &cfg.experiment.model)
}

pub fn train(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&args.config, seed)?;
    let data = read_training_data(&data_dir(&cfg, &args.data))?;
    let init: Lang = args.init.into();
    let e = &cfg.experiment;
    let tc = TrainConfig { alpha: args.alpha.unwrap_or(e.train.alpha), seed: cfg.seed, ..e.train.clone() };
    tc.validate()?;

    let start = match &args.from {
        Some(path) => {
            let (ckpt, manifest) = checkpoint::load(path)?;
            checkpoint::ensure_compatible(&manifest, &e.model, data.vocab_l1, data.vocab_l2)?;
            if ckpt.init != init {
                return Err(CliError::Usage(format!(
                    "checkpoint was initialized on {}, not {}",
                    ckpt.init.as_str(),
                    init.as_str()
                )));
            }
            ckpt
        }
        None if args.stage == StageArg::Two => {
            return Err(CliError::Usage("--stage 2 needs --from <stage-1 checkpoint>".into()));
        }
        None => fresh_checkpoint(&cfg, &data, init)?,
    };

    let mut log = TrainLog::default();
    let mut ckpt = start;
    if matches!(args.stage, StageArg::One | StageArg::All) {
        let (c, l) = train_stage1(&ckpt, &data.train_l1, &data.train_l2, &tc)?;
        ckpt = c;
        log.extend(l);
    }
    if matches!(args.stage, StageArg::Two | StageArg::All) {
        let (c, l) = train_stage2(&ckpt, &data.train_l1, &data.train_l2, &e.model, &tc)?;
        ckpt = c;
        log.extend(l);
    }
    checkpoint::save(&args.out, &ckpt, &e.model)?;
    write_train_log(&args.out.join(TRAIN_LOG_FILE), &log)
}

fn write_train_log(path: &Path, log: &TrainLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))?;
    w.write_record(["stage", "epoch", "loss", "loss_l1", "loss_l2"]).map_err(|e| CliError::format(path, e))?;
    for e in &log.epochs {
        w.write_record([
            e.stage.as_str().to_string(),
            e.epoch.to_string(),
            e.total.to_string(),
            e.l1.to_string(),
            e.l2.to_string(),
        ])
        .map_err(|err| CliError::format(path, err))?;
    }
    w.flush().map_err(CliError::io(path))
}

/// JSON shape printed by `eval`.
#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub rate: f64,
}

impl From<ErrorBreakdown> for EvalReport {
    fn from(e: ErrorBreakdown) -> Self {
        EvalReport {
            substitutions: e.substitutions,
            deletions: e.deletions,
            insertions: e.insertions,
            ref_len: e.ref_len,
            rate: e.rate(),
        }
    }
}

fn check_dims(ckpt: &Checkpoint, corpus: &[Utterance], path: &Path) -> Result<()> {
    let d = ckpt.model.feature_dim();
    if let Some(u) = corpus.iter().find(|u| u.features.cols() != d) {
        return Err(CliError::Usage(format!(
            "{}: features have {} dims but the checkpoint expects {d}",
            path.display(),
            u.features.cols()
        )));
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let (ckpt, _) = checkpoint::load(&args.checkpoint)?;
    let corpus = read_corpus(&args.data)?;
    check_dims(&ckpt, &corpus, &args.data)?;
    let lang = args.lang.map(Lang::from).unwrap_or(corpus[0].lang);
    let report = EvalReport::from(evaluate(&ckpt, &corpus, lang)?);
    println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Usage(e.to_string()))?);
    Ok(())
}

pub fn tokenize(args: &TokenizeArgs) -> Result<()> {
    let (ckpt, _) = checkpoint::load(&args.checkpoint)?;
    let corpus = read_corpus(&args.data)?;
    check_dims(&ckpt, &corpus, &args.data)?;
    let mut text = String::new();
    for u in &corpus {
        let ids: Vec<String> = ckpt.model.tokenize(&u.features)?.iter().map(usize::to_string).collect();
        text.push_str(&ids.join(" "));
        text.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, text).map_err(CliError::io(path)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(CliError::io(Path::new("<stdout>"))),
    }
}

fn row_dir_name(key: &RowKey) -> String {
    match key.alpha {
        None => format!("init-{}-kmeans", key.init.as_str()),
        Some(a) => format!("init-{}-alpha-{a}", key.init.as_str()),
    }
}

/// Runs the configured scenarios with rayon-parallel (seed, init) and
/// (seed, row) jobs; results are assembled in configuration order, so the
/// output does not depend on the thread count.
pub fn experiment(args: &ExperimentArgs, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(&args.config, seed)?;
    let e = &cfg.experiment;
    let out = args.out.clone().unwrap_or_else(|| cfg.paths.report_dir.clone());

    let worlds: Vec<World> = e.seeds.par_iter().map(|&s| build_world(&e.world, s)).collect::<Result<_, _>>()?;
    let pairs: Vec<(usize, Lang)> =
        (0..e.seeds.len()).flat_map(|si| e.inits.iter().map(move |&init| (si, init))).collect();
    let flat: Vec<NativeJob> =
        pairs.par_iter().map(|&(si, init)| run_native_job(e, &worlds[si], init, e.seeds[si])).collect();
    let mut jobs: Vec<Vec<NativeJob>> = (0..e.seeds.len()).map(|_| Vec::new()).collect();
    for ((si, _), job) in pairs.iter().zip(flat) {
        jobs[*si].push(job);
    }
    let run = NativeRun { worlds, jobs };

    if matches!(args.scenario, Scenario::Native | Scenario::Both) {
        write_table(&out, NATIVE_REPORT, &native_table(e, &run))?;
    }
    if args.save_checkpoints {
        for (si, per_init) in run.jobs.iter().enumerate() {
            for row in per_init.iter().flat_map(|j| &j.rows) {
                if let Ok((ckpt, _)) = &row.outcome {
                    let dir = out.join("checkpoints").join(format!("seed-{}", e.seeds[si])).join(row_dir_name(&row.key));
                    checkpoint::save(&dir, ckpt, &e.model)?;
                }
            }
        }
    }
    if matches!(args.scenario, Scenario::Adapted | Scenario::Both) {
        let tasks: Vec<(usize, usize, usize)> = run
            .jobs
            .iter()
            .enumerate()
            .flat_map(|(si, per_init)| {
                per_init.iter().enumerate().flat_map(move |(ji, j)| (0..j.rows.len()).map(move |ri| (si, ji, ri)))
            })
            .collect();
        let outcomes: Vec<AdaptOutcome> = tasks
            .par_iter()
            .map(|&(si, ji, ri)| adapt_row(e, &run.jobs[si][ji].rows[ri], &run.worlds[si], e.seeds[si]))
            .collect();
        let mut per_seed: Vec<Vec<AdaptOutcome>> = (0..e.seeds.len()).map(|_| Vec::new()).collect();
        for (&(si, _, _), o) in tasks.iter().zip(outcomes) {
            per_seed[si].push(o);
        }
        write_table(&out, ADAPT_REPORT, &adapt_table(e, &per_seed))?;
    }
    eprintln!("reports written to {}", out.display());
    Ok(())
}
