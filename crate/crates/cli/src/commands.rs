use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use tse_core::analysis::{build_eval_matrix, collect_embeddings, compare_systems, variance_ratio, SystemReport};
use tse_core::config::RunConfig;
use tse_core::datagen::{build_dataset, Dataset, Split, MANIFEST_FILE};
use tse_core::metrics::{EvalMatrix, SdrNumerator};
use tse_core::model::Checkpoint;
use tse_core::training::{append_history, gradcheck_suite, train_with, LossMode, TrainState};
use tse_core::TseError;

use crate::lock::WorkdirLock;
use crate::{CliError, Common};

const BEST: &str = "best.json";
const LAST: &str = "last.json";
const HISTORY: &str = "history.jsonl";

fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::usage(format!("config file {} not found", path.display())));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(w) = &common.workdir {
        cfg.paths.workdir = w.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| TseError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::from(TseError::io(path, e)))
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::usage(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.paths.dataset();
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::runtime(format!(
            "no dataset at {}; run `tse simulate` first",
            dir.display()
        )));
    }
    Ok(Dataset::load(&dir)?)
}

pub fn simulate(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    cfg.dataset.validate()?;
    let _lock = WorkdirLock::acquire(&cfg.paths.workdir)?;
    let dir = cfg.paths.dataset();
    refuse_overwrite(&dir, common.force)?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| TseError::io(&dir, e))?;
    }
    let manifest = build_dataset(&cfg.dataset, &dir)?;
    manifest.validate_files(&dir)?;
    write(&dir.join("dataset.toml"), &cfg.to_toml())?;
    info!("wrote {} mixtures to {}", manifest.records.len(), dir.display());
    Ok(())
}

pub fn train(
    common: &Common,
    loss_mode: Option<LossMode>,
    name: Option<String>,
    epochs: Option<usize>,
    resume: bool,
) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(m) = loss_mode {
        cfg.train.loss_mode = m;
    }
    if let Some(e) = epochs {
        cfg.train.total_epochs = e;
        cfg.train.worst_loss_start_epoch = cfg.train.worst_loss_start_epoch.min(e);
    }
    cfg.validate()?;
    let name = name.unwrap_or_else(|| cfg.train.loss_mode.name().to_string());
    let _lock = WorkdirLock::acquire(&cfg.paths.workdir)?;
    let dataset = load_dataset(&cfg)?;
    cfg.train.validate_against(&cfg.model, &dataset)?;

    let dir = cfg.paths.checkpoints().join(&name);
    let resume_state: Option<TrainState> = if resume {
        let ck = Checkpoint::load(dir.join(LAST))?;
        let state = ck
            .train_state
            .ok_or_else(|| CliError::usage(format!("{} holds no training state", dir.join(LAST).display())))?;
        info!("resuming {name} after epoch {}", state.epochs_completed);
        Some(state)
    } else {
        refuse_overwrite(&dir, common.force)?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| TseError::io(&dir, e))?;
        }
        None
    };
    fs::create_dir_all(&dir).map_err(|e| TseError::io(&dir, e))?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let history = dir.join(HISTORY);
    if resume_state.is_none() {
        write(&history, "")?;
    }

    info!("training {name} ({}) for {} epochs", cfg.train.loss_mode, cfg.train.total_epochs);
    let state = train_with(&cfg.model, &cfg.train, &dataset, resume_state, |s| {
        let rec = s.history.records.last().expect("called after an epoch");
        append_history(&history, std::slice::from_ref(rec))?;
        if rec.best {
            Checkpoint::new(s.best_params.clone(), None).save(dir.join(BEST))?;
        }
        Checkpoint::new(s.params.clone(), Some(s.clone())).save(dir.join(LAST))
    })?;
    Checkpoint::new(state.best_params.clone(), None).save(dir.join(BEST))?;
    if state.history.records.is_empty() {
        Checkpoint::new(state.params.clone(), Some(state.clone())).save(dir.join(LAST))?;
    }
    match (state.best_epoch, state.best_dev_loss) {
        (Some(e), Some(l)) => info!("best dev loss {l:.3} at epoch {e}; wrote {}", dir.join(BEST).display()),
        _ => info!("no epochs run; wrote initial parameters to {}", dir.join(BEST).display()),
    }
    Ok(())
}

pub fn eval(
    common: &Common,
    name: Option<String>,
    loss_mode: Option<LossMode>,
    checkpoint: Option<PathBuf>,
    split: &str,
) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let split = match split {
        "train" => Split::Train,
        "dev" => Split::Dev,
        _ => Split::Eval,
    };
    let name = name.unwrap_or_else(|| loss_mode.unwrap_or(cfg.train.loss_mode).name().to_string());
    let _lock = WorkdirLock::acquire(&cfg.paths.workdir)?;
    let ck_path = checkpoint.unwrap_or_else(|| cfg.paths.checkpoints().join(&name).join(BEST));
    if !ck_path.is_file() {
        return Err(CliError::runtime(format!("checkpoint {} not found", ck_path.display())));
    }
    let out = cfg.paths.eval().join(format!("{name}.tsv"));
    refuse_overwrite(&out, common.force)?;
    let params = Checkpoint::load(&ck_path)?.params;
    let dataset = load_dataset(&cfg)?;

    let mut matrix = build_eval_matrix(&params, &dataset, split, cfg.metrics.sdr_numerator)?;
    matrix.meta.insert("system".into(), name.clone());
    matrix.meta.insert("checkpoint".into(), ck_path.display().to_string());
    let numerator = match cfg.metrics.sdr_numerator {
        SdrNumerator::Reference => "reference",
        SdrNumerator::Estimate => "estimate",
    };
    matrix.meta.insert("sdr_numerator".into(), numerator.into());
    match variance_ratio(&collect_embeddings(&params, &dataset, Split::Dev)?) {
        Ok(v) => {
            matrix.meta.insert("variance_ratio_dev".into(), format!("{v}"));
        }
        Err(e) => log::warn!("variance ratio unavailable: {e}"),
    }
    write(&out, &matrix.to_text())?;
    info!("wrote {} ({} mixtures x {} enrollments)", out.display(), matrix.n_mixtures(), matrix.n_enrollments());
    Ok(())
}

pub fn report(common: &Common, matrices: &[PathBuf]) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let paths: Vec<PathBuf> = if matrices.is_empty() {
        let dir = cfg.paths.eval();
        let mut v: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| TseError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
            .collect();
        v.sort();
        v
    } else {
        matrices.to_vec()
    };
    if paths.is_empty() {
        return Err(CliError::usage("no evaluation matrices to report on"));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("reading {}: {e}", p.display())))?;
        let m = EvalMatrix::from_text(&text).map_err(|e| match e {
            TseError::Parse { location, message } => CliError::usage(format!("{}: {location}: {message}", p.display())),
            other => CliError::usage(format!("{}: {other}", p.display())),
        })?;
        let name = m.meta.get("system").cloned().unwrap_or_else(|| {
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        let vr = m.meta.get("variance_ratio_dev").and_then(|v| v.parse().ok());
        reports.push(SystemReport::new(name, &m, cfg.metrics.failure_threshold_db, vr)?);
    }
    let _lock = WorkdirLock::acquire(&cfg.paths.workdir)?;
    let dir = cfg.paths.reports();
    let table = dir.join("comparison.tsv");
    refuse_overwrite(&table, common.force)?;
    let cmp = compare_systems(&reports);
    write(&table, &cmp.table_tsv())?;
    write(&dir.join("comparison.md"), &cmp.table_markdown())?;
    write(&dir.join("plot_data.tsv"), &cmp.plot_tsv())?;
    write(
        &dir.join("systems.json"),
        &serde_json::to_string_pretty(&reports).expect("reports serialize"),
    )?;
    print!("{}", cmp.table_markdown());
    info!("wrote report for {} systems to {}", reports.len(), dir.display());
    Ok(())
}

pub fn gradcheck(seed: u64, samples: usize, tolerance: f64) -> Result<(), CliError> {
    let reports = gradcheck_suite(seed, samples.max(1))?;
    let mut ok = true;
    for r in &reports {
        let pass = r.passed(tolerance);
        ok &= pass;
        println!(
            "{:<11} {} max rel error {:.2e} over {} parameters",
            r.objective,
            if pass { "ok  " } else { "FAIL" },
            r.max_rel_error,
            r.entries.len()
        );
        if !pass {
            for e in r.entries.iter().filter(|e| e.rel_error > tolerance) {
                println!(
                    "    {}[{}]: analytic {:.6e} numeric {:.6e}",
                    e.tensor, e.index, e.analytic, e.numeric
                );
            }
        }
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::runtime("gradient check failed"))
    }
}
