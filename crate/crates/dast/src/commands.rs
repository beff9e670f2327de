//! The pipeline stages behind each CLI subcommand. Each writes its
//! artifacts plus a manifest into an output directory and returns a
//! summary for printing.

use std::path::{Path, PathBuf};

use dast_core::data::{sliding_windows, WindowSpec, STAT_ROWS};
use dast_core::{average_attention, evaluate, DastModel, Trainer, Variant};
use serde::Serialize;

use crate::artifacts::{self, Metrics, PredictionRow, RunManifest};
use crate::cache::DatasetCache;
use crate::checkpoint::{check_compatible, Checkpoint, TrainProgress};
use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::exec::Pool;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn cache_path(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(format!("dataset_{}_w{}.json", cfg.subset, cfg.effective_window()))
}

fn stat_rows(cache: &DatasetCache) -> usize {
    if cache.spec.stat_features {
        STAT_ROWS
    } else {
        0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreprocessReport {
    pub cache: PathBuf,
    pub reused: bool,
    pub fingerprint: String,
    pub train_engines: usize,
    pub test_engines: usize,
    pub train_windows: usize,
    pub test_windows: usize,
}

/// Parses, normalises and windows a raw subset into a cache file, reusing
/// an existing cache whose fingerprint matches.
pub fn preprocess(cfg: &RunConfig, out: &Path) -> Result<(DatasetCache, PreprocessReport)> {
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("preprocess", cfg);
    let path = cache_path(out, cfg);
    let spec = WindowSpec::new(cfg.effective_window());
    let (cache, reused) = DatasetCache::load_or_build(cfg.dataset_dir()?, cfg.subset, spec, &path)?;
    let split = cache.windows()?;
    manifest.dataset_fingerprint = Some(cache.fingerprint.clone());
    manifest.artifacts.push(path.clone());
    manifest.finish(out)?;
    let report = PreprocessReport {
        cache: path,
        reused,
        fingerprint: cache.fingerprint.clone(),
        train_engines: cache.data.train.len(),
        test_engines: cache.data.test.len(),
        train_windows: split.train.len(),
        test_windows: split.test.len(),
    };
    Ok((cache, report))
}

/// Loads `cache` if given, otherwise preprocesses the configured dataset
/// into `out`.
pub fn open_cache(cfg: &RunConfig, cache: Option<&Path>, out: &Path) -> Result<(DatasetCache, PathBuf)> {
    match cache {
        Some(p) => Ok((DatasetCache::load(p)?, p.to_path_buf())),
        None => {
            let (c, r) = preprocess(cfg, out)?;
            Ok((c, r.cache))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_test_rmse: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub history: PathBuf,
    pub param_count: usize,
}

/// Trains a model on the cached dataset. With `resume`, the model weights
/// and trainer state come from that checkpoint and training continues up
/// to the configured epoch count.
pub fn train(cfg: &RunConfig, cache: &DatasetCache, out: &Path, resume: Option<&Path>) -> Result<TrainReport> {
    ensure_dir(out)?;
    let model_cfg = cfg.model_for(cache.spec.length, stat_rows(cache), cache.sensor_count())?;
    let split = cache.windows()?;
    let pool = Pool::new(cfg.threads)?;
    let mut manifest = RunManifest::new("train", cfg);
    manifest.seed = Some(cfg.train.seed);
    manifest.dataset_fingerprint = Some(cache.fingerprint.clone());
    manifest.threads = pool.threads();

    let (mut model, mut trainer) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.model != model_cfg {
                return Err(Error::Config(format!(
                    "{}: checkpoint model configuration differs from the requested one",
                    p.display()
                )));
            }
            let progress = ck
                .training
                .clone()
                .ok_or_else(|| Error::Config(format!("{}: checkpoint has no trainer state", p.display())))?;
            let mut model = ck.to_model()?;
            let trainer = Trainer::resume(cfg.train.clone(), &mut model, progress.state)?;
            (model, trainer)
        }
        None => {
            let mut model = DastModel::new(model_cfg, cfg.train.seed)?;
            let trainer = Trainer::new(cfg.train.clone(), &mut model)?;
            (model, trainer)
        }
    };

    let progress = |t: &Trainer| TrainProgress {
        config: t.config().clone(),
        state: t.state().clone(),
    };
    let best_path = out.join("checkpoint_best.json");
    let final_path = out.join("checkpoint_final.json");
    let history_path = out.join("history.csv");
    let mut history = Vec::new();
    let mut best_written = false;
    while !trainer.is_finished() {
        let before = trainer.state().best_test_rmse;
        let rec = trainer.run_epoch(&mut model, &split, &pool)?;
        if trainer.state().best_test_rmse != before {
            Checkpoint::from_model(&model, Some(progress(&trainer))).save(&best_path)?;
            best_written = true;
        }
        let every = cfg.train.checkpoint_every;
        if every > 0 && rec.epoch % every == 0 {
            let p = out.join(format!("checkpoint_epoch{:04}.json", rec.epoch));
            Checkpoint::from_model(&model, Some(progress(&trainer))).save(&p)?;
            manifest.artifacts.push(p);
        }
        history.push(rec);
    }
    let last = Checkpoint::from_model(&model, Some(progress(&trainer)));
    last.save(&final_path)?;
    if !best_written {
        last.save(&best_path)?;
    }
    artifacts::write_history(&history_path, &history)?;
    manifest.artifacts.extend([best_path.clone(), final_path.clone(), history_path.clone()]);
    manifest.finish(out)?;
    Ok(TrainReport {
        epochs_run: history.len(),
        best_test_rmse: trainer.state().best_test_rmse,
        final_train_loss: history.last().map(|h| h.train_loss),
        best_checkpoint: best_path,
        final_checkpoint: final_path,
        history: history_path,
        param_count: model.param_count(),
    })
}

fn load_for(checkpoint: &Path, cache: &DatasetCache) -> Result<DastModel> {
    let ck = Checkpoint::load(checkpoint)?;
    check_compatible(&ck.model, cache.spec.length, stat_rows(cache), cache.sensor_count())
        .map_err(|e| Error::Config(format!("{}: {e}", checkpoint.display())))?;
    ck.to_model()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub metrics: Metrics,
    pub metrics_path: PathBuf,
    pub predictions_path: PathBuf,
}

/// Scores the final window of every test engine.
pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    cache: &DatasetCache,
    out: &Path,
) -> Result<EvaluateReport> {
    ensure_dir(out)?;
    let model = load_for(checkpoint, cache)?;
    let split = cache.windows()?;
    let pool = Pool::new(cfg.threads)?;
    let eval = evaluate(&model, &split.test, &pool)?;
    let rows: Vec<PredictionRow> = split
        .test
        .iter()
        .zip(&eval.predictions)
        .map(|(s, &p)| PredictionRow {
            unit_id: s.unit_id,
            true_rul: s.label,
            pred_rul: p,
        })
        .collect();
    let metrics = Metrics::from(&eval.metrics);
    let metrics_path = out.join("metrics.json");
    let predictions_path = out.join("predictions.csv");
    artifacts::write_json(&metrics_path, &metrics)?;
    artifacts::write_predictions(&predictions_path, &rows)?;

    let mut manifest = RunManifest::new("evaluate", cfg);
    manifest.dataset_fingerprint = Some(cache.fingerprint.clone());
    manifest.threads = pool.threads();
    manifest.artifacts.extend([metrics_path.clone(), predictions_path.clone()]);
    manifest.finish(out)?;
    Ok(EvaluateReport {
        metrics,
        metrics_path,
        predictions_path,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRequest {
    pub unit: u32,
    pub split: Split,
    /// Inclusive range of window end cycles; `None` means unbounded.
    pub from_cycle: Option<u32>,
    pub to_cycle: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionReport {
    pub windows: usize,
    pub sensor_weights: Vec<f64>,
    pub time_weights: Vec<f64>,
    pub sensor_path: PathBuf,
    pub time_path: PathBuf,
}

/// Averages sensor and time-step attention over the selected windows of
/// one engine.
pub fn export_attention(
    cfg: &RunConfig,
    checkpoint: &Path,
    cache: &DatasetCache,
    req: &AttentionRequest,
    out: &Path,
) -> Result<AttentionReport> {
    ensure_dir(out)?;
    let model = load_for(checkpoint, cache)?;
    let engines = match req.split {
        Split::Train => &cache.data.train,
        Split::Test => &cache.data.test,
    };
    let engine = engines
        .iter()
        .find(|e| e.unit_id == req.unit)
        .ok_or_else(|| Error::Config(format!("unit {} is not in the {:?} split", req.unit, req.split)))?;
    // labels do not influence attention
    let windows = sliding_windows(engine, cache.spec, &vec![0.0; engine.len()])?;
    let chosen: Vec<_> = windows
        .iter()
        .filter(|w| req.from_cycle.is_none_or(|c| w.end_cycle >= c) && req.to_cycle.is_none_or(|c| w.end_cycle <= c))
        .collect();
    if chosen.is_empty() {
        let first = windows.first().map_or(0, |w| w.end_cycle);
        let last = windows.last().map_or(0, |w| w.end_cycle);
        return Err(Error::Config(format!(
            "no window of unit {} ends in the requested cycle range; windows end at cycles {first}..={last}",
            req.unit
        )));
    }
    let mut records = Vec::new();
    for w in &chosen {
        records.extend(model.predict_with_attention(&w.matrix, true)?.1);
    }
    let (sensor_weights, time_weights) = average_attention(&records)?;

    let sensor_path = out.join(format!("attention_sensor_unit{}.csv", req.unit));
    let time_path = out.join(format!("attention_time_unit{}.csv", req.unit));
    artifacts::write_sensor_weights(&sensor_path, cache.data.sensor_ids(), &sensor_weights)?;
    artifacts::write_time_weights(&time_path, cache.spec.length, &time_weights)?;
    let mut manifest = RunManifest::new("export-attention", &(cfg, req));
    manifest.dataset_fingerprint = Some(cache.fingerprint.clone());
    manifest.artifacts.extend([sensor_path.clone(), time_path.clone()]);
    manifest.finish(out)?;
    Ok(AttentionReport {
        windows: chosen.len(),
        sensor_weights,
        time_weights,
        sensor_path,
        time_path,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: usize,
    pub param_count: Option<usize>,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub score_mean: Option<f64>,
    pub score_std: Option<f64>,
    pub error: Option<String>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn ablate_variant(cfg: &RunConfig, cache: &DatasetCache, variant: Variant, seeds: &[u64], pool: &Pool) -> Result<AblationRow> {
    let mut run_cfg = cfg.clone();
    run_cfg.model.variant = variant;
    let model_cfg = run_cfg.model_for(cache.spec.length, stat_rows(cache), cache.sensor_count())?;
    let split = cache.windows()?;
    let (mut rmse, mut score) = (Vec::new(), Vec::new());
    let mut param_count = 0;
    for &seed in seeds {
        let train_cfg = dast_core::TrainConfig { seed, ..run_cfg.train.clone() };
        let mut model = DastModel::new(model_cfg.clone(), seed)?;
        param_count = model.param_count();
        let (_, trainer) = dast_core::train(&mut model, &split, &train_cfg, pool, |_, _, _| Ok(()))?;
        if let Some(best) = trainer.best_params() {
            *model.params_mut() = best.clone();
        }
        let eval = evaluate(&model, &split.test, pool)?;
        rmse.push(eval.metrics.rmse);
        score.push(eval.metrics.score);
    }
    let (rm, rs) = mean_std(&rmse);
    let (sm, ss) = mean_std(&score);
    Ok(AblationRow {
        variant,
        runs: seeds.len(),
        param_count: Some(param_count),
        rmse_mean: Some(rm),
        rmse_std: Some(rs),
        score_mean: Some(sm),
        score_std: Some(ss),
        error: None,
    })
}

/// Trains and scores every variant over `seeds`. A failing variant is
/// reported in its row and the others still run.
pub fn ablate(cfg: &RunConfig, cache: &DatasetCache, seeds: &[u64], out: &Path) -> Result<(Vec<AblationRow>, PathBuf)> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    ensure_dir(out)?;
    let pool = Pool::new(cfg.threads)?;
    let rows: Vec<AblationRow> = Variant::ALL
        .into_iter()
        .map(|v| {
            ablate_variant(cfg, cache, v, seeds, &pool).unwrap_or_else(|e| AblationRow {
                variant: v,
                runs: 0,
                param_count: None,
                rmse_mean: None,
                rmse_std: None,
                score_mean: None,
                score_std: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(crate::error::csv_err(&path))?;
    for r in &rows {
        w.serialize(r).map_err(crate::error::csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let mut manifest = RunManifest::new("ablate", &(cfg, seeds));
    manifest.dataset_fingerprint = Some(cache.fingerprint.clone());
    manifest.threads = pool.threads();
    manifest.artifacts.push(path.clone());
    manifest.finish(out)?;
    Ok((rows, path))
}
