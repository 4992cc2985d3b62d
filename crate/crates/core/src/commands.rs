//! The operations behind the `idml` binary. Every command writes its outputs
//! under one directory:
//!
//! | file | written by |
//! |------|------------|
//! | `checkpoint.bin` | `train` (after every epoch) |
//! | `train_log.jsonl` | `train`, one record per epoch |
//! | `metrics.txt` | `eval`, `key=value` lines |
//! | `uncertainty_hist.csv` | `eval` |
//! | `sweep_grid.csv` | `sweep` |
//! | `gradcheck.txt` | `gradcheck` |
//! | `data.csv`, `data.meta.json` | `gen-data` |
//! | `uncertainty_curve.csv` | `report` |

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::data::{generate_synthetic, load_csv, save_with_metadata, split_zero_shot, Dataset, DatasetMeta};
use crate::encoder::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_embeddings, EvalReport};
use crate::gradcheck::{run_gradcheck, GradcheckReport};
use crate::train::{embed_with_checkpoint, EpochRecord, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SWEEP_PARTIAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const METRICS_FILE: &str = "metrics.txt";
pub const HISTOGRAM_FILE: &str = "uncertainty_hist.csv";
pub const SWEEP_FILE: &str = "sweep_grid.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";
pub const CURVE_FILE: &str = "uncertainty_curve.csv";

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

/// The full dataset described by the config, before splitting.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let mut spec = cfg.data.synthetic.clone();
            spec.train_class_fraction = cfg.data.train_class_fraction;
            generate_synthetic(&spec)
        }
        DataSource::Csv => {
            let path = cfg.data.csv_path.as_deref().ok_or_else(|| {
                Error::InvalidParameter("data.csv_path is unset".into())
            })?;
            load_csv(path)
        }
    }
}

/// Zero-shot train and test splits of the configured dataset.
pub fn load_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_zero_shot(&load_dataset(cfg)?, cfg.data.train_class_fraction)?;
    if test.len() < 2 {
        return Err(Error::InvalidParameter("test split has fewer than 2 samples".into()));
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

/// Trains and saves the checkpoint after every epoch, so a divergence leaves
/// the last finite parameters on disk.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let (train, _) = load_splits(cfg)?;
    fs::write(out.join("config.json"), cfg.to_json()?)?;
    let mut trainer = Trainer::new(cfg, &train)?;
    let ck_path = out.join(CHECKPOINT_FILE);
    trainer.checkpoint()?.save(&ck_path)?;
    let mut log_file = BufWriter::new(File::create(out.join(TRAIN_LOG_FILE))?);
    let result = trainer.fit(|t, rec| {
        serde_json::to_writer(&mut log_file, rec)?;
        log_file.write_all(b"\n")?;
        log_file.flush()?;
        t.checkpoint()?.save(&ck_path)
    });
    log_file.flush()?;
    Ok(TrainSummary {
        log: result?,
        checkpoint: ck_path,
    })
}

/// Evaluates a checkpoint on the test split and writes the report.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint).map_err(|e| match e {
        Error::Io(io) => Error::InvalidParameter(format!(
            "cannot read checkpoint {}: {io}",
            checkpoint.display()
        )),
        other => other,
    })?;
    fs::create_dir_all(out)?;
    let (train, test) = load_splits(cfg)?;
    let report = evaluate_checkpoint(cfg, &ck, &train, &test)?;
    fs::write(out.join(METRICS_FILE), report.to_text())?;
    fs::write(out.join(HISTOGRAM_FILE), report.uncertainty.histogram_csv())?;
    Ok(report)
}

/// Retrieval metrics on `test`; the uncertainty summary covers `train`.
pub fn evaluate_checkpoint(cfg: &RunConfig, ck: &Checkpoint, train: &Dataset, test: &Dataset) -> Result<EvalReport> {
    let test_emb = embed_with_checkpoint(ck, &test.features)?;
    let train_emb = embed_with_checkpoint(ck, &train.features)?;
    evaluate_embeddings(
        &test_emb,
        &test.single_labels()?,
        &cfg.metric,
        &cfg.eval,
        (&train_emb, &train.mixed_flags()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub tau: f64,
    pub recall_at_1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
}

impl SweepSummary {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,tau,recall_at_1,status\n");
        for c in &self.cells {
            let r = c.recall_at_1.map(|v| format!("{v:?}")).unwrap_or_default();
            let status = if c.error.is_some() { "failed" } else { "ok" };
            writeln!(out, "{:?},{:?},{r},{status}", c.gamma, c.tau).expect("write to string");
        }
        out
    }
}

/// One train and eval per `(gamma, tau)` cell, all with the same seeds. A
/// failed cell is recorded and the sweep carries on.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepSummary> {
    cfg.validate()?;
    if cfg.sweep.gammas.is_empty() || cfg.sweep.taus.is_empty() {
        return Err(Error::InvalidParameter("sweep grids must be nonempty".into()));
    }
    fs::create_dir_all(out)?;
    let mut cells = Vec::new();
    for &gamma in &cfg.sweep.gammas {
        for &tau in &cfg.sweep.taus {
            let mut cell_cfg = cfg.clone();
            cell_cfg.metric.gamma = gamma;
            cell_cfg.metric.tau = tau;
            let dir = out.join(format!("cell_g{gamma}_t{tau}"));
            let result = cmd_train(&cell_cfg, &dir)
                .and_then(|s| cmd_eval(&cell_cfg, &s.checkpoint, &dir));
            cells.push(match result {
                Ok(r) => SweepCell {
                    gamma,
                    tau,
                    recall_at_1: r.recall_at(1),
                    error: None,
                },
                Err(e) => SweepCell {
                    gamma,
                    tau,
                    recall_at_1: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let summary = SweepSummary { cells };
    fs::write(out.join(SWEEP_FILE), summary.to_csv())?;
    Ok(summary)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let report = run_gradcheck(&cfg.gradcheck)?;
    fs::write(out.join(GRADCHECK_FILE), report.to_text())?;
    Ok(report)
}

/// Writes the configured dataset (synthetic or re-saved CSV) with its
/// metadata sidecar.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<DatasetMeta> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    save_with_metadata(&load_dataset(cfg)?, out, "data")
}

/// Reads `train_log.jsonl` under `out` and writes the per-epoch uncertainty
/// curves as CSV.
pub fn cmd_report(out: &Path) -> Result<Vec<EpochRecord>> {
    let path = out.join(TRAIN_LOG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::InvalidParameter(format!("cannot read {}: {e}", path.display()))
    })?;
    let records = read_train_log(&text)?;
    let mut csv = String::from("epoch,loss_mean,u_norm_original,u_norm_mixed\n");
    for r in &records {
        writeln!(
            csv,
            "{},{:?},{:?},{:?}",
            r.epoch, r.loss_mean, r.u_norm_original, r.u_norm_mixed
        )
        .expect("write to string");
    }
    fs::write(out.join(CURVE_FILE), csv)?;
    Ok(records)
}

pub fn read_train_log(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
