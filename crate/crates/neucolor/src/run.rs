//! Training runs on disk: checkpoints, the loss CSV and resumption.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use neucolor_core::trainer::{StepReport, TrainEvent, TrainState, Trainer};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_string};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_CSV: &str = "loss.csv";
pub const CONFIG_COPY: &str = "config.toml";
pub const CSV_HEADER: &str = "iter,color,eikonal,relight,mask,total,lr,alpha";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `OUT/checkpoint.ckpt` when it exists.
    pub resume: bool,
    /// Stop (and checkpoint) once this iteration count is reached.
    pub stop_after: Option<u64>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub iter: u64,
    pub finished: bool,
    pub last: Option<StepReport>,
    pub checkpoint: PathBuf,
}

pub fn csv_row(r: &StepReport) -> String {
    let l = &r.loss;
    format!(
        "{},{},{},{},{},{},{},{}",
        r.iter, l.color, l.eikonal, l.relight, l.mask, l.total, r.lr, r.alpha
    )
}

fn kept_rows(path: &Path, before: u64) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_string(path)?
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|i| i.parse::<u64>().ok())
                .is_some_and(|i| i < before)
        })
        .map(str::to_owned)
        .collect())
}

fn write_csv(path: &Path, rows: &[String]) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    atomic_write(path, s.as_bytes())
}

/// Trains on the dataset in `data`, writing into `out`.
pub fn train_run(cfg: &RunConfig, data: &Path, out: &Path, opts: &TrainOptions) -> Result<TrainSummary> {
    let loaded = load_dataset(data)?;
    let trainer = Trainer::new(&loaded.dataset, cfg.train.clone())?;
    let ck_path = out.join(CHECKPOINT_FILE);
    let csv_path = out.join(LOSS_CSV);
    let mut state: TrainState = if opts.resume && ck_path.exists() {
        let ck = load_checkpoint(&ck_path)?;
        if ck.train != trainer.config || ck.state.params.config() != &cfg.model {
            return Err(Error::Config(format!(
                "{} was written with a different configuration",
                ck_path.display()
            )));
        }
        if ck.state.poses.poses.len() != loaded.dataset.len() {
            return Err(Error::Dataset("checkpoint camera count differs from the dataset".into()));
        }
        ck.state
    } else {
        trainer.init_state(cfg.model.clone())
    };
    atomic_write(&out.join(CONFIG_COPY), cfg.to_toml().as_bytes())?;
    let mut rows = kept_rows(&csv_path, state.iter)?;
    let until = opts.stop_after.unwrap_or(u64::MAX).min(trainer.config.total_iters);
    let log_every = cfg.log_every.max(1);
    let mut last = None;
    let mut saved_at = None;
    let mut io_error = None;
    let train_cfg = trainer.config.clone();
    let result = trainer.run(&mut state, until, |ev| match ev {
        TrainEvent::Step(r) => {
            if r.iter % log_every == 0 || r.iter + 1 == train_cfg.total_iters {
                rows.push(csv_row(r));
                if opts.verbose {
                    eprintln!(
                        "iter {} loss {:.5} color {:.5} alpha {:.1} lr {:.2e}",
                        r.iter, r.loss.total, r.loss.color, r.alpha, r.lr
                    );
                }
            }
            last = Some(*r);
            ControlFlow::Continue(())
        }
        TrainEvent::Checkpoint(s) => {
            let ck = Checkpoint {
                train: train_cfg.clone(),
                state: s.clone(),
            };
            match save_checkpoint(&ck, &ck_path).and_then(|_| write_csv(&csv_path, &rows)) {
                Ok(()) => {
                    saved_at = Some(s.iter);
                    ControlFlow::Continue(())
                }
                Err(e) => {
                    io_error = Some(e);
                    ControlFlow::Break(())
                }
            }
        }
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    result?;
    if saved_at != Some(state.iter) {
        let ck = Checkpoint {
            train: trainer.config.clone(),
            state: state.clone(),
        };
        save_checkpoint(&ck, &ck_path)?;
        write_csv(&csv_path, &rows)?;
    }
    Ok(TrainSummary {
        iter: state.iter,
        finished: state.iter >= trainer.config.total_iters,
        last,
        checkpoint: ck_path,
    })
}
