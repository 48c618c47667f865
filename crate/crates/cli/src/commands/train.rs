use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use maskrate::checkpoint;
use maskrate::data::{self, TokenSequence};
use maskrate::evaluate;
use maskrate::trainer::{EvalSet, RunMetrics, TrainState, Trainer};
use maskrate::{ModelParams, Vocab};
use serde::Serialize;

use super::{print_json, write_file};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};

#[derive(Args)]
pub struct TrainArgs {
    /// Run config JSON.
    config: PathBuf,
    /// Replace the artifacts of an earlier run in the output directory.
    #[arg(long, conflicts_with = "resume")]
    force: bool,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Resume from this checkpoint instead of the latest one.
    #[arg(long, requires = "resume")]
    from: Option<PathBuf>,
    /// Stop (with a checkpoint) once this many steps are complete, as if interrupted.
    #[arg(long)]
    stop_after: Option<u64>,
    /// Record per-step wall-clock time in metrics.jsonl. This makes the file
    /// differ between otherwise identical runs.
    #[arg(long)]
    wall_time: bool,
}

const RUN_FILES: [&str; 4] = ["config.json", "vocab.txt", "metrics.jsonl", "summary.json"];

#[derive(Serialize)]
struct Summary {
    steps: u64,
    final_checkpoint: String,
    vocab_size: usize,
    train_sequences: usize,
    /// Corpus lines without any in-vocabulary token.
    dropped_lines: usize,
    eval_sequences: usize,
    initial_eval_loss: f64,
    final_eval_loss: f64,
    final_train_loss: Option<f64>,
}

fn ckpt_name(step: u64) -> String {
    format!("step-{step}.ckpt")
}

fn latest_checkpoint(dir: &Path) -> CliResult<PathBuf> {
    let entries = fs::read_dir(dir).context(format!("cannot list {}", dir.display()))?;
    let mut best: Option<(u64, PathBuf)> = None;
    for e in entries {
        let path = e.context("cannot list checkpoints")?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse::<u64>().ok());
        if let Some(s) = step {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, path));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| CliError::Runtime(format!("no checkpoints in {}", dir.display())))
}

/// Remove what an earlier run wrote, leaving unrelated files alone.
fn clear_run_dir(out: &Path) -> CliResult<()> {
    for f in RUN_FILES {
        let p = out.join(f);
        if p.exists() {
            fs::remove_file(&p).context(format!("cannot remove {}", p.display()))?;
        }
    }
    let ck = out.join("checkpoints");
    if ck.is_dir() {
        for e in fs::read_dir(&ck).context(format!("cannot list {}", ck.display()))? {
            let p = e.context("cannot list checkpoints")?.path();
            if p.extension().is_some_and(|x| x == "ckpt" || x == "tmp") {
                fs::remove_file(&p).context(format!("cannot remove {}", p.display()))?;
            }
        }
    }
    Ok(())
}

fn load_sequences(vocab: &Vocab, path: &Path, max_len: usize) -> CliResult<(Vec<TokenSequence>, usize)> {
    let lines = data::read_corpus(path)?;
    let encoded = data::encode_corpus(vocab, lines.iter(), max_len)?;
    let total = encoded.len();
    let kept: Vec<TokenSequence> = encoded.into_iter().filter(|s| !s.maskable().is_empty()).collect();
    let dropped = total - kept.len();
    Ok((kept, dropped))
}

pub fn run(a: TrainArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let out = cfg.output_dir.clone();
    let ck_dir = out.join("checkpoints");

    let occupied = out.is_dir()
        && fs::read_dir(&out)
            .context(format!("cannot list {}", out.display()))?
            .next()
            .is_some();
    if a.resume {
        if !ck_dir.is_dir() {
            return Err(CliError::usage(format!("nothing to resume in {}", out.display())));
        }
    } else if occupied {
        if !a.force {
            return Err(CliError::usage(format!(
                "output directory {} is not empty; pass --force to overwrite or --resume to continue",
                out.display()
            )));
        }
        clear_run_dir(&out)?;
    }
    fs::create_dir_all(&ck_dir).context(format!("cannot create {}", ck_dir.display()))?;

    let lines = data::read_corpus(&cfg.corpus)?;
    let vocab = data::build_vocab(lines.iter(), cfg.vocab_size)?;
    let vocab_path = out.join("vocab.txt");
    if a.resume && vocab_path.exists() && Vocab::read(&vocab_path)? != vocab {
        return Err(CliError::Runtime(
            "corpus vocabulary differs from the one saved with the run".into(),
        ));
    }
    let model = cfg.model.with_vocab(vocab.len());
    let max_len = model.max_seq_len;
    let (train_set, dropped) = load_sequences(&vocab, &cfg.corpus, max_len)?;
    let eval_set = match &cfg.eval_corpus {
        Some(p) => load_sequences(&vocab, p, max_len)?.0,
        None => train_set.clone(),
    };
    if train_set.is_empty() {
        return Err(maskrate::Error::EmptyDataset.into());
    }

    let state = if a.resume {
        let path = match &a.from {
            Some(p) => p.clone(),
            None => latest_checkpoint(&ck_dir)?,
        };
        let ck = checkpoint::load(&path)?;
        if ck.train != cfg.train {
            return Err(CliError::Runtime(format!(
                "checkpoint {} was written with a different training config",
                path.display()
            )));
        }
        if ck.state.params.config != model {
            return Err(CliError::Runtime(format!(
                "checkpoint {} was written for a different model config",
                path.display()
            )));
        }
        eprintln!("resuming from {} at step {}", path.display(), ck.state.step);
        ck.state
    } else {
        let params = ModelParams::init(&model)?;
        TrainState {
            opt: maskrate::trainer::OptState::new(&params),
            params,
            step: 0,
        }
    };
    let start_step = state.step;

    vocab.write(&vocab_path)?;
    write_file(&out.join("config.json"), &cfg.to_normalized_json()?)?;

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = if a.resume && metrics_path.exists() {
        let text = fs::read_to_string(&metrics_path).context("cannot read metrics.jsonl")?;
        let mut m = RunMetrics::from_jsonl(&text)?;
        m.records.retain(|r| r.step < start_step);
        m
    } else {
        RunMetrics::default()
    };

    let eval = EvalSet {
        dataset: &eval_set,
        config: &cfg.eval,
    };
    let mut trainer =
        Trainer::from_state(cfg.train.clone(), state, &train_set, Some(eval))?.record_wall_time(a.wall_time);
    let total = cfg.train.total_steps;
    let stop = a.stop_after.unwrap_or(total).min(total);
    let every = cfg.train.checkpoint_every;
    let save = |st: &TrainState, metrics: &RunMetrics| -> CliResult<()> {
        checkpoint::save(&ck_dir.join(ckpt_name(st.step)), &cfg.train, st)?;
        write_file(&metrics_path, &metrics.to_jsonl()?)
    };
    let report_every = (total / 10).max(1);
    while trainer.state().step < stop {
        let rec = trainer.step()?;
        if rec.step % report_every == 0 {
            eprintln!(
                "step {}/{} rate {:.4} lr {:.2e} loss {:.4}",
                rec.step, total, rec.rate, rec.lr, rec.loss
            );
        }
        metrics.records.push(rec);
        let s = trainer.state().step;
        if every > 0 && s % every == 0 && s < stop {
            save(trainer.state(), &metrics)?;
        }
    }
    save(trainer.state(), &metrics)?;
    if !trainer.is_done() {
        eprintln!("stopped after step {} of {}", trainer.state().step, total);
        return Ok(());
    }

    let initial = ModelParams::init(&model)?;
    let summary = Summary {
        steps: total,
        final_checkpoint: format!("checkpoints/{}", ckpt_name(total)),
        vocab_size: vocab.len(),
        train_sequences: train_set.len(),
        dropped_lines: dropped,
        eval_sequences: eval_set.len(),
        initial_eval_loss: evaluate::eval_mlm(&initial, &eval_set, &cfg.eval)?,
        final_eval_loss: evaluate::eval_mlm(&trainer.state().params, &eval_set, &cfg.eval)?,
        final_train_loss: metrics.records.last().map(|r| r.loss),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_file(&out.join("summary.json"), &text)?;
    print_json(&summary)
}
