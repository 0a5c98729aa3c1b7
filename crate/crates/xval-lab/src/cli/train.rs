//! `train`: tokenize the corpus under the chosen scheme, build or resume a
//! model, and run the training loop with metrics and periodic checkpoints in
//! a self-contained run directory.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use xval_lab::codec::{tokenize_text, write_records, Scheme, TokenizedSample, Vocabulary};
use xval_lab::datagen::read_corpus_file;
use xval_lab::model::{build_model, load_checkpoint, save_checkpoint};
use xval_lab::real::Real;
use xval_lab::training::{train, SpecialIds, TrainState};

use super::generate::read_manifest;
use super::{read_config, sha256_str, CliError, Result, RunLock, RunSnapshot};

pub fn cmd_train(
    config_path: &Path,
    data_dir: &Path,
    scheme: &str,
    out: &Path,
    resume: bool,
    stop_at: Option<u64>,
) -> Result<()> {
    let scheme = Scheme::parse(scheme)
        .ok_or_else(|| CliError::Config(format!("unknown scheme {scheme:?}")))?;
    let mut cfg = read_config(config_path)?;
    let manifest = read_manifest(data_dir)?;
    let _lock = RunLock::acquire(out)?;

    let schema_refs: Vec<&str> = manifest.schema_tokens.iter().map(|s| s.as_str()).collect();
    let vocab = Vocabulary::build(scheme, &schema_refs);
    let samples = read_corpus_file(&data_dir.join("train.jsonl"))?;
    if samples.is_empty() {
        return Err(CliError::Data("empty training split".into()));
    }
    println!("tokenizing {} training samples under {}", samples.len(), scheme.name());
    let tokenized: Vec<TokenizedSample> = samples
        .par_iter()
        .map(|s| tokenize_text(scheme, &vocab, &manifest.normalization, &s.text))
        .collect::<std::result::Result<_, _>>()
        .map_err(CliError::from)?;
    let max_len = tokenized.iter().map(|t| t.len()).max().unwrap_or(0);
    let mean_len =
        tokenized.iter().map(|t| t.len()).sum::<usize>() as f64 / tokenized.len() as f64;
    println!("sequence length: mean {mean_len:.1}, max {max_len}");

    if cfg.model.vocab_size == 0 {
        cfg.model.vocab_size = vocab.len();
    } else if cfg.model.vocab_size != vocab.len() {
        return Err(CliError::Config(format!(
            "config vocab_size {} but the {} vocabulary has {} tokens",
            cfg.model.vocab_size,
            scheme.name(),
            vocab.len()
        )));
    }
    if cfg.model.max_context == 0 {
        cfg.model.max_context = max_len;
    } else if max_len > cfg.model.max_context {
        return Err(CliError::Config(format!(
            "max_context {} below corpus max length {max_len}",
            cfg.model.max_context
        )));
    }

    write_records(
        &out.join("tokens_train.bin"),
        scheme,
        &vocab.hash(),
        &manifest.normalization,
        &tokenized,
    )
    .map_err(CliError::from)?;
    std::fs::write(out.join("vocab.json"), vocab.to_json())?;

    let snapshot = RunSnapshot {
        scheme,
        data_dir: data_dir.display().to_string(),
        config: cfg.clone(),
        config_hash: sha256_str(&serde_json::to_string(&cfg)?),
        vocab_hash: vocab.hash(),
    };
    let snapshot_path = out.join("config.json");
    if resume {
        let existing: RunSnapshot = serde_json::from_str(
            &std::fs::read_to_string(&snapshot_path)
                .map_err(|e| CliError::Data(format!("resume without snapshot: {e}")))?,
        )?;
        if existing.config_hash != snapshot.config_hash {
            return Err(CliError::Config(
                "resume config differs from the run snapshot".into(),
            ));
        }
    } else {
        std::fs::write(&snapshot_path, serde_json::to_string_pretty(&snapshot)? + "\n")?;
    }

    std::fs::create_dir_all(out.join("checkpoints"))?;
    match cfg.train.precision.as_str() {
        "f64" => run_training::<f64>(&cfg, &vocab, &tokenized, out, resume, stop_at),
        _ => run_training::<f32>(&cfg, &vocab, &tokenized, out, resume, stop_at),
    }
}

fn run_training<T: Real>(
    cfg: &super::RunConfigFile,
    vocab: &Vocabulary,
    tokenized: &[TokenizedSample],
    out: &Path,
    resume: bool,
    stop_at: Option<u64>,
) -> Result<()> {
    let mut state: TrainState<T> = if resume {
        let path = super::latest_checkpoint(out)?;
        let (model, header, extras) = load_checkpoint::<T>(&path)?;
        println!("resuming from step {} ({})", header.step, path.display());
        TrainState::resume(model, cfg.train.weight_decay, header.step, &extras)
    } else {
        let model = build_model::<T>(
            &cfg.model,
            vocab.len(),
            &vocab.hash(),
            vocab.num_id(),
            cfg.train.seed,
        )?;
        println!(
            "built model: {} parameters, d_model {}",
            model.param_count(),
            cfg.model.d_model()
        );
        TrainState::fresh(model, cfg.train.weight_decay)
    };

    let ids = SpecialIds {
        pad: vocab.pad_id(),
        mask: vocab.mask_id(),
        num: vocab.num_id(),
    };
    let metrics_path = out.join("metrics.jsonl");
    let mut metrics_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)?;
    let ckpt_dir = out.join("checkpoints");
    let seed = cfg.train.seed;
    let mut last_loss = f64::NAN;

    train(
        &mut state,
        tokenized,
        ids,
        &cfg.train,
        stop_at,
        |m| {
            last_loss = m.loss;
            let line = serde_json::to_string(m).expect("metrics serialize");
            let _ = writeln!(metrics_file, "{line}");
            println!(
                "step {:>7}  loss {:.5}  ce {:.5}  mse {:.5}  lr {:.2e}  |g| {:.3}",
                m.step, m.loss, m.ce, m.mse, m.lr, m.grad_norm
            );
        },
        |st| {
            let path = ckpt_dir.join(format!("step_{:07}.ckpt", st.step));
            save_checkpoint(&path, &st.model, st.step, seed, &st.opt_extras())
                .map_err(xval_lab::training::TrainError::from)?;
            Ok(())
        },
    )?;
    println!(
        "training done at step {} (final loss {:.5}); checkpoints in {}",
        state.step,
        last_loss,
        ckpt_dir.display()
    );
    Ok(())
}
