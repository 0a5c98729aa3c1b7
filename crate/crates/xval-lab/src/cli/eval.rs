//! `eval`: masked-field metrics and the probe family (ood / logits / pca /
//! length) against a trained run directory.

use std::path::{Path, PathBuf};

use xval_lab::codec::{Scheme, Vocabulary};
use xval_lab::datagen::{read_corpus_file, CorpusManifest, CorpusSample, Dataset};
use xval_lab::evaluation::{
    embedding_pca, eval_masked_fields, length_correlation_probe, logits_trace, mantissa_tokens,
    ood_probe, scatter_plot_svg, train_varlen_probe_model, EvalContext, Series,
};
use xval_lab::model::{load_checkpoint, CheckpointHeader, Model};

use super::generate::read_manifest;
use super::{latest_checkpoint, sha256_file, CliError, Result, RunSnapshot};

pub struct LoadedRun {
    pub snapshot: RunSnapshot,
    pub vocab: Vocabulary,
    pub model: Model<f32>,
    pub header: CheckpointHeader,
    pub checkpoint_hash: String,
    pub checkpoint_path: PathBuf,
}

pub fn load_run(run: &Path) -> Result<LoadedRun> {
    let snapshot: RunSnapshot = serde_json::from_str(
        &std::fs::read_to_string(run.join("config.json"))
            .map_err(|e| CliError::Data(format!("run snapshot: {e}")))?,
    )?;
    let vocab = Vocabulary::from_json(
        &std::fs::read_to_string(run.join("vocab.json"))
            .map_err(|e| CliError::Data(format!("run vocabulary: {e}")))?,
    )
    .map_err(CliError::from)?;
    let checkpoint_path = latest_checkpoint(run)?;
    let (model, header, _) = load_checkpoint::<f32>(&checkpoint_path)?;
    let checkpoint_hash = sha256_file(&checkpoint_path)?;
    Ok(LoadedRun {
        snapshot,
        vocab,
        model,
        header,
        checkpoint_hash,
        checkpoint_path,
    })
}

fn corpus_for_split(data_dir: &Path, split: &str) -> Result<(Vec<CorpusSample>, String)> {
    let file = data_dir.join(format!("{split}.jsonl"));
    let samples = read_corpus_file(&file)
        .map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
    let hash = sha256_file(&file)?;
    Ok((samples, hash))
}

/// Training-support values of a field, for snap-rate accounting.
fn support_values(manifest: &CorpusManifest, field: &str) -> Result<Vec<f64>> {
    match field {
        "stepsize" => Ok(manifest
            .priors
            .get("stepsizes")
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_else(|| vec![0.2, 0.3, 0.5, 0.8])),
        "a1" => Ok(vec![1.0]),
        other => Err(CliError::Config(format!(
            "no training-support definition for field {other:?}"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    run: &Path,
    data_dir: &Path,
    split: &str,
    fields: &[String],
    probe: Option<&str>,
    field: Option<&str>,
    limit: usize,
    probe_train_steps: u64,
) -> Result<()> {
    let loaded = load_run(run)?;
    let manifest = read_manifest(data_dir)?;
    let eval_dir = run.join("eval");
    std::fs::create_dir_all(&eval_dir)?;
    println!(
        "evaluating {} (step {}, scheme {})",
        loaded.checkpoint_path.display(),
        loaded.header.step,
        loaded.snapshot.scheme.name()
    );

    match probe {
        None => {
            if fields.is_empty() {
                return Err(CliError::Config("no --fields given".into()));
            }
            let (samples, data_hash) = corpus_for_split(data_dir, split)?;
            let samples = truncate(samples, limit);
            let mut ctx =
                EvalContext::new(&loaded.model, &loaded.vocab, manifest.normalization)
                    .map_err(CliError::from)?;
            ctx.checkpoint_hash = loaded.checkpoint_hash.clone();
            ctx.dataset_hash = data_hash;
            let report = eval_masked_fields(&ctx, &samples, fields)?;
            let out = eval_dir.join(format!("report_{split}.json"));
            std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            println!("{:<12} {:>6} {:>12} {:>8} {:>9}", "field", "n", "mse", "r2", "invalid%");
            for (name, m) in &report.fields {
                println!(
                    "{:<12} {:>6} {:>12} {:>8} {:>8.2}%",
                    name,
                    m.n,
                    m.mse.map_or("-".into(), |v| format!("{v:.6}")),
                    m.r2.map_or("-".into(), |v| format!("{v:.4}")),
                    100.0 * m.invalid_rate
                );
            }
            println!("report written to {}", out.display());
        }
        Some("ood") => {
            let field = field.ok_or_else(|| CliError::Config("--field required".into()))?;
            let (samples, data_hash) = corpus_for_split(data_dir, &format!("ood_{field}"))?;
            let samples = truncate(samples, limit);
            let mut ctx =
                EvalContext::new(&loaded.model, &loaded.vocab, manifest.normalization)
                    .map_err(CliError::from)?;
            ctx.checkpoint_hash = loaded.checkpoint_hash.clone();
            ctx.dataset_hash = data_hash;
            let support = support_values(&manifest, field)?;
            let report = ood_probe(&ctx, &samples, field, &support, 0.01)?;
            std::fs::write(
                eval_dir.join(format!("ood_{field}.json")),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            std::fs::write(eval_dir.join(format!("ood_{field}.csv")), report.curve_csv())?;
            let points: Vec<(f64, f64, Option<f64>)> = report
                .records
                .iter()
                .filter_map(|r| r.predicted.map(|p| (r.true_value, p, Some(r.true_value))))
                .collect();
            std::fs::write(
                eval_dir.join(format!("ood_{field}.svg")),
                scatter_plot_svg(&format!("{field}: true vs predicted"), &points),
            )?;
            println!(
                "ood probe on {field}: snap-rate {:.3}, spearman {:?}, interpolation mse {:?}",
                report.snap_rate, report.spearman_rho, report.interpolation_mse
            );
        }
        Some("logits") => {
            let field = field.ok_or_else(|| CliError::Config("--field required".into()))?;
            let (samples, _) = corpus_for_split(data_dir, &format!("ood_{field}"))?;
            let samples = truncate(samples, limit);
            let ctx = EvalContext::new(&loaded.model, &loaded.vocab, manifest.normalization)
                .map_err(CliError::from)?;
            let trace = logits_trace(&ctx, &samples, field, 5)?;
            std::fs::write(eval_dir.join(format!("logits_{field}.csv")), trace.to_csv())?;
            // one line per tracked top-1 token
            let mut series: Vec<Series> = Vec::new();
            let colors = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"];
            let mut tokens: Vec<String> = Vec::new();
            for row in &trace.rows {
                for (tok, _) in row.top.iter().take(2) {
                    if !tokens.contains(tok) && tokens.len() < colors.len() {
                        tokens.push(tok.clone());
                    }
                }
            }
            for (i, tok) in tokens.iter().enumerate() {
                let points: Vec<(f64, f64)> = trace
                    .rows
                    .iter()
                    .filter_map(|r| {
                        r.top
                            .iter()
                            .find(|(t, _)| t == tok)
                            .map(|(_, l)| (r.true_value, *l))
                    })
                    .collect();
                series.push(Series {
                    label: tokens[i].as_str(),
                    color: colors[i],
                    points,
                });
            }
            std::fs::write(
                eval_dir.join(format!("logits_{field}.svg")),
                xval_lab::evaluation::line_plot_svg(
                    &format!("top logits at the {field} mantissa slot"),
                    &series,
                ),
            )?;
            println!(
                "logits trace on {field}: {} grid points, discontinuity score {:.4}",
                trace.rows.len(),
                trace.discontinuity
            );
        }
        Some("pca") => {
            if loaded.snapshot.scheme == Scheme::XVal {
                return Err(CliError::Config(
                    "pca probe needs a text scheme's mantissa tokens".into(),
                ));
            }
            let tokens = mantissa_tokens(&loaded.vocab);
            let export = embedding_pca(&loaded.model, &tokens, &loaded.vocab)?;
            std::fs::write(eval_dir.join("pca.csv"), export.to_csv())?;
            let points: Vec<(f64, f64, Option<f64>)> =
                export.points.iter().map(|p| (p.x, p.y, p.value)).collect();
            std::fs::write(
                eval_dir.join("pca.svg"),
                scatter_plot_svg("mantissa-token embedding PCA", &points),
            )?;
            println!(
                "pca export: {} tokens, explained variance {:.4} + {:.4}",
                export.points.len(),
                export.explained_variance[0],
                export.explained_variance[1]
            );
        }
        Some("length") => {
            let (samples, _) = corpus_for_split(data_dir, split)?;
            let samples = truncate(samples, limit.max(1));
            let model_acc = if probe_train_steps > 0 {
                let (_, acc) = train_varlen_probe_model(
                    &samples,
                    manifest.dataset,
                    probe_train_steps,
                    loaded.snapshot.config.train.seed,
                )?;
                Some(acc)
            } else {
                None
            };
            let report = length_correlation_probe(&samples, 200_000, model_acc)?;
            std::fs::write(
                eval_dir.join("length_probe.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            for c in &report.classifiers {
                println!(
                    "length-only classifier [{}]: accuracy {:.3} vs baseline {:.3} ({})",
                    c.task,
                    c.accuracy,
                    c.majority_baseline,
                    if c.above_chance { "above chance" } else { "at chance" }
                );
            }
            println!(
                "anomaly class (short encodings in [0.01, 0.1)): {} values flagged",
                report.anomaly_count
            );
        }
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown probe {other:?} (expected ood, logits, pca, or length)"
            )));
        }
    }
    let _ = Dataset::Planets; // manifest dataset retained for future probes
    Ok(())
}

fn truncate(mut samples: Vec<CorpusSample>, limit: usize) -> Vec<CorpusSample> {
    if limit > 0 && samples.len() > limit {
        samples.truncate(limit);
    }
    samples
}
