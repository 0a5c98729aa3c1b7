//! `tokenize`: inspect how text tokenizes under a scheme, and corpus-level
//! sequence-length statistics across all five schemes.

use std::path::Path;

use xval_lab::codec::{tokenize_text, NormalizationSpec, Scheme, Vocabulary};
use xval_lab::datagen::{read_corpus_file, Dataset};

use super::generate::read_manifest;
use super::{CliError, Result};

/// Structural superset used for ad-hoc text so any corpus fragment works.
fn adhoc_schema() -> Vec<&'static str> {
    let mut out = Vec::new();
    for d in [Dataset::Tree2, Dataset::Planets, Dataset::Weather] {
        for t in d.schema_tokens() {
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    for t in ["x", "y", "v", "w", "T", "="] {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

pub fn cmd_tokenize(
    scheme: &str,
    input: Option<&str>,
    data_dir: Option<&Path>,
    stats: bool,
) -> Result<()> {
    if let Some(text) = input {
        let scheme = Scheme::parse(scheme)
            .ok_or_else(|| CliError::Config(format!("unknown scheme {scheme:?}")))?;
        if text.is_empty() {
            return Ok(());
        }
        let vocab = Vocabulary::build(scheme, &adhoc_schema());
        let sample = tokenize_text(scheme, &vocab, &NormalizationSpec::IDENTITY, text)
            .map_err(CliError::from)?;
        let tokens: Vec<String> = sample
            .token_ids
            .iter()
            .map(|&id| vocab.token(id).unwrap().to_string())
            .collect();
        println!("[{}]", tokens.join(", "));
        println!(
            "{} tokens, {} numbers ({} tokens per number)",
            sample.len(),
            sample.raw_values.len(),
            scheme.tokens_per_number()
        );
        if scheme == Scheme::XVal {
            let nums: Vec<String> = sample
                .numbers
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            println!("value lane: [{}]", nums.join(", "));
        }
        return Ok(());
    }

    let data_dir =
        data_dir.ok_or_else(|| CliError::Config("need --in TEXT or --data DIR".into()))?;
    if !stats {
        return Err(CliError::Config(
            "with --data, pass --stats for corpus statistics".into(),
        ));
    }
    let manifest = read_manifest(data_dir)?;
    let schema_refs: Vec<&str> = manifest.schema_tokens.iter().map(|s| s.as_str()).collect();
    let samples = read_corpus_file(&data_dir.join("train.jsonl"))
        .map_err(|e| CliError::Data(e.to_string()))?;
    let subset: Vec<_> = samples.iter().take(500).collect();
    println!(
        "sequence-length statistics over {} samples of {}:",
        subset.len(),
        manifest.dataset.name()
    );
    println!("{:<8} {:>10} {:>10} {:>16}", "scheme", "mean len", "max len", "tokens/number");
    for scheme in Scheme::ALL {
        let vocab = Vocabulary::build(scheme, &schema_refs);
        let mut total = 0usize;
        let mut max = 0usize;
        for s in &subset {
            let t = tokenize_text(scheme, &vocab, &manifest.normalization, &s.text)
                .map_err(CliError::from)?;
            total += t.len();
            max = max.max(t.len());
        }
        println!(
            "{:<8} {:>10.1} {:>10} {:>16}",
            scheme.name(),
            total as f64 / subset.len() as f64,
            max,
            scheme.tokens_per_number()
        );
    }
    Ok(())
}
