//! `generate`: emit a corpus with 80/10/10 split files, a normalization spec
//! fit on the training split, and an optional out-of-distribution eval set.

use std::collections::BTreeMap;
use std::path::Path;

use xval_lab::datagen::{
    self, fit_normalization_on_train, gen_planet_ood, write_corpus_file, CorpusManifest,
    CorpusSample, Dataset, OodSpec, PlanetPriors, Split,
};

use super::{CliError, Result};

pub fn cmd_generate(
    dataset: &str,
    count: usize,
    seed: u64,
    out: &Path,
    ood_spec: Option<&str>,
) -> Result<()> {
    let dataset = Dataset::parse(dataset)
        .ok_or_else(|| CliError::Config(format!("unknown dataset {dataset:?}")))?;
    let ood: Option<OodSpec> = match ood_spec {
        Some(raw) => {
            let text = if let Some(path) = raw.strip_prefix('@') {
                std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("ood spec {path}: {e}")))?
            } else {
                raw.to_string()
            };
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("ood spec: {e}")))?,
            )
        }
        None => None,
    };
    if ood.is_some() && dataset != Dataset::Planets {
        return Err(CliError::Config(
            "ood generation is defined for the planets dataset".into(),
        ));
    }

    std::fs::create_dir_all(out)?;
    let samples = datagen::generate(dataset, count, seed)?;
    let normalization = fit_normalization_on_train(&samples)?;

    let mut hashes = BTreeMap::new();
    let mut split_counts = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let subset: Vec<CorpusSample> = samples
            .iter()
            .filter(|s| s.split == split)
            .cloned()
            .collect();
        let file = format!("{}.jsonl", split.name());
        let hash = write_corpus_file(&out.join(&file), &subset)?;
        split_counts.insert(split.name().to_string(), subset.len());
        hashes.insert(file, hash);
    }
    if let Some(spec) = &ood {
        let ood_samples = gen_planet_ood(spec, seed, None)?;
        let file = format!("ood_{}.jsonl", spec.field);
        let hash = write_corpus_file(&out.join(&file), &ood_samples)?;
        hashes.insert(file, hash);
    }

    let priors = match dataset {
        Dataset::Planets => serde_json::to_value(PlanetPriors::default())?,
        _ => serde_json::Value::Null,
    };
    let manifest = CorpusManifest {
        dataset,
        seed,
        count,
        normalization,
        schema_tokens: dataset
            .schema_tokens()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        split_counts,
        priors,
        ood,
        hashes,
    };
    std::fs::write(
        out.join("metadata.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    println!(
        "generated {} samples of {} into {} (splits: {:?})",
        count,
        dataset.name(),
        out.display(),
        manifest.split_counts
    );
    Ok(())
}

pub fn read_manifest(data_dir: &Path) -> Result<CorpusManifest> {
    let path = data_dir.join("metadata.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("missing manifest {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| CliError::Data(format!("manifest: {e}")))?)
}
