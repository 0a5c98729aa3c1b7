//! Deterministic corpus generators: arithmetic expressions, planetary-orbit
//! documents backed by an in-repo leapfrog integrator, and a weather-like
//! synthetic surrogate. Every sample is a pure function of `(seed, index)`.

mod arithmetic;
mod nbody;
mod planets;
mod weather;

pub use arithmetic::{gen_expression_tree, gen_multiplication, parse_and_eval};
pub use nbody::{simulate_system, total_energy, NBodyState, SystemParams, CLOSE_ENCOUNTER_DIST};
pub use planets::{
    ecc_to_text, gen_planet_corpus, gen_planet_ood, gen_planet_sample, mass_to_text, Override,
    PlanetPriors,
};
pub use weather::{gen_weather_corpus, gen_weather_sample};

/// Render at three significant digits, the corpus-wide convention. Values
/// below the representable floor flush to zero.
pub(crate) fn sig3(v: f64) -> String {
    match crate::codec::to_scientific(v) {
        Ok(s) => crate::codec::render_number(s.value()),
        Err(_) => "0".to_string(),
    }
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{extract_numbers, CodecError, NormalizationSpec};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("ood field {0:?} not supported for this dataset")]
    BadOodField(String),
    #[error("could not generate a stable system after {0} attempts")]
    Unstable(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V> = std::result::Result<V, DatagenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// Disjoint 80/10/10 assignment from the sample id.
    pub fn of_id(id: u64) -> Split {
        match id % 10 {
            8 => Split::Val,
            9 => Split::Test,
            _ => Split::Train,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// A named set of values inside a document, locatable by the ordinals of its
/// numbers in extraction order (what the targeted mask resolver consumes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthField {
    pub values: Vec<f64>,
    pub ordinals: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSample {
    pub id: u64,
    pub text: String,
    pub split: Split,
    pub ground_truth: BTreeMap<String, GroundTruthField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mult3,
    Mult4,
    Mult5,
    Tree2,
    Tree3,
    Tree4,
    Planets,
    Weather,
    Lenprobe,
}

impl Dataset {
    pub fn parse(s: &str) -> Option<Dataset> {
        match s.to_ascii_lowercase().as_str() {
            "mult3" => Some(Dataset::Mult3),
            "mult4" => Some(Dataset::Mult4),
            "mult5" => Some(Dataset::Mult5),
            "tree2" => Some(Dataset::Tree2),
            "tree3" => Some(Dataset::Tree3),
            "tree4" => Some(Dataset::Tree4),
            "planets" => Some(Dataset::Planets),
            "weather" => Some(Dataset::Weather),
            "lenprobe" => Some(Dataset::Lenprobe),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Mult3 => "mult3",
            Dataset::Mult4 => "mult4",
            Dataset::Mult5 => "mult5",
            Dataset::Tree2 => "tree2",
            Dataset::Tree3 => "tree3",
            Dataset::Tree4 => "tree4",
            Dataset::Planets => "planets",
            Dataset::Weather => "weather",
            Dataset::Lenprobe => "lenprobe",
        }
    }

    /// Closed structural alphabet of the dataset's documents.
    pub fn schema_tokens(self) -> Vec<&'static str> {
        match self {
            Dataset::Mult3 | Dataset::Mult4 | Dataset::Mult5 | Dataset::Tree2
            | Dataset::Tree3 | Dataset::Tree4 => vec!["(", ")", "*", "+", "-", "="],
            Dataset::Planets => vec![
                "{", "}", "[", "]", ",", ":", "'", "description", "planet0", "planet1",
                "planet2", "planet3", "stepsize", "data", "m", "a", "e",
            ],
            Dataset::Weather | Dataset::Lenprobe => vec![
                "{", "}", "[", "]", ",", ":", "'", "description", "coords", "start", "data",
            ],
        }
    }
}

/// Out-of-distribution evaluation request: hold the named field at each grid
/// value (values absent from the training support) and emit `per_value`
/// fresh samples for each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    pub field: String,
    pub grid: Vec<f64>,
    pub per_value: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub dataset: Dataset,
    pub seed: u64,
    pub count: usize,
    pub normalization: NormalizationSpec,
    pub schema_tokens: Vec<String>,
    pub split_counts: BTreeMap<String, usize>,
    pub priors: serde_json::Value,
    pub ood: Option<OodSpec>,
    /// File name -> sha256 of contents.
    pub hashes: BTreeMap<String, String>,
}

/// Fit the `[-5, 5]` normalization over every number in the training split.
pub fn fit_normalization_on_train(samples: &[CorpusSample]) -> Result<NormalizationSpec> {
    let values = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .flat_map(|s| extract_numbers(&s.text).1);
    Ok(NormalizationSpec::fit(values)?)
}

pub fn write_corpus_file(path: &Path, samples: &[CorpusSample]) -> Result<String> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut hasher = Sha256::new();
    for s in samples {
        let line = serde_json::to_string(s)?;
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(crate::codec::hex_digest(&hasher.finalize()))
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<CorpusSample>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Generate a full corpus for `dataset`, split 80/10/10 by id.
pub fn generate(dataset: Dataset, count: usize, seed: u64) -> Result<Vec<CorpusSample>> {
    match dataset {
        Dataset::Mult3 => gen_multiplication(3, count, seed),
        Dataset::Mult4 => gen_multiplication(4, count, seed),
        Dataset::Mult5 => gen_multiplication(5, count, seed),
        Dataset::Tree2 => gen_expression_tree(2, count, seed),
        Dataset::Tree3 => gen_expression_tree(3, count, seed),
        Dataset::Tree4 => gen_expression_tree(4, count, seed),
        Dataset::Planets => gen_planet_corpus(count, seed, None),
        Dataset::Weather | Dataset::Lenprobe => gen_weather_corpus(count, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_assignment_is_80_10_10() {
        let mut counts = [0usize; 3];
        for id in 0..1000u64 {
            match Split::of_id(id) {
                Split::Train => counts[0] += 1,
                Split::Val => counts[1] += 1,
                Split::Test => counts[2] += 1,
            }
        }
        assert_eq!(counts, [800, 100, 100]);
    }
}
