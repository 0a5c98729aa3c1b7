//! Tokenized-corpus record files: a JSON metadata header line followed by
//! binary records, one per sample — `u32` token count, then the token ids as
//! little-endian `i32`, then the aligned value lane as little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NormalizationSpec, Result, Scheme, TokenizedSample};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordFileHeader {
    pub scheme: Scheme,
    pub vocab_hash: String,
    pub normalization: NormalizationSpec,
    pub sample_count: usize,
    pub underflow_flushed: usize,
}

pub fn write_records(
    path: &Path,
    scheme: Scheme,
    vocab_hash: &str,
    norm: &NormalizationSpec,
    samples: &[TokenizedSample],
) -> Result<()> {
    let header = RecordFileHeader {
        scheme,
        vocab_hash: vocab_hash.to_string(),
        normalization: *norm,
        sample_count: samples.len(),
        underflow_flushed: samples.iter().map(|s| s.underflow_flushed).sum(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in samples {
        w.write_all(&(s.token_ids.len() as u32).to_le_bytes())?;
        for &id in &s.token_ids {
            w.write_all(&(id as i32).to_le_bytes())?;
        }
        for &x in &s.numbers {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<(RecordFileHeader, Vec<TokenizedSample>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    r.read_line(&mut header_line)?;
    let header: RecordFileHeader = serde_json::from_str(header_line.trim_end())?;
    let mut samples = Vec::with_capacity(header.sample_count);
    for _ in 0..header.sample_count {
        let mut len_buf = [0u8; 4];
        r.read_exact(&mut len_buf)?;
        let n = u32::from_le_bytes(len_buf) as usize;
        let mut ids = Vec::with_capacity(n);
        let mut buf4 = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf4)?;
            ids.push(i32::from_le_bytes(buf4) as u32);
        }
        let mut numbers = Vec::with_capacity(n);
        let mut buf8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf8)?;
            numbers.push(f64::from_le_bytes(buf8));
        }
        samples.push(TokenizedSample {
            token_ids: ids,
            numbers,
            raw_values: Vec::new(),
            number_spans: Vec::new(),
            source_spans: Vec::new(),
            underflow_flushed: 0,
        });
    }
    Ok((header, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode, Vocabulary};

    #[test]
    fn roundtrip_preserves_ids_and_values() {
        let vocab = Vocabulary::build(Scheme::XVal, &["v", "="]);
        let s1 = encode(Scheme::XVal, &vocab, "v=[NUM]", &[2.5]).unwrap();
        let s2 = encode(Scheme::XVal, &vocab, "v=[NUM] v=[NUM]", &[-0.25, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.bin");
        write_records(
            &path,
            Scheme::XVal,
            &vocab.hash(),
            &NormalizationSpec::IDENTITY,
            &[s1.clone(), s2.clone()],
        )
        .unwrap();
        let (header, back) = read_records(&path).unwrap();
        assert_eq!(header.sample_count, 2);
        assert_eq!(header.vocab_hash, vocab.hash());
        assert_eq!(back[0].token_ids, s1.token_ids);
        assert_eq!(back[0].numbers, s1.numbers);
        assert_eq!(back[1].token_ids, s2.token_ids);
        assert_eq!(back[1].numbers, s2.numbers);
    }
}
