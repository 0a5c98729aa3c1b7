//! Vocabulary construction: special tokens, a closed whitelist of structural
//! schema tokens, and the per-scheme number alphabet.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{exponent_token, CodecError, Result, Scheme, EXP_MAX, EXP_MIN};

pub const PAD_TOKEN: &str = "[PAD]";
pub const MASK_TOKEN: &str = "[MASK]";
pub const NUM_TOKEN: &str = "[NUM]";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    pub scheme: Scheme,
    tokens: Vec<String>,
    /// Structural whitelist in insertion order (subset of `tokens`).
    schema_tokens: Vec<String>,
    #[serde(skip)]
    id_map: HashMap<String, u32>,
    /// Structural tokens sorted by descending length for longest-match.
    #[serde(skip)]
    match_order: Vec<(String, u32)>,
    #[serde(skip)]
    structural_ids: Vec<u32>,
    /// Size of the scheme's number alphabet (counting tokens shared with the
    /// structural whitelist once).
    number_token_count: usize,
    /// Ids of tokens that may appear inside a number encoding.
    number_component_ids: Vec<u32>,
}

impl Vocabulary {
    /// Build the vocabulary for `scheme` over a corpus whose structural
    /// alphabet is `schema_tokens` (braces, punctuation, field keywords).
    pub fn build(scheme: Scheme, schema_tokens: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = Vec::new();
        let mut seen: HashMap<String, u32> = HashMap::new();
        let push = |tokens: &mut Vec<String>, seen: &mut HashMap<String, u32>, t: &str| {
            if !seen.contains_key(t) {
                seen.insert(t.to_string(), tokens.len() as u32);
                tokens.push(t.to_string());
            }
        };
        push(&mut tokens, &mut seen, PAD_TOKEN);
        push(&mut tokens, &mut seen, MASK_TOKEN);
        if scheme == Scheme::XVal {
            push(&mut tokens, &mut seen, NUM_TOKEN);
        }
        for t in schema_tokens {
            push(&mut tokens, &mut seen, t);
        }

        let mut number_alphabet: Vec<String> = Vec::new();
        match scheme {
            Scheme::P10 => {
                number_alphabet.push("+".into());
                number_alphabet.push("-".into());
                for d in 0..10 {
                    number_alphabet.push(d.to_string());
                }
                for e in EXP_MIN..=EXP_MAX {
                    number_alphabet.push(exponent_token(e));
                }
            }
            Scheme::P1000 => {
                number_alphabet.push("+".into());
                number_alphabet.push("-".into());
                number_alphabet.push("000".into());
                for m in 100..=999 {
                    number_alphabet.push(m.to_string());
                }
                for e in EXP_MIN..=EXP_MAX {
                    number_alphabet.push(exponent_token(e));
                }
            }
            Scheme::B1999 => {
                number_alphabet.push("+000".into());
                for m in 100..=999 {
                    number_alphabet.push(format!("+{m}"));
                }
                for m in 100..=999 {
                    number_alphabet.push(format!("-{m}"));
                }
                for e in EXP_MIN..=EXP_MAX {
                    number_alphabet.push(exponent_token(e));
                }
            }
            Scheme::Fp15 => {
                number_alphabet.push(format!("+000 {}", exponent_token(0)));
                for sign in ["+", "-"] {
                    for m in 100..=999 {
                        for e in EXP_MIN..=EXP_MAX {
                            number_alphabet.push(format!("{sign}{m} {}", exponent_token(e)));
                        }
                    }
                }
            }
            Scheme::XVal => {
                number_alphabet.push(NUM_TOKEN.into());
            }
        }

        let number_token_count = number_alphabet.len();
        let mut number_component_ids = Vec::with_capacity(number_token_count);
        for t in &number_alphabet {
            push(&mut tokens, &mut seen, t);
            number_component_ids.push(seen[t.as_str()]);
        }
        number_component_ids.sort_unstable();
        number_component_ids.dedup();

        let mut v = Vocabulary {
            scheme,
            tokens,
            schema_tokens: schema_tokens.iter().map(|s| s.to_string()).collect(),
            id_map: seen,
            match_order: Vec::new(),
            structural_ids: Vec::new(),
            number_token_count,
            number_component_ids,
        };
        v.rebuild_match_order();
        v
    }

    fn rebuild_match_order(&mut self) {
        let mut order: Vec<(String, u32)> = self
            .schema_tokens
            .iter()
            .map(|t| (t.clone(), self.id_map[t.as_str()]))
            .collect();
        order.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        order.dedup();
        self.structural_ids = order.iter().map(|(_, id)| *id).collect();
        self.structural_ids.sort_unstable();
        self.structural_ids.dedup();
        self.match_order = order;
    }

    pub fn is_structural(&self, id: u32) -> bool {
        self.structural_ids.binary_search(&id).is_ok()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_map.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or(CodecError::BadTokenId(id, self.tokens.len()))
    }

    pub fn pad_id(&self) -> u32 {
        self.id_map[PAD_TOKEN]
    }

    pub fn mask_id(&self) -> u32 {
        self.id_map[MASK_TOKEN]
    }

    pub fn num_id(&self) -> Option<u32> {
        self.id_map.get(NUM_TOKEN).copied()
    }

    pub fn number_token_count(&self) -> usize {
        self.number_token_count
    }

    pub fn is_number_component(&self, id: u32) -> bool {
        self.number_component_ids.binary_search(&id).is_ok()
    }

    pub fn number_component_ids(&self) -> &[u32] {
        &self.number_component_ids
    }

    /// Structural whitelist tokenization of number-free text: longest match,
    /// whitespace skipped.
    pub fn tokenize_structural(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        let bytes = text.as_bytes();
        let mut i = 0;
        'outer: while i < bytes.len() {
            if bytes[i].is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let rest = &text[i..];
            for (tok, id) in &self.match_order {
                if rest.starts_with(tok.as_str()) {
                    out.push(*id);
                    i += tok.len();
                    continue 'outer;
                }
            }
            let frag: String = rest.chars().take(12).collect();
            return Err(CodecError::UnknownToken(frag));
        }
        Ok(out)
    }

    /// Serialize as an ordered token list.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Vocabulary> {
        let mut v: Vocabulary = serde_json::from_str(s)?;
        v.id_map = v
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        v.rebuild_match_order();
        Ok(v)
    }

    /// Content hash used to detect model/corpus vocabulary mismatches.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.scheme.name().as_bytes());
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        super::hex_digest(&h.finalize())
    }
}
