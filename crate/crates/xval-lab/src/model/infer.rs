//! Two-stage number inference: argmax the token head; only when it lands on
//! `[NUM]` (or the group of number tokens parses) does a value come out.
//! Anything else counts toward the invalid-prediction rate rather than
//! erroring.

use crate::codec::{parse_number_tokens, Scheme, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct InferredNumber {
    /// Argmax token at each position of the slot.
    pub token_ids: Vec<u32>,
    /// Present iff the slot decodes as a number (normalized space).
    pub value: Option<f64>,
    pub valid: bool,
}

/// Argmax with deterministic tie-break toward the lowest token id.
pub fn argmax_token(logits_row: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &x) in logits_row.iter().enumerate() {
        if x > logits_row[best] {
            best = i;
        }
    }
    best as u32
}

/// Read number predictions out of model outputs at the given token spans.
///
/// `logits` is row-major `[positions, vocab]` over the whole sequence and
/// `number_preds` the number-head output per position.
pub fn infer_numbers(
    scheme: Scheme,
    vocab: &Vocabulary,
    logits: &[f64],
    number_preds: &[f64],
    spans: &[(usize, usize)],
) -> Vec<InferredNumber> {
    let v = vocab.len();
    spans
        .iter()
        .map(|&(start, len)| {
            let token_ids: Vec<u32> = (start..start + len)
                .map(|pos| argmax_token(&logits[pos * v..(pos + 1) * v]))
                .collect();
            let value = if scheme == Scheme::XVal {
                (len == 1 && Some(token_ids[0]) == vocab.num_id())
                    .then(|| number_preds[start])
            } else {
                parse_number_tokens(scheme, vocab, &token_ids)
            };
            InferredNumber {
                valid: value.is_some(),
                value,
                token_ids,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xval_num_token_reads_number_head() {
        let vocab = Vocabulary::build(Scheme::XVal, &[","]);
        let num = vocab.num_id().unwrap() as usize;
        let v = vocab.len();
        let mut logits = vec![0.0; v];
        logits[num] = 5.0;
        let out = infer_numbers(Scheme::XVal, &vocab, &logits, &[3.14], &[(0, 1)]);
        assert_eq!(out[0].value, Some(3.14));
        assert!(out[0].valid);
    }

    #[test]
    fn text_token_in_number_slot_is_invalid() {
        let vocab = Vocabulary::build(Scheme::XVal, &[","]);
        let comma = vocab.id(",").unwrap() as usize;
        let v = vocab.len();
        let mut logits = vec![0.0; v];
        logits[comma] = 5.0;
        let out = infer_numbers(Scheme::XVal, &vocab, &logits, &[3.14], &[(0, 1)]);
        assert_eq!(out[0].value, None);
        assert!(!out[0].valid);
    }

    #[test]
    fn logit_tie_breaks_to_lowest_id() {
        assert_eq!(argmax_token(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax_token(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn text_scheme_group_parses() {
        let vocab = Vocabulary::build(Scheme::B1999, &[","]);
        let v = vocab.len();
        let ids = [vocab.id("-602").unwrap(), vocab.id("E-1").unwrap()];
        let mut logits = vec![0.0; 2 * v];
        logits[ids[0] as usize] = 9.0;
        logits[v + ids[1] as usize] = 9.0;
        let preds = [0.0, 0.0];
        let out = infer_numbers(Scheme::B1999, &vocab, &logits, &preds, &[(0, 2)]);
        assert!((out[0].value.unwrap() + 60.2).abs() < 1e-12);
    }
}
