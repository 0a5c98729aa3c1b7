//! Number extraction and the encode/decode pair.
//!
//! `extract_numbers` pulls every decimal literal out of a document and leaves
//! a `[NUM]` placeholder behind; `encode` expands placeholders into the
//! scheme's token group (or a single `[NUM]` token with the value carried in
//! the aligned `numbers` lane for xVal). `decode` inverts the process and
//! flags token groups that do not form a number instead of failing, so
//! invalid model predictions can be counted.

use serde::{Deserialize, Serialize};

use super::{
    parse_exponent_token, render_number, to_scientific, CodecError, NormalizationSpec, Result,
    Scheme, SciForm, Vocabulary, UNDERFLOW_EPS,
};

pub const PLACEHOLDER: &str = "[NUM]";

/// Structural tokens joined with surrounding spaces when reconstructing text.
const SPACED_TOKENS: [&str; 4] = ["*", "+", "-", "="];

/// Token-id sequence aligned 1:1 with a numeric-value sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub token_ids: Vec<u32>,
    /// Value lane: 1.0 everywhere except at `[NUM]` positions under xVal.
    pub numbers: Vec<f64>,
    /// Extracted values in document order, before normalization.
    pub raw_values: Vec<f64>,
    /// `(first_token, token_count)` occupied by each value.
    pub number_spans: Vec<(usize, usize)>,
    /// Byte spans of each value in the source document.
    pub source_spans: Vec<(usize, usize)>,
    /// Values flushed to zero for falling below the representable range.
    pub underflow_flushed: usize,
}

impl TokenizedSample {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Replace every decimal literal with `[NUM]`, collecting values and byte
/// spans in document order.
///
/// A sign is part of the literal only when the previous non-space character
/// could not end a value (so `x=-0.5` yields -0.5, while `1.42 - 8.20` keeps
/// the minus as an operator).
pub fn extract_numbers(text: &str) -> (String, Vec<f64>, Vec<(usize, usize)>) {
    let bytes = text.as_bytes();
    let mut template = String::with_capacity(text.len());
    let mut values = Vec::new();
    let mut spans = Vec::new();
    let mut i = 0;
    let mut prev_value_end: Option<u8> = None;
    while i < bytes.len() {
        let b = bytes[i];
        if let Some(len) = match_number(bytes, i, prev_value_end) {
            let lit = &text[i..i + len];
            let v: f64 = lit
                .trim_start_matches('+')
                .parse()
                .expect("matched literal parses");
            template.push_str(PLACEHOLDER);
            values.push(v);
            spans.push((i, len));
            i += len;
            prev_value_end = Some(b'0');
            continue;
        }
        template.push(b as char);
        if !b.is_ascii_whitespace() {
            prev_value_end = Some(b);
        }
        i += 1;
    }
    (template, values, spans)
}

/// Length of the numeric literal starting at `i`, if any.
fn match_number(bytes: &[u8], i: usize, prev: Option<u8>) -> Option<usize> {
    let n = bytes.len();
    let mut j = i;
    // digits glued to an identifier stay in the identifier (planet0, t2m)
    if i > 0 && (bytes[i - 1].is_ascii_alphabetic() || bytes[i - 1] == b'_') {
        return None;
    }
    let sign_allowed = !matches!(prev, Some(p) if p.is_ascii_digit() || p == b'.' || p == b')');
    if j < n && (bytes[j] == b'+' || bytes[j] == b'-') {
        if !sign_allowed {
            return None;
        }
        j += 1;
    }
    let digits_start = j;
    while j < n && bytes[j].is_ascii_digit() {
        j += 1;
    }
    let int_digits = j - digits_start;
    let mut frac_digits = 0;
    if j < n && bytes[j] == b'.' {
        let k = j + 1;
        let mut f = k;
        while f < n && bytes[f].is_ascii_digit() {
            f += 1;
        }
        frac_digits = f - k;
        if int_digits + frac_digits > 0 {
            j = f;
        }
    }
    if int_digits + frac_digits == 0 {
        return None;
    }
    // optional exponent, only when the full e[+|-]d+ pattern is present
    if j < n && (bytes[j] == b'e' || bytes[j] == b'E') {
        let mut k = j + 1;
        if k < n && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        let exp_start = k;
        while k < n && bytes[k].is_ascii_digit() {
            k += 1;
        }
        if k > exp_start {
            j = k;
        }
    }
    Some(j - i)
}

/// Expand a `[NUM]`-templated document into a token stream. `values` must
/// already be normalized; text schemes additionally round them to the
/// scientific form, while xVal stores them untouched in the value lane.
pub fn encode(
    scheme: Scheme,
    vocab: &Vocabulary,
    template: &str,
    values: &[f64],
) -> Result<TokenizedSample> {
    let segments: Vec<&str> = template.split(PLACEHOLDER).collect();
    if segments.len() != values.len() + 1 {
        return Err(CodecError::UnknownToken(format!(
            "template has {} placeholders, got {} values",
            segments.len() - 1,
            values.len()
        )));
    }
    let mut token_ids: Vec<u32> = Vec::new();
    let mut numbers: Vec<f64> = Vec::new();
    let mut number_spans = Vec::new();
    let mut underflow_flushed = 0usize;

    for (k, seg) in segments.iter().enumerate() {
        let ids = vocab.tokenize_structural(seg)?;
        numbers.resize(numbers.len() + ids.len(), 1.0);
        token_ids.extend(ids);
        if k == values.len() {
            break;
        }
        let mut v = values[k];
        let start = token_ids.len();
        if scheme == Scheme::XVal {
            token_ids.push(vocab.num_id().expect("xval vocab has [NUM]"));
            numbers.push(v);
        } else {
            if v != 0.0 && v.abs() < UNDERFLOW_EPS {
                v = 0.0;
                underflow_flushed += 1;
            }
            let s = to_scientific(v)?;
            for tok in scheme_tokens(scheme, s) {
                let id = vocab
                    .id(&tok)
                    .ok_or_else(|| CodecError::UnknownToken(tok.clone()))?;
                token_ids.push(id);
                numbers.push(1.0);
            }
        }
        number_spans.push((start, token_ids.len() - start));
    }
    Ok(TokenizedSample {
        token_ids,
        numbers,
        raw_values: values.to_vec(),
        number_spans,
        source_spans: Vec::new(),
        underflow_flushed,
    })
}

/// Token strings one number expands to under a text scheme.
fn scheme_tokens(scheme: Scheme, s: SciForm) -> Vec<String> {
    let sign = if s.negative { "-" } else { "+" };
    let mantissa = format!("{:03}", s.mantissa);
    let exp = super::exponent_token(s.exponent);
    match scheme {
        Scheme::P10 => {
            let d = mantissa.as_bytes();
            vec![
                sign.to_string(),
                (d[0] as char).to_string(),
                (d[1] as char).to_string(),
                (d[2] as char).to_string(),
                exp,
            ]
        }
        Scheme::P1000 => vec![sign.to_string(), mantissa, exp],
        Scheme::B1999 => vec![format!("{sign}{mantissa}"), exp],
        Scheme::Fp15 => vec![format!("{sign}{mantissa} {exp}")],
        Scheme::XVal => unreachable!("xval handled by caller"),
    }
}

/// Full pipeline: extract, normalize, encode.
pub fn tokenize_text(
    scheme: Scheme,
    vocab: &Vocabulary,
    norm: &NormalizationSpec,
    text: &str,
) -> Result<TokenizedSample> {
    let (template, raw, spans) = extract_numbers(text);
    let normalized: Vec<f64> = raw.iter().map(|&v| norm.apply(v)).collect();
    let mut sample = encode(scheme, vocab, &template, &normalized)?;
    sample.raw_values = raw;
    sample.source_spans = spans;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub text: String,
    /// Decoded values in stream order (normalized space).
    pub values: Vec<f64>,
    /// One flag per decoded number slot; false marks an unparseable group.
    pub valid: Vec<bool>,
}

/// Strictly parse one number occupying exactly `ids` under a text scheme.
/// Returns `None` when the group is malformed (the Table-5 style invalid
/// prediction case). xVal values live outside the tokens, so this returns
/// `None` for it by construction.
pub fn parse_number_tokens(scheme: Scheme, vocab: &Vocabulary, ids: &[u32]) -> Option<f64> {
    if ids.len() != scheme.tokens_per_number() || scheme == Scheme::XVal {
        return None;
    }
    let tok = |i: usize| vocab.token(ids[i]).ok();
    let sign_of = |s: &str| match s {
        "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => None,
    };
    match scheme {
        Scheme::P10 => {
            let sign = sign_of(tok(0)?)?;
            let mut m = 0u16;
            for k in 1..4 {
                let t = tok(k)?;
                if t.len() != 1 || !t.as_bytes()[0].is_ascii_digit() {
                    return None;
                }
                m = m * 10 + (t.as_bytes()[0] - b'0') as u16;
            }
            let e = parse_exponent_token(tok(4)?)?;
            Some(sign * m as f64 * 10f64.powi(e as i32))
        }
        Scheme::P1000 => {
            let sign = sign_of(tok(0)?)?;
            let mt = tok(1)?;
            if mt.len() != 3 || !mt.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let m: u16 = mt.parse().ok()?;
            let e = parse_exponent_token(tok(2)?)?;
            Some(sign * m as f64 * 10f64.powi(e as i32))
        }
        Scheme::B1999 => {
            let mt = tok(0)?;
            if mt.len() != 4 {
                return None;
            }
            let sign = sign_of(&mt[..1])?;
            if !mt[1..].bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let m: u16 = mt[1..].parse().ok()?;
            let e = parse_exponent_token(tok(1)?)?;
            Some(sign * m as f64 * 10f64.powi(e as i32))
        }
        Scheme::Fp15 => {
            let t = tok(0)?;
            let (m_part, e_part) = t.split_once(' ')?;
            if m_part.len() != 4 {
                return None;
            }
            let sign = sign_of(&m_part[..1])?;
            if !m_part[1..].bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let m: u16 = m_part[1..].parse().ok()?;
            let e = parse_exponent_token(e_part)?;
            Some(sign * m as f64 * 10f64.powi(e as i32))
        }
        Scheme::XVal => None,
    }
}

/// Reconstruct text from a token stream. Well-formed number groups decode to
/// values rendered at three significant digits; malformed groups are emitted
/// as `<?>` and flagged, never thrown.
pub fn decode(
    scheme: Scheme,
    vocab: &Vocabulary,
    token_ids: &[u32],
    numbers: &[f64],
) -> Result<DecodeOutput> {
    let mut text = String::new();
    let mut values = Vec::new();
    let mut valid = Vec::new();
    let mut i = 0usize;
    let push_spaced = |text: &mut String, tok: &str| {
        if SPACED_TOKENS.contains(&tok) {
            if !text.is_empty() && !text.ends_with(' ') {
                text.push(' ');
            }
            text.push_str(tok);
            text.push(' ');
        } else {
            text.push_str(tok);
        }
    };
    while i < token_ids.len() {
        let id = token_ids[i];
        let _ = vocab.token(id)?;
        if scheme == Scheme::XVal && Some(id) == vocab.num_id() {
            let v = numbers.get(i).copied().unwrap_or(1.0);
            let rendered = to_scientific(v)
                .map(|s| render_number(s.value()))
                .unwrap_or_else(|_| render_number(v));
            text.push_str(&rendered);
            values.push(v);
            valid.push(true);
            i += 1;
            continue;
        }
        let group = scheme.tokens_per_number();
        if scheme != Scheme::XVal && i + group <= token_ids.len() {
            if let Some(v) = parse_number_tokens(scheme, vocab, &token_ids[i..i + group]) {
                text.push_str(&render_number(v));
                values.push(v);
                valid.push(true);
                i += group;
                continue;
            }
        }
        if vocab.is_structural(id) {
            push_spaced(&mut text, vocab.token(id)?);
            i += 1;
            continue;
        }
        if vocab.is_number_component(id) {
            // malformed group: swallow the contiguous run of tokens that can
            // only occur inside numbers, flag one invalid slot
            let mut j = i;
            while j < token_ids.len()
                && vocab.is_number_component(token_ids[j])
                && !vocab.is_structural(token_ids[j])
            {
                j += 1;
            }
            text.push_str("<?>");
            values.push(f64::NAN);
            valid.push(false);
            i = j.max(i + 1);
            continue;
        }
        // specials (PAD/MASK) and anything else pass through literally
        push_spaced(&mut text, vocab.token(id)?);
        i += 1;
    }
    Ok(DecodeOutput {
        text: text.trim().to_string(),
        values,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arith_vocab(scheme: Scheme) -> Vocabulary {
        Vocabulary::build(scheme, &["(", ")", "*", "+", "-", "=", "'", ":", "a", "v"])
    }

    #[test]
    fn extract_json_field() {
        let (t, v, spans) = extract_numbers("'a':2.96");
        assert_eq!(t, "'a':[NUM]");
        assert_eq!(v, vec![2.96]);
        assert_eq!(spans, vec![(4, 4)]);
    }

    #[test]
    fn extract_no_numbers() {
        let (t, v, _) = extract_numbers("hello");
        assert_eq!(t, "hello");
        assert!(v.is_empty());
    }

    #[test]
    fn extract_signs_and_exponents() {
        let (t, v, _) = extract_numbers("x=-0.5, y=1e2");
        assert_eq!(t, "x=[NUM], y=[NUM]");
        assert_eq!(v, vec![-0.5, 100.0]);
    }

    #[test]
    fn extract_binary_minus_vs_sign() {
        let (t, v, _) = extract_numbers("(1.42 - 8.20)");
        assert_eq!(t, "([NUM] - [NUM])");
        assert_eq!(v, vec![1.42, 8.20]);
        // after a closing paren the minus is an operator
        let (_, v2, _) = extract_numbers("(2) - 3");
        assert_eq!(v2, vec![2.0, 3.0]);
        // leading-dot literals
        let (_, v3, _) = extract_numbers("[1,-.32,.95]");
        assert_eq!(v3, vec![1.0, -0.32, 0.95]);
    }

    #[test]
    fn table_renderings_for_minus_60_2() {
        let cases: [(Scheme, &[&str]); 5] = [
            (Scheme::P10, &["-", "6", "0", "2", "E-1"]),
            (Scheme::P1000, &["-", "602", "E-1"]),
            (Scheme::B1999, &["-602", "E-1"]),
            (Scheme::Fp15, &["-602 E-1"]),
            (Scheme::XVal, &["[NUM]"]),
        ];
        for (scheme, expected) in cases {
            let vocab = arith_vocab(scheme);
            let s = encode(scheme, &vocab, "a=[NUM]", &[-60.2]).unwrap();
            let (start, len) = s.number_spans[0];
            let toks: Vec<&str> = s.token_ids[start..start + len]
                .iter()
                .map(|&i| vocab.token(i).unwrap())
                .collect();
            assert_eq!(toks, expected, "{scheme:?}");
            assert_eq!(len, scheme.tokens_per_number());
        }
    }

    #[test]
    fn xval_scatters_value_into_number_lane() {
        let vocab = arith_vocab(Scheme::XVal);
        let s = encode(Scheme::XVal, &vocab, "v=[NUM]", &[2.5]).unwrap();
        assert_eq!(s.numbers, vec![1.0, 1.0, 2.5]);
        assert_eq!(s.token_ids.len(), 3);
        assert_eq!(*s.token_ids.last().unwrap(), vocab.num_id().unwrap());
    }

    #[test]
    fn non_xval_number_lane_is_all_ones() {
        for scheme in [Scheme::P10, Scheme::P1000, Scheme::B1999, Scheme::Fp15] {
            let vocab = arith_vocab(scheme);
            let s = encode(scheme, &vocab, "([NUM] * [NUM]) = [NUM]", &[1.32, 32.1, 42.372])
                .unwrap();
            assert!(s.numbers.iter().all(|&x| x == 1.0), "{scheme:?}");
            assert_eq!(s.numbers.len(), s.token_ids.len());
        }
    }

    #[test]
    fn decode_roundtrips_all_schemes() {
        for scheme in Scheme::ALL {
            let vocab = arith_vocab(scheme);
            let s = encode(scheme, &vocab, "(a * [NUM]) = [NUM]", &[-60.2, 0.123]).unwrap();
            let out = decode(scheme, &vocab, &s.token_ids, &s.numbers).unwrap();
            assert_eq!(out.text, "(a * -60.2) = 0.123", "{scheme:?}");
            assert!(out.valid.iter().all(|&v| v));
            assert!((out.values[0] + 60.2).abs() < 1e-9);
        }
    }

    #[test]
    fn malformed_p10_group_flagged_unparseable() {
        let vocab = Vocabulary::build(Scheme::P10, &["v", "="]);
        let ids = vec![
            vocab.id("-").unwrap(),
            vocab.id("6").unwrap(),
            vocab.id("E-1").unwrap(),
        ];
        let numbers = vec![1.0; 3];
        let out = decode(Scheme::P10, &vocab, &ids, &numbers).unwrap();
        assert_eq!(out.valid, vec![false]);
        assert!(out.text.contains("<?>"));
    }

    #[test]
    fn underflow_flushes_to_zero_and_counts() {
        let vocab = arith_vocab(Scheme::P1000);
        let s = encode(Scheme::P1000, &vocab, "v=[NUM]", &[3.0e-9]).unwrap();
        assert_eq!(s.underflow_flushed, 1);
        let out = decode(Scheme::P1000, &vocab, &s.token_ids, &s.numbers).unwrap();
        assert_eq!(out.values, vec![0.0]);
    }

    #[test]
    fn tokenize_text_applies_normalization() {
        let vocab = arith_vocab(Scheme::XVal);
        let norm = NormalizationSpec {
            scale: 0.5,
            offset: 0.0,
        };
        let s = tokenize_text(Scheme::XVal, &vocab, &norm, "v=8").unwrap();
        assert_eq!(s.raw_values, vec![8.0]);
        assert_eq!(s.numbers[2], 4.0);
    }

    #[test]
    fn reconstruction_is_numerically_equivalent() {
        let doc = "{'m':2.38,'a':-2.96,'e':0.173}";
        let vocab = Vocabulary::build(Scheme::B1999, &["{", "}", "'", ":", ",", "m", "a", "e"]);
        let s = tokenize_text(Scheme::B1999, &vocab, &NormalizationSpec::IDENTITY, doc).unwrap();
        let out = decode(Scheme::B1999, &vocab, &s.token_ids, &s.numbers).unwrap();
        let (_, re, _) = extract_numbers(&out.text);
        for (orig, back) in s.raw_values.iter().zip(&re) {
            assert!((orig - back).abs() <= 0.005 * orig.abs());
        }
    }
}
