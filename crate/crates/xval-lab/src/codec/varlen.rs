//! Deliberately variable-length number rendering used by the
//! length-correlation probe: two significant figures, leading zeros dropped
//! (`0.12` becomes `.12`), scientific notation outside `[0.1, 100)`.
//!
//! The token alphabet mixes single and double digits, so the token count of a
//! number leaks information about its sign and magnitude — except for values
//! like `0.030`, which collapse to `3E-2` and break the trend.

/// Alphabet of the variable-length tokenizer: sign, decimal point, single and
/// double digits, exponents `E-8..E+2`.
pub const VARLEN_TOKENS: &str = "-, ., 0-9, 00-99, E-8..E+2";

/// Render with two significant figures, dropping leading zeros and trailing
/// zero mantissa digits.
pub fn varlen_render(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let neg = v < 0.0;
    let mag = v.abs();
    let mut e = mag.log10().floor() as i32;
    // two significant digits d1.d2 * 10^e
    let mut m = (mag / 10f64.powi(e - 1)).round() as i64; // in [10, 99] usually
    if m >= 100 {
        m /= 10;
        e += 1;
    }
    let (d1, d2) = (m / 10, m % 10);
    let sign = if neg { "-" } else { "" };
    let body = match e {
        -1 => {
            // .dd, trailing zero dropped
            if d2 == 0 {
                format!(".{d1}")
            } else {
                format!(".{d1}{d2}")
            }
        }
        0 => {
            if d2 == 0 {
                format!("{d1}")
            } else {
                format!("{d1}.{d2}")
            }
        }
        1 => format!("{d1}{d2}"),
        _ => {
            let exp = if e < 0 {
                format!("E-{}", -e)
            } else {
                format!("E+{e}")
            };
            if d2 == 0 {
                format!("{d1}{exp}")
            } else {
                format!("{d1}.{d2}{exp}")
            }
        }
    };
    format!("{sign}{body}")
}

/// Greedy tokenization over the variable-length alphabet; double digits win
/// over singles. Returns token strings.
pub fn varlen_tokenize(rendered: &str) -> Vec<String> {
    let bytes = rendered.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'-' || b == b'+' || b == b'.' {
            out.push((b as char).to_string());
            i += 1;
        } else if b == b'E' {
            // E[+-]d
            let end = (i + 3).min(bytes.len());
            out.push(rendered[i..end].to_string());
            i = end;
        } else if b.is_ascii_digit() {
            if i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                out.push(rendered[i..i + 2].to_string());
                i += 2;
            } else {
                out.push((b as char).to_string());
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Token count of a value under the variable-length rendering.
pub fn varlen_length(v: f64) -> usize {
    varlen_tokenize(&varlen_render(v)).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_from_reference_cases() {
        assert_eq!(varlen_render(0.23), ".23");
        assert_eq!(varlen_render(-0.34), "-.34");
        assert_eq!(varlen_render(0.034), "3.4E-2");
        assert_eq!(varlen_render(-0.034), "-3.4E-2");
        assert_eq!(varlen_render(0.030), "3E-2");
    }

    #[test]
    fn lengths_follow_the_magnitude_trend() {
        // [0.1, 1): 2 tokens positive, 3 negative
        assert_eq!(varlen_length(0.23), 2);
        assert_eq!(varlen_length(-0.34), 3);
        // [0.01, 0.1): 4 and 5
        assert_eq!(varlen_length(0.034), 4);
        assert_eq!(varlen_length(-0.034), 5);
        // the anomaly: a round mantissa collapses to length 2
        assert_eq!(varlen_length(0.030), 2);
    }

    #[test]
    fn double_digits_are_single_tokens() {
        assert_eq!(varlen_tokenize("-.34"), vec!["-", ".", "34"]);
        assert_eq!(varlen_tokenize("23"), vec!["23"]);
        assert_eq!(varlen_tokenize("3.4E-2"), vec!["3", ".", "4", "E-2"]);
    }
}
