//! Number codecs: parse numbers out of mixed text, normalize them, and
//! encode/decode under five schemes.
//!
//! The four text-based schemes first put a value into the scientific form
//! `±ddd E±d` (3 significant digits, exponents `E-8..E+7`) and then split it
//! into between one and five tokens. `xVal` instead emits a single `[NUM]`
//! token and carries the value out-of-band, aligned 1:1 with the token
//! stream, to be multiplied into the `[NUM]` embedding.

mod normalize;
mod records;
mod text;
mod varlen;
mod vocab;

pub use normalize::NormalizationSpec;
pub use records::{read_records, write_records, RecordFileHeader};
pub use text::{
    decode, encode, extract_numbers, parse_number_tokens, tokenize_text, DecodeOutput,
    TokenizedSample,
};
pub use varlen::{varlen_length, varlen_render, varlen_tokenize, VARLEN_TOKENS};
pub use vocab::Vocabulary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("value {0} outside representable magnitude [1e-6, 9.995e9]")]
    Range(f64),
    #[error("unknown text token at {0:?}")]
    UnknownToken(String),
    #[error("token id {0} outside vocabulary of size {1}")]
    BadTokenId(u32, usize),
    #[error("empty value set")]
    EmptyValues,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<V> = std::result::Result<V, CodecError>;

/// The five encoding schemes, named by how they split `±ddd E±d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    P10,
    P1000,
    B1999,
    Fp15,
    XVal,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::P10,
        Scheme::P1000,
        Scheme::B1999,
        Scheme::Fp15,
        Scheme::XVal,
    ];

    /// Fixed token count one number occupies under this scheme.
    pub fn tokens_per_number(self) -> usize {
        match self {
            Scheme::P10 => 5,
            Scheme::P1000 => 3,
            Scheme::B1999 => 2,
            Scheme::Fp15 => 1,
            Scheme::XVal => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::P10 => "p10",
            Scheme::P1000 => "p1000",
            Scheme::B1999 => "b1999",
            Scheme::Fp15 => "fp15",
            Scheme::XVal => "xval",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        match s.to_ascii_lowercase().as_str() {
            "p10" => Some(Scheme::P10),
            "p1000" => Some(Scheme::P1000),
            "b1999" => Some(Scheme::B1999),
            "fp15" => Some(Scheme::Fp15),
            "xval" => Some(Scheme::XVal),
            _ => None,
        }
    }
}

/// Exponent alphabet `E-8..E+7`: sixteen values. Table-driven vocabulary
/// counts (28 / 918 / 1816 / 28800) force 16 exponents.
pub const EXP_MIN: i8 = -8;
pub const EXP_MAX: i8 = 7;

/// Values with magnitude below this are flushed to zero before text encoding.
pub const UNDERFLOW_EPS: f64 = 1.0e-6;

/// `±ddd E±d`: sign, three-digit mantissa in `[100, 999]` (or the special
/// zero mantissa), and a decimal exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SciForm {
    pub negative: bool,
    pub mantissa: u16,
    pub exponent: i8,
}

impl SciForm {
    pub const ZERO: SciForm = SciForm {
        negative: false,
        mantissa: 0,
        exponent: 0,
    };

    pub fn value(self) -> f64 {
        let m = self.mantissa as f64 * 10f64.powi(self.exponent as i32);
        if self.negative {
            -m
        } else {
            m
        }
    }
}

/// Round to three significant digits (half-to-even) in the form `±ddd E±d`.
pub fn to_scientific(value: f64) -> Result<SciForm> {
    if value == 0.0 {
        return Ok(SciForm::ZERO);
    }
    let mag = value.abs();
    if !value.is_finite() || !(1.0e-6..=9.995e9).contains(&mag) {
        return Err(CodecError::Range(value));
    }
    let mut exp = mag.log10().floor() as i32 - 2;
    let mut m = round_half_even(mag / 10f64.powi(exp));
    if m < 100.0 {
        exp -= 1;
        m = round_half_even(mag / 10f64.powi(exp));
    }
    if m >= 1000.0 {
        exp += 1;
        m = round_half_even(mag / 10f64.powi(exp));
    }
    if !(i32::from(EXP_MIN)..=i32::from(EXP_MAX)).contains(&exp) {
        return Err(CodecError::Range(value));
    }
    Ok(SciForm {
        negative: value < 0.0,
        mantissa: m as u16,
        exponent: exp as i8,
    })
}

pub fn from_scientific(s: SciForm) -> f64 {
    s.value()
}

/// Lowercase hex of a digest, used for content hashes throughout.
pub fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{:02x}", b));
    }
    s
}

fn round_half_even(x: f64) -> f64 {
    // ties-to-even on the halfway case
    let floor = x.floor();
    let frac = x - floor;
    if (frac - 0.5).abs() < f64::EPSILON * x.abs().max(1.0) {
        if (floor as i64) % 2 == 0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        x.round()
    }
}

/// Canonical plain-decimal rendering used when reconstructing documents.
/// Shortest representation that re-parses to the same `f64`.
pub fn render_number(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{}", v)
    }
}

pub(crate) fn exponent_token(e: i8) -> String {
    if e < 0 {
        format!("E-{}", -e)
    } else {
        format!("E+{}", e)
    }
}

pub(crate) fn parse_exponent_token(tok: &str) -> Option<i8> {
    let rest = tok.strip_prefix('E')?;
    let (neg, digits) = match rest.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, rest.strip_prefix('+')?),
    };
    let v: i8 = digits.parse().ok()?;
    let e = if neg { -v } else { v };
    (EXP_MIN..=EXP_MAX).contains(&e).then_some(e)
}
