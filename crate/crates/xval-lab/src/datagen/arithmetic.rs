//! Arithmetic corpora: multi-digit multiplication and random binary
//! expression trees over {+, -, *}. Right-hand sides are exact: leaves are
//! terminating decimals, so every intermediate is a rational with a
//! power-of-ten denominator and renders exactly.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{CorpusSample, GroundTruthField, Result, Split};

fn sample_rng(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id.wrapping_add(1));
    rng
}

/// `a * b = c` with uniformly sampled d-digit operands and exact product.
pub fn gen_multiplication(digits: u32, count: usize, seed: u64) -> Result<Vec<CorpusSample>> {
    let lo = 10i64.pow(digits - 1);
    let hi = 10i64.pow(digits);
    let mut out = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let mut rng = sample_rng(seed, id);
        let a = rng.gen_range(lo..hi);
        let b = rng.gen_range(lo..hi);
        let c = (a as i128) * (b as i128);
        let text = format!("{a} * {b} = {c}");
        let mut ground_truth = std::collections::BTreeMap::new();
        ground_truth.insert(
            "result".to_string(),
            GroundTruthField {
                values: vec![c as f64],
                ordinals: vec![2],
            },
        );
        out.push(CorpusSample {
            id,
            text,
            split: Split::of_id(id),
            ground_truth,
        });
    }
    Ok(out)
}

enum Node {
    Leaf(Decimal),
    Op(char, Box<Node>, Box<Node>),
}

/// Terminating decimal: `digits * 10^exp` with exp <= 0.
#[derive(Clone, Copy)]
struct Decimal {
    mantissa: i64,
    exp: i32,
}

impl Decimal {
    fn rational(self) -> BigRational {
        let num = BigInt::from(self.mantissa);
        let den = BigInt::from(10i64.pow((-self.exp) as u32));
        BigRational::new(num, den)
    }

    fn render(self) -> String {
        render_scaled_int(&BigInt::from(self.mantissa), (-self.exp) as usize)
    }
}

/// Render `digits * 10^-frac` as a plain decimal with trailing zeros trimmed.
fn render_scaled_int(num: &BigInt, frac: usize) -> String {
    let neg = num.is_negative();
    let mut s = num.abs().to_string();
    if s.len() <= frac {
        s = format!("{}{}", "0".repeat(frac - s.len() + 1), s);
    }
    let point = s.len() - frac;
    let (int_part, frac_part) = s.split_at(point);
    let frac_part = frac_part.trim_end_matches('0');
    let body = if frac_part.is_empty() {
        int_part.to_string()
    } else {
        format!("{int_part}.{frac_part}")
    };
    if neg {
        format!("-{body}")
    } else {
        format!("{body}")
    }
}

/// Exact rational rendered as a plain decimal. The reduced denominator is
/// always of the form 2^a * 5^b here (sums and products of terminating
/// decimals), so scaling to 10^max(a,b) terminates.
fn render_rational(r: &BigRational) -> String {
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut den = r.denom().clone();
    let (mut a, mut b) = (0u32, 0u32);
    while (&den % &two).is_zero() {
        den /= &two;
        a += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        b += 1;
    }
    assert!(den.is_one(), "non-terminating decimal denominator");
    let k = a.max(b);
    let scale = two.pow(k - a) * five.pow(k - b);
    let num = r.numer() * scale;
    render_scaled_int(&num, k as usize)
}

fn build_tree(leaf_count: usize, rng: &mut ChaCha20Rng) -> Node {
    if leaf_count == 1 {
        // 3 significant digits, |v| in [0.1, 100)
        let mantissa = rng.gen_range(100..1000i64);
        let exp = -rng.gen_range(1..=3i32);
        return Node::Leaf(Decimal { mantissa, exp });
    }
    let left = rng.gen_range(1..leaf_count);
    let op = ['+', '-', '*'][rng.gen_range(0..3)];
    Node::Op(
        op,
        Box::new(build_tree(left, rng)),
        Box::new(build_tree(leaf_count - left, rng)),
    )
}

fn render_tree(node: &Node) -> String {
    match node {
        Node::Leaf(d) => d.render(),
        Node::Op(op, l, r) => format!("({} {} {})", render_tree(l), op, render_tree(r)),
    }
}

fn eval_tree(node: &Node) -> BigRational {
    match node {
        Node::Leaf(d) => d.rational(),
        Node::Op(op, l, r) => {
            let (a, b) = (eval_tree(l), eval_tree(r));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                _ => unreachable!(),
            }
        }
    }
}

/// Random binary expression trees with a fixed operand count; documents are
/// `expr = value` with the value exact.
pub fn gen_expression_tree(operands: usize, count: usize, seed: u64) -> Result<Vec<CorpusSample>> {
    let mut out = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let mut rng = sample_rng(seed, id);
        let tree = build_tree(operands, &mut rng);
        let value = eval_tree(&tree);
        let rendered = render_rational(&value);
        let text = format!("{} = {}", render_tree(&tree), rendered);
        let mut ground_truth = std::collections::BTreeMap::new();
        ground_truth.insert(
            "result".to_string(),
            GroundTruthField {
                values: vec![value.to_f64().unwrap_or(f64::NAN)],
                ordinals: vec![operands],
            },
        );
        out.push(CorpusSample {
            id,
            text,
            split: Split::of_id(id),
            ground_truth,
        });
    }
    Ok(out)
}

/// Independent recursive-descent parse + exact evaluation of an `expr = v`
/// document; verification oracle for the generator (it shares no code with
/// the tree renderer).
pub fn parse_and_eval(text: &str) -> Option<BigRational> {
    let lhs = text.split('=').next()?;
    let mut p = Parser {
        bytes: lhs.as_bytes(),
        pos: 0,
    };
    let v = p.expr()?;
    p.skip_ws();
    (p.pos == p.bytes.len()).then_some(v)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expr(&mut self) -> Option<BigRational> {
        self.skip_ws();
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b'(' {
            self.pos += 1;
            let left = self.expr()?;
            self.skip_ws();
            let op = *self.bytes.get(self.pos)?;
            self.pos += 1;
            let right = self.expr()?;
            self.skip_ws();
            if *self.bytes.get(self.pos)? != b')' {
                return None;
            }
            self.pos += 1;
            match op {
                b'+' => Some(left + right),
                b'-' => Some(left - right),
                b'*' => Some(left * right),
                _ => None,
            }
        } else {
            self.number()
        }
    }

    fn number(&mut self) -> Option<BigRational> {
        self.skip_ws();
        let start = self.pos;
        if self.pos < self.bytes.len() && (self.bytes[self.pos] == b'-' || self.bytes[self.pos] == b'+') {
            self.pos += 1;
        }
        let mut frac = 0usize;
        let mut seen_point = false;
        let mut digits = 0usize;
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_digit() {
                digits += 1;
                if seen_point {
                    frac += 1;
                }
                self.pos += 1;
            } else if b == b'.' && !seen_point {
                seen_point = true;
                self.pos += 1;
            } else {
                break;
            }
        }
        if digits == 0 {
            return None;
        }
        let lit: String = std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .replace('.', "");
        let num: BigInt = lit.parse().ok()?;
        let den = BigInt::from(10u32).pow(frac as u32);
        Some(BigRational::new(num, den))
    }
}
