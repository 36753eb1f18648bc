//! Long-multiplication chain of thought without the final sum.
//!
//! `a x b` becomes `a x[` followed by one term per digit of `b`, joined by
//! `+`. The term for digit `i` lists `b_i*` and then `(b_j→k)` for every
//! `j >= i`, with `k = 1` for `j = i` and `0` afterwards, then `].`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generators::random_digits;
use super::{Task, TaskExample};
use crate::error::{PrismError, Result};

/// Operands as most-significant-first digit lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Product {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

fn digits_str(d: &[u8]) -> String {
    d.iter().map(|x| char::from(b'0' + x)).collect()
}

pub fn multiplication_text(p: &Product) -> Result<String> {
    if p.a.is_empty() || p.b.is_empty() || p.a.iter().chain(&p.b).any(|&x| x > 9) {
        return Err(PrismError::Data("multiplication operands must be nonempty digit strings".into()));
    }
    let a = digits_str(&p.a);
    let terms: Vec<String> = (0..p.b.len())
        .map(|i| {
            let mut t = format!("{}*", p.b[i]);
            for (j, d) in p.b.iter().enumerate().skip(i) {
                t.push_str(&format!("({d}→{})", u8::from(j == i)));
            }
            t
        })
        .collect();
    Ok(format!("{a}x{}={a}x[{}].", digits_str(&p.b), terms.join("+")))
}

/// Parses a full example string back into its operands, checking every
/// annotation against the grammar.
pub fn parse_multiplication(text: &str) -> Result<Product> {
    let bad = |why: &str| PrismError::Data(format!("malformed multiplication ({why}): {text:?}"));
    let (lhs, rhs) = text.split_once('=').ok_or_else(|| bad("no '='"))?;
    let (a, b) = lhs.split_once('x').ok_or_else(|| bad("no 'x' in prompt"))?;
    let digits = |s: &str| -> Result<Vec<u8>> {
        if s.is_empty() || !s.bytes().all(|c| c.is_ascii_digit()) {
            return Err(bad("operand is not a digit string"));
        }
        Ok(s.bytes().map(|c| c - b'0').collect())
    };
    let p = Product { a: digits(a)?, b: digits(b)? };
    let body = rhs
        .strip_prefix(a)
        .and_then(|r| r.strip_prefix("x["))
        .and_then(|r| r.strip_suffix("]."))
        .ok_or_else(|| bad("answer frame"))?;
    let terms: Vec<&str> = body.split('+').collect();
    if terms.len() != p.b.len() {
        return Err(bad("term count"));
    }
    for (i, term) in terms.iter().enumerate() {
        let (head, rest) = term.split_once('*').ok_or_else(|| bad("missing '*'"))?;
        if digits(head)? != [p.b[i]] {
            return Err(bad("term weight"));
        }
        let maps: Vec<&str> = rest.strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(|| bad("mapping"))?.split(")(").collect();
        if maps.len() != p.b.len() - i {
            return Err(bad("mapping count"));
        }
        for (k, m) in maps.iter().enumerate() {
            let (d, flag) = m.split_once('→').ok_or_else(|| bad("arrow"))?;
            if digits(d)? != [p.b[i + k]] || flag != if k == 0 { "1" } else { "0" } {
                return Err(bad("mapping content"));
            }
        }
    }
    Ok(p)
}

/// Most significant first, no leading zero unless the number is 0.
fn canonical(n: usize, rng: &mut impl Rng) -> Vec<u8> {
    let mut d = random_digits(n, 10, rng);
    if n > 1 {
        d[0] = rng.gen_range(1..10);
    }
    d
}

pub fn multiplication_with(len_a: usize, len_b: usize, rng: &mut impl Rng) -> Result<TaskExample> {
    if len_a == 0 || len_b == 0 {
        return Err(PrismError::Data("multiplication operands need at least one digit".into()));
    }
    let a = canonical(len_a, rng);
    let p = Product { a, b: canonical(len_b, rng) };
    TaskExample::from_text(Task::Multiplication, multiplication_text(&p)?, len_a.max(len_b))
}

pub fn gen_multiplication_cot(len_a: usize, len_b: usize, seed: u64) -> Result<TaskExample> {
    multiplication_with(len_a, len_b, &mut ChaCha8Rng::seed_from_u64(seed))
}
