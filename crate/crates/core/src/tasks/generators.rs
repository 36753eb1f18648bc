//! Digit-string and arithmetic task generators.
//!
//! Every task has a pure formatter taking explicit inputs and a seeded
//! sampler built on top of it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Task, TaskExample};
use crate::error::{PrismError, Result};

pub type Digits = Vec<u8>;

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn compact(d: &[u8]) -> String {
    d.iter().map(|x| char::from(b'0' + x)).collect()
}

fn spaced(d: &[u8]) -> String {
    d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn random_digits(len: usize, cap: u8, rng: &mut impl Rng) -> Digits {
    (0..len).map(|_| rng.gen_range(0..cap)).collect()
}

/// A canonical integer of `len` digits, least significant first.
/// The most significant digit is nonzero unless the number is a lone 0.
pub fn random_integer_lsd(len: usize, rng: &mut impl Rng) -> Digits {
    let mut d = random_digits(len, 10, rng);
    if len > 1 {
        d[len - 1] = rng.gen_range(1..10);
    }
    d
}

fn check_digits(d: &[u8], what: &str) -> Result<()> {
    if d.is_empty() {
        return Err(PrismError::Data(format!("{what} needs at least one digit")));
    }
    if d.iter().any(|&x| x > 9) {
        return Err(PrismError::Data(format!("{what} has a non-digit")));
    }
    Ok(())
}

// ---------------------------------------------------------------- addition

/// Both operands least significant digit first.
pub fn addition_text(a: &[u8], b: &[u8]) -> Result<String> {
    check_digits(a, "addend a")?;
    check_digits(b, "addend b")?;
    let n = a.len().max(b.len());
    let mut steps = Vec::with_capacity(n);
    let mut sum = Vec::with_capacity(n + 1);
    let mut carry = 0;
    for i in 0..n {
        let (da, db) = (a.get(i).copied().unwrap_or(0), b.get(i).copied().unwrap_or(0));
        let s = da + db + carry;
        carry = s / 10;
        sum.push(s % 10);
        steps.push(format!("{da} {db} {carry} {}", s % 10));
    }
    if carry > 0 {
        sum.push(carry);
    }
    Ok(format!("{} + {} = {} → {} .", spaced(a), spaced(b), steps.join(" , "), spaced(&sum)))
}

pub fn addition_with(len_a: usize, len_b: usize, rng: &mut impl Rng) -> Result<TaskExample> {
    if len_a == 0 || len_b == 0 {
        return Err(PrismError::Data("addition operands need at least one digit".into()));
    }
    let a = random_integer_lsd(len_a, rng);
    let b = random_integer_lsd(len_b, rng);
    TaskExample::from_text(Task::Addition, addition_text(&a, &b)?, len_a.max(len_b))
}

pub fn gen_addition(len_a: usize, len_b: usize, seed: u64) -> Result<TaskExample> {
    addition_with(len_a, len_b, &mut seeded(seed))
}

// ------------------------------------------------------------ copy family

pub fn copy_text(s: &[u8]) -> String {
    format!("{}={}.", compact(s), compact(s))
}

pub fn reverse_text(s: &[u8]) -> String {
    let r: Digits = s.iter().rev().copied().collect();
    format!("{}={}.", compact(s), compact(&r))
}

/// Odd 0-based positions first, then even ones.
pub fn odds_first_text(s: &[u8]) -> String {
    let odd = s.iter().skip(1).step_by(2);
    let even = s.iter().step_by(2);
    let out: Digits = odd.chain(even).copied().collect();
    format!("{}={}.", compact(s), compact(&out))
}

pub fn copy_with(len: usize, rng: &mut impl Rng) -> Result<TaskExample> {
    TaskExample::from_text(Task::Copy, copy_text(&random_digits(len, 10, rng)), len)
}

pub fn reverse_with(len: usize, rng: &mut impl Rng) -> Result<TaskExample> {
    TaskExample::from_text(Task::Reverse, reverse_text(&random_digits(len, 10, rng)), len)
}

pub fn odds_first_with(len: usize, vocab_cap: u8, rng: &mut impl Rng) -> Result<TaskExample> {
    if !(1..=10).contains(&vocab_cap) {
        return Err(PrismError::Config(format!("odds-first vocab cap {vocab_cap} outside 1..=10")));
    }
    TaskExample::from_text(Task::OddsFirst, odds_first_text(&random_digits(len, vocab_cap, rng)), len)
}

pub fn gen_copy(len: usize, seed: u64) -> Result<TaskExample> {
    copy_with(len, &mut seeded(seed))
}

pub fn gen_reverse(len: usize, seed: u64) -> Result<TaskExample> {
    reverse_with(len, &mut seeded(seed))
}

pub fn gen_odds_first(len: usize, vocab_cap: u8, seed: u64) -> Result<TaskExample> {
    odds_first_with(len, vocab_cap, &mut seeded(seed))
}

// ------------------------------------------------------------------ stack

pub const POP: u8 = 2;
pub const PUSH0: u8 = 3;
pub const PUSH1: u8 = 4;

/// `stack` bottom to top (0/1), then `actions` from {POP, PUSH0, PUSH1}.
pub fn stack_text(stack: &[u8], actions: &[u8]) -> Result<String> {
    if stack.iter().any(|&x| x > 1) || actions.iter().any(|&a| !(POP..=PUSH1).contains(&a)) {
        return Err(PrismError::Data("stack holds 0/1 and actions are 2, 3 or 4".into()));
    }
    let mut st = stack.to_vec();
    for &a in actions {
        match a {
            POP => {
                st.pop();
            }
            PUSH0 => st.push(0),
            _ => st.push(1),
        }
    }
    let total = stack.len() + actions.len();
    let mut out: Digits = st.iter().rev().copied().collect();
    out.push(POP);
    out.resize(total + 1, 0);
    let input: Digits = stack.iter().chain(actions).copied().collect();
    let lhs = if input.is_empty() { String::new() } else { format!("{} ", spaced(&input)) };
    Ok(format!("{lhs}= {}.", spaced(&out)))
}

pub fn stack_with(stack_len: usize, action_len: usize, rng: &mut impl Rng) -> Result<TaskExample> {
    let stack = random_digits(stack_len, 2, rng);
    let actions: Digits = (0..action_len).map(|_| rng.gen_range(POP..=PUSH1)).collect();
    TaskExample::from_text(Task::Stack, stack_text(&stack, &actions)?, stack_len + action_len)
}

pub fn gen_stack_manipulation(stack_len: usize, action_len: usize, seed: u64) -> Result<TaskExample> {
    stack_with(stack_len, action_len, &mut seeded(seed))
}

// ------------------------------------------------------------ dyn_str_cpy

/// `start` is 1-based; the digit there must be unique in `s`.
pub fn dyn_str_cpy_text(s: &[u8], start: usize) -> Result<String> {
    check_digits(s, "string")?;
    if !(1..=s.len()).contains(&start) {
        return Err(PrismError::Data(format!("start {start} outside 1..={}", s.len())));
    }
    let d = s[start - 1];
    if s.iter().filter(|&&x| x == d).count() != 1 {
        return Err(PrismError::Data(format!("digit {d} is not unique in {}", compact(s))));
    }
    Ok(format!("{},{d}={}.", compact(s), compact(&s[start - 1..])))
}

pub fn dyn_str_cpy_with(len: usize, rng: &mut impl Rng) -> Result<TaskExample> {
    if len == 0 {
        return Err(PrismError::Data("dyn_str_cpy needs a nonempty string".into()));
    }
    let mut s = random_digits(len, 10, rng);
    let start = rng.gen_range(1..=len);
    let d = s[start - 1];
    for (i, x) in s.iter_mut().enumerate() {
        while i != start - 1 && *x == d {
            *x = rng.gen_range(0..10);
        }
    }
    TaskExample::from_text(Task::DynStrCpy, dyn_str_cpy_text(&s, start)?, len)
}

pub fn gen_dyn_str_cpy(len: usize, seed: u64) -> Result<TaskExample> {
    dyn_str_cpy_with(len, &mut seeded(seed))
}
