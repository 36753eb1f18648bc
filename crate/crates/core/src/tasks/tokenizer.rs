//! Fixed 64-symbol vocabulary shared by every task.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{PrismError, Result};

pub const VOCAB_SIZE: usize = 64;
pub const PAD: usize = 0;
/// The terminating "." doubles as the end-of-sequence token.
pub const EOS: usize = 1;

const SYMBOLS: &[&str] = &[
    "<pad>", ".", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "=", ",", "+", "x", "*", "[", "]", "(", ")", "→",
    ":", "walk", "look", "run", "jump", "turn", "left", "right", "around", "opposite", "twice", "thrice", "and",
    "after", "I_WALK", "I_LOOK", "I_RUN", "I_JUMP", "I_TURN_LEFT", "I_TURN_RIGHT",
];

/// How tokens are joined when rendered as text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextStyle {
    /// One character per token, no separators.
    Compact,
    /// Tokens separated by single spaces.
    Spaced,
    /// Spaced, except the final "." attaches to the previous token.
    SpacedTightStop,
}

#[derive(Debug)]
pub struct Tokenizer {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
    /// Symbols sorted by length, longest first, for greedy matching.
    by_len: Vec<usize>,
}

impl Tokenizer {
    fn build() -> Self {
        let mut symbols: Vec<String> = SYMBOLS.iter().map(|s| s.to_string()).collect();
        let mut i = 0;
        while symbols.len() < VOCAB_SIZE {
            symbols.push(format!("<unused{i}>"));
            i += 1;
        }
        let ids = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut by_len: Vec<usize> = (1..SYMBOLS.len()).collect();
        by_len.sort_by_key(|&i| std::cmp::Reverse(symbols[i].len()));
        Self { symbols, ids, by_len }
    }

    pub fn get() -> &'static Tokenizer {
        static TOK: OnceLock<Tokenizer> = OnceLock::new();
        TOK.get_or_init(Self::build)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Result<usize> {
        self.ids.get(symbol).copied().ok_or_else(|| PrismError::UnknownSymbol(symbol.to_string()))
    }

    pub fn symbol(&self, id: usize) -> Result<&str> {
        self.symbols.get(id).map(String::as_str).ok_or(PrismError::TokenOutOfRange(id))
    }

    /// Greedy longest-match tokenization; whitespace only separates.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut rest = text;
        'outer: while !rest.is_empty() {
            let trimmed = rest.trim_start();
            if trimmed.len() != rest.len() {
                rest = trimmed;
                continue;
            }
            for &i in &self.by_len {
                let sym = &self.symbols[i];
                if let Some(after) = rest.strip_prefix(sym.as_str()) {
                    // Words must end at a boundary so "runx" is not "run" + "x".
                    let wordy = sym.chars().all(|c| c.is_ascii_alphabetic() || c == '_') && sym.len() > 1;
                    if wordy && after.chars().next().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                        continue;
                    }
                    out.push(i);
                    rest = after;
                    continue 'outer;
                }
            }
            let bad: String = rest.chars().take_while(|c| !c.is_whitespace()).collect();
            return Err(PrismError::UnknownSymbol(bad));
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[usize], style: TextStyle) -> Result<String> {
        let syms = ids.iter().map(|&i| self.symbol(i)).collect::<Result<Vec<_>>>()?;
        Ok(match style {
            TextStyle::Compact => syms.concat(),
            TextStyle::Spaced => syms.join(" "),
            TextStyle::SpacedTightStop => match syms.split_last() {
                Some((&".", head)) if !head.is_empty() => format!("{}.", head.join(" ")),
                _ => syms.join(" "),
            },
        })
    }
}
