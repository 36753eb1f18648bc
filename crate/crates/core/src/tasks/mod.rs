//! Synthetic algorithmic tasks, their text formats and datasets.

pub mod dataset;
pub mod generators;
pub mod multiplication;
pub mod scan;
pub mod tokenizer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PrismError, Result};
pub use tokenizer::{TextStyle, Tokenizer, EOS, PAD, VOCAB_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Addition,
    Copy,
    Reverse,
    OddsFirst,
    Stack,
    DynStrCpy,
    Multiplication,
    ScanCot,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Addition,
        Task::Copy,
        Task::Reverse,
        Task::OddsFirst,
        Task::Stack,
        Task::DynStrCpy,
        Task::Multiplication,
        Task::ScanCot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Addition => "addition",
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::OddsFirst => "odds-first",
            Task::Stack => "stack",
            Task::DynStrCpy => "dyn-str-cpy",
            Task::Multiplication => "multiplication",
            Task::ScanCot => "scan-cot",
        }
    }

    pub fn style(self) -> TextStyle {
        match self {
            Task::Addition | Task::ScanCot => TextStyle::Spaced,
            Task::Stack => TextStyle::SpacedTightStop,
            _ => TextStyle::Compact,
        }
    }

    /// Whether examples can be synthesized from a length alone.
    pub fn is_synthetic(self) -> bool {
        self != Task::ScanCot
    }

    /// Draws one example whose task-specific size is `length`.
    pub fn sample(self, length: usize, rng: &mut impl Rng) -> Result<TaskExample> {
        use generators as g;
        let n = length.max(1);
        match self {
            Task::Addition => {
                let other = rng.gen_range(1..=n);
                if rng.gen_bool(0.5) {
                    g::addition_with(n, other, rng)
                } else {
                    g::addition_with(other, n, rng)
                }
            }
            Task::Copy => g::copy_with(n, rng),
            Task::Reverse => g::reverse_with(n, rng),
            Task::OddsFirst => g::odds_first_with(n, 10, rng),
            Task::Stack => {
                let stack = rng.gen_range(0..=n);
                g::stack_with(stack, n - stack, rng)
            }
            Task::DynStrCpy => g::dyn_str_cpy_with(n, rng),
            Task::Multiplication => {
                let other = rng.gen_range(1..=n);
                multiplication::multiplication_with(n, other, rng)
            }
            Task::ScanCot => Err(PrismError::Data("SCAN-CoT examples come from ingested files".into())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = PrismError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Task::ALL
            .into_iter()
            .find(|t| t.name() == norm || (norm == "stack-manipulation" && *t == Task::Stack))
            .ok_or_else(|| PrismError::Config(format!("unknown task {s:?}")))
    }
}

/// One tokenized example with the start of its supervised region.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: Task,
    pub text: String,
    pub tokens: Vec<usize>,
    /// Index of the first token after "=".
    pub supervised_from: usize,
    /// Task-specific size used for curricula and stratified reports.
    pub length: usize,
}

impl TaskExample {
    pub fn from_text(task: Task, text: String, length: usize) -> Result<Self> {
        let tok = Tokenizer::get();
        let tokens = tok.encode(&text)?;
        let eq = tok.id("=")?;
        let mut eqs = tokens.iter().enumerate().filter(|(_, &t)| t == eq);
        let pos = match (eqs.next(), eqs.next()) {
            (Some((i, _)), None) => i,
            _ => return Err(PrismError::Data(format!("expected exactly one '=' in {text:?}"))),
        };
        if tokens.last() != Some(&EOS) {
            return Err(PrismError::Data(format!("{text:?} does not end with the stop token")));
        }
        Ok(Self { task, text, tokens, supervised_from: pos + 1, length })
    }

    pub fn eos_present(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    pub fn prompt(&self) -> &[usize] {
        &self.tokens[..self.supervised_from]
    }

    pub fn target(&self) -> &[usize] {
        &self.tokens[self.supervised_from..]
    }

    /// Text to the right of "=", without surrounding whitespace.
    pub fn answer_text(&self) -> &str {
        self.text.split_once('=').map(|(_, r)| r.trim_start()).unwrap_or("")
    }

    pub fn detokenize(&self) -> Result<String> {
        Tokenizer::get().decode(&self.tokens, self.task.style())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_parse_back() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert_eq!("odds_first".parse::<Task>().unwrap(), Task::OddsFirst);
        assert!("sorting".parse::<Task>().is_err());
    }

    #[test]
    fn example_marks_supervised_region() {
        let ex = TaskExample::from_text(Task::Copy, "123=123.".into(), 3).unwrap();
        assert_eq!(ex.supervised_from, 4);
        assert_eq!(ex.target().len(), 4);
        assert!(ex.eos_present());
        assert!(TaskExample::from_text(Task::Copy, "12=3=.".into(), 2).is_err());
        assert!(TaskExample::from_text(Task::Copy, "12=12".into(), 2).is_err());
    }
}
