//! SCAN commands, their interpretation and the chain-of-thought expansion.
//!
//! Expansion of `cmd`:
//!
//! ```text
//! cmd = rewrite → clause : actions clause : actions ... .
//! ```
//!
//! `rewrite` spells repetitions out with `+` (`x twice` becomes `x + x`),
//! keeps `and`, and turns `x after y` into `y and x` so clauses appear in
//! execution order. Each clause is one atomic phrase such as
//! `walk around left` followed by its actions.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Task, TaskExample};
use crate::error::{PrismError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verb {
    Walk,
    Look,
    Run,
    Jump,
    Turn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dir {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modifier {
    None,
    Plain(Dir),
    Opposite(Dir),
    Around(Dir),
}

/// One atomic clause, e.g. `jump opposite left`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub verb: Verb,
    pub modifier: Modifier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phrase {
    pub atom: Atom,
    /// 1, 2 (twice) or 3 (thrice).
    pub reps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Conj {
    And,
    After,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Command {
    pub first: Phrase,
    pub rest: Option<(Conj, Phrase)>,
}

const VERBS: [Verb; 5] = [Verb::Walk, Verb::Look, Verb::Run, Verb::Jump, Verb::Turn];

impl Verb {
    fn word(self) -> &'static str {
        match self {
            Verb::Walk => "walk",
            Verb::Look => "look",
            Verb::Run => "run",
            Verb::Jump => "jump",
            Verb::Turn => "turn",
        }
    }

    fn action(self) -> Option<&'static str> {
        match self {
            Verb::Walk => Some("I_WALK"),
            Verb::Look => Some("I_LOOK"),
            Verb::Run => Some("I_RUN"),
            Verb::Jump => Some("I_JUMP"),
            Verb::Turn => None,
        }
    }
}

impl Dir {
    fn word(self) -> &'static str {
        match self {
            Dir::Left => "left",
            Dir::Right => "right",
        }
    }

    fn action(self) -> &'static str {
        match self {
            Dir::Left => "I_TURN_LEFT",
            Dir::Right => "I_TURN_RIGHT",
        }
    }
}

impl Atom {
    /// All 34 atomic clauses of the grammar.
    pub fn all() -> Vec<Atom> {
        let mut out = Vec::new();
        for verb in VERBS {
            if verb != Verb::Turn {
                out.push(Atom { verb, modifier: Modifier::None });
            }
            for dir in [Dir::Left, Dir::Right] {
                for modifier in [Modifier::Plain(dir), Modifier::Opposite(dir), Modifier::Around(dir)] {
                    out.push(Atom { verb, modifier });
                }
            }
        }
        out
    }

    pub fn actions(&self) -> Vec<&'static str> {
        let v = self.verb.action();
        let turn_then = |n: usize, d: Dir| -> Vec<&'static str> {
            std::iter::repeat_n(d.action(), n).chain(v).collect()
        };
        match self.modifier {
            Modifier::None => v.into_iter().collect(),
            Modifier::Plain(d) => turn_then(1, d),
            Modifier::Opposite(d) => turn_then(2, d),
            Modifier::Around(d) => (0..4).flat_map(|_| turn_then(1, d)).collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.verb.word();
        match self.modifier {
            Modifier::None => write!(f, "{v}"),
            Modifier::Plain(d) => write!(f, "{v} {}", d.word()),
            Modifier::Opposite(d) => write!(f, "{v} opposite {}", d.word()),
            Modifier::Around(d) => write!(f, "{v} around {}", d.word()),
        }
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.reps {
            1 => write!(f, "{}", self.atom),
            2 => write!(f, "{} twice", self.atom),
            _ => write!(f, "{} thrice", self.atom),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first)?;
        match self.rest {
            Some((Conj::And, p)) => write!(f, " and {p}"),
            Some((Conj::After, p)) => write!(f, " after {p}"),
            None => Ok(()),
        }
    }
}

fn parse_phrase(words: &[&str]) -> Result<Phrase> {
    let bad = || PrismError::Data(format!("not a SCAN phrase: {:?}", words.join(" ")));
    let (words, reps) = match words.split_last() {
        Some((&"twice", w)) => (w, 2),
        Some((&"thrice", w)) => (w, 3),
        _ => (words, 1),
    };
    let verb = match words.first() {
        Some(&w) => VERBS.into_iter().find(|v| v.word() == w).ok_or_else(bad)?,
        None => return Err(bad()),
    };
    let dir = |w: &str| match w {
        "left" => Ok(Dir::Left),
        "right" => Ok(Dir::Right),
        _ => Err(bad()),
    };
    let modifier = match words[1..] {
        [] if verb != Verb::Turn => Modifier::None,
        [d] => Modifier::Plain(dir(d)?),
        ["opposite", d] => Modifier::Opposite(dir(d)?),
        ["around", d] => Modifier::Around(dir(d)?),
        _ => return Err(bad()),
    };
    Ok(Phrase { atom: Atom { verb, modifier }, reps })
}

impl Command {
    pub fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let split = words.iter().position(|w| *w == "and" || *w == "after");
        match split {
            None => Ok(Command { first: parse_phrase(&words)?, rest: None }),
            Some(i) => {
                let conj = if words[i] == "and" { Conj::And } else { Conj::After };
                Ok(Command { first: parse_phrase(&words[..i])?, rest: Some((conj, parse_phrase(&words[i + 1..])?)) })
            }
        }
    }

    /// Every command of the grammar (20910 of them).
    pub fn all() -> Vec<Command> {
        let phrases: Vec<Phrase> =
            Atom::all().into_iter().flat_map(|atom| (1..=3).map(move |reps| Phrase { atom, reps })).collect();
        let mut out: Vec<Command> = phrases.iter().map(|&first| Command { first, rest: None }).collect();
        for &a in &phrases {
            for &b in &phrases {
                for conj in [Conj::And, Conj::After] {
                    out.push(Command { first: a, rest: Some((conj, b)) });
                }
            }
        }
        out
    }

    pub fn sample(rng: &mut impl Rng) -> Command {
        let atoms = Atom::all();
        let phrase = |rng: &mut dyn rand::RngCore| Phrase { atom: atoms[rng.gen_range(0..atoms.len())], reps: rng.gen_range(1..=3) };
        let first = phrase(rng);
        let rest = match rng.gen_range(0..3) {
            0 => None,
            1 => Some((Conj::And, phrase(rng))),
            _ => Some((Conj::After, phrase(rng))),
        };
        Command { first, rest }
    }

    /// Phrases in execution order.
    fn ordered(&self) -> Vec<Phrase> {
        match self.rest {
            None => vec![self.first],
            Some((Conj::And, p)) => vec![self.first, p],
            Some((Conj::After, p)) => vec![p, self.first],
        }
    }

    pub fn interpret(&self) -> Vec<&'static str> {
        self.ordered().iter().flat_map(|p| (0..p.reps).flat_map(|_| p.atom.actions())).collect()
    }

    /// Atomic clauses in execution order, repetitions spelled out.
    pub fn clauses(&self) -> Vec<Atom> {
        self.ordered().iter().flat_map(|p| std::iter::repeat_n(p.atom, p.reps)).collect()
    }

    pub fn rewrite(&self) -> String {
        let spell = |p: &Phrase| vec![p.atom.to_string(); p.reps].join(" + ");
        self.ordered().iter().map(spell).collect::<Vec<_>>().join(" and ")
    }

    pub fn cot_text(&self) -> String {
        let segments: Vec<String> =
            self.clauses().iter().map(|a| format!("{a} : {}", a.actions().join(" "))).collect();
        format!("{self} = {} → {} .", self.rewrite(), segments.join(" "))
    }

    pub fn to_example(&self) -> Result<TaskExample> {
        TaskExample::from_text(Task::ScanCot, self.cot_text(), self.interpret().len())
    }
}

/// Pulls the action tokens back out of a CoT answer.
pub fn actions_from_cot(text: &str) -> Vec<&str> {
    let answer = text.split_once('→').map(|(_, r)| r).unwrap_or("");
    answer.split_whitespace().filter(|w| w.starts_with("I_")).collect()
}

/// Splits one upstream line, `IN: cmd OUT: actions` or `cmd<TAB>actions`.
pub fn parse_scan_line(line: &str) -> Option<(&str, &str)> {
    if let Some(rest) = line.trim().strip_prefix("IN:") {
        let (cmd, out) = rest.split_once("OUT:")?;
        return Some((cmd.trim(), out.trim()));
    }
    let (cmd, out) = line.split_once('\t')?;
    Some((cmd.trim(), out.trim()))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub examples: usize,
    /// Action-sequence length to count.
    pub action_lengths: BTreeMap<usize, usize>,
    pub max_tokens: usize,
}

impl LengthSummary {
    pub fn of(examples: &[TaskExample]) -> Self {
        let mut s = Self { examples: examples.len(), ..Default::default() };
        for e in examples {
            *s.action_lengths.entry(e.length).or_default() += 1;
            s.max_tokens = s.max_tokens.max(e.tokens.len());
        }
        s
    }
}

/// Converts SCAN text, checking every target against the interpreter.
pub fn ingest_scan_text(text: &str, origin: &str) -> Result<Vec<TaskExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{origin}:{}", i + 1);
        let (cmd, actions) =
            parse_scan_line(line).ok_or_else(|| PrismError::Data(format!("{}: unrecognised line", at())))?;
        let command = Command::parse(cmd).map_err(|e| PrismError::Data(format!("{}: {e}", at())))?;
        let expected: Vec<&str> = actions.split_whitespace().collect();
        if command.interpret() != expected {
            return Err(PrismError::Data(format!("{}: actions disagree with the command semantics", at())));
        }
        out.push(command.to_example()?);
    }
    Ok(out)
}

pub fn ingest_scan_file(path: &Path) -> Result<Vec<TaskExample>> {
    let text = fs::read_to_string(path)
        .map_err(|e| PrismError::Data(format!("cannot read SCAN file {}: {e}", path.display())))?;
    ingest_scan_text(&text, &path.display().to_string())
}

pub const TRAIN_FILE: &str = "tasks_train_length.txt";
pub const TEST_FILE: &str = "tasks_test_length.txt";

/// The length split: train and test examples with their summaries.
#[derive(Clone, Debug)]
pub struct ScanSplit {
    pub train: Vec<TaskExample>,
    pub test: Vec<TaskExample>,
}

impl ScanSplit {
    pub fn summaries(&self) -> (LengthSummary, LengthSummary) {
        (LengthSummary::of(&self.train), LengthSummary::of(&self.test))
    }
}

/// Reads `tasks_{train,test}_length.txt` from `dir` (also looks in
/// `dir/length_split`).
pub fn ingest_scan_cot(dir: &Path) -> Result<ScanSplit> {
    let base = if dir.join(TRAIN_FILE).exists() { dir.to_path_buf() } else { dir.join("length_split") };
    Ok(ScanSplit { train: ingest_scan_file(&base.join(TRAIN_FILE))?, test: ingest_scan_file(&base.join(TEST_FILE))? })
}

/// Regenerates the length split from the grammar: commands whose action
/// sequence has at most 22 tokens go to train, the rest to test. Lines use
/// the upstream `IN: ... OUT: ...` form.
pub fn write_length_split(dir: &Path) -> Result<(usize, usize)> {
    fs::create_dir_all(dir)?;
    let (mut train, mut test) = (String::new(), String::new());
    let (mut ntr, mut nte) = (0, 0);
    for c in Command::all() {
        let acts = c.interpret();
        let line = format!("IN: {c} OUT: {}\n", acts.join(" "));
        if acts.len() <= 22 {
            train.push_str(&line);
            ntr += 1;
        } else {
            test.push_str(&line);
            nte += 1;
        }
    }
    fs::write(dir.join(TRAIN_FILE), train)?;
    fs::write(dir.join(TEST_FILE), test)?;
    Ok((ntr, nte))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TABLE: &str = "walk around left thrice and look opposite right = walk around left + walk around left + \
        walk around left and look opposite right → walk around left : I_TURN_LEFT I_WALK I_TURN_LEFT I_WALK \
        I_TURN_LEFT I_WALK I_TURN_LEFT I_WALK walk around left : I_TURN_LEFT I_WALK I_TURN_LEFT I_WALK \
        I_TURN_LEFT I_WALK I_TURN_LEFT I_WALK walk around left : I_TURN_LEFT I_WALK I_TURN_LEFT I_WALK \
        I_TURN_LEFT I_WALK I_TURN_LEFT I_WALK look opposite right : I_TURN_RIGHT I_TURN_RIGHT I_LOOK .";

    #[test]
    fn table_example_verbatim() {
        let c = Command::parse("walk around left thrice and look opposite right").unwrap();
        assert_eq!(c.cot_text(), TABLE);
        let ex = c.to_example().unwrap();
        assert_eq!(ex.detokenize().unwrap(), TABLE);
    }

    #[test]
    fn atomic_command() {
        assert_eq!(Command::parse("jump").unwrap().cot_text(), "jump = jump → jump : I_JUMP .");
        assert_eq!(Command::parse("turn left").unwrap().cot_text(), "turn left = turn left → turn left : I_TURN_LEFT .");
    }

    #[test]
    fn after_runs_second_phrase_first() {
        let c = Command::parse("walk twice after turn around right").unwrap();
        assert_eq!(c.rewrite(), "turn around right and walk + walk");
        assert_eq!(c.interpret(), ["I_TURN_RIGHT"; 4].into_iter().chain(["I_WALK", "I_WALK"]).collect::<Vec<_>>());
    }

    #[test]
    fn grammar_has_the_full_command_set() {
        let all = Command::all();
        assert_eq!(Atom::all().len(), 34);
        assert_eq!(all.len(), 20910);
        let mut seen = std::collections::HashSet::new();
        for c in &all {
            assert!(seen.insert(c.to_string()));
        }
    }

    #[test]
    fn upstream_lines_parse_in_both_layouts() {
        let a = "IN: jump opposite right twice and turn opposite right thrice OUT: I_TURN_RIGHT I_TURN_RIGHT I_JUMP \
                 I_TURN_RIGHT I_TURN_RIGHT I_JUMP I_TURN_RIGHT I_TURN_RIGHT I_TURN_RIGHT I_TURN_RIGHT I_TURN_RIGHT \
                 I_TURN_RIGHT\n";
        let b = "run left after look\tI_LOOK I_TURN_LEFT I_RUN\n";
        let ex = ingest_scan_text(&format!("{a}\n{b}"), "mem").unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].length, 12);
        assert_eq!(actions_from_cot(&ex[1].text), ["I_LOOK", "I_TURN_LEFT", "I_RUN"]);
        assert!(ingest_scan_text("IN: jump OUT: I_WALK", "mem").is_err());
        assert!(ingest_scan_text("IN: fly OUT: I_FLY", "mem").is_err());
        assert!(ingest_scan_text("garbage", "mem").is_err());
    }

    #[test]
    fn sampled_commands_round_trip_through_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let c = Command::sample(&mut rng);
            assert_eq!(Command::parse(&c.to_string()).unwrap(), c);
            let ex = c.to_example().unwrap();
            assert_eq!(ex.detokenize().unwrap(), ex.text);
            assert_eq!(actions_from_cot(&ex.text), c.interpret());
        }
    }
}
