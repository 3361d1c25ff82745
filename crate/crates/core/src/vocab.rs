//! Tokenization, number extraction and the source/target vocabularies.
//!
//! Numbers in the problem text are replaced by slot tokens `<N0>`, `<N1>`, …
//! in order of appearance. The decoder's output vocabulary is the ordered
//! union of operators, constants, formula names and those slots.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::optree::{
    format_number, parse_token, slot_token, FormulaRegistry, NodeKind, Operator, PI_LITERAL,
};

/// Constants the decoder may emit without copying them from the text.
pub const CONSTANTS: [f64; 3] = [1.0, 2.0, PI_LITERAL];

/// Default number of slots.
pub const DEFAULT_MAX_SLOTS: usize = 10;

const VALUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabError {
    #[error("problem has {count} numbers but only {max} slots are available")]
    TooManyNumbers { count: usize, max: usize },
    #[error("number {0} is neither in the problem text nor a known constant")]
    UnmappableNumber(f64),
    #[error("token `{0}` is not in the target vocabulary")]
    UnknownToken(String),
    #[error("slot <N{index}> used but the problem has {available} numbers")]
    SlotOutOfRange { index: usize, available: usize },
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0xFF00..=0xFFEF)
}

/// Length in chars of the numeric literal at the start of `chars`:
/// `d+(.d+)?` followed by `%` or `/d+(.d+)?`.
fn numeric_prefix(chars: &[char]) -> usize {
    fn digits(chars: &[char], mut i: usize) -> usize {
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        i
    }
    fn decimal(chars: &[char], i: usize) -> usize {
        let j = digits(chars, i);
        if j == i {
            return i;
        }
        if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
            digits(chars, j + 1)
        } else {
            j
        }
    }
    let end = decimal(chars, 0);
    if end == 0 {
        return 0;
    }
    match chars.get(end) {
        Some('%') => end + 1,
        Some('/') => {
            let after = decimal(chars, end + 1);
            if after > end + 1 {
                after
            } else {
                end
            }
        }
        _ => end,
    }
}

/// Value of a numeric token: integer, decimal, percent (`50%` → 0.5) or
/// fraction written as one token (`3/4` → 0.75).
pub fn number_value(token: &str) -> Option<f64> {
    let chars: Vec<char> = token.chars().collect();
    if chars.is_empty() || numeric_prefix(&chars) != chars.len() {
        return None;
    }
    if let Some(p) = token.strip_suffix('%') {
        return p.parse::<f64>().ok().map(|v| v / 100.0);
    }
    if let Some((a, b)) = token.split_once('/') {
        let (a, b) = (a.parse::<f64>().ok()?, b.parse::<f64>().ok()?);
        return (b != 0.0).then_some(a / b);
    }
    token.parse().ok()
}

const LEADING_PUNCT: &[char] = &['(', '[', '"', '\''];
const TRAILING_PUNCT: &[char] = &['.', ',', '?', '!', ';', ':', ')', ']', '"', '\''];

/// Splits problem text into tokens.
///
/// Tokens are whitespace-delimited. Tokens containing CJK characters are
/// split into single characters, except that numerals inside them stay
/// whole. In other tokens, surrounding punctuation is split off and a leading
/// numeral is separated from a unit suffix (`5m` → `5`, `m`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        if chars.iter().any(|&c| is_cjk(c)) {
            let mut i = 0;
            while i < chars.len() {
                let n = numeric_prefix(&chars[i..]);
                if n > 0 {
                    out.push(chars[i..i + n].iter().collect());
                    i += n;
                } else {
                    out.push(chars[i].to_string());
                    i += 1;
                }
            }
            continue;
        }
        let mut start = 0;
        let mut end = chars.len();
        while start < end && LEADING_PUNCT.contains(&chars[start]) {
            out.push(chars[start].to_string());
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && TRAILING_PUNCT.contains(&chars[end - 1]) {
            // Keep the decimal point of "3." only when a digit follows, which
            // cannot happen at the end of a word.
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        let core = &chars[start..end];
        if !core.is_empty() {
            let n = numeric_prefix(core);
            if n > 0 && n < core.len() {
                out.push(core[..n].iter().collect());
                out.push(core[n..].iter().collect());
            } else {
                out.push(core.iter().collect());
            }
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// One number taken from the problem text.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NumberSlot {
    pub value: f64,
    /// Index of the token it replaced.
    pub position: usize,
}

/// Numbers of one problem, in order of appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NumberSlots {
    pub slots: Vec<NumberSlot>,
}

impl NumberSlots {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.value).collect()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.position).collect()
    }

    /// First slot whose value equals `v`.
    pub fn find(&self, v: f64) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| (s.value - v).abs() <= VALUE_TOL)
    }
}

/// Replaces numeric tokens by `<N0>`, `<N1>`, … and records their values.
/// Repeated values get distinct slots.
pub fn extract_numbers(
    tokens: &[String],
    max_slots: usize,
) -> Result<(Vec<String>, NumberSlots), VocabError> {
    let mut masked = Vec::with_capacity(tokens.len());
    let mut slots = NumberSlots::default();
    for (position, tok) in tokens.iter().enumerate() {
        match number_value(tok) {
            Some(value) => {
                masked.push(slot_token(slots.len()));
                slots.slots.push(NumberSlot { value, position });
            }
            None => masked.push(tok.clone()),
        }
    }
    if slots.len() > max_slots {
        return Err(VocabError::TooManyNumbers {
            count: slots.len(),
            max: max_slots,
        });
    }
    Ok((masked, slots))
}

fn is_slot_token(tok: &str) -> bool {
    tok.strip_prefix("<N")
        .and_then(|t| t.strip_suffix('>'))
        .is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
}

/// Word vocabulary of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceVocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl SourceVocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    /// Shared index of all slot tokens.
    pub const NUM: usize = 2;
    const RESERVED: [&'static str; 3] = ["<pad>", "<unk>", "<num>"];

    /// Indexes every token occurring at least `min_freq` times, most frequent
    /// first with ties broken alphabetically.
    pub fn build<'a, I, S>(corpus: I, min_freq: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let min_freq = min_freq.max(1);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for sentence in corpus {
            for tok in sentence {
                let tok = tok.as_ref();
                if !is_slot_token(tok) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = Self::RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        SourceVocab { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, tok: &str) -> usize {
        if is_slot_token(tok) {
            return Self::NUM;
        }
        self.index.get(tok).copied().unwrap_or(Self::UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t.as_ref())).collect()
    }

    /// `{"token": index, ...}`
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), serde_json::Value::from(i)))
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Output vocabulary: operators, constants, formulas, then `max_slots`
/// number slots. The first three segments form the static part scored by
/// the output layer; slots are scored against the encoder states.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVocab {
    kinds: Vec<NodeKind>,
    tokens: Vec<String>,
    n_ops: usize,
    n_consts: usize,
    n_formulas: usize,
    max_slots: usize,
}

impl TargetVocab {
    pub fn new(reg: &FormulaRegistry, max_slots: usize) -> Self {
        let mut kinds: Vec<NodeKind> = Operator::ALL.iter().map(|&o| NodeKind::Operator(o)).collect();
        kinds.extend(CONSTANTS.iter().map(|&c| NodeKind::Constant(c)));
        kinds.extend(reg.iter().map(|(id, _)| NodeKind::FormulaCall(id)));
        kinds.extend((0..max_slots).map(NodeKind::NumberSlot));
        let tokens = kinds.iter().map(|k| k.token(reg)).collect();
        TargetVocab {
            kinds,
            tokens,
            n_ops: Operator::ALL.len(),
            n_consts: CONSTANTS.len(),
            n_formulas: reg.len(),
            max_slots,
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn max_slots(&self) -> usize {
        self.max_slots
    }

    pub fn operators(&self) -> std::ops::Range<usize> {
        0..self.n_ops
    }

    pub fn constants(&self) -> std::ops::Range<usize> {
        self.n_ops..self.n_ops + self.n_consts
    }

    pub fn formulas(&self) -> std::ops::Range<usize> {
        let s = self.n_ops + self.n_consts;
        s..s + self.n_formulas
    }

    pub fn slots(&self) -> std::ops::Range<usize> {
        let s = self.static_len();
        s..s + self.max_slots
    }

    /// Size of the operator + constant + formula part.
    pub fn static_len(&self) -> usize {
        self.n_ops + self.n_consts + self.n_formulas
    }

    pub fn kind(&self, index: usize) -> NodeKind {
        self.kinds[index]
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn index_of(&self, kind: &NodeKind) -> Option<usize> {
        match kind {
            NodeKind::NumberSlot(i) => (*i < self.max_slots).then(|| self.static_len() + i),
            NodeKind::Constant(v) => self
                .constants()
                .find(|&k| matches!(self.kinds[k], NodeKind::Constant(c) if (c - v).abs() <= VALUE_TOL)),
            other => self.kinds.iter().position(|k| k == other),
        }
    }

    /// Maps a node to its vocabulary entry for a problem with `slots`:
    /// literal numbers become the first slot with that value, falling back to
    /// a constant.
    pub fn resolve(&self, kind: NodeKind, slots: &NumberSlots) -> Result<usize, VocabError> {
        match kind {
            NodeKind::Constant(v) => {
                if let Some(i) = slots.find(v).filter(|&i| i < self.max_slots) {
                    return Ok(self.static_len() + i);
                }
                self.index_of(&kind).ok_or(VocabError::UnmappableNumber(v))
            }
            NodeKind::NumberSlot(i) => {
                if i >= slots.len() || i >= self.max_slots {
                    return Err(VocabError::SlotOutOfRange {
                        index: i,
                        available: slots.len().min(self.max_slots),
                    });
                }
                Ok(self.static_len() + i)
            }
            other => self
                .index_of(&other)
                .ok_or_else(|| VocabError::UnknownToken(format!("{other:?}"))),
        }
    }

    /// Encodes prefix tokens as vocabulary indices.
    pub fn encode_target<S: AsRef<str>>(
        &self,
        tokens: &[S],
        slots: &NumberSlots,
        reg: &FormulaRegistry,
    ) -> Result<Vec<usize>, VocabError> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                let kind = parse_token(t, reg).map_err(|_| VocabError::UnknownToken(t.to_string()))?;
                self.resolve(kind, slots)
            })
            .collect()
    }

    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    pub fn kinds_of(&self, indices: &[usize]) -> Vec<NodeKind> {
        indices.iter().map(|&i| self.kinds[i]).collect()
    }

    /// `{"token": index, ...}`
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), serde_json::Value::from(i)))
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Human-readable form of a slot value list, e.g. `[300, 10]`.
pub fn format_values(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format_number(*v)).collect();
    format!("[{}]", parts.join(", "))
}
