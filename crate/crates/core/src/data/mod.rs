//! Problem datasets: JSONL ingestion with validation, cross-validation
//! folds, synthetic corpora and evaluation metrics.
//!
//! Input lines carry `id`, `text`, `equation`, `answer` and optionally
//! `class`. Literal numbers in the equation are mapped to the number slots of
//! the text (or to a known constant), and the resulting tree must evaluate to
//! the answer. Lines failing any step are collected as rejects.

mod synth;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{answer_matches, Example, Model, Outcome};
use crate::optree::{format_number, FormulaRegistry, NodeKind, OpTree};
use crate::vocab::{extract_numbers, tokenize, NumberSlots, SourceVocab, VocabError, CONSTANTS};
use crate::grad::Rng;

pub use synth::{synth_generate, synth_problems};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Annotation class of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemClass {
    /// Solved with the registered formulas.
    Formula,
    /// Involves a shape outside the registry.
    OtherShape,
    /// Plain arithmetic despite geometric wording.
    NoFormula,
}

impl ProblemClass {
    pub const ALL: [ProblemClass; 3] = [Self::Formula, Self::OtherShape, Self::NoFormula];

    pub fn name(self) -> &'static str {
        match self {
            Self::Formula => "formula",
            Self::OtherShape => "other_shape",
            Self::NoFormula => "no_formula",
        }
    }
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawProblem {
    pub id: String,
    pub text: String,
    pub equation: String,
    pub answer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ProblemClass>,
}

/// A validated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub id: String,
    pub text: String,
    pub equation: String,
    /// Tokens with numbers replaced by slot tokens.
    pub tokens: Vec<String>,
    pub slots: NumberSlots,
    /// Gold tree over number slots and constants.
    pub tree: OpTree,
    pub prefix: Vec<String>,
    pub answer: f64,
    pub class: ProblemClass,
}

/// Why an instance was rejected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RejectReason {
    #[error("TooManyNumbers: {0}")]
    TooManyNumbers(String),
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("UnmappableNumber: {0}")]
    UnmappableNumber(f64),
    #[error("SlotOutOfRange: <N{0}>")]
    SlotOutOfRange(usize),
    #[error("ExecutionError: {0}")]
    Execution(String),
    #[error("AnswerMismatch: expected {expected}, equation gives {got}")]
    AnswerMismatch { expected: f64, got: f64 },
}

/// Rejects report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub instances: Vec<ProblemInstance>,
    pub rejects: Vec<Reject>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn class_counts(&self) -> BTreeMap<ProblemClass, usize> {
        let mut m = BTreeMap::new();
        for i in &self.instances {
            *m.entry(i.class).or_default() += 1;
        }
        m
    }

    pub fn to_raw(&self, reg: &FormulaRegistry) -> Vec<RawProblem> {
        self.instances.iter().map(|i| i.to_raw(reg)).collect()
    }

    /// Writes the instances as JSONL.
    pub fn dump(&self, reg: &FormulaRegistry, w: impl Write) -> std::io::Result<()> {
        write_jsonl(&self.to_raw(reg), w)
    }

    pub fn write_rejects(&self, mut w: impl Write) -> std::io::Result<()> {
        for r in &self.rejects {
            writeln!(w, "{}", serde_json::to_string(r).expect("plain data"))?;
        }
        Ok(())
    }
}

pub fn write_jsonl(rows: &[RawProblem], mut w: impl Write) -> std::io::Result<()> {
    for r in rows {
        writeln!(w, "{}", serde_json::to_string(r).expect("plain data"))?;
    }
    Ok(())
}

impl ProblemInstance {
    /// The instance as a dataset line, with the equation written over the
    /// literal numbers of the text.
    pub fn to_raw(&self, reg: &FormulaRegistry) -> RawProblem {
        let values = self.slots.values();
        RawProblem {
            id: self.id.clone(),
            text: self.text.clone(),
            equation: self
                .tree
                .to_infix_with(reg, &|i| format_number(values[i])),
            answer: self.answer,
            class: Some(self.class),
        }
    }

    /// Index form for the model; `None` target entries are impossible here
    /// because the tree only holds resolvable slots and constants.
    pub fn example(&self, model: &Model) -> Result<Example, VocabError> {
        Ok(Example {
            source: model.src_vocab.encode(&self.tokens),
            slot_positions: self.slots.positions(),
            numbers: self.slots.values(),
            target: model
                .tgt_vocab
                .encode_target(&self.prefix, &self.slots, &model.registry)?,
            answer: self.answer,
        })
    }
}

fn strip_assignment(eq: &str) -> &str {
    let t = eq.trim();
    match t.split_once('=') {
        Some((lhs, rhs)) if lhs.trim().eq_ignore_ascii_case("x") => rhs.trim(),
        _ => t,
    }
}

/// Replaces literal numbers by the first slot with the same value, keeping
/// values that are known constants.
pub fn normalize_tree(tree: &OpTree, slots: &NumberSlots, max_slots: usize) -> Result<OpTree, RejectReason> {
    let mut err = None;
    let out = tree.map_kinds(|k| match k {
        NodeKind::Constant(v) => match slots.find(v).filter(|&i| i < max_slots) {
            Some(i) => NodeKind::NumberSlot(i),
            None => {
                if !CONSTANTS.iter().any(|c| (c - v).abs() <= 1e-9) {
                    err.get_or_insert(RejectReason::UnmappableNumber(v));
                }
                k
            }
        },
        NodeKind::NumberSlot(i) => {
            if i >= slots.len() {
                err.get_or_insert(RejectReason::SlotOutOfRange(i));
            }
            k
        }
        other => other,
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Tokenizes, masks numbers, parses and normalizes the equation, then
/// checks the answer.
pub fn build_instance(
    raw: &RawProblem,
    reg: &FormulaRegistry,
    max_slots: usize,
) -> Result<ProblemInstance, RejectReason> {
    let (tokens, slots) = extract_numbers(&tokenize(&raw.text), max_slots)
        .map_err(|e| RejectReason::TooManyNumbers(e.to_string()))?;
    let parsed = OpTree::parse_infix(strip_assignment(&raw.equation), reg)
        .map_err(|e| RejectReason::Parse(e.to_string()))?;
    let tree = normalize_tree(&parsed, &slots, max_slots)?;
    let class = raw.class.unwrap_or(if tree.has_formula() {
        ProblemClass::Formula
    } else {
        ProblemClass::NoFormula
    });
    let inst = ProblemInstance {
        id: raw.id.clone(),
        text: raw.text.clone(),
        equation: raw.equation.clone(),
        prefix: tree.to_prefix(reg),
        tokens,
        slots,
        tree,
        answer: raw.answer,
        class,
    };
    validate_instance(&inst, reg)?;
    Ok(inst)
}

/// Executes the gold tree against the slots and compares with the answer
/// under `1e-4 · max(1, |answer|)`.
pub fn validate_instance(inst: &ProblemInstance, reg: &FormulaRegistry) -> Result<(), RejectReason> {
    let got = inst
        .tree
        .evaluate(reg, &inst.slots.values())
        .map_err(|e| RejectReason::Execution(e.to_string()))?;
    if answer_matches(got, inst.answer) {
        Ok(())
    } else {
        Err(RejectReason::AnswerMismatch {
            expected: inst.answer,
            got,
        })
    }
}

/// Builds every instance, collecting failures as rejects.
pub fn build_dataset(raws: &[RawProblem], reg: &FormulaRegistry, max_slots: usize) -> Dataset {
    let mut ds = Dataset::default();
    for raw in raws {
        match build_instance(raw, reg, max_slots) {
            Ok(i) => ds.instances.push(i),
            Err(e) => ds.rejects.push(Reject {
                id: raw.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    ds
}

pub fn parse_jsonl(text: &str) -> Result<Vec<RawProblem>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw = serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(raw);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>, reg: &FormulaRegistry, max_slots: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
        _ => DataError::Io(e),
    })?;
    Ok(build_dataset(&parse_jsonl(&text)?, reg, max_slots))
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first
/// `n mod k` folds hold one extra index.
pub fn kfold(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(k >= 1 && k <= n, "need 1 ≤ k ≤ n");
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    folds
}

/// Seeded split into `(train, test)` with `test_fraction` of the indices in
/// the test part.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut idx);
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Source vocabulary over the masked tokens of `instances`.
pub fn build_vocab(instances: &[ProblemInstance], min_freq: usize) -> SourceVocab {
    SourceVocab::build(instances.iter().map(|i| i.tokens.as_slice()), min_freq)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub count: usize,
    pub answer_correct: usize,
    pub exact: usize,
}

/// Accuracy summary of one evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub total: usize,
    pub answer_acc: f64,
    pub exact_match: f64,
    pub answer_correct: usize,
    pub exact: usize,
    /// Decodes that raised instead of producing a tree.
    pub failures: usize,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

/// Aggregates per-instance outcomes (same order as `instances`).
pub fn summarize(instances: &[ProblemInstance], outcomes: &[Outcome]) -> Metrics {
    let mut m = Metrics {
        total: instances.len(),
        ..Default::default()
    };
    for (inst, o) in instances.iter().zip(outcomes) {
        let c = m.per_class.entry(inst.class.name().to_string()).or_default();
        c.count += 1;
        if o.correct {
            c.answer_correct += 1;
            m.answer_correct += 1;
        }
        if o.exact {
            c.exact += 1;
            m.exact += 1;
        }
        if o.failure.is_some() {
            m.failures += 1;
        }
    }
    if m.total > 0 {
        m.answer_acc = m.answer_correct as f64 / m.total as f64;
        m.exact_match = m.exact as f64 / m.total as f64;
    }
    m
}

/// Decodes every instance and scores answers and exact matches. Instances
/// the model cannot encode count as failures.
pub fn evaluate_model(model: &Model, instances: &[ProblemInstance], beam: usize) -> Metrics {
    let outcomes: Vec<Outcome> = instances
        .iter()
        .map(|inst| match inst.example(model) {
            Ok(ex) => model.assess(&ex, beam),
            Err(e) => Outcome {
                tokens: None,
                value: None,
                exact: false,
                correct: false,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    summarize(instances, &outcomes)
}

/// Answer accuracy on `test` of always predicting the most frequent gold
/// prefix of `train` (earliest first seen on ties).
pub fn majority_baseline(train: &[ProblemInstance], test: &[ProblemInstance], reg: &FormulaRegistry) -> f64 {
    let mut counts: HashMap<&[String], (usize, usize)> = HashMap::new();
    for (i, inst) in train.iter().enumerate() {
        counts.entry(inst.prefix.as_slice()).or_insert((0, i)).0 += 1;
    }
    let Some((prefix, _)) = counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
    else {
        return 0.0;
    };
    let Ok(tree) = OpTree::from_prefix(prefix, reg) else {
        return 0.0;
    };
    let correct = test
        .iter()
        .filter(|t| {
            tree.evaluate(reg, &t.slots.values())
                .is_ok_and(|v| answer_matches(v, t.answer))
        })
        .count();
    correct as f64 / test.len().max(1) as f64
}
