//! Top-down tree decoding over a stack of pending expansions.
//!
//! The search procedures only see an [`Expander`], which scores the
//! vocabulary for one pending node and creates the pending entries of a
//! chosen token's children. Children are pushed in reverse so the leftmost
//! one is expanded next, which makes the emitted token order the prefix
//! encoding of the tree.

use crate::grad::GradError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("tree would exceed {limit} nodes")]
    MaxNodesExceeded { limit: usize },
    #[error("no beam hypothesis completed within {limit} nodes")]
    NoHypothesisCompleted { limit: usize },
    #[error("every token has zero probability")]
    NoValidToken,
    #[error("token sequence is not a complete prefix tree")]
    InvalidSequence,
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Scores and expands pending tree nodes.
pub trait Expander {
    /// A pending node: whatever state its prediction needs.
    type Entry: Clone;
    /// Per-node intermediate shared between scoring and child creation.
    type Step;

    fn root(&mut self) -> Result<Self::Entry, DecodeError>;

    /// Log-probabilities over the whole vocabulary; impossible tokens are
    /// `-inf`.
    fn step(&mut self, entry: &Self::Entry) -> Result<(Vec<f64>, Self::Step), DecodeError>;

    fn arity(&self, token: usize) -> usize;

    /// Entries for the `arity(token)` children, leftmost first.
    fn children(
        &mut self,
        entry: &Self::Entry,
        step: &Self::Step,
        token: usize,
    ) -> Result<Vec<Self::Entry>, DecodeError>;
}

/// A finished decode: prefix tokens and their total log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

/// Highest-scoring token, lowest index on ties; `None` if nothing is finite.
fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

fn push_children<T>(frontier: &mut Vec<T>, children: Vec<T>) {
    frontier.extend(children.into_iter().rev());
}

pub fn greedy<E: Expander>(ex: &mut E, max_nodes: usize) -> Result<Decoded, DecodeError> {
    let mut frontier = vec![ex.root()?];
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while let Some(entry) = frontier.pop() {
        let (scores, step) = ex.step(&entry)?;
        let tok = argmax(&scores).ok_or(DecodeError::NoValidToken)?;
        let arity = ex.arity(tok);
        if tokens.len() + 1 + frontier.len() + arity > max_nodes {
            return Err(DecodeError::MaxNodesExceeded { limit: max_nodes });
        }
        tokens.push(tok);
        log_prob += scores[tok];
        if arity > 0 {
            let children = ex.children(&entry, &step, tok)?;
            push_children(&mut frontier, children);
        }
    }
    Ok(Decoded { tokens, log_prob })
}

struct Hyp<T> {
    tokens: Vec<usize>,
    frontier: Vec<T>,
    log_prob: f64,
}

/// Synchronous beam search. Each round pops the next pending node of every
/// live hypothesis, keeps the `width` best one-token extensions overall
/// (earlier hypothesis then lower token index on ties), and drops those that
/// would exceed `max_nodes`. Search stops once no live hypothesis can beat
/// the best finished one; with `width == 1` it reproduces [`greedy`].
pub fn beam<E: Expander>(ex: &mut E, width: usize, max_nodes: usize) -> Result<Decoded, DecodeError> {
    assert!(width >= 1, "beam width must be positive");
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        frontier: vec![ex.root()?],
        log_prob: 0.0,
    }];
    let mut best: Option<Decoded> = None;
    while !live.is_empty() {
        let mut steps = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter_mut().enumerate() {
            let entry = hyp.frontier.pop().expect("live hypotheses have pending nodes");
            let (scores, step) = ex.step(&entry)?;
            for (tok, &s) in scores.iter().enumerate() {
                let total = hyp.log_prob + s;
                if s.is_finite() && total.is_finite() {
                    candidates.push((total, h, tok));
                }
            }
            steps.push((entry, step));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        candidates.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (score, h, tok) in candidates {
            let parent = &live[h];
            let arity = ex.arity(tok);
            if parent.tokens.len() + 1 + parent.frontier.len() + arity > max_nodes {
                continue;
            }
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut frontier = parent.frontier.clone();
            if arity > 0 {
                let (entry, step) = &steps[h];
                let children = ex.children(entry, step, tok)?;
                push_children(&mut frontier, children);
            }
            if frontier.is_empty() {
                if best.as_ref().map_or(true, |b| score > b.log_prob) {
                    best = Some(Decoded {
                        tokens,
                        log_prob: score,
                    });
                }
            } else {
                next.push(Hyp {
                    tokens,
                    frontier,
                    log_prob: score,
                });
            }
        }
        live = next;
        if let Some(b) = &best {
            if live.iter().all(|h| h.log_prob <= b.log_prob) {
                break;
            }
        }
    }
    best.ok_or(DecodeError::NoHypothesisCompleted { limit: max_nodes })
}

/// Log-probability the expander assigns to a complete prefix sequence when
/// decoding is forced along it.
pub fn score_sequence<E: Expander>(ex: &mut E, tokens: &[usize]) -> Result<f64, DecodeError> {
    let mut frontier = vec![ex.root()?];
    let mut total = 0.0;
    for &tok in tokens {
        let entry = frontier.pop().ok_or(DecodeError::InvalidSequence)?;
        let (scores, step) = ex.step(&entry)?;
        total += *scores.get(tok).ok_or(DecodeError::InvalidSequence)?;
        if ex.arity(tok) > 0 {
            let children = ex.children(&entry, &step, tok)?;
            push_children(&mut frontier, children);
        }
    }
    if !frontier.is_empty() {
        return Err(DecodeError::InvalidSequence);
    }
    Ok(total)
}

/// Expander over a fixed table: the distribution at a pending node depends
/// only on the tokens on the path from the root to it.
#[derive(Debug, Clone)]
pub struct TableExpander {
    pub arities: Vec<usize>,
    /// Log-probabilities for a given root path; missing paths are uniform.
    pub table: std::collections::HashMap<Vec<usize>, Vec<f64>>,
}

impl Expander for TableExpander {
    type Entry = Vec<usize>;
    type Step = ();

    fn root(&mut self) -> Result<Vec<usize>, DecodeError> {
        Ok(Vec::new())
    }

    fn step(&mut self, path: &Vec<usize>) -> Result<(Vec<f64>, ()), DecodeError> {
        let n = self.arities.len();
        let scores = self
            .table
            .get(path)
            .cloned()
            .unwrap_or_else(|| vec![-(n as f64).ln(); n]);
        Ok((scores, ()))
    }

    fn arity(&self, token: usize) -> usize {
        self.arities[token]
    }

    fn children(&mut self, path: &Vec<usize>, _: &(), token: usize) -> Result<Vec<Vec<usize>>, DecodeError> {
        let mut p = path.clone();
        p.push(token);
        Ok(vec![p; self.arities[token]])
    }
}
