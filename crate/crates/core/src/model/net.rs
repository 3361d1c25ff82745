//! Recurrent and attention building blocks on explicit tape variables.

use crate::grad::{GradError, Rng, Tape, Var};

/// Weights of a GRU cell with gates fused as `[r | z | n]` along columns.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    /// `input × 3·hidden`
    pub w_x: Var,
    /// `hidden × 3·hidden`
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    /// `x · W_x + b_x` for every row of `x` at once.
    pub fn project_inputs(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var, GradError> {
        let xw = tape.matmul(x, self.w_x)?;
        tape.add_row(xw, self.b_x)
    }
}

/// One GRU step from a precomputed input projection `gx` (1 × 3·hidden):
///
/// ```text
/// r  = σ(gx_r + h·W_hr + b_hr)
/// z  = σ(gx_z + h·W_hz + b_hz)
/// n  = tanh(gx_n + r ⊙ (h·W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_step(tape: &mut Tape<'_>, g: &GruVars, gx: Var, h: Var) -> Result<Var, GradError> {
    let d = g.hidden();
    let hw = tape.matmul(h, g.w_h)?;
    let gh = tape.add_row(hw, g.b_h)?;
    let gate = |tape: &mut Tape<'_>, k: usize| -> Result<Var, GradError> {
        let a = tape.slice_cols(gx, k * d, d)?;
        let b = tape.slice_cols(gh, k * d, d)?;
        let s = tape.add(a, b)?;
        tape.sigmoid(s)
    };
    let r = gate(tape, 0)?;
    let z = gate(tape, 1)?;
    let xn = tape.slice_cols(gx, 2 * d, d)?;
    let hn = tape.slice_cols(gh, 2 * d, d)?;
    let rhn = tape.mul(r, hn)?;
    let pre = tape.add(xn, rhn)?;
    let n = tape.tanh(pre)?;
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

pub fn gru_cell(tape: &mut Tape<'_>, g: &GruVars, x: Var, h: Var) -> Result<Var, GradError> {
    let gx = g.project_inputs(tape, x)?;
    gru_step(tape, g, gx, h)
}

/// Runs a GRU over the rows of `x` from a zero state, forwards or
/// backwards. Returns the state after each row, indexed by row.
pub fn gru_sequence(
    tape: &mut Tape<'_>,
    g: &GruVars,
    x: Var,
    reverse: bool,
) -> Result<Vec<Var>, GradError> {
    let n = x.rows();
    let gx_all = g.project_inputs(tape, x)?;
    let mut h = tape.input(vec![0.0; g.hidden()], 1, g.hidden());
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let gx = tape.gather_rows(gx_all, &[t])?;
        h = gru_step(tape, g, gx, h)?;
        states[t] = h;
    }
    Ok(states)
}

/// Bidirectional encoding of `x` (n × input). `H[t] = fwd[t] + bwd[t]` and
/// the summary is the backward state at position 0 plus the final forward
/// state.
pub fn bigru(
    tape: &mut Tape<'_>,
    fwd: &GruVars,
    bwd: &GruVars,
    x: Var,
) -> Result<(Var, Var), GradError> {
    let f = gru_sequence(tape, fwd, x, false)?;
    let b = gru_sequence(tape, bwd, x, true)?;
    let fs = tape.stack_rows(&f)?;
    let bs = tape.stack_rows(&b)?;
    let h = tape.add(fs, bs)?;
    let summary = tape.add(b[0], f[f.len() - 1])?;
    Ok((h, summary))
}

/// Additive attention weights of one scoring function.
#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub w_q: Var,
    pub w_h: Var,
    /// `hidden × 1`
    pub v: Var,
}

/// `score_i = vᵀ tanh(q·W_q + H_i·W_h)`, `α = softmax(score)`, context `α·H`.
pub fn attend(tape: &mut Tape<'_>, a: &AttnVars, query: Var, h: Var) -> Result<Var, GradError> {
    let keys = tape.matmul(h, a.w_h)?;
    attend_keys(tape, a, query, h, keys)
}

/// [`attend`] with the keys `H·W_h` already computed.
pub fn attend_keys(
    tape: &mut Tape<'_>,
    a: &AttnVars,
    query: Var,
    h: Var,
    keys: Var,
) -> Result<Var, GradError> {
    let q = tape.matmul(query, a.w_q)?;
    let pre = tape.add_row(keys, q)?;
    let act = tape.tanh(pre)?;
    let scores = tape.matmul(act, a.v)?;
    let scores = tape.transpose(scores)?;
    let alpha = tape.softmax(scores)?;
    tape.matmul(alpha, h)
}

/// Inverted dropout that is either active with its own random stream or
/// the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: Option<Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: Rng) -> Self {
        Dropout { p, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.p > 0.0
    }

    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var, GradError> {
        match &mut self.rng {
            Some(rng) if self.p > 0.0 => tape.dropout(x, self.p, true, rng),
            _ => Ok(x),
        }
    }
}
