//! Test oracles shared by the integration suites.
#![allow(dead_code)]

use s2g::data::{build_vocab, synth_generate, ProblemInstance};
use s2g::grad::{Gradients, Rng, Tape, Var};
use s2g::kg::{gcn_layers, normalize_adjacency, KnowledgeGraph};
use s2g::model::{
    attend, beam, bigru, gru_cell, AttnVars, DecodeError, Dropout, Example, GruVars, Model,
    ModelConfig, ModelError,
};
use s2g::optree::{FormulaRegistry, NodeKind, OpTree, Operator};

/// Random arity-valid tree using every node kind, at most `depth` levels.
pub fn random_tree(rng: &mut Rng, reg: &FormulaRegistry, depth: usize, slots: usize) -> OpTree {
    let leaf = depth <= 1 || rng.bernoulli(0.3);
    if leaf {
        return if rng.bernoulli(0.5) {
            OpTree::slot(rng.index(slots))
        } else {
            let c = [1.0, 2.0, 3.14, 0.5, 7.0, 12.25];
            OpTree::constant(*rng.choose(&c))
        };
    }
    if rng.bernoulli(0.35) {
        let ids: Vec<_> = reg.iter().map(|(id, _)| id).collect();
        let id = *rng.choose(&ids);
        let args = (0..reg.get(id).arity)
            .map(|_| random_tree(rng, reg, depth - 1, slots))
            .collect();
        OpTree::call(reg, id, args).expect("arity respected")
    } else {
        let op = *rng.choose(&Operator::ALL);
        let l = random_tree(rng, reg, depth - 1, slots);
        let r = random_tree(rng, reg, depth - 1, slots);
        OpTree::operator(op, l, r)
    }
}

/// Tree depth, counting the root as 1.
pub fn depth(t: &OpTree) -> usize {
    fn go(t: &OpTree, n: usize) -> usize {
        1 + t.children(n).iter().map(|&c| go(t, c)).max().unwrap_or(0)
    }
    go(t, t.root())
}

pub fn kinds_are_arity_valid(kinds: &[NodeKind], reg: &FormulaRegistry) -> bool {
    let mut need = 1usize;
    for (i, k) in kinds.iter().enumerate() {
        if need == 0 {
            return false;
        }
        need = need - 1 + k.arity(reg);
        if need == 0 && i + 1 != kinds.len() {
            return false;
        }
    }
    need == 0
}

/// The geometry formulas written directly in Rust.
pub fn formula_oracle(name: &str, a: &[f64]) -> f64 {
    let pi = 3.14;
    match name {
        "square_area" => a[0] * a[0],
        "square_perimeter" => 4.0 * a[0],
        "cubic_volume" => a[0].powi(3),
        "circle_area" => pi * a[0] * a[0],
        "circumference_r" => 2.0 * pi * a[0],
        "circumference_d" => pi * a[0],
        "triangle_area" => a[0] * a[1] / 2.0,
        "rectangle_area" => a[0] * a[1],
        "rectangle_perimeter" => 2.0 * (a[0] + a[1]),
        "cuboid_volume" => a[0] * a[1] * a[2],
        "cuboid_surface" => 2.0 * (a[0] * a[1] + a[1] * a[2] + a[0] * a[2]),
        other => panic!("no oracle for {other}"),
    }
}

/// Recursive-descent evaluator for infix text:
///
/// ```text
/// expr   := term (('+' | '-') term)*
/// term   := power (('*' | '/') power)*
/// power  := atom ('^' power)?
/// atom   := number | 'pi' | name '(' expr (',' expr)* ')' | '(' expr ')'
/// ```
///
/// Returns `None` on division by zero or a non-finite result.
pub fn rd_eval(text: &str) -> Option<f64> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut p = RdParser { s: chars, i: 0 };
    let v = p.expr()?;
    (p.i == p.s.len() && v.is_finite()).then_some(v)
}

struct RdParser {
    s: Vec<char>,
    i: usize,
}

impl RdParser {
    fn peek(&self) -> Option<char> {
        self.s.get(self.i).copied()
    }

    fn expr(&mut self) -> Option<f64> {
        let mut v = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.i += 1;
            let r = self.term()?;
            v = if c == '+' { v + r } else { v - r };
        }
        Some(v)
    }

    fn term(&mut self) -> Option<f64> {
        let mut v = self.power()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.i += 1;
            let r = self.power()?;
            if c == '/' && r == 0.0 {
                return None;
            }
            v = if c == '*' { v * r } else { v / r };
        }
        Some(v)
    }

    fn power(&mut self) -> Option<f64> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.i += 1;
            let e = self.power()?;
            return Some(base.powf(e));
        }
        Some(base)
    }

    fn atom(&mut self) -> Option<f64> {
        let c = self.peek()?;
        if c == '(' {
            self.i += 1;
            let v = self.expr()?;
            (self.peek()? == ')').then_some(())?;
            self.i += 1;
            return Some(v);
        }
        if c.is_ascii_digit() {
            let start = self.i;
            while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                self.i += 1;
            }
            let s: String = self.s[start..self.i].iter().collect();
            return s.parse().ok();
        }
        if c.is_alphabetic() {
            let start = self.i;
            while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
                self.i += 1;
            }
            let name: String = self.s[start..self.i].iter().collect();
            if name == "pi" {
                return Some(3.14);
            }
            (self.peek()? == '(').then_some(())?;
            self.i += 1;
            let mut args = vec![self.expr()?];
            while self.peek()? == ',' {
                self.i += 1;
                args.push(self.expr()?);
            }
            (self.peek()? == ')').then_some(())?;
            self.i += 1;
            return Some(formula_oracle(&name, &args));
        }
        None
    }
}

/// Random well-formed infix text over small integers, all operators,
/// parentheses, `pi` and formula calls, with random spacing.
pub fn random_infix(rng: &mut Rng, reg: &FormulaRegistry, depth: usize) -> String {
    let sp = |rng: &mut Rng| if rng.bernoulli(0.5) { " " } else { "" };
    if depth == 0 || rng.bernoulli(0.25) {
        return match rng.index(6) {
            0 => "pi".to_string(),
            1 => format!("{}.5", rng.int(0, 9)),
            _ => rng.int(0, 20).to_string(),
        };
    }
    match rng.index(10) {
        0..=1 => {
            let (_, def) = reg.iter().nth(rng.index(reg.len())).unwrap();
            let args: Vec<String> = (0..def.arity)
                .map(|_| random_infix(rng, reg, depth - 1))
                .collect();
            format!("{}({})", def.name, args.join(&format!(",{}", sp(rng))))
        }
        2 => format!("({}{}{})", sp(rng), random_infix(rng, reg, depth - 1), sp(rng)),
        k => {
            let op = ["+", "-", "*", "/", "^", "+", "*"][k - 3];
            let l = random_infix(rng, reg, depth - 1);
            let r = if op == "^" {
                rng.int(0, 3).to_string()
            } else {
                random_infix(rng, reg, depth - 1)
            };
            format!("{l}{}{op}{}{r}", sp(rng), sp(rng))
        }
    }
}

pub const FD_EPS: f64 = 1e-5;

/// Relative error with a floor on the scale. Central differences carry
/// about `2e-16 · |loss| / FD_EPS` of roundoff, so below the floor errors
/// are compared in absolute terms.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub const REL_FLOOR: f64 = 1e-5;

/// Central finite difference of `f` at `x` along coordinate `k`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += FD_EPS;
    let up = f(&xp);
    xp[k] = x[k] - FD_EPS;
    let down = f(&xp);
    (up - down) / (2.0 * FD_EPS)
}

/// Checks the tape gradient of a scalar function of several leaf arrays
/// against central differences. `build` receives the leaves (in `shapes`
/// order) and returns any output, which is reduced by a fixed random
/// projection. Returns the worst relative error.
pub fn check_gradients(
    inputs: &[(Vec<f64>, usize, usize)],
    seed: u64,
    build: &dyn Fn(&mut Tape<'_>, &[Var]) -> Var,
) -> f64 {
    let weights = {
        let mut t = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|(v, r, c)| t.leaf(v.clone(), *r, *c)).collect();
        let out = build(&mut t, &leaves);
        let mut rng = Rng::new(seed ^ 0xabc);
        (0..out.len()).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<f64>>()
    };
    let scalar = |vals: &[Vec<f64>]| -> f64 {
        let mut t = Tape::new();
        let leaves: Vec<Var> = inputs
            .iter()
            .zip(vals)
            .map(|((_, r, c), v)| t.input(v.clone(), *r, *c))
            .collect();
        let out = build(&mut t, &leaves);
        t.value(out).iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let mut t = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|(v, r, c)| t.leaf(v.clone(), *r, *c)).collect();
    let out = build(&mut t, &leaves);
    let w = t.input(weights.clone(), out.rows(), out.cols());
    let prod = t.mul(out, w).unwrap();
    let loss = t.sum(prod).unwrap();
    let grads = t.backward(loss).unwrap();
    let base: Vec<Vec<f64>> = inputs.iter().map(|(v, _, _)| v.clone()).collect();
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).map(|g| g.to_vec()).unwrap_or(vec![0.0; leaf.len()]);
        for k in 0..leaf.len() {
            let mut f = |x: &[f64]| {
                let mut vals = base.clone();
                vals[li] = x.to_vec();
                scalar(&vals)
            };
            let numeric = central_diff(&mut f, &base[li], k);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    worst
}

/// Compares the model's parameter gradients of `loss` with central
/// differences over every scalar of the named parameters (all when
/// `names` is empty). Returns the worst relative error and how many
/// coordinates were checked.
pub fn check_model_gradients(
    model: &mut Model,
    names: &[&str],
    loss: &dyn Fn(&Model) -> (f64, Vec<Vec<f64>>),
) -> (f64, usize) {
    let (_, analytic) = loss(model);
    let ids: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| names.is_empty() || names.iter().any(|n| p.name.starts_with(n)))
        .map(|(id, _)| id)
        .collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in ids {
        for k in 0..model.store.value(id).len() {
            let orig = model.store.value(id)[k];
            model.store.get_mut(id).value[k] = orig + FD_EPS;
            let up = loss(model).0;
            model.store.get_mut(id).value[k] = orig - FD_EPS;
            let down = loss(model).0;
            model.store.get_mut(id).value[k] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[id.index()][k], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// A small model over a synthetic corpus.
pub fn toy_model(emb: usize, hidden: usize, seed: u64) -> (Model, Vec<ProblemInstance>) {
    let reg = FormulaRegistry::default_geometry();
    let ds = synth_generate(40, seed, &reg, 10);
    let vocab = build_vocab(&ds.instances, 1);
    let kg = KnowledgeGraph::default_for(&reg);
    let cfg = ModelConfig {
        emb_dim: emb,
        hidden_dim: hidden,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, reg, kg, vocab, seed).unwrap();
    (model, ds.instances)
}

/// Shifts every parameter so the toy model is far from its small-valued
/// initialization, which would otherwise hide gradient errors.
pub fn scramble(model: &mut Model, seed: u64) {
    let mut rng = Rng::new(seed);
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in model.store.get_mut(id).value.iter_mut() {
            *v = rng.uniform(-0.8, 0.8);
        }
    }
}

fn rand_mat(rng: &mut Rng, r: usize, c: usize) -> (Vec<f64>, usize, usize) {
    ((0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect(), r, c)
}

fn gru_vars(v: &[Var]) -> GruVars {
    GruVars {
        w_x: v[0],
        w_h: v[1],
        b_x: v[2],
        b_h: v[3],
    }
}

fn gru_inputs(rng: &mut Rng, i: usize, h: usize) -> Vec<(Vec<f64>, usize, usize)> {
    vec![
        rand_mat(rng, i, 3 * h),
        rand_mat(rng, h, 3 * h),
        rand_mat(rng, 1, 3 * h),
        rand_mat(rng, 1, 3 * h),
    ]
}

/// Worst gradient error of one GRU cell step, random shapes up to 6.
pub fn encoder_step_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (i, h) = (1 + rng.index(6), 1 + rng.index(6));
    let mut inputs = gru_inputs(&mut rng, i, h);
    inputs.push(rand_mat(&mut rng, 1, i));
    inputs.push(rand_mat(&mut rng, 1, h));
    check_gradients(&inputs, seed, &|t, v| gru_cell(t, &gru_vars(v), v[4], v[5]).unwrap())
}

/// Worst gradient error of the bidirectional encoder over a short sequence.
pub fn bigru_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (i, h, n) = (1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(5));
    let mut inputs = gru_inputs(&mut rng, i, h);
    inputs.extend(gru_inputs(&mut rng, i, h));
    inputs.push(rand_mat(&mut rng, n, i));
    check_gradients(&inputs, seed, &|t, v| {
        let (hs, summary) = bigru(t, &gru_vars(&v[0..4]), &gru_vars(&v[4..8]), v[8]).unwrap();
        t.stack_rows(&[hs, summary]).unwrap()
    })
}

pub fn attention_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let (h, n) = (1 + rng.index(6), 1 + rng.index(7));
    let inputs = vec![
        rand_mat(&mut rng, h, h),
        rand_mat(&mut rng, h, h),
        rand_mat(&mut rng, h, 1),
        rand_mat(&mut rng, 1, h),
        rand_mat(&mut rng, n, h),
    ];
    check_gradients(&inputs, seed, &|t, v| {
        let a = AttnVars {
            w_q: v[0],
            w_h: v[1],
            v: v[2],
        };
        attend(t, &a, v[3], v[4]).unwrap()
    })
}

/// Worst gradient error of both GCN layers on a random graph.
pub fn gcn_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let n = 2 + rng.index(6);
    let d = 1 + rng.index(5);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(0.4) {
                a[i * n + j] = 1.0;
                a[j * n + i] = 1.0;
            }
        }
    }
    let a_hat = normalize_adjacency(&a, n);
    let inputs = vec![rand_mat(&mut rng, n, d), rand_mat(&mut rng, d, d), rand_mat(&mut rng, d, d)];
    check_gradients(&inputs, seed, &|t, v| gcn_layers(t, &a_hat, n, v[0], v[1], v[2]).unwrap())
}

fn grad_buffers(model: &Model, grads: &Gradients) -> Vec<Vec<f64>> {
    let mut acc = model.grad_buffer();
    for (id, g) in grads.params() {
        acc[id.index()].copy_from_slice(g);
    }
    acc
}

/// Toy model with parameters moved away from their initialization and one
/// of its examples whose gold tree has `nodes` nodes.
pub fn scrambled_with_example(seed: u64, nodes: usize) -> (Model, Example) {
    let (mut model, inst) = toy_model(6, 8, seed);
    scramble(&mut model, seed + 100);
    let ex = inst
        .iter()
        .find(|i| i.prefix.len() == nodes)
        .unwrap_or_else(|| panic!("no {nodes}-node instance"))
        .example(&model)
        .unwrap();
    (model, ex)
}

pub fn target_token(model: &Model, name: &str) -> usize {
    (0..model.tgt_vocab.len())
        .find(|&i| model.tgt_vocab.token(i) == name)
        .unwrap_or_else(|| panic!("{name} is not a target token"))
}

/// Prediction head at the root: log-probability of the gold root token and
/// of the first slot, against the head, attention, slot and graph weights.
pub fn head_error(seed: u64) -> (f64, usize) {
    let (mut model, ex) = scrambled_with_example(seed, 5);
    let loss = |m: &Model| {
        let mut t = Tape::with_params(&m.store);
        let mut d = Dropout::off();
        let enc = m.encode(&mut t, &ex.source, &ex.slot_positions, &mut d).unwrap();
        let root = m.root(&mut t, &enc).unwrap();
        let (lp, _) = m.predict(&mut t, &enc, &root).unwrap();
        let p = t.pick(lp, ex.target[0]).unwrap();
        let p2 = t.pick(lp, m.tgt_vocab.static_len()).unwrap();
        let l = t.add_all(&[p, p2]).unwrap();
        let l = t.scale(l, -1.0).unwrap();
        let g = t.backward(l).unwrap();
        (t.scalar(l), grad_buffers(m, &g))
    };
    let names = ["dec.w_y", "dec.b_y", "dec.att_", "dec.w_slot", "dec.w_n", "dec.start", "kg."];
    check_model_gradients(&mut model, &names, &loss)
}

/// Three child states of a `cuboid_volume` root, reduced by a fixed random
/// projection, against the sibling GRU and token embeddings.
pub fn child_error(seed: u64) -> (f64, usize) {
    let (mut model, ex) = scrambled_with_example(seed, 5);
    let cuboid = target_token(&model, "cuboid_volume");
    let loss = |m: &Model| {
        let mut t = Tape::with_params(&m.store);
        let mut d = Dropout::off();
        let enc = m.encode(&mut t, &ex.source, &ex.slot_positions, &mut d).unwrap();
        let root = m.root(&mut t, &enc).unwrap();
        let (_, c) = m.predict(&mut t, &enc, &root).unwrap();
        let e = m.token_embedding(&mut t, &enc, cuboid).unwrap();
        let kids = m.gen_children(&mut t, root.state, e, c, 3, &mut d).unwrap();
        let mut rng = Rng::new(9);
        let terms: Vec<Var> = kids
            .iter()
            .map(|&k| {
                let w = t.input((0..k.len()).map(|_| rng.uniform(-1.0, 1.0)).collect(), 1, k.cols());
                let p = t.mul(k, w).unwrap();
                t.sum(p).unwrap()
            })
            .collect();
        let l = t.add_all(&terms).unwrap();
        let g = t.backward(l).unwrap();
        (t.scalar(l), grad_buffers(m, &g))
    };
    check_model_gradients(&mut model, &["dec.child", "dec.w_s", "dec.b_s", "dec.embed"], &loss)
}

/// Teacher-forced loss of a 5-node gold tree against every parameter.
pub fn full_loss_error(seed: u64) -> (f64, usize) {
    let (mut model, ex) = scrambled_with_example(seed, 5);
    let loss = |m: &Model| {
        let mut acc = m.grad_buffer();
        let l = m.accumulate_loss(&ex, &mut Dropout::off(), &mut acc, 1.0).unwrap();
        (l, acc)
    };
    check_model_gradients(&mut model, &[], &loss)
}

/// Outcome counts of decoding random problems with untrained models.
#[derive(Debug, Default, PartialEq)]
pub struct Sweep {
    pub valid: usize,
    pub too_long: usize,
    /// Decodes that produced an invalid tree or raised anything else.
    pub violations: usize,
}

/// `models × per_model` decodes from freshly initialized toy models, half
/// greedy and half beam-3.
pub fn structural_sweep(models: u64, per_model: usize) -> Sweep {
    let mut s = Sweep::default();
    for seed in 0..models {
        let (model, inst) = toy_model(8, 16, seed);
        let mut rng = Rng::new(seed);
        for _ in 0..per_model {
            let ex = rng.choose(&inst).example(&model).unwrap();
            let width = if rng.bernoulli(0.5) { 1 } else { 3 };
            match model.decode(&ex.source, &ex.slot_positions, width) {
                Ok(d) => {
                    let kinds = model.tgt_vocab.kinds_of(&d.tokens);
                    let in_range = d
                        .tokens
                        .iter()
                        .all(|&t| t < model.tgt_vocab.static_len() + ex.slot_positions.len());
                    if in_range
                        && kinds_are_arity_valid(&kinds, &model.registry)
                        && OpTree::from_prefix_kinds(&kinds, &model.registry).is_ok()
                    {
                        s.valid += 1;
                    } else {
                        s.violations += 1;
                    }
                }
                Err(ModelError::Decode(
                    DecodeError::MaxNodesExceeded { .. } | DecodeError::NoHypothesisCompleted { .. },
                )) => s.too_long += 1,
                Err(_) => s.violations += 1,
            }
        }
    }
    s
}

/// Number of the first `n` random problems on which unit-width beam search
/// and greedy decoding emit the same tokens (or both fail).
pub fn beam_one_agreements(seed: u64, n: usize) -> usize {
    let (model, inst) = toy_model(8, 16, seed);
    let mut rng = Rng::new(seed + 1);
    (0..n)
        .filter(|_| {
            let ex = rng.choose(&inst).example(&model).unwrap();
            let g = model.decode(&ex.source, &ex.slot_positions, 1);
            let mut exp = model.expander(&ex.source, &ex.slot_positions).unwrap();
            match (g, beam(&mut exp, 1, model.config.max_nodes)) {
                (Ok(g), Ok(b)) => g.tokens == b.tokens,
                (Err(_), Err(_)) => true,
                _ => false,
            }
        })
        .count()
}
