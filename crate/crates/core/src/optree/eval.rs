use super::{format_number, graft, slot_token, FormulaRegistry, Node, NodeKind, OpTree, Operator};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("number slot <N{0}> has no value")]
    MissingSlot(usize),
    #[error("result is not a finite number")]
    NonFiniteResult,
}

fn apply(op: Operator, a: f64, b: f64) -> Result<f64, EvalError> {
    let v = match op {
        Operator::Add => a + b,
        Operator::Sub => a - b,
        Operator::Mul => a * b,
        Operator::Div => {
            if b == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            a / b
        }
        Operator::Pow => a.powf(b),
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFiniteResult)
    }
}

impl OpTree {
    /// Executes the tree. `numbers[i]` is the value of slot `<Ni>`; formula
    /// calls evaluate their body with the argument values bound.
    pub fn evaluate(&self, reg: &FormulaRegistry, numbers: &[f64]) -> Result<f64, EvalError> {
        let mut values = vec![0.0; self.nodes.len()];
        // Reverse pre-order visits every child before its parent.
        for &i in self.preorder().iter().rev() {
            let node = &self.nodes[i];
            values[i] = match node.kind {
                NodeKind::Constant(v) => v,
                NodeKind::NumberSlot(s) => *numbers.get(s).ok_or(EvalError::MissingSlot(s))?,
                NodeKind::Operator(op) => {
                    apply(op, values[node.children[0]], values[node.children[1]])?
                }
                NodeKind::FormulaCall(id) => {
                    let args: Vec<f64> = node.children.iter().map(|&c| values[c]).collect();
                    reg.get(id).body.evaluate(reg, &args)?
                }
            };
            if !values[i].is_finite() {
                return Err(EvalError::NonFiniteResult);
            }
        }
        Ok(values[self.root])
    }

    /// The equivalent binary expression tree: every formula call is replaced
    /// by its body with the argument subtrees substituted in.
    pub fn expand_formulas(&self, reg: &FormulaRegistry) -> OpTree {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let root = self.expand_into(reg, self.root, &mut nodes);
        OpTree { nodes, root }
    }

    fn expand_into(&self, reg: &FormulaRegistry, node: usize, out: &mut Vec<Node>) -> usize {
        let n = &self.nodes[node];
        match n.kind {
            NodeKind::FormulaCall(id) => {
                let args: Vec<OpTree> = n
                    .children
                    .iter()
                    .map(|&c| {
                        let mut sub = Vec::new();
                        let root = self.expand_into(reg, c, &mut sub);
                        OpTree { nodes: sub, root }
                    })
                    .collect();
                let body = &reg.get(id).body;
                substitute(body, body.root, &args, out)
            }
            kind => {
                let children = n
                    .children
                    .iter()
                    .map(|&c| self.expand_into(reg, c, out))
                    .collect();
                out.push(Node { kind, children });
                out.len() - 1
            }
        }
    }

    /// Infix text with the fewest parentheses that preserve the structure.
    pub fn to_infix(&self, reg: &FormulaRegistry) -> String {
        self.to_infix_with(reg, &slot_token)
    }

    /// Like [`OpTree::to_infix`] with a custom spelling for number slots.
    pub fn to_infix_with(&self, reg: &FormulaRegistry, slot_name: &dyn Fn(usize) -> String) -> String {
        let mut out = String::new();
        self.write_infix(reg, slot_name, self.root, &mut out);
        out
    }

    fn write_infix(
        &self,
        reg: &FormulaRegistry,
        slot_name: &dyn Fn(usize) -> String,
        node: usize,
        out: &mut String,
    ) {
        let n = &self.nodes[node];
        match n.kind {
            NodeKind::Constant(v) => out.push_str(&format_number(v)),
            NodeKind::NumberSlot(i) => out.push_str(&slot_name(i)),
            NodeKind::FormulaCall(id) => {
                out.push_str(&reg.get(id).name);
                out.push('(');
                for (k, &c) in n.children.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    self.write_infix(reg, slot_name, c, out);
                }
                out.push(')');
            }
            NodeKind::Operator(op) => {
                let (l, r) = (n.children[0], n.children[1]);
                let wrap_l = self.needs_parens(l, op, !op.is_right_assoc());
                let wrap_r = self.needs_parens(r, op, op.is_right_assoc());
                self.write_operand(reg, slot_name, l, wrap_l, out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                self.write_operand(reg, slot_name, r, wrap_r, out);
            }
        }
    }

    fn write_operand(
        &self,
        reg: &FormulaRegistry,
        slot_name: &dyn Fn(usize) -> String,
        node: usize,
        wrap: bool,
        out: &mut String,
    ) {
        // Negative literals read as unary minus, so they get parentheses
        // whenever they are an operand.
        let negative = matches!(self.nodes[node].kind, NodeKind::Constant(v) if v < 0.0);
        if wrap || negative {
            out.push('(');
            self.write_infix(reg, slot_name, node, out);
            out.push(')');
        } else {
            self.write_infix(reg, slot_name, node, out);
        }
    }

    /// Whether child `node` of `parent` must be parenthesized. `same_ok` is
    /// true on the side where equal precedence associates naturally.
    fn needs_parens(&self, node: usize, parent: Operator, same_ok: bool) -> bool {
        match self.nodes[node].kind {
            NodeKind::Operator(op) => {
                op.precedence() < parent.precedence()
                    || (op.precedence() == parent.precedence() && !same_ok)
            }
            _ => false,
        }
    }
}

/// Copies `body` into `out`, replacing argument slot `i` by a fresh copy of
/// `args[i]`.
fn substitute(body: &OpTree, node: usize, args: &[OpTree], out: &mut Vec<Node>) -> usize {
    let n = &body.nodes[node];
    match n.kind {
        NodeKind::NumberSlot(i) => graft(out, &args[i], args[i].root),
        kind => {
            let children = n
                .children
                .iter()
                .map(|&c| substitute(body, c, args, out))
                .collect();
            out.push(Node { kind, children });
            out.len() - 1
        }
    }
}
