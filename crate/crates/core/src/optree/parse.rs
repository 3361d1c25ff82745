//! Infix parsing (shunting-yard, with formula calls) and prefix realization.

use super::{FormulaRegistry, Node, NodeKind, OpTree, Operator, PI_LITERAL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown formula `{0}`")]
    UnknownFormula(String),
    #[error("unknown name `{name}` at {position}")]
    UnknownName { name: String, position: usize },
    #[error("formula `{name}` takes {expected} arguments, got {got}")]
    WrongArgCount {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("prefix sequence ended with {open} children still missing")]
    IncompleteTree { open: usize },
    #[error("tree is complete at token {position} but more tokens follow")]
    TrailingTokens { position: usize },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
}

fn syntax(position: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        position,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Number(f64),
    Slot(usize),
    Ident(String),
    Op(Operator),
    LParen,
    RParen,
    Comma,
}

/// Splits `text` into lexemes tagged with their character offset.
fn lex(text: &str) -> Result<Vec<(usize, Lexeme)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let (value, next) = lex_number(&chars, i).ok_or_else(|| syntax(i, "bad number"))?;
            out.push((start, Lexeme::Number(value)));
            i = next;
            continue;
        }
        if c == '<' {
            let close = chars[i..]
                .iter()
                .position(|&d| d == '>')
                .ok_or_else(|| syntax(i, "unterminated slot token"))?;
            let inner: String = chars[i + 1..i + close].iter().collect();
            let idx = inner
                .strip_prefix('N')
                .and_then(|d| d.parse::<usize>().ok())
                .ok_or_else(|| syntax(i, format!("bad slot token `<{inner}>`")))?;
            out.push((start, Lexeme::Slot(idx)));
            i += close + 1;
            continue;
        }
        if c.is_alphabetic() || c == '_' || c == 'π' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            j = j.max(i + 1);
            out.push((start, Lexeme::Ident(chars[i..j].iter().collect())));
            i = j;
            continue;
        }
        let lexeme = match c {
            '(' => Lexeme::LParen,
            ')' => Lexeme::RParen,
            ',' => Lexeme::Comma,
            _ => match Operator::from_symbol(c.encode_utf8(&mut [0; 4])) {
                Some(op) => Lexeme::Op(op),
                None => return Err(syntax(i, format!("unexpected character `{c}`"))),
            },
        };
        out.push((start, lexeme));
        i += 1;
    }
    Ok(out)
}

/// `digits[.digits][%]`; returns the value and the index after the literal.
fn lex_number(chars: &[char], mut i: usize) -> Option<(f64, usize)> {
    let start = i;
    while i < chars.len() && chars[i].is_ascii_digit() {
        i += 1;
    }
    if i < chars.len() && chars[i] == '.' {
        i += 1;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
    }
    let text: String = chars[start..i].iter().collect();
    let mut value: f64 = text.parse().ok()?;
    if i < chars.len() && chars[i] == '%' {
        value /= 100.0;
        i += 1;
    }
    Some((value, i))
}

enum Pending {
    Op(Operator, usize),
    Paren(usize),
    Call {
        name: String,
        position: usize,
        commas: usize,
    },
}

struct Builder<'r> {
    reg: &'r FormulaRegistry,
    nodes: Vec<Node>,
    output: Vec<usize>,
}

impl Builder<'_> {
    fn leaf(&mut self, kind: NodeKind) {
        self.nodes.push(Node {
            kind,
            children: Vec::new(),
        });
        self.output.push(self.nodes.len() - 1);
    }

    fn reduce_op(&mut self, op: Operator, position: usize) -> Result<(), ParseError> {
        let (Some(rhs), Some(lhs)) = (self.output.pop(), self.output.pop()) else {
            return Err(syntax(position, format!("operator `{op}` is missing an operand")));
        };
        self.nodes.push(Node {
            kind: NodeKind::Operator(op),
            children: vec![lhs, rhs],
        });
        self.output.push(self.nodes.len() - 1);
        Ok(())
    }

    fn reduce_call(&mut self, name: &str, args: usize) -> Result<(), ParseError> {
        let id = self
            .reg
            .id(name)
            .ok_or_else(|| ParseError::UnknownFormula(name.to_string()))?;
        let expected = self.reg.get(id).arity;
        if expected != args {
            return Err(ParseError::WrongArgCount {
                name: name.to_string(),
                expected,
                got: args,
            });
        }
        let children = self.output.split_off(self.output.len() - args);
        self.nodes.push(Node {
            kind: NodeKind::FormulaCall(id),
            children,
        });
        self.output.push(self.nodes.len() - 1);
        Ok(())
    }
}

/// Parses an infix expression. Identifiers followed by `(` are formula calls
/// looked up in `reg`; bare identifiers are resolved against `args` (argument
/// `i` becomes number slot `i`) or `pi`/`π`.
pub(crate) fn parse_expression(
    text: &str,
    reg: &FormulaRegistry,
    args: &[String],
) -> Result<OpTree, ParseError> {
    let lexemes = lex(text)?;
    let end = text.chars().count();
    let mut b = Builder {
        reg,
        nodes: Vec::new(),
        output: Vec::new(),
    };
    let mut stack: Vec<Pending> = Vec::new();
    let mut expect_operand = true;
    let mut k = 0;
    while k < lexemes.len() {
        let (pos, lexeme) = &lexemes[k];
        let pos = *pos;
        match lexeme {
            Lexeme::Number(_) | Lexeme::Slot(_) | Lexeme::Ident(_) if !expect_operand => {
                return Err(syntax(pos, "expected an operator"));
            }
            Lexeme::Number(v) => {
                b.leaf(NodeKind::Constant(*v));
                expect_operand = false;
            }
            Lexeme::Slot(i) => {
                b.leaf(NodeKind::NumberSlot(*i));
                expect_operand = false;
            }
            Lexeme::Ident(name) => {
                if matches!(lexemes.get(k + 1), Some((_, Lexeme::LParen))) {
                    if reg.id(name).is_none() {
                        return Err(ParseError::UnknownFormula(name.clone()));
                    }
                    stack.push(Pending::Call {
                        name: name.clone(),
                        position: pos,
                        commas: 0,
                    });
                    k += 1;
                    // `f()` closes immediately with zero arguments.
                    if matches!(lexemes.get(k + 1), Some((_, Lexeme::RParen))) {
                        stack.pop();
                        return Err(ParseError::WrongArgCount {
                            name: name.clone(),
                            expected: reg.by_name(name).map_or(0, |d| d.arity),
                            got: 0,
                        });
                    }
                    expect_operand = true;
                } else if let Some(i) = args.iter().position(|a| a == name) {
                    b.leaf(NodeKind::NumberSlot(i));
                    expect_operand = false;
                } else if name == "pi" || name == "PI" || name == "π" {
                    b.leaf(NodeKind::Constant(PI_LITERAL));
                    expect_operand = false;
                } else {
                    return Err(ParseError::UnknownName {
                        name: name.clone(),
                        position: pos,
                    });
                }
            }
            Lexeme::Op(Operator::Sub) if expect_operand => {
                // Negative literal.
                match lexemes.get(k + 1) {
                    Some((p, Lexeme::Number(v))) if *p == pos + 1 => {
                        b.leaf(NodeKind::Constant(-v));
                        expect_operand = false;
                        k += 1;
                    }
                    _ => return Err(syntax(pos, "unary minus is only allowed on numbers")),
                }
            }
            Lexeme::Op(op) => {
                if expect_operand {
                    return Err(syntax(pos, format!("operator `{op}` is missing its left operand")));
                }
                while let Some(Pending::Op(top, top_pos)) = stack.last() {
                    let (top, top_pos) = (*top, *top_pos);
                    let binds_tighter = top.precedence() > op.precedence()
                        || (top.precedence() == op.precedence() && !op.is_right_assoc());
                    if !binds_tighter {
                        break;
                    }
                    stack.pop();
                    b.reduce_op(top, top_pos)?;
                }
                stack.push(Pending::Op(*op, pos));
                expect_operand = true;
            }
            Lexeme::LParen => {
                if !expect_operand {
                    return Err(syntax(pos, "unexpected `(`"));
                }
                stack.push(Pending::Paren(pos));
            }
            Lexeme::Comma => {
                if expect_operand {
                    return Err(syntax(pos, "missing argument before `,`"));
                }
                loop {
                    match stack.last_mut() {
                        Some(Pending::Op(..)) => {
                            if let Some(Pending::Op(op, p)) = stack.pop() {
                                b.reduce_op(op, p)?;
                            }
                        }
                        Some(Pending::Call { commas, .. }) => {
                            *commas += 1;
                            break;
                        }
                        _ => return Err(syntax(pos, "`,` outside of a formula call")),
                    }
                }
                expect_operand = true;
            }
            Lexeme::RParen => {
                if expect_operand {
                    return Err(syntax(pos, "missing operand before `)`"));
                }
                loop {
                    match stack.pop() {
                        Some(Pending::Op(op, p)) => b.reduce_op(op, p)?,
                        Some(Pending::Paren(_)) => break,
                        Some(Pending::Call { name, commas, .. }) => {
                            b.reduce_call(&name, commas + 1)?;
                            break;
                        }
                        None => return Err(syntax(pos, "unmatched `)`")),
                    }
                }
                expect_operand = false;
            }
        }
        k += 1;
    }
    if expect_operand {
        return Err(syntax(end, "unexpected end of expression"));
    }
    while let Some(p) = stack.pop() {
        match p {
            Pending::Op(op, pos) => b.reduce_op(op, pos)?,
            Pending::Paren(pos) => return Err(syntax(pos, "unclosed `(`")),
            Pending::Call { position, .. } => return Err(syntax(position, "unclosed call")),
        }
    }
    match b.output.as_slice() {
        [root] => Ok(OpTree {
            root: *root,
            nodes: b.nodes,
        }),
        _ => Err(syntax(end, "malformed expression")),
    }
}

/// Reads one prefix token: an operator symbol, a numeric literal (with
/// optional `%`), a slot token `<Ni>`, or a registered formula name.
pub fn parse_token(token: &str, reg: &FormulaRegistry) -> Result<NodeKind, ParseError> {
    if let Some(op) = Operator::from_symbol(token) {
        return Ok(NodeKind::Operator(op));
    }
    if let Some(id) = reg.id(token) {
        return Ok(NodeKind::FormulaCall(id));
    }
    if let Some(idx) = token
        .strip_prefix("<N")
        .and_then(|t| t.strip_suffix('>'))
        .and_then(|d| d.parse::<usize>().ok())
    {
        return Ok(NodeKind::NumberSlot(idx));
    }
    if token == "pi" || token == "π" {
        return Ok(NodeKind::Constant(PI_LITERAL));
    }
    let (negative, digits) = match token.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, token),
    };
    let chars: Vec<char> = digits.chars().collect();
    if chars.first().is_some_and(|c| c.is_ascii_digit() || *c == '.') {
        if let Some((v, used)) = lex_number(&chars, 0) {
            if used == chars.len() {
                return Ok(NodeKind::Constant(if negative { -v } else { v }));
            }
        }
    }
    Err(ParseError::UnknownToken(token.to_string()))
}

impl OpTree {
    /// Parses an infix equation such as `circle_area(5) - circle_area(3)`.
    ///
    /// Precedence is `^` over `* /` over `+ -`; `^` associates to the right,
    /// the others to the left.
    pub fn parse_infix(text: &str, reg: &FormulaRegistry) -> Result<OpTree, ParseError> {
        parse_expression(text, reg, &[])
    }

    /// Rebuilds the unique tree whose pre-order token sequence is `tokens`,
    /// using arities to decide where each subtree ends.
    pub fn from_prefix<S: AsRef<str>>(
        tokens: &[S],
        reg: &FormulaRegistry,
    ) -> Result<OpTree, ParseError> {
        let kinds = tokens
            .iter()
            .map(|t| parse_token(t.as_ref(), reg))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_prefix_kinds(&kinds, reg)
    }

    pub fn from_prefix_kinds(
        kinds: &[NodeKind],
        reg: &FormulaRegistry,
    ) -> Result<OpTree, ParseError> {
        let mut nodes: Vec<Node> = Vec::with_capacity(kinds.len());
        // (node, children still to attach)
        let mut open: Vec<(usize, usize)> = Vec::new();
        for (pos, &kind) in kinds.iter().enumerate() {
            if pos > 0 && open.is_empty() {
                return Err(ParseError::TrailingTokens { position: pos });
            }
            let id = nodes.len();
            nodes.push(Node {
                kind,
                children: Vec::new(),
            });
            if let Some((parent, remaining)) = open.last_mut() {
                nodes[*parent].children.push(id);
                *remaining -= 1;
            }
            while matches!(open.last(), Some((_, 0))) {
                open.pop();
            }
            let arity = kind.arity(reg);
            if arity > 0 {
                open.push((id, arity));
            }
        }
        if nodes.is_empty() {
            return Err(ParseError::IncompleteTree { open: 1 });
        }
        if !open.is_empty() {
            let missing = open.iter().map(|(_, r)| r).sum();
            return Err(ParseError::IncompleteTree { open: missing });
        }
        Ok(OpTree { nodes, root: 0 })
    }
}
