//! Operation trees: expression trees whose internal nodes are either binary
//! arithmetic operators or calls to named formulas of fixed arity.
//!
//! Trees live in a flat arena. Every node records its [`NodeKind`] and the
//! ordered indices of its children; the number of children always equals the
//! node's arity (2 for operators, 0 for constants and number slots, the
//! registered arity for formula calls).
//!
//! ```
//! use s2g::optree::{FormulaRegistry, OpTree};
//!
//! let reg = FormulaRegistry::default_geometry();
//! let tree = OpTree::parse_infix("circle_area(5) - circle_area(3)", &reg).unwrap();
//! assert_eq!(tree.to_prefix(&reg).join(" "), "- circle_area 5 circle_area 3");
//! assert!((tree.evaluate(&reg, &[]).unwrap() - 50.24).abs() < 1e-9);
//! ```

mod eval;
mod parse;
mod registry;

pub use eval::EvalError;
pub use parse::{parse_token, ParseError};
pub use registry::{FormulaDef, FormulaId, FormulaRegistry, FormulaSpec, RegistryError};

use std::fmt;

/// The literal used for π throughout; gold answers are computed with it.
pub const PI_LITERAL: f64 = 3.14;

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl Operator {
    pub const ALL: [Operator; 5] = [
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Pow,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Operator::Add => "+",
            Operator::Sub => "-",
            Operator::Mul => "*",
            Operator::Div => "/",
            Operator::Pow => "^",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "+" => Some(Operator::Add),
            "-" => Some(Operator::Sub),
            "*" => Some(Operator::Mul),
            "/" => Some(Operator::Div),
            "^" => Some(Operator::Pow),
            _ => None,
        }
    }

    /// Binding strength: `^` > `* /` > `+ -`.
    pub fn precedence(self) -> u8 {
        match self {
            Operator::Add | Operator::Sub => 1,
            Operator::Mul | Operator::Div => 2,
            Operator::Pow => 3,
        }
    }

    pub fn is_right_assoc(self) -> bool {
        matches!(self, Operator::Pow)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// What a tree node is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Operator(Operator),
    Constant(f64),
    /// The i-th number occurring in the problem text, written `<Ni>`.
    NumberSlot(usize),
    FormulaCall(FormulaId),
}

impl NodeKind {
    /// Number of children this node must have.
    pub fn arity(&self, reg: &FormulaRegistry) -> usize {
        match self {
            NodeKind::Operator(_) => 2,
            NodeKind::Constant(_) | NodeKind::NumberSlot(_) => 0,
            NodeKind::FormulaCall(id) => reg.get(*id).arity,
        }
    }

    /// The token this node is written as in prefix notation.
    pub fn token(&self, reg: &FormulaRegistry) -> String {
        match self {
            NodeKind::Operator(op) => op.symbol().to_string(),
            NodeKind::Constant(v) => format_number(*v),
            NodeKind::NumberSlot(i) => slot_token(*i),
            NodeKind::FormulaCall(id) => reg.get(*id).name.clone(),
        }
    }
}

/// `<Ni>`
pub fn slot_token(index: usize) -> String {
    format!("<N{index}>")
}

/// Shortest decimal form that reads back to the same value (`5`, `3.14`).
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Structural problems found when assembling a tree from raw parts.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructureError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node {node} refers to missing child {child}")]
    DanglingChild { node: usize, child: usize },
    #[error("node {0} has more than one parent")]
    SharedChild(usize),
    #[error("node {0} is unreachable from the root")]
    Unreachable(usize),
    #[error("root node {0} has a parent")]
    RootHasParent(usize),
    #[error("node {node} has {got} children but arity {expected}")]
    ArityMismatch {
        node: usize,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    kind: NodeKind,
    children: Vec<usize>,
}

/// An arity-valid operation tree.
///
/// Equality is structural: two trees are equal when their pre-order node
/// sequences match, regardless of arena layout.
#[derive(Debug, Clone)]
pub struct OpTree {
    nodes: Vec<Node>,
    root: usize,
}

impl OpTree {
    pub fn constant(value: f64) -> Self {
        Self::single(NodeKind::Constant(value))
    }

    pub fn slot(index: usize) -> Self {
        Self::single(NodeKind::NumberSlot(index))
    }

    fn single(kind: NodeKind) -> Self {
        OpTree {
            nodes: vec![Node {
                kind,
                children: Vec::new(),
            }],
            root: 0,
        }
    }

    pub fn operator(op: Operator, lhs: OpTree, rhs: OpTree) -> Self {
        let mut nodes = Vec::with_capacity(lhs.len() + rhs.len() + 1);
        let l = graft(&mut nodes, &lhs, lhs.root);
        let r = graft(&mut nodes, &rhs, rhs.root);
        nodes.push(Node {
            kind: NodeKind::Operator(op),
            children: vec![l, r],
        });
        let root = nodes.len() - 1;
        OpTree { nodes, root }
    }

    /// A formula call over `args`; fails if the argument count is wrong.
    pub fn call(
        reg: &FormulaRegistry,
        formula: FormulaId,
        args: Vec<OpTree>,
    ) -> Result<Self, StructureError> {
        let expected = reg.get(formula).arity;
        let mut nodes = Vec::new();
        let children: Vec<usize> = args
            .iter()
            .map(|a| graft(&mut nodes, a, a.root))
            .collect();
        nodes.push(Node {
            kind: NodeKind::FormulaCall(formula),
            children,
        });
        let root = nodes.len() - 1;
        if args.len() != expected {
            return Err(StructureError::ArityMismatch {
                node: root,
                expected,
                got: args.len(),
            });
        }
        Ok(OpTree { nodes, root })
    }

    /// Assembles a tree from an explicit arena, checking single-root,
    /// single-parent, reachability and arity.
    pub fn from_parts(
        parts: Vec<(NodeKind, Vec<usize>)>,
        root: usize,
        reg: &FormulaRegistry,
    ) -> Result<Self, StructureError> {
        if parts.is_empty() {
            return Err(StructureError::Empty);
        }
        let n = parts.len();
        if root >= n {
            return Err(StructureError::DanglingChild {
                node: root,
                child: root,
            });
        }
        let mut parent = vec![None; n];
        for (i, (kind, children)) in parts.iter().enumerate() {
            let expected = kind.arity(reg);
            if children.len() != expected {
                return Err(StructureError::ArityMismatch {
                    node: i,
                    expected,
                    got: children.len(),
                });
            }
            for &c in children {
                if c >= n {
                    return Err(StructureError::DanglingChild { node: i, child: c });
                }
                if parent[c].replace(i).is_some() {
                    return Err(StructureError::SharedChild(c));
                }
            }
        }
        if parent[root].is_some() {
            return Err(StructureError::RootHasParent(root));
        }
        // With single parents and a parentless root, a walk from the root
        // reaches every node iff there are no cycles and no extra roots.
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            seen[i] = true;
            stack.extend(parts[i].1.iter().copied());
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(StructureError::Unreachable(i));
        }
        let nodes = parts
            .into_iter()
            .map(|(kind, children)| Node { kind, children })
            .collect();
        Ok(OpTree { nodes, root })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Node count.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.nodes[node].kind
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.nodes[node].children
    }

    /// Node indices in pre-order (parent before children, left to right).
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            out.push(i);
            stack.extend(self.nodes[i].children.iter().rev().copied());
        }
        out
    }

    /// Node kinds in pre-order; together with arities this determines the tree.
    pub fn prefix_kinds(&self) -> Vec<NodeKind> {
        self.preorder().into_iter().map(|i| self.nodes[i].kind).collect()
    }

    /// Prefix-notation tokens.
    pub fn to_prefix(&self, reg: &FormulaRegistry) -> Vec<String> {
        self.preorder()
            .into_iter()
            .map(|i| self.nodes[i].kind.token(reg))
            .collect()
    }

    /// The subtree rooted at `node`, as its own tree.
    pub fn subtree(&self, node: usize) -> OpTree {
        let mut nodes = Vec::new();
        let root = graft(&mut nodes, self, node);
        OpTree { nodes, root }
    }

    /// Whether any node is a formula call.
    pub fn has_formula(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.kind, NodeKind::FormulaCall(_)))
    }

    /// Distinct number-slot indices referenced, ascending.
    pub fn slots(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::NumberSlot(i) => Some(i),
                _ => None,
            })
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Replaces every node kind through `f`, keeping the shape. `f` must
    /// preserve arity.
    pub fn map_kinds(&self, mut f: impl FnMut(NodeKind) -> NodeKind) -> OpTree {
        OpTree {
            nodes: self
                .nodes
                .iter()
                .map(|n| Node {
                    kind: f(n.kind),
                    children: n.children.clone(),
                })
                .collect(),
            root: self.root,
        }
    }

    /// Multi-line rendering, one node per line, children indented beneath
    /// their parent. Slot values are shown next to slot tokens when given.
    pub fn render(&self, reg: &FormulaRegistry, slot_values: Option<&[f64]>) -> String {
        let mut out = String::new();
        self.render_node(reg, slot_values, self.root, "", "", &mut out);
        out
    }

    fn render_node(
        &self,
        reg: &FormulaRegistry,
        slot_values: Option<&[f64]>,
        node: usize,
        lead: &str,
        rest: &str,
        out: &mut String,
    ) {
        let kind = self.nodes[node].kind;
        out.push_str(lead);
        out.push_str(&kind.token(reg));
        if let (NodeKind::NumberSlot(i), Some(vals)) = (kind, slot_values) {
            if let Some(v) = vals.get(i) {
                out.push_str(&format!(" ({})", format_number(*v)));
            }
        }
        out.push('\n');
        let children = &self.nodes[node].children;
        for (k, &c) in children.iter().enumerate() {
            let last = k + 1 == children.len();
            let (branch, cont) = if last {
                ("└── ", "    ")
            } else {
                ("├── ", "│   ")
            };
            self.render_node(
                reg,
                slot_values,
                c,
                &format!("{rest}{branch}"),
                &format!("{rest}{cont}"),
                out,
            );
        }
    }
}

impl PartialEq for OpTree {
    fn eq(&self, other: &Self) -> bool {
        if self.len() != other.len() {
            return false;
        }
        self.preorder()
            .into_iter()
            .zip(other.preorder())
            .all(|(a, b)| {
                let (na, nb) = (&self.nodes[a], &other.nodes[b]);
                na.kind == nb.kind && na.children.len() == nb.children.len()
            })
    }
}

/// Copies the subtree of `src` rooted at `node` into `dst`, returning the new
/// index of its root. Children precede their parent in `dst`.
fn graft(dst: &mut Vec<Node>, src: &OpTree, node: usize) -> usize {
    let children = src.nodes[node]
        .children
        .iter()
        .map(|&c| graft(dst, src, c))
        .collect();
    dst.push(Node {
        kind: src.nodes[node].kind,
        children,
    });
    dst.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> FormulaRegistry {
        FormulaRegistry::default_geometry()
    }

    #[test]
    fn builders_are_arity_checked() {
        let reg = reg();
        let area = reg.id("rectangle_area").unwrap();
        let err = OpTree::call(&reg, area, vec![OpTree::slot(0)]).unwrap_err();
        assert!(matches!(
            err,
            StructureError::ArityMismatch {
                expected: 2,
                got: 1,
                ..
            }
        ));
        let ok = OpTree::call(&reg, area, vec![OpTree::slot(0), OpTree::slot(1)]).unwrap();
        assert_eq!(ok.len(), 3);
    }

    #[test]
    fn from_parts_rejects_bad_shapes() {
        let reg = reg();
        let plus = NodeKind::Operator(Operator::Add);
        let one = NodeKind::Constant(1.0);
        // shared child
        let err = OpTree::from_parts(vec![(plus, vec![1, 1]), (one, vec![])], 0, &reg).unwrap_err();
        assert_eq!(err, StructureError::SharedChild(1));
        // cycle: 0 -> 1 -> 0
        let err = OpTree::from_parts(
            vec![(plus, vec![1, 2]), (plus, vec![0, 3]), (one, vec![]), (one, vec![])],
            0,
            &reg,
        )
        .unwrap_err();
        assert_eq!(err, StructureError::RootHasParent(0));
        // second root
        let err = OpTree::from_parts(vec![(one, vec![]), (one, vec![])], 0, &reg).unwrap_err();
        assert_eq!(err, StructureError::Unreachable(1));
        // arity
        let err = OpTree::from_parts(vec![(plus, vec![])], 0, &reg).unwrap_err();
        assert!(matches!(err, StructureError::ArityMismatch { .. }));
    }

    #[test]
    fn equality_ignores_arena_layout() {
        let reg = reg();
        let a = OpTree::operator(Operator::Sub, OpTree::constant(5.0), OpTree::slot(0));
        let b = OpTree::from_parts(
            vec![
                (NodeKind::NumberSlot(0), vec![]),
                (NodeKind::Operator(Operator::Sub), vec![2, 0]),
                (NodeKind::Constant(5.0), vec![]),
            ],
            1,
            &reg,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = OpTree::operator(Operator::Sub, OpTree::slot(0), OpTree::constant(5.0));
        assert_ne!(a, c);
    }

    #[test]
    fn render_marks_slots() {
        let reg = reg();
        let t = OpTree::parse_infix("circle_area(<N0>) - circle_area(<N1>)", &reg).unwrap();
        let text = t.render(&reg, Some(&[5.0, 3.0]));
        assert_eq!(
            text,
            "-\n├── circle_area\n│   └── <N0> (5)\n└── circle_area\n    └── <N1> (3)\n"
        );
    }

    #[test]
    fn slots_are_sorted_and_unique() {
        let reg = reg();
        let t = OpTree::parse_infix("<N2> * <N0> + <N2>", &reg).unwrap();
        assert_eq!(t.slots(), vec![0, 2]);
    }
}
