//! Geometry knowledge graph and its GCN embedding.
//!
//! Nodes are shapes, per-shape quantities (`circle.radius`) and one detached
//! null node. Every formula argument is bound to a quantity node; the GCN
//! embedding of that node guides the prediction of the argument's subtree.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grad::{GradError, ParamId, ParamStore, Rng, Tape, Var};
use crate::optree::{FormulaRegistry, NodeKind};

pub const NULL_NODE: &str = "null";

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("node `{0}` defined twice")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("self-edge on node {0}")]
    SelfEdge(usize),
    #[error("graph must have exactly one null node, found {0}")]
    NullNodes(usize),
    #[error("null node must not have edges")]
    NullNodeLinked,
    #[error("no binding for argument {arg} of `{formula}`")]
    MissingBinding { formula: String, arg: usize },
    #[error("binding for unknown formula `{0}`")]
    UnknownFormula(String),
    #[error("KG I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("KG JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgNodeKind {
    Shape,
    Quantity,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgNode {
    pub name: String,
    pub kind: KgNodeKind,
}

/// Undirected graph with edges stored once as `(low, high)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KGraph {
    nodes: Vec<KgNode>,
    edges: BTreeSet<(usize, usize)>,
    index: HashMap<String, usize>,
}

impl KGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, kind: KgNodeKind) -> Result<usize, KgError> {
        if self.index.contains_key(name) {
            return Err(KgError::DuplicateNode(name.to_string()));
        }
        self.nodes.push(KgNode {
            name: name.to_string(),
            kind,
        });
        self.index.insert(name.to_string(), self.nodes.len() - 1);
        Ok(self.nodes.len() - 1)
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<(), KgError> {
        for n in [a, b] {
            if n >= self.nodes.len() {
                return Err(KgError::NodeOutOfRange(n));
            }
        }
        if a == b {
            return Err(KgError::SelfEdge(a));
        }
        self.edges.insert((a.min(b), a.max(b)));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[KgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|(a, b)| *a == node || *b == node).count()
    }

    /// Index of the null node.
    ///
    /// # Panics
    /// If the graph was built without one; [`KGraph::check`] rules this out.
    pub fn null_node(&self) -> usize {
        self.nodes
            .iter()
            .position(|n| n.kind == KgNodeKind::Null)
            .expect("graph has a null node")
    }

    pub fn check(&self) -> Result<(), KgError> {
        let nulls: Vec<usize> = (0..self.len())
            .filter(|&i| self.nodes[i].kind == KgNodeKind::Null)
            .collect();
        if nulls.len() != 1 {
            return Err(KgError::NullNodes(nulls.len()));
        }
        if self.degree(nulls[0]) != 0 {
            return Err(KgError::NullNodeLinked);
        }
        Ok(())
    }

    /// Row-major symmetric 0/1 adjacency without self-loops.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.len();
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        a
    }

    /// The graph with node `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> KGraph {
        let mut nodes = self.nodes.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = n.clone();
        }
        let index = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect();
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
            .collect();
        KGraph { nodes, edges, index }
    }
}

/// Which graph node each formula argument refers to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArgBinding {
    map: HashMap<(String, usize), usize>,
}

impl ArgBinding {
    pub fn insert(&mut self, formula: &str, arg: usize, node: usize) {
        self.map.insert((formula.to_string(), arg), node);
    }

    pub fn get(&self, formula: &str, arg: usize) -> Option<usize> {
        self.map.get(&(formula.to_string(), arg)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Node table indexed by formula id then argument; fails unless every
    /// argument of every registered formula is bound.
    pub fn resolve(&self, reg: &FormulaRegistry) -> Result<Vec<Vec<usize>>, KgError> {
        reg.iter()
            .map(|(_, def)| {
                (0..def.arity)
                    .map(|arg| {
                        self.get(&def.name, arg).ok_or_else(|| KgError::MissingBinding {
                            formula: def.name.clone(),
                            arg,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> ArgBinding {
        ArgBinding {
            map: self.map.iter().map(|(k, &v)| (k.clone(), perm[v])).collect(),
        }
    }
}

/// Shape nodes in order of first appearance in the registry, each linked as
/// a clique with the quantity nodes named by its formulas' argument labels.
pub fn build_default_kg(reg: &FormulaRegistry) -> (KGraph, ArgBinding) {
    let mut g = KGraph::new();
    let mut binding = ArgBinding::default();
    let mut members: Vec<(String, Vec<usize>)> = Vec::new();
    for (_, def) in reg.iter() {
        let k = match members.iter().position(|(s, _)| *s == def.shape) {
            Some(k) => k,
            None => {
                let id = g
                    .add_node(&def.shape, KgNodeKind::Shape)
                    .expect("shape names are unique");
                members.push((def.shape.clone(), vec![id]));
                members.len() - 1
            }
        };
        for (arg, label) in def.arg_labels.iter().enumerate() {
            let name = format!("{}.{}", def.shape, label);
            let id = match g.node_id(&name) {
                Some(id) => id,
                None => {
                    let id = g
                        .add_node(&name, KgNodeKind::Quantity)
                        .expect("checked above");
                    members[k].1.push(id);
                    id
                }
            };
            binding.insert(&def.name, arg, id);
        }
    }
    for (_, ids) in &members {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                g.add_edge(a, b).expect("distinct nodes");
            }
        }
    }
    g.add_node(NULL_NODE, KgNodeKind::Null)
        .expect("no shape is called null");
    (g, binding)
}

/// `D^-1/2 (A + I) D^-1/2` where `D` is the degree matrix of `A + I`.
pub fn normalize_adjacency(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "adjacency must be n × n");
    let mut m = a.to_vec();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / m[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    m
}

/// Learned node features and the two GCN layer weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnParams {
    pub x: ParamId,
    pub w0: ParamId,
    pub w1: ParamId,
}

impl GcnParams {
    pub fn new(store: &mut ParamStore, nodes: usize, dim: usize, rng: &mut Rng) -> Self {
        GcnParams {
            x: store.embedding("kg.x", nodes, dim, rng),
            w0: store.matrix("kg.w0", dim, dim, rng),
            w1: store.matrix("kg.w1", dim, dim, rng),
        }
    }
}

/// `Z = Â · relu(Â · X · W0) · W1`.
pub fn gcn_embed(
    tape: &mut Tape<'_>,
    params: &GcnParams,
    a_hat: &[f64],
    nodes: usize,
) -> Result<Var, GradError> {
    let x = tape.param(params.x);
    let w0 = tape.param(params.w0);
    let w1 = tape.param(params.w1);
    gcn_layers(tape, a_hat, nodes, x, w0, w1)
}

/// The propagation rule on explicit variables.
pub fn gcn_layers(
    tape: &mut Tape<'_>,
    a_hat: &[f64],
    nodes: usize,
    x: Var,
    w0: Var,
    w1: Var,
) -> Result<Var, GradError> {
    let a = tape.input(a_hat.to_vec(), nodes, nodes);
    let ax = tape.matmul(a, x)?;
    let h = tape.matmul(ax, w0)?;
    let h = tape.relu(h)?;
    let ah = tape.matmul(a, h)?;
    tape.matmul(ah, w1)
}

/// A graph together with its bindings and propagation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub graph: KGraph,
    pub binding: ArgBinding,
    a_hat: Vec<f64>,
}

impl KnowledgeGraph {
    pub fn new(graph: KGraph, binding: ArgBinding) -> Result<Self, KgError> {
        graph.check()?;
        let a_hat = normalize_adjacency(&graph.adjacency(), graph.len());
        Ok(KnowledgeGraph {
            graph,
            binding,
            a_hat,
        })
    }

    pub fn default_for(reg: &FormulaRegistry) -> Self {
        let (g, b) = build_default_kg(reg);
        Self::new(g, b).expect("default graph is well formed")
    }

    pub fn a_hat(&self) -> &[f64] {
        &self.a_hat
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }

    /// Node whose embedding is `z` for child `child` of `parent`: the bound
    /// quantity for formula arguments, the null node otherwise. `None` is the
    /// root.
    pub fn node_for_child(
        &self,
        reg: &FormulaRegistry,
        parent: Option<NodeKind>,
        child: usize,
    ) -> usize {
        match parent {
            Some(NodeKind::FormulaCall(id)) => self
                .binding
                .get(&reg.get(id).name, child)
                .unwrap_or_else(|| self.graph.null_node()),
            _ => self.graph.null_node(),
        }
    }

    pub fn to_file(&self, reg: &FormulaRegistry) -> KgFile {
        let mut bindings = Vec::new();
        for (_, def) in reg.iter() {
            for arg in 0..def.arity {
                if let Some(node) = self.binding.get(&def.name, arg) {
                    bindings.push(KgBindingEntry {
                        formula: def.name.clone(),
                        arg,
                        node: self.graph.nodes[node].name.clone(),
                    });
                }
            }
        }
        KgFile {
            nodes: self.graph.nodes.clone(),
            edges: self.graph.edges().map(|(a, b)| [a, b]).collect(),
            bindings,
        }
    }

    /// Rebuilds the graph; bindings must cover every formula of `reg`.
    pub fn from_file(file: &KgFile, reg: &FormulaRegistry) -> Result<Self, KgError> {
        let mut g = KGraph::new();
        for n in &file.nodes {
            g.add_node(&n.name, n.kind)?;
        }
        for &[a, b] in &file.edges {
            g.add_edge(a, b)?;
        }
        let mut binding = ArgBinding::default();
        for b in &file.bindings {
            if reg.id(&b.formula).is_none() {
                return Err(KgError::UnknownFormula(b.formula.clone()));
            }
            let node = g
                .node_id(&b.node)
                .ok_or_else(|| KgError::UnknownNode(b.node.clone()))?;
            binding.insert(&b.formula, b.arg, node);
        }
        binding.resolve(reg)?;
        Self::new(g, binding)
    }

    pub fn to_json(&self, reg: &FormulaRegistry) -> String {
        serde_json::to_string_pretty(&self.to_file(reg)).expect("plain data")
    }

    pub fn from_json(text: &str, reg: &FormulaRegistry) -> Result<Self, KgError> {
        Self::from_file(&serde_json::from_str(text)?, reg)
    }

    pub fn load(path: impl AsRef<Path>, reg: &FormulaRegistry) -> Result<Self, KgError> {
        Self::from_json(&std::fs::read_to_string(path)?, reg)
    }
}

/// On-disk form:
/// `{"nodes": [{"name", "kind"}], "edges": [[a, b]], "bindings": [{"formula", "arg", "node"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgFile {
    pub nodes: Vec<KgNode>,
    pub edges: Vec<[usize; 2]>,
    pub bindings: Vec<KgBindingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgBindingEntry {
    pub formula: String,
    pub arg: usize,
    pub node: String,
}
