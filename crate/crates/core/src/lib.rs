//! Math word problem solving with operation trees.
//!
//! A problem's text is encoded with a bidirectional GRU, and a tree decoder
//! emits an expression whose internal nodes are arithmetic operators or
//! named formulas of fixed arity. Formula arguments are informed by a small
//! knowledge graph of shapes and quantities.
//!
//! ```
//! use s2g::optree::{FormulaRegistry, OpTree};
//!
//! let reg = FormulaRegistry::default_geometry();
//! let t = OpTree::parse_infix("rectangle_area(<N0>, <N1>)", &reg).unwrap();
//! assert_eq!(t.evaluate(&reg, &[3.0, 4.0]).unwrap(), 12.0);
//! ```

pub mod config;
pub mod data;
pub mod grad;
pub mod kg;
pub mod model;
pub mod optree;
pub mod vocab;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/operation-trees.md")]
    mod operation_trees {}
    #[doc = include_str!("../../../book/src/formulas.md")]
    mod formulas {}
    #[doc = include_str!("../../../book/src/vocab.md")]
    mod vocab {}
    #[doc = include_str!("../../../book/src/tape.md")]
    mod tape {}
    #[doc = include_str!("../../../book/src/knowledge-graph.md")]
    mod knowledge_graph {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/decoding.md")]
    mod decoding {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/files-and-cli.md")]
    mod files_and_cli {}
}
