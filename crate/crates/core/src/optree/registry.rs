use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse::{parse_expression, ParseError};
use super::{NodeKind, OpTree};

/// Handle to a registered formula. Handles are dense, in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FormulaId(pub(crate) usize);

impl FormulaId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named closed-form formula such as `circle_area(radius)`.
///
/// The body is itself an operation tree in which argument `i` appears as
/// number slot `i`, so evaluating the body against the argument values (or
/// substituting argument subtrees for those slots) is all a call needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaDef {
    pub name: String,
    pub arity: usize,
    pub arg_labels: Vec<String>,
    pub body: OpTree,
    /// The shape the formula belongs to (e.g. `circle` for `circumference_d`).
    pub shape: String,
}

impl FormulaDef {
    /// Parses `body` with the argument labels as variable names. The shape
    /// defaults to the part of the name before the first underscore.
    pub fn parse(
        name: &str,
        arity: usize,
        arg_labels: &[&str],
        body: &str,
    ) -> Result<Self, RegistryError> {
        let labels: Vec<String> = arg_labels.iter().map(|s| s.to_string()).collect();
        let body = parse_expression(body, &FormulaRegistry::new(), &labels).map_err(|source| {
            RegistryError::Body {
                name: name.to_string(),
                source,
            }
        })?;
        Ok(FormulaDef {
            name: name.to_string(),
            arity,
            arg_labels: labels,
            body,
            shape: default_shape(name),
        })
    }

    pub fn with_shape(mut self, shape: &str) -> Self {
        self.shape = shape.to_string();
        self
    }

    fn check(&self) -> Result<(), RegistryError> {
        if self.arity == 0 || self.arg_labels.len() != self.arity {
            return Err(RegistryError::ArityLabelMismatch {
                name: self.name.clone(),
                arity: self.arity,
                labels: self.arg_labels.len(),
            });
        }
        let used = self.body.slots();
        if used != (0..self.arity).collect::<Vec<_>>() {
            return Err(RegistryError::ArityLabelMismatch {
                name: self.name.clone(),
                arity: self.arity,
                labels: used.len(),
            });
        }
        if self.body.has_formula() {
            return Err(RegistryError::Body {
                name: self.name.clone(),
                source: ParseError::UnknownFormula("nested formula call".into()),
            });
        }
        Ok(())
    }
}

fn default_shape(name: &str) -> String {
    name.split('_').next().unwrap_or(name).to_string()
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("formula `{0}` is already registered")]
    DuplicateName(String),
    #[error("formula `{name}` declares arity {arity} but has {labels} argument labels or body references")]
    ArityLabelMismatch {
        name: String,
        arity: usize,
        labels: usize,
    },
    #[error("formula `{name}` has an invalid body: {source}")]
    Body {
        name: String,
        #[source]
        source: ParseError,
    },
    #[error("cannot read formula file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed formula file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One entry of a formula JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaSpec {
    pub name: String,
    pub arity: usize,
    pub args: Vec<String>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
}

const DEFAULT_FORMULAS: &str = include_str!("../../data/formulas.json");

/// Formulas by name, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FormulaRegistry {
    defs: Vec<FormulaDef>,
    by_name: HashMap<String, FormulaId>,
}

impl FormulaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The eleven geometry formulas covering squares, cubes, circles,
    /// triangles, rectangles and cuboids.
    pub fn default_geometry() -> Self {
        Self::from_json(DEFAULT_FORMULAS).expect("bundled formula file is valid")
    }

    pub fn register(&mut self, def: FormulaDef) -> Result<FormulaId, RegistryError> {
        if self.by_name.contains_key(&def.name) {
            return Err(RegistryError::DuplicateName(def.name));
        }
        def.check()?;
        let id = FormulaId(self.defs.len());
        self.by_name.insert(def.name.clone(), id);
        self.defs.push(def);
        Ok(id)
    }

    pub fn from_specs(specs: &[FormulaSpec]) -> Result<Self, RegistryError> {
        let mut reg = Self::new();
        for s in specs {
            let labels: Vec<&str> = s.args.iter().map(String::as_str).collect();
            let mut def = FormulaDef::parse(&s.name, s.arity, &labels, &s.body)?;
            if let Some(shape) = &s.shape {
                def.shape = shape.clone();
            }
            reg.register(def)?;
        }
        Ok(reg)
    }

    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let specs: Vec<FormulaSpec> = serde_json::from_str(text)?;
        Self::from_specs(&specs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Serializable form; bodies are written back as infix text.
    pub fn to_specs(&self) -> Vec<FormulaSpec> {
        let empty = FormulaRegistry::new();
        self.defs
            .iter()
            .map(|d| {
                let labels = d.arg_labels.clone();
                FormulaSpec {
                    name: d.name.clone(),
                    arity: d.arity,
                    args: d.arg_labels.clone(),
                    body: d.body.to_infix_with(&empty, &|i| labels[i].clone()),
                    shape: (d.shape != default_shape(&d.name)).then(|| d.shape.clone()),
                }
            })
            .collect()
    }

    pub fn get(&self, id: FormulaId) -> &FormulaDef {
        &self.defs[id.0]
    }

    pub fn id(&self, name: &str) -> Option<FormulaId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&FormulaDef> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FormulaId, &FormulaDef)> {
        self.defs.iter().enumerate().map(|(i, d)| (FormulaId(i), d))
    }

    /// A call node kind for `name`, if registered.
    pub fn call_kind(&self, name: &str) -> Option<NodeKind> {
        self.id(name).map(NodeKind::FormulaCall)
    }
}
