use super::param::{ParamId, ParamStore};
use super::rng::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss does not depend on any tracked array")]
    NoPath,
    #[error("{op}: index {index} out of range {len}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
}

/// Handle to an array recorded on a [`Tape`]. Arrays are row-major matrices;
/// vectors are `1 × n` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SliceCols(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Dropout(usize, Vec<f64>),
    Sum(usize),
    NegLogPick(usize, usize),
    Pick(usize, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    /// Empty for parameter leaves, whose values stay in the store.
    value: Vec<f64>,
    tracked: bool,
}

/// Records array operations so that [`Tape::backward`] can produce exact
/// gradients. Parameters are read in place from the borrowed [`ParamStore`].
pub struct Tape<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s> Tape<'s> {
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.id];
        match node.op {
            Op::Param(p) => self.store.expect("parameter tape").value(p),
            _ => &node.value,
        }
    }

    /// Single element of a `1 × 1` array.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, tracked: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            tracked,
        });
        Var { id, rows, cols }
    }

    fn checked(
        &mut self,
        name: &'static str,
        op: Op,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        tracked: bool,
    ) -> Result<Var, GradError> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(GradError::NonFinite { op: name });
        }
        Ok(self.push(op, rows, cols, value, tracked))
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.id].tracked
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(values.len(), rows * cols, "input shape");
        self.push(Op::Input, rows, cols, values, false)
    }

    /// Free-standing tracked array; its gradient is available from
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, values: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(values.len(), rows * cols, "leaf shape");
        self.push(Op::Leaf, rows, cols, values, true)
    }

    /// The parameter `id` from the attached store. Repeated calls return the
    /// same handle, so each parameter appears once on the tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(node) = self.param_nodes[id.index()] {
            let n = &self.nodes[node];
            return Var {
                id: node,
                rows: n.rows,
                cols: n.cols,
            };
        }
        let (rows, cols) = self.store.expect("parameter tape").shape(id);
        let v = self.push(Op::Param(id), rows, cols, Vec::new(), true);
        self.param_nodes[id.index()] = Some(v.id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        if a.cols != b.rows {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let (r, k, c) = (a.rows, a.cols, b.cols);
        let mut out = vec![0.0; r * c];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..r {
                let row = &mut out[i * c..(i + 1) * c];
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[p * c..(p + 1) * c];
                    for (o, &y) in row.iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            }
        }
        let t = self.tracked(a) || self.tracked(b);
        self.checked("matmul", Op::MatMul(a.id, b.id), r, c, out, t)
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, GradError> {
        if a.shape() != b.shape() {
            return Err(GradError::ShapeMismatch {
                op: name,
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = self.tracked(a) || self.tracked(b);
        self.checked(name, op, a.rows, a.cols, out, t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("add", a, b, Op::Add(a.id, b.id), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("sub", a, b, Op::Sub(a.id, b.id), |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.zip_same("mul", a, b, Op::Mul(a.id, b.id), |x, y| x * y)
    }

    /// Adds the `1 × cols` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, GradError> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(GradError::ShapeMismatch {
                op: "add_row",
                lhs: a.shape(),
                rhs: row.shape(),
            });
        }
        let rv = self.value(row).to_vec();
        let out: Vec<f64> = self
            .value(a)
            .chunks(a.cols.max(1))
            .flat_map(|r| r.iter().zip(&rv).map(|(x, y)| x + y))
            .collect();
        let t = self.tracked(a) || self.tracked(row);
        self.checked("add_row", Op::AddRow(a.id, row.id), a.rows, a.cols, out, t)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, GradError> {
        let out = self.value(a).iter().map(|x| x * k).collect();
        let t = self.tracked(a);
        self.checked("scale", Op::Scale(a.id, k), a.rows, a.cols, out, t)
    }

    /// Joins arrays with equal row counts side by side.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(GradError::ShapeMismatch {
                op: "concat",
                lhs: parts[0].shape(),
                rhs: bad.shape(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(&self.value(*p)[r * p.cols..(r + 1) * p.cols]);
            }
        }
        let t = parts.iter().any(|p| self.tracked(*p));
        let ids = parts.iter().map(|p| p.id).collect();
        self.checked("concat", Op::ConcatCols(ids), rows, cols, out, t)
    }

    /// Stacks arrays with equal column counts on top of each other.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(GradError::ShapeMismatch {
                op: "stack_rows",
                lhs: parts[0].shape(),
                rhs: bad.shape(),
            });
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let t = parts.iter().any(|p| self.tracked(*p));
        let ids = parts.iter().map(|p| p.id).collect();
        self.checked("stack_rows", Op::ConcatRows(ids), rows, cols, out, t)
    }

    /// Selects rows by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, GradError> {
        let mut out = Vec::with_capacity(rows.len() * a.cols);
        {
            let av = self.value(a);
            for &r in rows {
                if r >= a.rows {
                    return Err(GradError::OutOfRange {
                        op: "gather_rows",
                        index: r,
                        len: a.rows,
                    });
                }
                out.extend_from_slice(&av[r * a.cols..(r + 1) * a.cols]);
            }
        }
        let t = self.tracked(a);
        self.checked(
            "gather_rows",
            Op::GatherRows(a.id, rows.to_vec()),
            rows.len(),
            a.cols,
            out,
            t,
        )
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GradError> {
        if start + len > a.cols {
            return Err(GradError::OutOfRange {
                op: "slice_cols",
                index: start + len,
                len: a.cols,
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .chunks(a.cols)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let t = self.tracked(a);
        self.checked("slice_cols", Op::SliceCols(a.id, start), a.rows, len, out, t)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GradError> {
        let av = self.value(a);
        let mut out = vec![0.0; a.len()];
        for i in 0..a.rows {
            for j in 0..a.cols {
                out[j * a.rows + i] = av[i * a.cols + j];
            }
        }
        let t = self.tracked(a);
        self.checked("transpose", Op::Transpose(a.id), a.cols, a.rows, out, t)
    }

    /// Same values, new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, GradError> {
        if rows * cols != a.len() {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                lhs: a.shape(),
                rhs: (rows, cols),
            });
        }
        let out = self.value(a).to_vec();
        let t = self.tracked(a);
        self.checked("reshape", Op::Reshape(a.id), rows, cols, out, t)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var, GradError> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let t = self.tracked(a);
        self.checked(name, op, a.rows, a.cols, out, t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, GradError> {
        self.map("sigmoid", a, Op::Sigmoid(a.id), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GradError> {
        self.map("tanh", a, Op::Tanh(a.id), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, GradError> {
        self.map("relu", a, Op::Relu(a.id), |x| x.max(0.0))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(a.cols.max(1)) {
            softmax_in_place(row);
        }
        let t = self.tracked(a);
        self.checked("softmax", Op::Softmax(a.id), a.rows, a.cols, out, t)
    }

    /// Row-wise log-softmax, computed without forming the probabilities.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(a.cols.max(1)) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let t = self.tracked(a);
        self.checked("log_softmax", Op::LogSoftmax(a.id), a.rows, a.cols, out, t)
    }

    /// Inverted dropout: with `train` set, each entry is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Otherwise
    /// returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut Rng) -> Result<Var, GradError> {
        if !train || p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..a.len())
            .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = self.tracked(a);
        self.checked("dropout", Op::Dropout(a.id, mask), a.rows, a.cols, out, t)
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.value(a).iter().sum();
        let t = self.tracked(a);
        self.checked("sum", Op::Sum(a.id), 1, 1, vec![s], t)
    }

    /// `-ln(dist[index])` for a probability row.
    pub fn neg_log_pick(&mut self, dist: Var, index: usize) -> Result<Var, GradError> {
        if index >= dist.len() {
            return Err(GradError::OutOfRange {
                op: "neg_log_pick",
                index,
                len: dist.len(),
            });
        }
        let v = -self.value(dist)[index].ln();
        let t = self.tracked(dist);
        self.checked("neg_log_pick", Op::NegLogPick(dist.id, index), 1, 1, vec![v], t)
    }

    /// The single entry `a[index]` (flat index) as `1 × 1`.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var, GradError> {
        if index >= a.len() {
            return Err(GradError::OutOfRange {
                op: "pick",
                index,
                len: a.len(),
            });
        }
        let v = self.value(a)[index];
        let t = self.tracked(a);
        self.checked("pick", Op::Pick(a.id, index), 1, 1, vec![v], t)
    }

    /// Sum of several `1 × 1` terms.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, GradError> {
        let stacked = self.stack_rows(terms)?;
        self.sum(stacked)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        if loss.shape() != (1, 1) {
            return Err(GradError::ShapeMismatch {
                op: "backward",
                lhs: loss.shape(),
                rhs: (1, 1),
            });
        }
        if !self.tracked(loss) {
            return Err(GradError::NoPath);
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); loss.id + 1];
        grads[loss.id] = vec![1.0];
        for i in (0..=loss.id).rev() {
            if grads[i].is_empty() || !self.nodes[i].tracked {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.propagate(i, &g, &mut grads);
            grads[i] = g;
        }
        let params = self
            .param_nodes
            .iter()
            .enumerate()
            .filter_map(|(p, n)| n.map(|n| (ParamId::new(p), n)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let val = |id: usize| -> &[f64] {
            match self.nodes[id].op {
                Op::Param(p) => self.store.expect("parameter tape").value(p),
                _ => &self.nodes[id].value,
            }
        };
        let tracked = |id: usize| self.nodes[id].tracked;
        match &node.op {
            Op::Input | Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (an, bn) = (&self.nodes[*a], &self.nodes[*b]);
                let (r, k, c) = (an.rows, an.cols, bn.cols);
                if tracked(*a) {
                    let bv = val(*b);
                    let ga = slot(grads, *a, r * k);
                    for ii in 0..r {
                        let grow = &g[ii * c..(ii + 1) * c];
                        for p in 0..k {
                            let brow = &bv[p * c..(p + 1) * c];
                            ga[ii * k + p] += dot(grow, brow);
                        }
                    }
                }
                if tracked(*b) {
                    let av = val(*a);
                    let gb = slot(grads, *b, k * c);
                    for ii in 0..r {
                        let grow = &g[ii * c..(ii + 1) * c];
                        for p in 0..k {
                            let x = av[ii * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[p * c..(p + 1) * c].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if tracked(id) {
                        axpy(slot(grads, id, g.len()), 1.0, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if tracked(*a) {
                    axpy(slot(grads, *a, g.len()), 1.0, g);
                }
                if tracked(*b) {
                    axpy(slot(grads, *b, g.len()), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if tracked(*a) {
                    let bv = val(*b).to_vec();
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(&bv) {
                        *o += gi * y;
                    }
                }
                if tracked(*b) {
                    let av = val(*a).to_vec();
                    let gb = slot(grads, *b, g.len());
                    for ((o, gi), x) in gb.iter_mut().zip(g).zip(&av) {
                        *o += gi * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if tracked(*a) {
                    axpy(slot(grads, *a, g.len()), 1.0, g);
                }
                if tracked(*row) {
                    let cols = node.cols;
                    let gr = slot(grads, *row, cols);
                    for chunk in g.chunks(cols.max(1)) {
                        axpy(gr, 1.0, chunk);
                    }
                }
            }
            Op::Scale(a, k) => {
                if tracked(*a) {
                    axpy(slot(grads, *a, g.len()), *k, g);
                }
            }
            Op::ConcatCols(ids) => {
                let mut offset = 0;
                for &id in ids {
                    let w = self.nodes[id].cols;
                    if tracked(id) {
                        let total = node.cols;
                        let gp = slot(grads, id, node.rows * w);
                        for r in 0..node.rows {
                            axpy(
                                &mut gp[r * w..(r + 1) * w],
                                1.0,
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &id in ids {
                    let n = self.nodes[id].rows * self.nodes[id].cols;
                    if tracked(id) {
                        axpy(slot(grads, id, n), 1.0, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, rows) => {
                if tracked(*a) {
                    let an = &self.nodes[*a];
                    let c = an.cols;
                    let ga = slot(grads, *a, an.rows * c);
                    for (k, &r) in rows.iter().enumerate() {
                        axpy(&mut ga[r * c..(r + 1) * c], 1.0, &g[k * c..(k + 1) * c]);
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if tracked(*a) {
                    let an = &self.nodes[*a];
                    let (c, w) = (an.cols, node.cols);
                    let ga = slot(grads, *a, an.rows * c);
                    for r in 0..an.rows {
                        axpy(&mut ga[r * c + start..r * c + start + w], 1.0, &g[r * w..(r + 1) * w]);
                    }
                }
            }
            Op::Transpose(a) => {
                if tracked(*a) {
                    let (r, c) = (node.rows, node.cols);
                    let ga = slot(grads, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if tracked(*a) {
                    axpy(slot(grads, *a, g.len()), 1.0, g);
                }
            }
            Op::Sigmoid(a) => {
                if tracked(*a) {
                    let y = &node.value;
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(a) => {
                if tracked(*a) {
                    let y = &node.value;
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Relu(a) => {
                if tracked(*a) {
                    let x = val(*a).to_vec();
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), xi) in ga.iter_mut().zip(g).zip(&x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if tracked(*a) {
                    let c = node.cols.max(1);
                    let y = &node.value;
                    let ga = slot(grads, *a, g.len());
                    for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s = dot(gr, yr);
                        for ((o, gi), yi) in or.iter_mut().zip(gr).zip(yr) {
                            *o += yi * (gi - s);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if tracked(*a) {
                    let c = node.cols.max(1);
                    let y = &node.value;
                    let ga = slot(grads, *a, g.len());
                    for ((gr, yr), or) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                        let s: f64 = gr.iter().sum();
                        for ((o, gi), yi) in or.iter_mut().zip(gr).zip(yr) {
                            *o += gi - yi.exp() * s;
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if tracked(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((o, gi), m) in ga.iter_mut().zip(g).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
            Op::Sum(a) => {
                if tracked(*a) {
                    let n = self.nodes[*a].rows * self.nodes[*a].cols;
                    slot(grads, *a, n).iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::NegLogPick(a, k) => {
                if tracked(*a) {
                    let x = val(*a)[*k];
                    let n = self.nodes[*a].rows * self.nodes[*a].cols;
                    slot(grads, *a, n)[*k] -= g[0] / x;
                }
            }
            Op::Pick(a, k) => {
                if tracked(*a) {
                    let n = self.nodes[*a].rows * self.nodes[*a].cols;
                    slot(grads, *a, n)[*k] += g[0];
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads
            .get(v.id)
            .filter(|g| !g.is_empty())
            .map(Vec::as_slice)
    }

    /// `(parameter, gradient)` for every parameter that reached the loss.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().filter_map(|&(p, node)| {
            self.grads
                .get(node)
                .filter(|g| !g.is_empty())
                .map(|g| (p, g.as_slice()))
        })
    }
}

fn slot(grads: &mut [Vec<f64>], id: usize, len: usize) -> &mut [f64] {
    let g = &mut grads[id];
    if g.is_empty() {
        g.resize(len, 0.0);
    }
    g
}

fn axpy(dst: &mut [f64], k: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}
