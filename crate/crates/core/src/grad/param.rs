use super::rng::Rng;
use super::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(i: usize) -> Self {
        ParamId(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform on `(-b, b)`.
    Uniform(f64),
    /// Normal with mean 0 and the given standard deviation.
    Normal(f64),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Exponential decay rates and stabilizer of Adam.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Named model parameters with their accumulated gradients and Adam moments.
/// Iteration follows registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, rng: &mut Rng) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "parameter `{name}` registered twice"
        );
        let n = rows * cols;
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Uniform(b) => (0..n).map(|_| rng.uniform(-b, b)).collect(),
            Init::Normal(s) => (0..n).map(|_| rng.normal(0.0, s)).collect(),
        };
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            value,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix used as `x · W`, initialized uniform in `±1/√rows`.
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        self.add(name, rows, cols, Init::Uniform(1.0 / (rows as f64).sqrt()), rng)
    }

    pub fn bias(&mut self, name: &str, cols: usize, rng: &mut Rng) -> ParamId {
        self.add(name, 1, cols, Init::Zeros, rng)
    }

    /// Lookup table, initialized normal(0, 0.01).
    pub fn embedding(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        self.add(name, rows, cols, Init::Normal(0.01), rng)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let p = &self.params[id.0];
        (p.rows, p.cols)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `scale ·` the parameter gradients from one backward pass.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, g) in grads.params() {
            for (a, b) in self.params[id.0].grad.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
    }

    /// Adds a gradient collected elsewhere (e.g. another worker's store).
    pub fn accumulate_raw(&mut self, id: ParamId, g: &[f64], scale: f64) {
        for (a, b) in self.params[id.0].grad.iter_mut().zip(g) {
            *a += scale * b;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// One Adam update with L2 weight decay: `weight_decay · value` is added
    /// to each gradient after the gradients are rescaled so their global norm
    /// is at most `clip_norm`. Gradients are zeroed afterwards. Returns the
    /// gradient norm before clipping.
    pub fn adam_step(&mut self, lr: f64, weight_decay: f64, clip_norm: Option<f64>) -> f64 {
        let norm = self.grad_norm();
        let scale = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for p in &mut self.params {
            for i in 0..p.value.len() {
                let g = p.grad[i] * scale + weight_decay * p.value[i];
                p.m[i] = ADAM_BETA1 * p.m[i] + (1.0 - ADAM_BETA1) * g;
                p.v[i] = ADAM_BETA2 * p.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                p.grad[i] = 0.0;
            }
        }
        norm
    }
}

/// Step decay: the rate is multiplied by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub every: usize,
    pub factor: f64,
}

impl LrSchedule {
    /// Halve every `every` epochs.
    pub fn halving(base: f64, every: usize) -> Self {
        LrSchedule {
            base,
            every,
            factor: 0.5,
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.base;
        }
        self.base * self.factor.powi((epoch / self.every) as i32)
    }
}
