//! Dense arrays with reverse-mode gradients, plus the optimizer pieces the
//! solver needs to train without an external framework.
//!
//! Every operation is recorded on a [`Tape`]; [`Tape::backward`] then walks
//! the record in reverse. All arithmetic is `f64`.
//!
//! ```
//! use s2g::grad::Tape;
//!
//! let mut tape = Tape::new();
//! let z = tape.leaf(vec![0.5, -1.0, 2.0], 1, 3);
//! let p = tape.softmax(z).unwrap();
//! let loss = tape.neg_log_pick(p, 2).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! // d(-ln softmax(z)[k]) / dz = softmax(z) - one_hot(k)
//! let probs = tape.value(p).to_vec();
//! let g = grads.wrt(z).unwrap();
//! assert!((g[2] - (probs[2] - 1.0)).abs() < 1e-12);
//! assert!((g[0] - probs[0]).abs() < 1e-12);
//! ```

mod checkpoint;
mod param;
mod rng;
mod tape;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, ParamHeader};
pub use param::{Init, LrSchedule, Param, ParamId, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use rng::Rng;
pub use tape::{GradError, Gradients, Tape, Var};
