//! Composite network blocks and the forward-pass session that binds named
//! parameters into a [`Graph`].

mod blocks;
mod convlstm;

pub use blocks::{BatchNorm, Conv, ConvBlock, DenseBlock, DenseLayer, SaBlock, TransitionDown, TransitionUp};
pub use convlstm::ConvLstm;

use std::collections::HashMap;

use indexmap::IndexMap;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Mode, ParamKind, ParamStore, RunningStats, Tensor, Var, BN_EPS, BN_MOMENTUM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize },
    Const(f64),
}

/// One named tensor a block needs, with its initializer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
    pub kind: ParamKind,
}

impl ParamDecl {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Materializes declarations into a store, drawing initial values from `rng`
/// in declaration order.
pub fn materialize(decls: &[ParamDecl], rng: &mut Rng) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for d in decls {
        let t = match d.init {
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&d.shape, |_| rng.uniform_range(-bound, bound))
            }
            Init::Const(v) => Tensor::full(&d.shape, v),
        };
        store.insert(d.name.clone(), t, d.kind)?;
    }
    Ok(store)
}

/// Forward-pass context over a borrowed parameter store.
///
/// Parameters are bound to graph leaves on first use, so a block applied twice
/// shares one leaf and its gradient accumulates. Batchnorm running statistics
/// are copied in on first use and, in train mode, updated locally; the caller
/// commits them with [`SessionOutput::commit`].
pub struct Session<'p> {
    pub graph: Graph,
    store: &'p ParamStore,
    bound: HashMap<String, Var>,
    running: IndexMap<String, RunningStats>,
    mode: Mode,
    rng: Rng,
}

/// What a finished session hands back to the owner of the parameters.
pub struct SessionOutput {
    pub grads: Vec<(String, Vec<f64>)>,
    pub running: IndexMap<String, RunningStats>,
    pub mode: Mode,
}

impl SessionOutput {
    /// Accumulates gradients and, for train-mode sessions, stores the updated
    /// running statistics.
    pub fn commit(self, store: &mut ParamStore) -> Result<()> {
        for (name, g) in &self.grads {
            store.accumulate_grad(name, g)?;
        }
        if self.mode == Mode::Train {
            for (prefix, stats) in &self.running {
                store.set_running_stats(prefix, stats)?;
            }
        }
        Ok(())
    }
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode, rng: Rng) -> Self {
        Session {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            running: IndexMap::new(),
            mode,
            rng,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?.clone();
        let v = self.graph.param(t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn batchnorm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        if !self.running.contains_key(prefix) {
            if let Some(stats) = self.store.running_stats(prefix) {
                self.running.insert(prefix.to_string(), stats);
            }
        }
        let running = self.running.get_mut(prefix);
        self.graph
            .batchnorm2d(x, gamma, beta, self.mode, running, BN_EPS, BN_MOMENTUM)
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.graph.dropout2d(x, p, self.mode, &mut self.rng)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.graph.backward(loss)
    }

    /// Ends the session, collecting leaf gradients in store order.
    pub fn finish(mut self) -> SessionOutput {
        let mut grads = Vec::new();
        for name in self.store.names() {
            if let Some(&v) = self.bound.get(name) {
                if let Some(g) = self.graph.take_grad(v) {
                    grads.push((name.to_string(), g));
                }
            }
        }
        SessionOutput {
            grads,
            running: self.running,
            mode: self.mode,
        }
    }
}
