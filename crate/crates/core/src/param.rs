//! Named trainable parameters, their optimizer state, and normalization
//! running statistics.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub adam_m: Vec<f32>,
    pub adam_v: Vec<f32>,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.set_requires_grad(true);
        let len = tensor.shape().numel();
        Parameter { name: name.into(), tensor, adam_m: vec![0.0; len], adam_v: vec![0.0; len], step_count: 0 }
    }

    pub fn numel(&self) -> usize {
        self.tensor.shape().numel()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedStats {
    pub name: String,
    pub stats: RunningStats,
}

/// An ordered collection of uniquely named parameters and running statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    stats: Vec<NamedStats>,
    names: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.names.contains_key(name) {
            return Err(Error::invalid("param store", alloc::format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter::new(name, tensor));
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_stats(&mut self, name: &str, channels: usize) -> StatsId {
        self.stats.push(NamedStats { name: name.to_string(), stats: RunningStats::new(channels) });
        StatsId(self.stats.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.names.get(name).copied().ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn stats(&self, id: StatsId) -> &RunningStats {
        &self.stats[id.0].stats
    }

    pub fn stats_mut(&mut self, id: StatsId) -> &mut RunningStats {
        &mut self.stats[id.0].stats
    }

    pub fn all_stats(&self) -> &[NamedStats] {
        &self.stats
    }

    pub fn all_stats_mut(&mut self) -> &mut [NamedStats] {
        &mut self.stats
    }

    /// Moves the gradients of bound parameter leaves off `tape` and adds
    /// them to the parameters' own gradient buffers.
    pub fn absorb_grads(&mut self, tape: &mut Tape) {
        let vars: Vec<_> = tape.param_vars().collect();
        for v in vars {
            if let Some((id, g)) = tape.take_param_grad(v) {
                self.params[id.0].tensor.accumulate_grad(&g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::zeros(Shape::vector(2))).unwrap();
        assert!(store.add("a.weight", Tensor::zeros(Shape::vector(2))).is_err());
        assert_eq!(store.id("a.weight").unwrap(), ParamId(0));
        assert!(matches!(store.id("b"), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn moments_start_at_zero() {
        let p = Parameter::new("w", Tensor::full(Shape::vector(3), 1.0));
        assert!(p.adam_m.iter().chain(&p.adam_v).all(|&v| v == 0.0));
        assert_eq!(p.step_count, 0);
    }

    #[test]
    fn grads_flow_back_from_tape() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::full(Shape::vector(3), 2.0)).unwrap();
        let mut tape = Tape::new();
        let vars = tape.bind_params(&store, true);
        let sq = tape.mul(vars[0], vars[0]).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        store.absorb_grads(&mut tape);
        assert_eq!(store.get(id).tensor.grad().unwrap(), &[4.0; 3]);
    }
}
