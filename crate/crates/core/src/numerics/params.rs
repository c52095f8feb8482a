use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Gradients, Graph, Var};
use crate::numerics::tensor::Tensor;

/// Handle to a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replace every tensor with the same-named entry of `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let id = other
                .find(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter '{name}'")))?;
            let src = other.get(id);
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// Register every tensor as a graph leaf; `trainable` decides whether
    /// gradients flow to them.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradients for every parameter, zero where none flowed.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients) -> Vec<Tensor> {
        bound
            .vars
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect()
    }
}

/// Graph variables for one [`ParamStore`] binding.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Dense layer `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform Glorot initialisation, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (inputs + outputs) as f32).sqrt();
        let w = Tensor::uniform([inputs, outputs], -bound, bound, rng);
        Self {
            w: store.add(format!("{name}.weight"), w),
            b: store.add(format!("{name}.bias"), Tensor::zeros([outputs])),
            inputs,
            outputs,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            w: store.add(format!("{name}.weight"), Tensor::zeros([inputs, outputs])),
            b: store.add(format!("{name}.bias"), Tensor::zeros([outputs])),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones([width])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([width])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_binds_and_backprops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "fc", 3, 2, &mut rng);
        let zero = Linear::zeros(&mut store, "head", 2, 1);
        assert_eq!(store.names(), ["fc.weight", "fc.bias", "head.weight", "head.bias"]);
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let x = g.constant(Tensor::ones([4, 3]));
        let h = lin.forward(&mut g, &p, x).unwrap();
        let y = zero.forward(&mut g, &p, h).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        let all = store.collect_grads(&p, &grads);
        assert_eq!(all.len(), 4);
        // Zero head blocks the gradient to the first layer.
        assert!(all[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(all[3].data(), &[4.0]);
    }

    #[test]
    fn load_from_checks_names_and_shapes() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::zeros([2]));
        let mut b = ParamStore::new();
        b.add("w", Tensor::ones([2]));
        a.load_from(&b).unwrap();
        assert_eq!(a.tensors()[0].data(), &[1.0, 1.0]);
        let mut c = ParamStore::new();
        c.add("w", Tensor::ones([3]));
        assert!(a.load_from(&c).is_err());
        assert!(a.load_from(&ParamStore::new()).is_err());
    }
}
