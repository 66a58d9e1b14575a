//! Named parameter storage and the small dense layers shared by the models.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Tensor, Var};

pub type Rng64 = ChaCha8Rng;

/// Deterministic generator used for every seeded routine in the crate.
pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Scalars in parameters whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Registers every parameter as a leaf on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let vars = self.values.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        Binding { vars }
    }

    /// Replaces a value, keeping the shape contract.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape {
                kind: "param",
                lhs: self.values[id.0].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// Uniform(-1/√fan_in, 1/√fan_in) initialisation.
pub fn uniform_init(rng: &mut Rng64, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Affine map over the last axis: `x[..., in] @ W[in, out] + b[out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng64) -> Self {
        let w = store.add(format!("{name}.w"), uniform_init(rng, &[d_in, d_out], d_in));
        let b = store.add(format!("{name}.b"), uniform_init(rng, &[d_out], d_in));
        Self { w, b, d_in, d_out }
    }

    /// Same as [`Linear::new`] with weights scaled by `gain` and zero bias.
    pub fn scaled(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, gain: f64, rng: &mut Rng64) -> Self {
        let w = uniform_init(rng, &[d_in, d_out], d_in).map(|v| v * gain);
        let w = store.add(format!("{name}.w"), w);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.w))?;
        g.add(y, p.var(self.b))
    }
}

/// Two affine layers with a tanh in between.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng64) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.0"), d_in, hidden, rng),
            l2: Linear::new(store, &format!("{name}.1"), hidden, d_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, p, x)?;
        let h = g.tanh(h);
        self.l2.forward(g, p, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_linear_returns_bias() {
        let mut store = ParamStore::new();
        let mut rng = seeded(1);
        let lin = Linear::new(&mut store, "l", 3, 2, &mut rng);
        store.set(lin.w, Tensor::zeros(&[3, 2])).unwrap();
        let bias = store.get(lin.b).clone();
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![4, 3], (0..12).map(f64::from).collect()).unwrap());
        let y = lin.forward(&mut g, &p, x).unwrap();
        for row in g.value(y).data().chunks(2) {
            assert_eq!(row, bias.data());
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = uniform_init(&mut seeded(7), &[5, 5], 5);
        let b = uniform_init(&mut seeded(7), &[5, 5], 5);
        assert_eq!(a, b);
    }
}
