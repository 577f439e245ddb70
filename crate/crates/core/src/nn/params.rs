use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{invalid_arg, Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named parameters with a gradient buffer of identical shapes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(invalid_arg(format!("duplicate parameter name {name:?}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.grads.push(Tensor::zeros(value.dims()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Adds a parameter drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let count: usize = dims.iter().product();
        let values = (0..count).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(dims, values)?)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, dims: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(dims))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::InvalidState(format!("missing parameter {name:?}")))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    /// Disjoint borrows: read-only values for a forward tape, mutable gradients for its backward.
    pub fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.values_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.values().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Sum over all parameters of `<values - before, grads>`.
    pub fn delta_dot_grad(&self, before: &ParamSet, grads: &ParamSet) -> f64 {
        let mut total = 0.0;
        for ((now, was), g) in self.values.iter().zip(&before.values).zip(&grads.grads) {
            for ((a, b), d) in now.values().iter().zip(was.values()).zip(g.values()) {
                total += (a - b) * d;
            }
        }
        total
    }

    /// Bit-level equality of parameter values (gradients ignored).
    pub fn values_bit_equal(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.dims() == b.dims()
                    && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParamSet::new();
        p.insert_zeros("w", &[2, 2]).unwrap();
        assert!(p.insert_zeros("w", &[1]).is_err());
        assert_eq!(p.grad(p.id("w").unwrap()).dims(), &[2, 2]);
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        let id = p.insert_uniform("w", &[16, 25], 25, &mut rng).unwrap();
        assert!(p.value(id).values().iter().all(|v| v.abs() < 0.2));
    }
}
