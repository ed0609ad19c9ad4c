use std::collections::HashMap;

use rand::Rng;

use super::{AutodiffError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub trainable: bool,
}

/// Named trainable tensors plus their gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, AutodiffError> {
        if self.by_name.contains_key(name) {
            return Err(AutodiffError::Usage(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.params.len());
        let n = value.numel();
        self.params.push(Param { name: name.to_string(), value, grad: vec![T::zero(); n], trainable: true });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Xavier-uniform weight: `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId, AutodiffError> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, shape, a, rng)
    }

    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], a: f64, rng: &mut R) -> Result<ParamId, AutodiffError> {
        let n = super::tensor::numel(shape);
        let data = (0..n).map(|_| T::of(rng.gen_range(-a..=a))).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId, AutodiffError> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Marks every parameter whose name starts with one of `prefixes` as frozen.
    pub fn freeze_prefixes(&mut self, prefixes: &[&str]) -> usize {
        let mut n = 0;
        for p in &mut self.params {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                p.trainable = false;
                n += 1;
            }
        }
        n
    }

    pub fn unfreeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.trainable = true);
    }

    /// Converts to another scalar type (used to move between f32 training and
    /// f64 checking).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let v = Tensor { shape: p.value.shape.clone(), data: p.value.data.iter().map(|x| U::of(x.as_f64())).collect() };
            let id = out.add(&p.name, v).expect("names are unique");
            out.params[id.0].trainable = p.trainable;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &ParamStore<T>) -> Option<f64> {
        if self.len() != other.len() {
            return None;
        }
        let mut m = 0.0f64;
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.value.shape != b.value.shape {
                return None;
            }
            for (x, y) in a.value.data.iter().zip(&b.value.data) {
                m = m.max((x.as_f64() - y.as_f64()).abs());
            }
        }
        Some(m)
    }
}
