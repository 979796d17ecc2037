use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Stable handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned weight; counted by [`ParamStore::trainable_count`].
    Trainable,
    /// Non-learned state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
    pub frozen: bool,
}

/// Named, ordered collection of model parameters.
///
/// Ids are positions in insertion order; [`truncate`](Self::truncate) only
/// ever drops the most recently added entries, so earlier ids stay valid.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(invalid("ParamStore::add", format!("duplicate parameter `{name}`")));
        }
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            kind,
            frozen: false,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 }))
            .collect();
        self.add(name, Tensor::new(shape, data)?, ParamKind::Trainable)
    }

    pub fn add_normal<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| invalid("add_normal", e.to_string()))?;
        let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, data)?, ParamKind::Trainable)
    }

    pub fn add_const(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::from_f64(v)), ParamKind::Trainable)
    }

    pub fn add_buffer(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, T::from_f64(v)), ParamKind::Buffer)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Number of trainable scalars (buffers excluded).
    pub fn trainable_count(&self) -> usize {
        self.count_prefix("")
    }

    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable && p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Sets the frozen flag on every parameter whose name starts with one of
    /// `prefixes`; returns the number of parameters matched.
    pub fn set_frozen(&mut self, prefixes: &[&str], frozen: bool) -> usize {
        let mut n = 0;
        for p in &mut self.params {
            if prefixes.iter().any(|pre| p.name.starts_with(pre)) {
                p.frozen = frozen;
                n += 1;
            }
        }
        n
    }

    pub fn freeze_all(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    /// Drops every parameter added after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        for p in self.params.drain(len.min(self.params.len())..) {
            self.index.remove(&p.name);
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    kind: p.kind,
                    frozen: p.frozen,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Copies values of every entry whose name starts with `prefix` from
    /// `other`; shapes must agree.
    pub fn copy_from(&mut self, other: &ParamStore<T>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            let src = other
                .id(&p.name)
                .ok_or_else(|| TensorError::UnknownParam(p.name.clone()))?;
            let v = &other.params[src.0].value;
            if v.shape() != p.value.shape() {
                return Err(crate::error::shape_err("copy_from", p.value.shape(), v.shape()));
            }
            p.value = v.clone();
            n += 1;
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn buffers_are_not_counted() {
        let mut s = ParamStore::<f32>::new();
        s.add_const("a.w", &[3, 4], 1.0).unwrap();
        s.add_buffer("a.running_mean", &[4], 0.0).unwrap();
        assert_eq!(s.trainable_count(), 12);
        assert_eq!(s.count_prefix("a."), 12);
    }

    #[test]
    fn duplicate_names_rejected_and_truncate_keeps_ids() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let a = s.add_uniform("a", &[2], 0.1, &mut rng).unwrap();
        assert!(s.add_const("a", &[1], 0.0).is_err());
        let keep = s.len();
        s.add_const("head.w", &[2], 0.0).unwrap();
        s.truncate(keep);
        assert!(s.id("head.w").is_none());
        assert_eq!(s.id("a"), Some(a));
    }

    #[test]
    fn freezing_by_prefix() {
        let mut s = ParamStore::<f32>::new();
        s.add_const("trajpred.x", &[1], 0.0).unwrap();
        s.add_const("sam.x", &[1], 0.0).unwrap();
        assert_eq!(s.set_frozen(&["trajpred."], true), 1);
        assert!(s.is_frozen(s.id("trajpred.x").unwrap()));
        assert!(!s.is_frozen(s.id("sam.x").unwrap()));
    }
}
