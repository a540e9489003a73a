//! Named storage for trainable parameters and non-trainable buffers.

use std::collections::BTreeMap;

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub(crate) usize);

/// A named n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> NamedTensor<T> {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Pending running-statistics update emitted by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub mean_buf: BufferId,
    pub var_buf: BufferId,
    pub momentum: f64,
    pub batch_mean: Vec<T>,
    /// Unbiased variance estimate.
    pub batch_var: Vec<T>,
}

/// Ordered parameter and buffer registry. Insertion order is the canonical
/// order for optimizers and serialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<NamedTensor<T>>,
    buffers: Vec<NamedTensor<T>>,
    index: BTreeMap<String, Slot>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Param(usize),
    Buffer(usize),
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), buffers: Vec::new(), index: BTreeMap::new() }
    }

    /// Registers a trainable tensor. Panics on duplicate names or a data/shape mismatch.
    pub fn add_param(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name}: shape/data mismatch");
        assert!(!self.index.contains_key(&name), "duplicate tensor name {name}");
        let id = self.params.len();
        self.index.insert(name.clone(), Slot::Param(id));
        self.params.push(NamedTensor { name, shape: shape.to_vec(), data });
        ParamId(id)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) -> BufferId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "buffer {name}: shape/data mismatch");
        assert!(!self.index.contains_key(&name), "duplicate tensor name {name}");
        let id = self.buffers.len();
        self.index.insert(name.clone(), Slot::Buffer(id));
        self.buffers.push(NamedTensor { name, shape: shape.to_vec(), data });
        BufferId(id)
    }

    pub fn param(&self, id: ParamId) -> &NamedTensor<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut NamedTensor<T> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &NamedTensor<T> {
        &self.buffers[id.0]
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[NamedTensor<T>] {
        &self.buffers
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        match self.index.get(name) {
            Some(Slot::Param(i)) => Some(ParamId(*i)),
            _ => None,
        }
    }

    pub fn buffer_id(&self, name: &str) -> Option<BufferId> {
        match self.index.get(name) {
            Some(Slot::Buffer(i)) => Some(BufferId(*i)),
            _ => None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(NamedTensor::numel).sum()
    }

    /// Overwrites the tensor called `name` (param or buffer). Returns false if
    /// the name is unknown; panics if the length differs.
    pub fn set_by_name(&mut self, name: &str, data: &[T]) -> bool {
        let slot = match self.index.get(name) {
            Some(s) => *s,
            None => return false,
        };
        let dst = match slot {
            Slot::Param(i) => &mut self.params[i].data,
            Slot::Buffer(i) => &mut self.buffers[i].data,
        };
        assert_eq!(dst.len(), data.len(), "length mismatch for {name}");
        dst.copy_from_slice(data);
        true
    }

    /// Looks up a param or buffer by name.
    pub fn get_by_name(&self, name: &str) -> Option<&NamedTensor<T>> {
        match self.index.get(name)? {
            Slot::Param(i) => Some(&self.params[*i]),
            Slot::Buffer(i) => Some(&self.buffers[*i]),
        }
    }

    /// All tensors (params then buffers) in registration order.
    pub fn tensors(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.params.iter().chain(self.buffers.iter())
    }

    /// Copies every tensor whose name also exists in `other`. Returns the number copied.
    pub fn copy_matching_from(&mut self, other: &ParamStore<T>) -> usize {
        let mut n = 0;
        for t in other.tensors() {
            if let Some(slot) = self.index.get(&t.name) {
                let dst = match *slot {
                    Slot::Param(i) => &mut self.params[i],
                    Slot::Buffer(i) => &mut self.buffers[i],
                };
                if dst.shape == t.shape {
                    dst.data.copy_from_slice(&t.data);
                    n += 1;
                }
            }
        }
        n
    }

    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        for u in updates {
            let m = T::of(u.momentum);
            let keep = T::one() - m;
            for (r, &b) in self.buffers[u.mean_buf.0].data.iter_mut().zip(&u.batch_mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in self.buffers[u.var_buf.0].data.iter_mut().zip(&u.batch_var) {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Element-type conversion preserving names and order.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |t: &NamedTensor<T>| NamedTensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| U::of(v.to_f64().unwrap_or(f64::NAN))).collect(),
        };
        ParamStore {
            params: self.params.iter().map(conv).collect(),
            buffers: self.buffers.iter().map(conv).collect(),
            index: self.index.clone(),
        }
    }
}
