use std::collections::HashMap;

use super::AutodiffError;
use crate::scalar::Real;

/// Dense row-major array with an optional gradient buffer.
///
/// Rank is 1 or 2. The tape treats a rank-1 tensor of length `n` as a
/// `1 x n` row so bias vectors broadcast over batch rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    trainable: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, AutodiffError> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return Err(AutodiffError::InvalidShape(shape.to_vec()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
            trainable: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, AutodiffError> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self, AutodiffError> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::new(&[1], vec![value]).expect("scalar shape")
    }

    /// Marks the tensor as a trainable parameter (allocates a zeroed
    /// gradient) or freezes it (drops the gradient).
    pub fn with_trainable(mut self, trainable: bool) -> Self {
        self.set_trainable(trainable);
        self
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
        self.grad = trainable.then(|| vec![T::zero(); self.data.len()]);
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Rows and columns of the 2-D view used by the tape.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank validated at construction"),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `delta` into the gradient buffer. Frozen tensors ignore it.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<(), AutodiffError> {
        if delta.len() != self.data.len() {
            return Err(AutodiffError::DataLength {
                shape: self.shape.clone(),
                len: delta.len(),
            });
        }
        if let Some(g) = self.grad.as_mut() {
            for (acc, d) in g.iter_mut().zip(delta) {
                *acc = *acc + *d;
            }
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of the values (as `f64`).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.as_f64().to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of parameter tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParam(name));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> + '_ {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Sorted names of every parameter currently marked trainable.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .iter()
            .filter(|(_, _, t)| t.trainable())
            .map(|(_, n, _)| n.to_string())
            .collect();
        names.sort();
        names
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn set_trainable(&mut self, ids: &[ParamId], trainable: bool) {
        for id in ids {
            self.tensors[id.0].set_trainable(trainable);
        }
    }
}
