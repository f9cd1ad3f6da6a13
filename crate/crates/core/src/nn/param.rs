use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    value: Tensor,
    pub grad: Tensor,
    version: u64,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Owns every parameter of a model in declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            version: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Mutable access to a value; invalidates tapes that read it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        let p = &mut self.params[id.0];
        p.version += 1;
        &mut p.value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), NnError> {
        let current = self.value(id).shape();
        if current != value.shape() {
            return Err(NnError::ShapeMismatch {
                expected: current.to_vec(),
                got: value.shape().to_vec(),
            });
        }
        *self.value_mut(id) = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Snapshot of all gradients in declaration order.
    pub fn grads(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.grad.clone()).collect()
    }

    /// Snapshot of all values in declaration order.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces every value from `(name, tensor)` pairs in declaration order.
    pub fn load(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), NnError> {
        if entries.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                entries.len()
            )));
        }
        for (i, (name, value)) in entries.into_iter().enumerate() {
            if self.params[i].name != name {
                return Err(NnError::Checkpoint(format!(
                    "parameter {i}: expected `{}`, found `{name}`",
                    self.params[i].name
                )));
            }
            self.set_value(ParamId(i), value)?;
        }
        Ok(())
    }
}
