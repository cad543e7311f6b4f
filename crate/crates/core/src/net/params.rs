use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether L2 regularization applies (false for biases and gates).
    pub decay: bool,
}

/// Named network parameters in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            decay,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Registers a conv kernel `[kh, kw, cin, cout]` with Glorot-uniform init
    /// and its zero bias.
    pub fn add_conv(
        &mut self,
        name: &str,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ParamId, ParamId)> {
        let fan_in = (kh * kw * cin) as f64;
        let fan_out = (kh * kw * cout) as f64;
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        let data = (0..kh * kw * cin * cout)
            .map(|_| T::lit(rng.random_range(-limit..limit)))
            .collect();
        let w = self.add(
            &format!("{name}.weight"),
            Tensor::from_vec(&[kh, kw, cin, cout], data)?,
            true,
        )?;
        let b = self.add(&format!("{name}.bias"), Tensor::zeros(&[cout]), false)?;
        Ok((w, b))
    }

    pub fn set_decay(&mut self, id: ParamId, decay: bool) {
        self.params[id.0].decay = decay;
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| self.get_mut(id))
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zeroed gradient slots, one per parameter, same shapes.
    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            slots: self
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
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
                    decay: p.decay,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient slots matching a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    slots: Vec<Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn accumulate(&mut self, id: ParamId, g: &Tensor<T>) {
        self.slots[id.0].add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.slots[id.0]
    }

    pub fn slots(&self) -> &[Tensor<T>] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.slots
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.add_assign(b);
        }
    }
}
