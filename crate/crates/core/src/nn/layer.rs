use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

/// Identifies one learnable tensor. Layer `slot` owns ids `2*slot`
/// (weight) and `2*slot + 1` (bias).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

impl ParamId {
    pub fn weight(slot: usize) -> Self {
        ParamId(2 * slot)
    }

    pub fn bias(slot: usize) -> Self {
        ParamId(2 * slot + 1)
    }

    pub fn slot(self) -> usize {
        self.0 / 2
    }

    pub fn is_weight(self) -> bool {
        self.0 % 2 == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out x in`
    pub weight: Tensor2<T>,
    /// `out x 1`
    pub bias: Tensor2<T>,
    pub activation: Activation,
    pub slot: usize,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(input: usize, output: usize, activation: Activation, slot: usize) -> Self {
        Self {
            weight: Tensor2::zeros(output, input),
            bias: Tensor2::zeros(output, 1),
            activation,
            slot,
        }
    }

    /// Uniform init in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        slot: usize,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(input, output, activation, slot);
        let limit = (6.0 / (input + output) as f64).sqrt();
        for w in layer.weight.as_mut_slice() {
            *w = T::lit(rng.random_range(-limit..limit));
        }
        layer
    }

    pub fn identity(n: usize, activation: Activation, slot: usize) -> Self {
        Self {
            weight: Tensor2::identity(n),
            bias: Tensor2::zeros(n, 1),
            activation,
            slot,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight_id(&self) -> ParamId {
        ParamId::weight(self.slot)
    }

    pub fn bias_id(&self) -> ParamId {
        ParamId::bias(self.slot)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn forward(&self, x: &Tensor2<T>) -> Result<Tensor2<T>> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape("dense_forward", self.weight.shape(), x.shape()));
        }
        let act = self.activation;
        Ok(self.weight.matmul(x)?.add_column(&self.bias)?.map(|v| act.apply(v)))
    }
}

/// A collection of learnable tensors addressable by [`ParamId`].
pub trait ParamSet<T> {
    fn param_ids(&self) -> Vec<ParamId>;
    fn param(&self, id: ParamId) -> Option<&Tensor2<T>>;
    fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor2<T>>;
}

/// Layers stored so that `layers[i].slot == i`.
impl<T: Scalar> ParamSet<T> for [DenseLayer<T>] {
    fn param_ids(&self) -> Vec<ParamId> {
        self.iter().flat_map(|l| [l.weight_id(), l.bias_id()]).collect()
    }

    fn param(&self, id: ParamId) -> Option<&Tensor2<T>> {
        let layer = self.get(id.slot())?;
        debug_assert_eq!(layer.slot, id.slot());
        Some(if id.is_weight() { &layer.weight } else { &layer.bias })
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor2<T>> {
        let layer = self.get_mut(id.slot())?;
        Some(if id.is_weight() {
            &mut layer.weight
        } else {
            &mut layer.bias
        })
    }
}

impl<T: Scalar> ParamSet<T> for Vec<DenseLayer<T>> {
    fn param_ids(&self) -> Vec<ParamId> {
        self.as_slice().param_ids()
    }

    fn param(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.as_slice().param(id)
    }

    fn param_mut(&mut self, id: ParamId) -> Option<&mut Tensor2<T>> {
        self.as_mut_slice().param_mut(id)
    }
}
