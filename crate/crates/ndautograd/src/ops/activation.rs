use super::Op;
use crate::graph::{GradAcc, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Cosine,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Cosine => v.cos(),
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Cosine => "cosine",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let value = self.value(x);
        let out = value.data().iter().map(|&v| kind.apply(v)).collect();
        let shape = value.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Activation { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn cosine(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Cosine)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }
}

pub(super) fn backward<T: Scalar>(
    x: Var,
    kind: Activation,
    out: &Tensor<T>,
    grad: &[T],
    acc: &mut GradAcc<'_, T>,
) {
    if !acc.wants(x) {
        return;
    }
    let d: Vec<T> = match kind {
        Activation::Cosine => acc
            .value(x)
            .data()
            .iter()
            .zip(grad)
            .map(|(&v, &g)| -v.sin() * g)
            .collect(),
        Activation::Relu => acc
            .value(x)
            .data()
            .iter()
            .zip(grad)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Sigmoid => out
            .data()
            .iter()
            .zip(grad)
            .map(|(&y, &g)| y * (T::one() - y) * g)
            .collect(),
    };
    acc.add_owned(x, d);
}
