//! Dense n-dimensional arrays with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in an append-only
//! tape. Values are computed eagerly; [`Graph::backward`] sweeps the tape in
//! reverse and returns a [`Gradients`] accessor for every node that requires
//! a gradient.
//!
//! The engine is generic over the element type through [`Scalar`]. Networks
//! run in `f32`; the same code re-executes in `f64` for finite-difference
//! gradient checks.
//!
//! ```
//! use ndautograd::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let w = g.param(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
//! let x = g.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
//! let y = g.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
//! let wx = g.matmul(x, w).unwrap();
//! let loss = g.mse_loss(wx, y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[8.0]);
//! ```

pub mod check;
mod error;
mod graph;
mod ops;
mod scalar;
mod tensor;

pub use error::{Error, Result};
pub use graph::{BufferPool, Gradients, Graph, Var};
pub use ops::{Activation, Conv2dSpec, NormMode, PoolKind, DEFAULT_NORM_EPS};
pub use scalar::Scalar;
pub use tensor::Tensor;
