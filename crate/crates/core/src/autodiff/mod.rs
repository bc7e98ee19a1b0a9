//! Minimal define-by-run reverse-mode automatic differentiation over `f64` tensors.
//!
//! Build a [`Graph`] by calling op methods on it; each returns a [`NodeId`].
//! [`Graph::backward`] on a scalar node returns [`Gradients`] for every
//! trainable leaf, keyed both by node and by parameter name.
//!
//! ```
//! use perturbkit::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let w = g.param("w", Tensor::new(vec![2], vec![3.0, -1.0]));
//! let sq = g.mul(w, w);
//! let s = g.sum(sq);
//! let loss = g.scale(s, 0.5);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.param("w").unwrap().data, vec![3.0, -1.0]);
//! ```

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, GraphError, NodeId, OpTag, LAYER_NORM_EPS};
pub use tensor::Tensor;
