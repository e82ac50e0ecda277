//! Multi-task fine-grained emotion classification with emotion-definition
//! auxiliary tasks, built from scratch on a small reverse-mode autodiff
//! engine.
//!
//! The crate trains a miniature transformer encoder jointly on:
//!
//! * the primary task, multi-label emotion classification with sigmoid
//!   binary cross-entropy and threshold-based inference, and
//! * auxiliary definition tasks: Class Definition Prediction (CDP) over
//!   (text, emotion-definition) pairs, and Masked Language Modeling (MLM)
//!   over the same pairs,
//!
//! with a Bernoulli(p) choice between primary and auxiliary steps at every
//! iteration. A transfer harness reuses a trained backbone on new
//! single-label datasets across a train-size x random-split sweep.
//!
//! ```
//! use defemo::graph::Graph;
//! use defemo::tensor::Tensor;
//!
//! let mut g = Graph::new(false);
//! let x = g.leaf("x", Tensor::from_vec(vec![3.0_f64]), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.mean(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]); // d(x^2)/dx at x=3
//! ```

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod protocol;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;
pub mod transfer;

pub use error::{Error, Result};
