//! Conditional GAN engine for label-conditioned 64×64 grayscale facial-expression
//! synthesis, with the training loop and the class-balancing pipeline built on it.

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod models;
pub mod optim;
pub mod pgm;
pub mod tensor;
pub mod training;

pub use autodiff::{finite_diff_check, Activation, Gradients, Graph, Parameter, Var};
pub use error::{Error, Result};
pub use tensor::{DType, Element, Tensor};
