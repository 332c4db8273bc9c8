//! Video saliency prediction with an object-to-motion CNN and a two-layer
//! convolutional LSTM, built on a small reverse-mode autodiff engine.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod clstm;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
mod kernels;
pub mod loss;
pub mod map;
pub mod metrics;
pub mod nn;
pub mod omcnn;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Mode, Padding, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::{Element, Tensor};
