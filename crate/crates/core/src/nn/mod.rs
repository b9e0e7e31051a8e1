//! A small reverse-mode differentiation kernel and the layers built on it.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{dropout, Attention, Dense, Lstm};
pub use loss::{mean_weighted_bce, weighted_bce};
pub use optim::AdamState;
pub use params::{Grads, Init, Param, ParamId, ParamStore};
pub use tape::{sigmoid, NodeId, Tape};
