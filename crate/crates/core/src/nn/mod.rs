//! Differentiable building blocks shared by the generators.

pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod mixture;
pub mod params;
pub mod tape;

pub use blocks::{gat_propagate, gru_step, mlp_apply, EdgeIndex, GatLayer, Gru, Linear, Mlp};
pub use checkpoint::{Checkpoint, RngState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use mixture::{BernMixParams, GmmParams2D};
pub use params::{Adam, AdamConfig, Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};
