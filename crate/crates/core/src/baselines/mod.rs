//! Reference generators trained and sampled through the same interfaces as the main model.

pub mod plaingen;
pub mod seqgen;
