//! Parametric unary and pairwise scoring functions and their training.

mod grad;
mod model;
mod train;

pub use grad::{batch_loss, gradients, Branch, Minibatch, PairTerm, UnaryTerm};
pub use model::{Embedding, Linear, LinearUnary, Projection, RelationPairwise, Scope, ScoringModel};
pub use train::{retrain, sgd_step, train_source, TrainConfig, TrainReport, Velocity};
