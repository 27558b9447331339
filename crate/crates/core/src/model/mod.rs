//! The assembled model: configuration, forward pass, prediction, training
//! and evaluation.

pub mod config;
pub mod evaluate;
pub mod network;
pub mod train;

pub use config::JointLKConfig;
pub use evaluate::{evaluate, summarize, Category, EvalReport};
pub use network::{argmax, ChoiceScore, Forward, GraphQuery, JointLK, PreparedQuestion};
pub use train::{train, EpochMetrics, TrainReport};
