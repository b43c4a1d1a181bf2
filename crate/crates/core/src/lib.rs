//! Core library for ciskip: commit-feature mining, dataset handling, the
//! fixed-shape decision tree, and the parameterized Q-learning trainer that
//! fits the tree's splits.

pub mod agent;
pub mod dataset;
pub mod error;
pub mod gitfeat;
pub mod metrics;
pub mod neural;
pub mod replay;
pub mod synth;
pub mod trainer;
pub mod tree;

pub use agent::{Action, Agent, AgentConfig};
pub use dataset::{
    Dataset, FeatureKind, FeatureSchema, FeatureSpec, FeatureVector, Label,
};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, EvalScores};
pub use replay::{PrioritizedBuffer, Transition};
pub use trainer::{Checkpoint, EpisodeStats, RewardMetric, TrainConfig, TrainReport};
pub use tree::{DecisionTree, TreeNode, TreeState};
