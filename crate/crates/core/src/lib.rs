//! Early-exit neural network runtime and evaluation harness.
//!
//! The crate provides:
//!
//! - a minimal deterministic feed-forward kernel with exact per-layer
//!   multiply-accumulate accounting ([`layer`], [`tensor`]);
//! - early-exit models as segmented layer graphs with incremental
//!   execution, plus synthetic oracle models with configured per-exit
//!   accuracies ([`model`], [`oracle`]);
//! - termination policies that exploit temporal correlation in input
//!   streams (Difference Detection, Temporal Patience) alongside
//!   confidence, patience, budget and input-filter baselines ([`policy`]);
//! - temporally correlated stream generators and augmentation ([`stream`]);
//! - a threshold-sweep evaluation harness with CSV and SVG output
//!   ([`eval`]).

pub mod error;
pub mod eval;
pub mod layer;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod stream;
pub mod tensor;

pub use error::{Error, Result};
pub use eval::{evaluate, sweep, SweepRecord};
pub use layer::{Layer, MacCount, Padding};
pub use model::{
    run_all_exits, run_to_exit, ExitGraph, ExitModel, ExitReading, GraphSpec, Model,
    ReadingsProvider, ScoreMode,
};
pub use oracle::{Nesting, OracleExitModel, OracleSpec};
pub use policy::{
    change, majority_vote, select_exit, ConfidenceMetric, Decision, LabelingMode, Policy,
    PolicyConfig, PolicyKind, SceneState,
};
pub use stream::{
    generate_scene_stream, overlap_segments, synthesize_recording, zoom_sequence, SceneSpec,
    StreamSample,
};
pub use tensor::{argmax, euclidean_distance, softmax, ClassScores, Tensor};
