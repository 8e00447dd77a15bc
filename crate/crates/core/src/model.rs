//! Early-exit network models: a segmented layer graph with exit branches,
//! incremental per-sample execution with cached activations, and exact
//! analytic MAC accounting for every execution plan.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{sequence_cost, sequence_forward, Layer, MacCount};
use crate::oracle::{OracleExitModel, OracleSpec};
use crate::stream::StreamSample;
use crate::tensor::{ClassScores, Tensor};

/// Whether classifier heads emit raw logits or softmax probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Logits,
    Probabilities,
}

/// The scores produced by one exit for one sample, together with every MAC
/// spent by the execution up to and including that reading. Within a single
/// per-sample execution the count covers the shared backbone prefix plus all
/// branches actually executed so far, so a fresh run to exit `i` reports
/// segments `0..=i` plus branch `i` only, while running every exit in order
/// ends at the full-network cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitReading {
    pub exit_index: usize,
    pub scores: ClassScores,
    pub cumulative_macs: MacCount,
}

/// Lazy per-sample access to exit readings. Implementations cache work:
/// asking for deeper readings reuses the backbone prefix already computed,
/// and asking for the same reading twice returns the cached result.
pub trait ReadingsProvider {
    fn num_exits(&self) -> usize;
    fn score_mode(&self) -> ScoreMode;

    /// Computes (or returns the cached) reading for `exit`, executing only
    /// what is still missing.
    fn reading(&mut self, exit: usize) -> Result<ExitReading>;

    /// Every MAC spent so far in this execution.
    fn spent(&self) -> MacCount;

    /// MACs that `reading(exit)` would add from the current state.
    /// `exit` must be below `num_exits`.
    fn marginal_macs(&self, exit: usize) -> MacCount;

    /// All readings in exit order, sharing one backbone traversal.
    fn all_readings(&mut self) -> Result<Vec<ExitReading>> {
        (0..self.num_exits()).map(|i| self.reading(i)).collect()
    }
}

/// An early-exit model: per-exit analytic costs plus per-sample execution.
///
/// `direct_macs` is the cost of running straight to one exit (backbone
/// segments up to its attachment point plus that branch alone);
/// `cascade_macs` additionally includes every shallower branch, i.e. the cost
/// of evaluating exits in order; `full_macs` is a complete forward pass with
/// all branches; `single_exit_macs` is the no-branch reference model
/// (backbone plus final classifier only).
pub trait ExitModel: Sync {
    fn num_exits(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn score_mode(&self) -> ScoreMode;
    fn direct_macs(&self, exit: usize) -> MacCount;
    fn cascade_macs(&self, exit: usize) -> MacCount;

    fn full_macs(&self) -> MacCount {
        self.cascade_macs(self.num_exits() - 1)
    }

    fn single_exit_macs(&self) -> MacCount {
        self.direct_macs(self.num_exits() - 1)
    }

    fn execution<'a>(&'a self, sample: &'a StreamSample) -> Result<Box<dyn ReadingsProvider + 'a>>;
}

/// Shared cost bookkeeping for executions: per-segment and per-branch costs,
/// how far the backbone has been advanced, and which branches ran.
#[derive(Debug, Clone)]
pub(crate) struct CostLedger {
    segment_costs: Vec<MacCount>,
    branch_costs: Vec<MacCount>,
    segments_done: usize,
    branch_done: Vec<bool>,
    spent: MacCount,
}

impl CostLedger {
    pub(crate) fn new(segment_costs: Vec<MacCount>, branch_costs: Vec<MacCount>) -> Self {
        let exits = branch_costs.len();
        CostLedger {
            segment_costs,
            branch_costs,
            segments_done: 0,
            branch_done: vec![false; exits],
            spent: MacCount::ZERO,
        }
    }

    pub(crate) fn spent(&self) -> MacCount {
        self.spent
    }

    pub(crate) fn charge_segments_through(&mut self, exit: usize) {
        while self.segments_done <= exit {
            self.spent += self.segment_costs[self.segments_done];
            self.segments_done += 1;
        }
    }

    pub(crate) fn charge_branch(&mut self, exit: usize) {
        if !self.branch_done[exit] {
            self.spent += self.branch_costs[exit];
            self.branch_done[exit] = true;
        }
    }

    pub(crate) fn marginal(&self, exit: usize) -> MacCount {
        let mut extra = MacCount::ZERO;
        for idx in self.segments_done..=exit {
            extra += self.segment_costs[idx];
        }
        if !self.branch_done[exit] {
            extra += self.branch_costs[exit];
        }
        extra
    }
}

/// Serialized form of an [`ExitGraph`]: the model JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub num_classes: usize,
    pub score_mode: ScoreMode,
    pub input_shape: Vec<usize>,
    pub segments: Vec<Vec<Layer>>,
    pub exits: Vec<Vec<Layer>>,
}

/// A validated early-exit layer graph: backbone segments with one exit
/// branch attached after each segment; the last exit is the final
/// classifier. Immutable after load and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitGraph {
    spec: GraphSpec,
    segment_costs: Vec<MacCount>,
    branch_costs: Vec<MacCount>,
    segment_shapes: Vec<Vec<usize>>,
}

impl ExitGraph {
    /// Validates the spec: layer parameters, the shape chain through every
    /// segment and exit, class-count consistency, and strictly increasing
    /// per-exit cumulative cost.
    pub fn from_spec(spec: GraphSpec) -> Result<Self> {
        if spec.segments.is_empty() {
            return Err(Error::Model("model needs at least one segment".into()));
        }
        if spec.segments.len() != spec.exits.len() {
            return Err(Error::Model(format!(
                "{} segments but {} exits; each segment needs one exit branch",
                spec.segments.len(),
                spec.exits.len()
            )));
        }
        if spec.num_classes == 0 {
            return Err(Error::Model("num_classes must be positive".into()));
        }
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(Error::Model(format!(
                "invalid input_shape {:?}",
                spec.input_shape
            )));
        }

        for (i, layer) in spec.segments.iter().flatten().enumerate() {
            layer
                .validate()
                .map_err(|e| Error::Model(format!("segment layer {i}: {e}")))?;
        }
        for (i, layer) in spec.exits.iter().flatten().enumerate() {
            layer
                .validate()
                .map_err(|e| Error::Model(format!("exit layer {i}: {e}")))?;
        }

        let mut segment_costs = Vec::with_capacity(spec.segments.len());
        let mut branch_costs = Vec::with_capacity(spec.exits.len());
        let mut segment_shapes = Vec::with_capacity(spec.segments.len());
        let mut shape = spec.input_shape.clone();

        for (i, (segment, exit)) in spec.segments.iter().zip(&spec.exits).enumerate() {
            segment_costs.push(
                sequence_cost(segment, &shape)
                    .map_err(|e| Error::Model(format!("segment {i}: {e}")))?,
            );
            for layer in segment {
                shape = layer
                    .output_shape(&shape)
                    .map_err(|e| Error::Model(format!("segment {i}: {e}")))?;
            }
            segment_shapes.push(shape.clone());

            branch_costs.push(
                sequence_cost(exit, &shape).map_err(|e| Error::Model(format!("exit {i}: {e}")))?,
            );
            let mut exit_shape = shape.clone();
            for layer in exit {
                exit_shape = layer
                    .output_shape(&exit_shape)
                    .map_err(|e| Error::Model(format!("exit {i}: {e}")))?;
            }
            if exit_shape != [spec.num_classes] {
                return Err(Error::Model(format!(
                    "class-count mismatch: exit {i} outputs shape {exit_shape:?}, expected [{}]",
                    spec.num_classes
                )));
            }
        }

        let graph = ExitGraph {
            spec,
            segment_costs,
            branch_costs,
            segment_shapes,
        };

        let mut previous = graph.direct_macs(0);
        for exit in 1..graph.num_exits() {
            let cost = graph.direct_macs(exit);
            if cost <= previous {
                return Err(Error::Model(format!(
                    "cumulative MAC cost must strictly increase with exit depth; exit {exit} \
                     costs {cost} after {previous}"
                )));
            }
            previous = cost;
        }
        Ok(graph)
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    /// MAC cost of exit `exit`'s branch alone.
    pub fn branch_macs(&self, exit: usize) -> MacCount {
        self.branch_costs[exit]
    }

    /// MAC cost of backbone segment `index` alone.
    pub fn segment_macs(&self, index: usize) -> MacCount {
        self.segment_costs[index]
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.spec).map_err(|e| Error::Parse {
            path: "<memory>".into(),
            source: e,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: GraphSpec = serde_json::from_str(json).map_err(|e| Error::Parse {
            path: "<memory>".into(),
            source: e,
        })?;
        ExitGraph::from_spec(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }
}

impl ExitModel for ExitGraph {
    fn num_exits(&self) -> usize {
        self.spec.exits.len()
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn score_mode(&self) -> ScoreMode {
        self.spec.score_mode
    }

    fn direct_macs(&self, exit: usize) -> MacCount {
        self.segment_costs[..=exit]
            .iter()
            .copied()
            .sum::<MacCount>()
            + self.branch_costs[exit]
    }

    fn cascade_macs(&self, exit: usize) -> MacCount {
        self.segment_costs[..=exit]
            .iter()
            .copied()
            .sum::<MacCount>()
            + self.branch_costs[..=exit].iter().copied().sum()
    }

    fn execution<'a>(&'a self, sample: &'a StreamSample) -> Result<Box<dyn ReadingsProvider + 'a>> {
        if sample.input.shape() != self.input_shape() {
            return Err(Error::shape(
                "model input",
                format!("{:?}", self.input_shape()),
                format!("{:?}", sample.input.shape()),
            ));
        }
        Ok(Box::new(GraphExecution {
            model: self,
            sample,
            activations: Vec::with_capacity(self.spec.segments.len()),
            readings: vec![None; self.num_exits()],
            ledger: CostLedger::new(self.segment_costs.clone(), self.branch_costs.clone()),
        }))
    }
}

/// Per-sample execution context over an [`ExitGraph`]: caches segment
/// activations so increasing exit indices never recompute the backbone.
struct GraphExecution<'a> {
    model: &'a ExitGraph,
    sample: &'a StreamSample,
    activations: Vec<Tensor>,
    readings: Vec<Option<ExitReading>>,
    ledger: CostLedger,
}

impl ReadingsProvider for GraphExecution<'_> {
    fn num_exits(&self) -> usize {
        self.model.num_exits()
    }

    fn score_mode(&self) -> ScoreMode {
        self.model.score_mode()
    }

    fn reading(&mut self, exit: usize) -> Result<ExitReading> {
        if exit >= self.num_exits() {
            return Err(Error::Model(format!(
                "exit {exit} out of range; model has {} exits",
                self.num_exits()
            )));
        }
        if let Some(reading) = &self.readings[exit] {
            return Ok(reading.clone());
        }
        while self.activations.len() <= exit {
            let idx = self.activations.len();
            let input = if idx == 0 {
                &self.sample.input
            } else {
                &self.activations[idx - 1]
            };
            let out = sequence_forward(&self.model.spec.segments[idx], input)?;
            self.activations.push(out);
        }
        self.ledger.charge_segments_through(exit);

        let scores = sequence_forward(&self.model.spec.exits[exit], &self.activations[exit])?;
        self.ledger.charge_branch(exit);

        let reading = ExitReading {
            exit_index: exit,
            scores: scores.into_parts().1,
            cumulative_macs: self.ledger.spent(),
        };
        self.readings[exit] = Some(reading.clone());
        Ok(reading)
    }

    fn spent(&self) -> MacCount {
        self.ledger.spent()
    }

    fn marginal_macs(&self, exit: usize) -> MacCount {
        self.ledger.marginal(exit)
    }
}

/// Any loadable model: a layered graph or a synthetic oracle.
#[derive(Debug, Clone)]
pub enum Model {
    Graph(ExitGraph),
    Oracle(OracleExitModel),
}

impl Model {
    /// Loads a model file. Layered graphs use the plain schema; oracle models
    /// carry `"model_type": "oracle"`.
    pub fn load(path: &Path) -> Result<Model> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            source: e,
        })?;
        let model_type = value
            .get("model_type")
            .and_then(|v| v.as_str())
            .unwrap_or("layered");
        match model_type {
            "oracle" => {
                let spec: OracleSpec = serde_json::from_value(value).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    source: e,
                })?;
                Ok(Model::Oracle(OracleExitModel::from_spec(spec)?))
            }
            "layered" => {
                let spec: GraphSpec = serde_json::from_value(value).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    source: e,
                })?;
                Ok(Model::Graph(ExitGraph::from_spec(spec)?))
            }
            other => Err(Error::Model(format!("unknown model_type {other:?}"))),
        }
    }

    pub fn as_exit_model(&self) -> &dyn ExitModel {
        match self {
            Model::Graph(g) => g,
            Model::Oracle(o) => o,
        }
    }
}

impl ExitModel for Model {
    fn num_exits(&self) -> usize {
        self.as_exit_model().num_exits()
    }

    fn num_classes(&self) -> usize {
        self.as_exit_model().num_classes()
    }

    fn score_mode(&self) -> ScoreMode {
        self.as_exit_model().score_mode()
    }

    fn direct_macs(&self, exit: usize) -> MacCount {
        self.as_exit_model().direct_macs(exit)
    }

    fn cascade_macs(&self, exit: usize) -> MacCount {
        self.as_exit_model().cascade_macs(exit)
    }

    fn execution<'a>(&'a self, sample: &'a StreamSample) -> Result<Box<dyn ReadingsProvider + 'a>> {
        self.as_exit_model().execution(sample)
    }
}

/// Fresh run straight to one exit: backbone segments up to its attachment
/// point plus that branch alone.
pub fn run_to_exit(
    model: &dyn ExitModel,
    sample: &StreamSample,
    exit: usize,
) -> Result<ExitReading> {
    model.execution(sample)?.reading(exit)
}

/// Runs every exit with a single backbone traversal; total MACs equal one
/// full forward pass with all branches.
pub fn run_all_exits(model: &dyn ExitModel, sample: &StreamSample) -> Result<Vec<ExitReading>> {
    model.execution(sample)?.all_readings()
}
