//! Termination policies for early-exit inference over temporally correlated
//! streams: Difference Detection and Temporal Patience maintain per-stream
//! scene state, while the confidence, patience, budget and input-filter
//! baselines decide per sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::MacCount;
use crate::model::{ExitReading, ReadingsProvider, ScoreMode};
use crate::stream::StreamSample;
use crate::tensor::{argmax, euclidean_distance, softmax, ClassScores, Tensor};

/// How a new scene's reference sample receives its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingMode {
    /// Majority vote across every exit including the final classifier.
    MajorityVote,
    /// The final classifier's label alone.
    FinalClassifier,
}

impl LabelingMode {
    pub fn name(self) -> &'static str {
        match self {
            LabelingMode::MajorityVote => "majority_vote",
            LabelingMode::FinalClassifier => "final_classifier",
        }
    }
}

/// Metric used by the confidence baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMetric {
    /// Terminate when the top probability reaches the threshold.
    MaxProb,
    /// Terminate when top-1 minus top-2 probability reaches the threshold.
    ScoreMargin,
    /// Terminate when the entropy (nats) falls to the threshold or below.
    Entropy,
}

impl ConfidenceMetric {
    pub fn name(self) -> &'static str {
        match self {
            ConfidenceMetric::MaxProb => "max_prob",
            ConfidenceMetric::ScoreMargin => "score_margin",
            ConfidenceMetric::Entropy => "entropy",
        }
    }
}

/// The available termination policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    DifferenceDetection,
    TemporalPatience,
    Confidence,
    Patience,
    BudgetAPriori,
    BudgetJustInTime,
    InputFilter,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DifferenceDetection => "difference_detection",
            PolicyKind::TemporalPatience => "temporal_patience",
            PolicyKind::Confidence => "confidence",
            PolicyKind::Patience => "patience",
            PolicyKind::BudgetAPriori => "budget_a_priori",
            PolicyKind::BudgetJustInTime => "budget_just_in_time",
            PolicyKind::InputFilter => "input_filter",
        }
    }

    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::DifferenceDetection,
        PolicyKind::TemporalPatience,
        PolicyKind::Confidence,
        PolicyKind::Patience,
        PolicyKind::BudgetAPriori,
        PolicyKind::BudgetJustInTime,
        PolicyKind::InputFilter,
    ];
}

/// Configuration shared across policies; each policy reads the fields it
/// needs. Distances are Euclidean throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Decision threshold: a score/input distance for the temporal policies
    /// and the input filter, a confidence level for the confidence baseline.
    #[serde(default)]
    pub threshold: f64,
    #[serde(default = "default_labeling")]
    pub labeling: LabelingMode,
    #[serde(default = "default_metric")]
    pub metric: ConfidenceMetric,
    /// Window for the patience baseline: terminate once this many
    /// consecutive exits agree.
    #[serde(default = "default_window")]
    pub patience_window: usize,
    /// MAC budget for the budget baselines.
    #[serde(default)]
    pub budget: MacCount,
}

fn default_labeling() -> LabelingMode {
    LabelingMode::MajorityVote
}

fn default_metric() -> ConfidenceMetric {
    ConfidenceMetric::MaxProb
}

fn default_window() -> usize {
    2
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            threshold: 0.0,
            labeling: default_labeling(),
            metric: default_metric(),
            patience_window: default_window(),
            budget: MacCount::ZERO,
        }
    }
}

/// Mutable per-stream scene state for the temporal policies. The selected
/// exit is fixed for the scene's lifetime; every distance compares against
/// the reference sample's scores at that exit.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub reference_scores: ClassScores,
    pub selected_exit: usize,
    pub scene_label: usize,
    pub scene_id: u64,
    pub samples_in_scene: usize,
}

/// Per-sample policy verdict. `terminated_at` is the deepest exit actually
/// executed; it is `None` when the input filter reused a cached output and
/// executed nothing. `macs_spent` is exactly what the execution spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub label: usize,
    pub terminated_at: Option<usize>,
    pub macs_spent: MacCount,
    pub new_scene: bool,
}

/// Change metric between a sample's scores and the scene reference:
/// the Euclidean distance, on whatever the model emits (no renormalization).
pub fn change(current: &[f64], reference: &[f64]) -> Result<f64> {
    euclidean_distance(current, reference)
}

/// Majority vote over per-exit predicted labels, every exit voting once.
/// Ties break to the tied class voted for by the deepest exit (walking from
/// the deepest voter down until one's label is among the tied classes), so a
/// two-head vote always resolves to the final classifier under disagreement.
pub fn majority_vote(scores: &[ClassScores]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Config("majority vote over zero readings".into()));
    }
    let labels: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let num_classes = scores[0].len();
    let mut counts = vec![0usize; num_classes];
    for &label in &labels {
        counts[label] += 1;
    }
    let best = *counts.iter().max().expect("non-empty counts");
    let tied: Vec<usize> = (0..num_classes).filter(|&c| counts[c] == best).collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    for &label in labels.iter().rev() {
        if tied.contains(&label) {
            return Ok(label);
        }
    }
    Ok(tied[0])
}

/// Shallowest exit whose argmax agrees with the vote label; falls back to
/// the final exit if none agrees (under majority voting at least one voter
/// always does).
pub fn select_exit(readings: &[ExitReading], vote_label: usize) -> usize {
    readings
        .iter()
        .position(|r| argmax(&r.scores) == vote_label)
        .unwrap_or(readings.len() - 1)
}

/// A policy instance owns the state for exactly one stream.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    config: PolicyConfig,
    scene: Option<SceneState>,
    next_scene_id: u64,
    input_reference: Option<(Tensor, usize)>,
}

impl Policy {
    pub fn new(kind: PolicyKind, config: PolicyConfig) -> Result<Self> {
        match kind {
            PolicyKind::DifferenceDetection
            | PolicyKind::TemporalPatience
            | PolicyKind::InputFilter => {
                if config.threshold.is_nan() || config.threshold < 0.0 {
                    return Err(Error::Config(format!(
                        "threshold must be non-negative, got {}",
                        config.threshold
                    )));
                }
            }
            PolicyKind::Confidence => {
                if config.threshold.is_nan() || config.threshold < 0.0 {
                    return Err(Error::Config(format!(
                        "confidence threshold must be non-negative, got {}",
                        config.threshold
                    )));
                }
            }
            PolicyKind::Patience => {
                if config.patience_window < 2 {
                    return Err(Error::Config(format!(
                        "patience_window must be at least 2, got {}",
                        config.patience_window
                    )));
                }
            }
            PolicyKind::BudgetAPriori | PolicyKind::BudgetJustInTime => {}
        }
        Ok(Policy {
            kind,
            config,
            scene: None,
            next_scene_id: 0,
            input_reference: None,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn scene(&self) -> Option<&SceneState> {
        self.scene.as_ref()
    }

    /// Clears all stream state; the next sample starts a fresh stream.
    pub fn reset(&mut self) {
        self.scene = None;
        self.next_scene_id = 0;
        self.input_reference = None;
    }

    /// Processes one stream sample through the policy.
    pub fn step(
        &mut self,
        provider: &mut dyn ReadingsProvider,
        sample: &StreamSample,
    ) -> Result<Decision> {
        match self.kind {
            PolicyKind::DifferenceDetection => self.difference_detection_step(provider),
            PolicyKind::TemporalPatience => self.temporal_patience_step(provider),
            PolicyKind::Confidence => self.confidence_step(provider),
            PolicyKind::Patience => self.patience_step(provider),
            PolicyKind::BudgetAPriori => self.budget_step(provider, true),
            PolicyKind::BudgetJustInTime => self.budget_step(provider, false),
            PolicyKind::InputFilter => self.input_filter_step(provider, sample),
        }
    }

    fn scene_label(&self, readings: &[ExitReading]) -> Result<usize> {
        match self.config.labeling {
            LabelingMode::MajorityVote => {
                let scores: Vec<ClassScores> = readings.iter().map(|r| r.scores.clone()).collect();
                majority_vote(&scores)
            }
            LabelingMode::FinalClassifier => {
                Ok(argmax(&readings.last().expect("at least one exit").scores))
            }
        }
    }

    /// Compares every sample at exit 0 against the scene reference; while the
    /// change stays under the threshold the scene's vote label is reused at
    /// exit-0 cost, otherwise all exits run and the sample re-anchors the
    /// scene. The first sample of a stream always starts a scene.
    fn difference_detection_step(
        &mut self,
        provider: &mut dyn ReadingsProvider,
    ) -> Result<Decision> {
        let first = provider.reading(0)?;
        if let Some(scene) = &mut self.scene {
            let distance = change(&first.scores, &scene.reference_scores)?;
            if distance < self.config.threshold {
                scene.samples_in_scene += 1;
                return Ok(Decision {
                    label: scene.scene_label,
                    terminated_at: Some(0),
                    macs_spent: provider.spent(),
                    new_scene: false,
                });
            }
        }
        let readings = provider.all_readings()?;
        let label = self.scene_label(&readings)?;
        self.scene = Some(SceneState {
            reference_scores: first.scores,
            selected_exit: 0,
            scene_label: label,
            scene_id: self.next_scene_id,
            samples_in_scene: 1,
        });
        self.next_scene_id += 1;
        Ok(Decision {
            label,
            terminated_at: Some(readings.len() - 1),
            macs_spent: provider.spent(),
            new_scene: true,
        })
    }

    /// Compares at the scene's selected exit (the shallowest one that agreed
    /// with the scene vote) and stays in-scene only while both the distance
    /// is under the threshold and the argmax is unchanged. In-scene samples
    /// emit the current argmax at the selected exit.
    fn temporal_patience_step(&mut self, provider: &mut dyn ReadingsProvider) -> Result<Decision> {
        if let Some(scene) = &mut self.scene {
            let current = provider.reading(scene.selected_exit)?;
            let distance = change(&current.scores, &scene.reference_scores)?;
            let current_label = argmax(&current.scores);
            let reference_label = argmax(&scene.reference_scores);
            if distance < self.config.threshold && current_label == reference_label {
                scene.samples_in_scene += 1;
                return Ok(Decision {
                    label: current_label,
                    terminated_at: Some(scene.selected_exit),
                    macs_spent: provider.spent(),
                    new_scene: false,
                });
            }
        }
        let readings = provider.all_readings()?;
        let label = self.scene_label(&readings)?;
        let selected = select_exit(&readings, label);
        self.scene = Some(SceneState {
            reference_scores: readings[selected].scores.clone(),
            selected_exit: selected,
            scene_label: label,
            scene_id: self.next_scene_id,
            samples_in_scene: 1,
        });
        self.next_scene_id += 1;
        Ok(Decision {
            label,
            terminated_at: Some(readings.len() - 1),
            macs_spent: provider.spent(),
            new_scene: true,
        })
    }

    fn confidence_value(&self, scores: &[f64], mode: ScoreMode) -> f64 {
        let probs = match mode {
            ScoreMode::Probabilities => scores.to_vec(),
            ScoreMode::Logits => softmax(scores),
        };
        match self.config.metric {
            ConfidenceMetric::MaxProb => probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ConfidenceMetric::ScoreMargin => {
                let mut top = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for &p in &probs {
                    if p > top {
                        second = top;
                        top = p;
                    } else if p > second {
                        second = p;
                    }
                }
                if second.is_finite() {
                    top - second
                } else {
                    top
                }
            }
            ConfidenceMetric::Entropy => -probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>(),
        }
    }

    /// Evaluates exits in order, terminating at the first whose confidence
    /// metric passes the threshold; otherwise the final exit decides.
    /// Stateless across samples.
    fn confidence_step(&mut self, provider: &mut dyn ReadingsProvider) -> Result<Decision> {
        let exits = provider.num_exits();
        let mode = provider.score_mode();
        for exit in 0..exits - 1 {
            let reading = provider.reading(exit)?;
            let value = self.confidence_value(&reading.scores, mode);
            let pass = match self.config.metric {
                ConfidenceMetric::Entropy => value <= self.config.threshold,
                _ => value >= self.config.threshold,
            };
            if pass {
                return Ok(Decision {
                    label: argmax(&reading.scores),
                    terminated_at: Some(exit),
                    macs_spent: provider.spent(),
                    new_scene: false,
                });
            }
        }
        let last = provider.reading(exits - 1)?;
        Ok(Decision {
            label: argmax(&last.scores),
            terminated_at: Some(exits - 1),
            macs_spent: provider.spent(),
            new_scene: false,
        })
    }

    /// Terminates once the last `patience_window` consecutive exits agree on
    /// the label; otherwise the final exit decides. Stateless across samples.
    fn patience_step(&mut self, provider: &mut dyn ReadingsProvider) -> Result<Decision> {
        let exits = provider.num_exits();
        let window = self.config.patience_window;
        let mut run_label: Option<usize> = None;
        let mut run_len = 0usize;
        let mut last_label = 0usize;
        for exit in 0..exits {
            let reading = provider.reading(exit)?;
            let label = argmax(&reading.scores);
            last_label = label;
            if run_label == Some(label) {
                run_len += 1;
            } else {
                run_label = Some(label);
                run_len = 1;
            }
            if run_len == window {
                return Ok(Decision {
                    label,
                    terminated_at: Some(exit),
                    macs_spent: provider.spent(),
                    new_scene: false,
                });
            }
        }
        Ok(Decision {
            label: last_label,
            terminated_at: Some(exits - 1),
            macs_spent: provider.spent(),
            new_scene: false,
        })
    }

    /// Budget-bound execution. A-priori runs exactly the deepest exit whose
    /// direct cost fits the budget; just-in-time runs exits in order, keeping
    /// the last completed label, and stops before the budget would be
    /// exceeded. The budget must cover the cheapest exit.
    fn budget_step(
        &mut self,
        provider: &mut dyn ReadingsProvider,
        a_priori: bool,
    ) -> Result<Decision> {
        let exits = provider.num_exits();
        let budget = self.config.budget;
        if provider.marginal_macs(0) > budget {
            return Err(Error::Config(format!(
                "budget {budget} is below the cheapest exit's cost {}",
                provider.marginal_macs(0)
            )));
        }
        if a_priori {
            // Direct costs, read before anything executes.
            let direct: Vec<MacCount> = (0..exits).map(|e| provider.marginal_macs(e)).collect();
            let chosen = (0..exits)
                .rev()
                .find(|&e| direct[e] <= budget)
                .expect("exit 0 fits");
            let reading = provider.reading(chosen)?;
            return Ok(Decision {
                label: argmax(&reading.scores),
                terminated_at: Some(chosen),
                macs_spent: provider.spent(),
                new_scene: false,
            });
        }
        let mut last = provider.reading(0)?;
        for exit in 1..exits {
            let marginal = provider.marginal_macs(exit);
            if provider.spent() + marginal > budget {
                break;
            }
            last = provider.reading(exit)?;
        }
        Ok(Decision {
            label: argmax(&last.scores),
            terminated_at: Some(last.exit_index),
            macs_spent: provider.spent(),
            new_scene: false,
        })
    }

    /// Generic input-difference filtering: if the raw input is within the
    /// threshold of the stored reference input, the previous output is
    /// reused at zero cost; otherwise the final classifier runs and the
    /// current input becomes the reference. Holding the reference input
    /// costs one input's worth of memory, which exceeds a score vector
    /// whenever the input dimension is larger than the class count.
    fn input_filter_step(
        &mut self,
        provider: &mut dyn ReadingsProvider,
        sample: &StreamSample,
    ) -> Result<Decision> {
        if let Some((reference, cached_label)) = &self.input_reference {
            let distance = change(sample.input.data(), reference.data())?;
            if distance < self.config.threshold {
                return Ok(Decision {
                    label: *cached_label,
                    terminated_at: None,
                    macs_spent: provider.spent(),
                    new_scene: false,
                });
            }
        }
        let final_exit = provider.num_exits() - 1;
        let reading = provider.reading(final_exit)?;
        let label = argmax(&reading.scores);
        self.input_reference = Some((sample.input.clone(), label));
        Ok(Decision {
            label,
            terminated_at: Some(final_exit),
            macs_spent: provider.spent(),
            new_scene: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostLedger;

    /// Hand-built provider with fixed per-exit scores and a cost table.
    struct FixedProvider {
        scores: Vec<ClassScores>,
        ledger: CostLedger,
        mode: ScoreMode,
    }

    impl FixedProvider {
        fn new(scores: Vec<ClassScores>, segment: Vec<u64>, branch: Vec<u64>) -> Self {
            FixedProvider {
                scores,
                ledger: CostLedger::new(
                    segment.into_iter().map(MacCount).collect(),
                    branch.into_iter().map(MacCount).collect(),
                ),
                mode: ScoreMode::Probabilities,
            }
        }

        fn uniform_costs(scores: Vec<ClassScores>) -> Self {
            let n = scores.len();
            FixedProvider::new(scores, vec![10; n], vec![1; n])
        }
    }

    impl ReadingsProvider for FixedProvider {
        fn num_exits(&self) -> usize {
            self.scores.len()
        }

        fn score_mode(&self) -> ScoreMode {
            self.mode
        }

        fn reading(&mut self, exit: usize) -> Result<ExitReading> {
            self.ledger.charge_segments_through(exit);
            self.ledger.charge_branch(exit);
            Ok(ExitReading {
                exit_index: exit,
                scores: self.scores[exit].clone(),
                cumulative_macs: self.ledger.spent(),
            })
        }

        fn spent(&self) -> MacCount {
            self.ledger.spent()
        }

        fn marginal_macs(&self, exit: usize) -> MacCount {
            self.ledger.marginal(exit)
        }
    }

    fn one_hot(label: usize, classes: usize) -> ClassScores {
        let mut v = vec![0.0; classes];
        v[label] = 1.0;
        v
    }

    fn sample() -> StreamSample {
        StreamSample {
            input: Tensor::from_vec(vec![0.0, 0.0]).unwrap(),
            true_label: 0,
            scene_truth: None,
        }
    }

    #[test]
    fn change_examples() {
        assert_eq!(change(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let d = change(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12);
        assert!(change(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn vote_strict_majority() {
        let scores = vec![one_hot(1, 3), one_hot(1, 3), one_hot(2, 3)];
        assert_eq!(majority_vote(&scores).unwrap(), 1);
    }

    #[test]
    fn vote_single_reading() {
        assert_eq!(majority_vote(&[one_hot(3, 5)]).unwrap(), 3);
    }

    #[test]
    fn vote_tie_resolves_to_deepest_voter() {
        // Two heads disagreeing: the final classifier's label wins the tie,
        // which keeps a single-early-exit vote identical to the final label.
        let scores = vec![one_hot(0, 3), one_hot(1, 3)];
        assert_eq!(majority_vote(&scores).unwrap(), 1);

        // Three-way tie: deepest voter again.
        let scores = vec![one_hot(0, 3), one_hot(2, 3), one_hot(1, 3)];
        assert_eq!(majority_vote(&scores).unwrap(), 1);

        // Exhaustive two-exit enumeration: under disagreement the vote always
        // matches the deeper head.
        for a in 0..3 {
            for b in 0..3 {
                let vote = majority_vote(&[one_hot(a, 3), one_hot(b, 3)]).unwrap();
                assert_eq!(vote, b, "vote({a},{b})");
            }
        }
    }

    #[test]
    fn vote_empty_errors() {
        assert!(majority_vote(&[]).is_err());
    }

    fn readings_from(labels: &[usize], classes: usize) -> Vec<ExitReading> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ExitReading {
                exit_index: i,
                scores: one_hot(l, classes),
                cumulative_macs: MacCount((i + 1) as u64),
            })
            .collect()
    }

    #[test]
    fn select_exit_shallowest_agreement() {
        let readings = readings_from(&[2, 1, 1], 3);
        assert_eq!(select_exit(&readings, 1), 1);
        let readings = readings_from(&[1, 1, 1], 3);
        assert_eq!(select_exit(&readings, 1), 0);
        let readings = readings_from(&[0, 2, 1], 3);
        assert_eq!(select_exit(&readings, 0), 0);
        // No agreement: fall back to the final exit.
        let readings = readings_from(&[0, 0, 0], 3);
        assert_eq!(select_exit(&readings, 2), 2);
    }

    #[test]
    fn difference_detection_reuses_scene_label() {
        let mut policy = Policy::new(
            PolicyKind::DifferenceDetection,
            PolicyConfig {
                threshold: 0.5,
                ..PolicyConfig::default()
            },
        )
        .unwrap();

        // First sample: full evaluation, scene starts.
        let mut p = FixedProvider::uniform_costs(vec![one_hot(0, 3), one_hot(1, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(d.new_scene);
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.label, 1); // tie resolves to the deeper head
        assert_eq!(d.macs_spent, MacCount(22)); // full cascade cost

        // Second sample: same exit-0 scores, stays in scene at exit-0 cost.
        let mut p = FixedProvider::uniform_costs(vec![one_hot(0, 3), one_hot(2, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(!d.new_scene);
        assert_eq!(d.terminated_at, Some(0));
        assert_eq!(d.label, 1); // frozen scene label
        assert_eq!(d.macs_spent, MacCount(11)); // segment 0 + branch 0

        // Third sample: exit-0 moved beyond the threshold, new scene.
        let mut p = FixedProvider::uniform_costs(vec![one_hot(2, 3), one_hot(2, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(d.new_scene);
        assert_eq!(d.label, 2);
    }

    #[test]
    fn difference_detection_two_scene_stream() {
        // Two constructed scenes of three samples each: exit-0 scores jitter
        // by 0.01 inside a scene and jump by ~1.4 across the boundary, so a
        // threshold of 0.5 sits between the two distance populations.
        let mut policy = Policy::new(
            PolicyKind::DifferenceDetection,
            PolicyConfig {
                threshold: 0.5,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let scene_a = [
            vec![1.0, 0.0, 0.0],
            vec![0.99, 0.01, 0.0],
            vec![1.01, 0.0, 0.01],
        ];
        let scene_b = [
            vec![0.0, 1.0, 0.0],
            vec![0.01, 0.99, 0.0],
            vec![0.0, 1.01, 0.01],
        ];
        let mut decisions = Vec::new();
        for exit0 in scene_a.iter().chain(&scene_b) {
            let mut p = FixedProvider::uniform_costs(vec![exit0.clone(), exit0.clone()]);
            decisions.push(policy.step(&mut p, &sample()).unwrap());
        }
        let boundaries: Vec<bool> = decisions.iter().map(|d| d.new_scene).collect();
        assert_eq!(boundaries, vec![true, false, false, true, false, false]);
        assert_eq!(decisions.iter().filter(|d| d.new_scene).count(), 2);
        for d in &decisions {
            if d.new_scene {
                assert_eq!(d.terminated_at, Some(1));
            } else {
                assert_eq!(d.terminated_at, Some(0));
            }
        }
        let labels: Vec<usize> = decisions.iter().map(|d| d.label).collect();
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn difference_detection_threshold_zero_always_new_scene() {
        let mut policy =
            Policy::new(PolicyKind::DifferenceDetection, PolicyConfig::default()).unwrap();
        for _ in 0..3 {
            let mut p = FixedProvider::uniform_costs(vec![one_hot(0, 3), one_hot(0, 3)]);
            let d = policy.step(&mut p, &sample()).unwrap();
            assert!(d.new_scene, "0 < 0 never holds, every sample re-anchors");
        }
    }

    #[test]
    fn difference_detection_infinite_threshold_single_scene() {
        let mut policy = Policy::new(
            PolicyKind::DifferenceDetection,
            PolicyConfig {
                threshold: f64::INFINITY,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut full = 0;
        for i in 0..5 {
            let scores = vec![one_hot(i % 3, 3), one_hot((i + 1) % 3, 3)];
            let mut p = FixedProvider::uniform_costs(scores);
            let d = policy.step(&mut p, &sample()).unwrap();
            if d.new_scene {
                full += 1;
            }
        }
        assert_eq!(full, 1);
    }

    #[test]
    fn temporal_patience_label_change_breaks_scene() {
        let mut policy = Policy::new(
            PolicyKind::TemporalPatience,
            PolicyConfig {
                threshold: f64::INFINITY,
                ..PolicyConfig::default()
            },
        )
        .unwrap();

        // Scene start: all exits agree on class 1, selected exit becomes 0.
        let mut p = FixedProvider::uniform_costs(vec![one_hot(1, 3), one_hot(1, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(d.new_scene);
        assert_eq!(policy.scene().unwrap().selected_exit, 0);

        // Changed argmax at the selected exit: new scene despite the
        // infinite threshold letting any distance through.
        let flipped = vec![0.51, 0.49, 0.0];
        let mut p = FixedProvider::uniform_costs(vec![flipped, one_hot(2, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(d.new_scene);
    }

    #[test]
    fn temporal_patience_stable_label_terminates_at_selected_exit() {
        let mut policy = Policy::new(
            PolicyKind::TemporalPatience,
            PolicyConfig {
                threshold: f64::INFINITY,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        // Exit 0 disagrees with the vote (2 vs 1), so exit 1 is selected.
        let scores = vec![one_hot(2, 3), one_hot(1, 3), one_hot(1, 3)];
        let mut p = FixedProvider::uniform_costs(scores.clone());
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(d.new_scene);
        assert_eq!(policy.scene().unwrap().selected_exit, 1);

        // Subsequent in-scene samples cost the selected exit's direct run:
        // segments 0..=1 plus branch 1 = 10 + 10 + 1.
        let mut p = FixedProvider::uniform_costs(scores);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert!(!d.new_scene);
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.macs_spent, MacCount(21));
        assert_eq!(d.label, 1);
    }

    #[test]
    fn confidence_terminates_on_pass() {
        let mut policy = Policy::new(
            PolicyKind::Confidence,
            PolicyConfig {
                threshold: 0.9,
                metric: ConfidenceMetric::MaxProb,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::uniform_costs(vec![vec![0.99, 0.01], vec![0.5, 0.5]]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(0));
        assert_eq!(d.label, 0);
    }

    #[test]
    fn confidence_falls_through_to_final() {
        let mut policy = Policy::new(
            PolicyKind::Confidence,
            PolicyConfig {
                threshold: 0.9,
                metric: ConfidenceMetric::MaxProb,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p =
            FixedProvider::uniform_costs(vec![vec![0.6, 0.4], vec![0.7, 0.3], vec![0.2, 0.8]]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(2));
        assert_eq!(d.label, 1);
        assert_eq!(d.macs_spent, MacCount(33)); // full cascade
    }

    #[test]
    fn confidence_margin_below_threshold_continues() {
        let mut policy = Policy::new(
            PolicyKind::Confidence,
            PolicyConfig {
                threshold: 0.3,
                metric: ConfidenceMetric::ScoreMargin,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        // Margin 0.2 < 0.3 at exit 0, margin 0.9 at final.
        let mut p = FixedProvider::uniform_costs(vec![vec![0.6, 0.4], vec![0.95, 0.05]]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(1));
    }

    #[test]
    fn patience_immediate_agreement() {
        let mut policy = Policy::new(
            PolicyKind::Patience,
            PolicyConfig {
                patience_window: 2,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::uniform_costs(vec![one_hot(1, 3), one_hot(1, 3), one_hot(0, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.label, 1);
    }

    #[test]
    fn patience_alternating_runs_deep() {
        let mut policy = Policy::new(
            PolicyKind::Patience,
            PolicyConfig {
                patience_window: 2,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::uniform_costs(vec![
            one_hot(0, 3),
            one_hot(1, 3),
            one_hot(0, 3),
            one_hot(0, 3),
        ]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(3));
    }

    #[test]
    fn patience_window_beyond_exits_runs_full() {
        let mut policy = Policy::new(
            PolicyKind::Patience,
            PolicyConfig {
                patience_window: 5,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::uniform_costs(vec![one_hot(1, 3), one_hot(1, 3)]);
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.macs_spent, MacCount(22));
    }

    #[test]
    fn patience_rejects_window_below_two() {
        assert!(Policy::new(
            PolicyKind::Patience,
            PolicyConfig {
                patience_window: 1,
                ..PolicyConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn budget_modes_on_toy_cost_table() {
        // Direct costs [10, 25, 60]: segments [9, 15, 35] with branches [1, 1, 1]
        // gives direct(1) = 9 + 15 + 1 = 25 and cascade(1) = 26.
        let scores = vec![one_hot(0, 3), one_hot(1, 3), one_hot(2, 3)];
        let segment = vec![9, 15, 35];
        let branch = vec![1, 1, 1];

        // a-priori with budget 30 picks exit 1 and spends its direct cost.
        let mut policy = Policy::new(
            PolicyKind::BudgetAPriori,
            PolicyConfig {
                budget: MacCount(30),
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::new(scores.clone(), segment.clone(), branch.clone());
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.macs_spent, MacCount(25));
        assert_eq!(d.label, 1);

        // just-in-time with budget 30 executes exits 0 and 1 (cascade 26)
        // and stops before exit 2.
        let mut policy = Policy::new(
            PolicyKind::BudgetJustInTime,
            PolicyConfig {
                budget: MacCount(30),
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::new(scores.clone(), segment.clone(), branch.clone());
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.macs_spent, MacCount(26));
        assert_eq!(d.label, 1);

        // Budget equal to the full cascade reaches the final exit in both modes.
        for kind in [PolicyKind::BudgetAPriori, PolicyKind::BudgetJustInTime] {
            let mut policy = Policy::new(
                kind,
                PolicyConfig {
                    budget: MacCount(62),
                    ..PolicyConfig::default()
                },
            )
            .unwrap();
            let mut p = FixedProvider::new(scores.clone(), segment.clone(), branch.clone());
            let d = policy.step(&mut p, &sample()).unwrap();
            assert_eq!(d.terminated_at, Some(2), "{kind:?}");
            assert_eq!(d.label, 2);
        }

        // Budget exactly at exit 0's cost terminates there.
        let mut policy = Policy::new(
            PolicyKind::BudgetAPriori,
            PolicyConfig {
                budget: MacCount(10),
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::new(scores.clone(), segment.clone(), branch.clone());
        let d = policy.step(&mut p, &sample()).unwrap();
        assert_eq!(d.terminated_at, Some(0));
        assert_eq!(d.macs_spent, MacCount(10));

        // Budget below the cheapest exit is a configuration error.
        let mut policy = Policy::new(
            PolicyKind::BudgetAPriori,
            PolicyConfig {
                budget: MacCount(5),
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let mut p = FixedProvider::new(scores, segment, branch);
        assert!(policy.step(&mut p, &sample()).is_err());
    }

    #[test]
    fn input_filter_reuses_on_identical_inputs() {
        let mut policy = Policy::new(
            PolicyKind::InputFilter,
            PolicyConfig {
                threshold: 0.5,
                ..PolicyConfig::default()
            },
        )
        .unwrap();
        let s = sample();

        let mut p = FixedProvider::uniform_costs(vec![one_hot(0, 3), one_hot(2, 3)]);
        let d = policy.step(&mut p, &s).unwrap();
        assert_eq!(d.terminated_at, Some(1));
        assert_eq!(d.label, 2);
        // Direct run to the final exit: segments 0..=1 plus branch 1 only.
        assert_eq!(d.macs_spent, MacCount(21));

        let mut p = FixedProvider::uniform_costs(vec![one_hot(0, 3), one_hot(1, 3)]);
        let d = policy.step(&mut p, &s).unwrap();
        assert_eq!(d.terminated_at, None);
        assert_eq!(d.macs_spent, MacCount::ZERO);
        assert_eq!(d.label, 2); // cached output
    }

    #[test]
    fn input_filter_threshold_zero_never_reuses() {
        let mut policy = Policy::new(PolicyKind::InputFilter, PolicyConfig::default()).unwrap();
        let s = sample();
        for _ in 0..3 {
            let mut p = FixedProvider::uniform_costs(vec![one_hot(0, 3), one_hot(1, 3)]);
            let d = policy.step(&mut p, &s).unwrap();
            assert_eq!(d.terminated_at, Some(1));
        }
    }
}
