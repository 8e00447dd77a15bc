//! Synthetic "oracle exit" models for controlled experiments: per-exit
//! accuracies are configured, correctness is a deterministic function of the
//! sample's identity, and score vectors embed the input through a seeded
//! projection so that temporally correlated inputs yield temporally
//! correlated readings.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::MacCount;
use crate::model::{CostLedger, ExitModel, ExitReading, ReadingsProvider, ScoreMode};
use crate::stream::StreamSample;
use crate::tensor::softmax;

fn default_score_mode() -> ScoreMode {
    ScoreMode::Logits
}

fn default_label_gain() -> f64 {
    0.1
}

fn default_embed_gain() -> f64 {
    1.0
}

/// Per-exit nesting: `true` exits share one per-sample difficulty draw, so a
/// deeper exit with higher accuracy is correct on a superset of samples;
/// `false` exits draw independently (used to emulate overthinking).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Nesting {
    Uniform(bool),
    PerExit(Vec<bool>),
}

impl Default for Nesting {
    fn default() -> Self {
        Nesting::Uniform(true)
    }
}

/// Serialized oracle model; files carry `"model_type": "oracle"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    #[serde(default = "default_score_mode")]
    pub score_mode: ScoreMode,
    /// Per-exit probability of predicting the true label.
    pub accuracies: Vec<f64>,
    /// Per-exit cumulative MAC cost of a direct run (backbone prefix plus
    /// that branch); must strictly increase.
    pub cumulative_macs: Vec<u64>,
    /// Per-exit branch cost folded inside `cumulative_macs`; defaults to
    /// zeros, meaning branches are free and only backbone depth costs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_macs: Option<Vec<u64>>,
    #[serde(default)]
    pub nested: Nesting,
    pub seed: u64,
    /// Magnitude of the one-hot bump that marks the predicted class.
    #[serde(default = "default_label_gain")]
    pub label_gain: f64,
    /// Magnitude of the shared input-projection component.
    #[serde(default = "default_embed_gain")]
    pub embed_gain: f64,
}

/// A synthetic early-exit model with configured per-exit accuracies.
///
/// Readings are pure functions of (seed, input, exit): a sample's difficulty
/// and its confusion label are hashed from the input bits, so repeated
/// evaluation always sees the same outcome. Scores are
/// `embed_gain * (w_exit . x)` on every class plus `label_gain` on the
/// predicted class, which keeps the argmax exactly at the predicted label
/// while distances between readings track distances between inputs.
#[derive(Debug, Clone)]
pub struct OracleExitModel {
    spec: OracleSpec,
    nested: Vec<bool>,
    branch: Vec<MacCount>,
    segment: Vec<MacCount>,
    /// Unit-norm projection vector per exit.
    projections: Vec<Vec<f64>>,
}

impl OracleExitModel {
    pub fn from_spec(spec: OracleSpec) -> Result<Self> {
        let exits = spec.accuracies.len();
        if exits == 0 {
            return Err(Error::Model("oracle needs at least one exit".into()));
        }
        if spec.num_classes < 2 {
            return Err(Error::Model("oracle needs at least two classes".into()));
        }
        if spec.input_dim == 0 {
            return Err(Error::Model("oracle input_dim must be positive".into()));
        }
        if spec.cumulative_macs.len() != exits {
            return Err(Error::Model(format!(
                "oracle lists {} accuracies but {} cumulative costs",
                exits,
                spec.cumulative_macs.len()
            )));
        }
        if let Some(&p) = spec.accuracies.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Model(format!("oracle accuracy {p} outside [0, 1]")));
        }
        for pair in spec.cumulative_macs.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Model(format!(
                    "oracle cumulative costs must strictly increase; got {} after {}",
                    pair[1], pair[0]
                )));
            }
        }
        let branch: Vec<MacCount> = match &spec.branch_macs {
            None => vec![MacCount::ZERO; exits],
            Some(b) => {
                if b.len() != exits {
                    return Err(Error::Model(format!(
                        "oracle lists {} exits but {} branch costs",
                        exits,
                        b.len()
                    )));
                }
                b.iter().map(|&v| MacCount(v)).collect()
            }
        };
        // Backbone prefix per exit; segment i is the prefix growth at exit i.
        let mut segment = Vec::with_capacity(exits);
        let mut prev_prefix = 0u64;
        for (i, (&cum, br)) in spec.cumulative_macs.iter().zip(&branch).enumerate() {
            let prefix = cum.checked_sub(br.get()).ok_or_else(|| {
                Error::Model(format!(
                    "oracle exit {i}: branch cost {br} exceeds cumulative cost {cum}"
                ))
            })?;
            if prefix < prev_prefix {
                return Err(Error::Model(format!(
                    "oracle exit {i}: backbone prefix {prefix} shrinks below {prev_prefix}"
                )));
            }
            segment.push(MacCount(prefix - prev_prefix));
            prev_prefix = prefix;
        }
        let nested = match &spec.nested {
            Nesting::Uniform(flag) => vec![*flag; exits],
            Nesting::PerExit(flags) => {
                if flags.len() != exits {
                    return Err(Error::Model(format!(
                        "oracle lists {} exits but {} nested flags",
                        exits,
                        flags.len()
                    )));
                }
                flags.clone()
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut projections = Vec::with_capacity(exits);
        for _ in 0..exits {
            let mut w: Vec<f64> = (0..spec.input_dim)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                w[0] = 1.0;
            } else {
                for v in &mut w {
                    *v /= norm;
                }
            }
            projections.push(w);
        }

        Ok(OracleExitModel {
            spec,
            nested,
            branch,
            segment,
            projections,
        })
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn to_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(&self.spec).map_err(|e| Error::Parse {
            path: "<memory>".into(),
            source: e,
        })?;
        value["model_type"] = serde_json::Value::String("oracle".into());
        serde_json::to_string_pretty(&value).map_err(|e| Error::Parse {
            path: "<memory>".into(),
            source: e,
        })
    }

    /// The label this exit predicts for the sample: the true label when the
    /// sample's difficulty clears the exit's accuracy, otherwise a stable
    /// wrong class drawn uniformly from the others. Nested exits share the
    /// difficulty draw and the confusion label; non-nested exits use
    /// per-exit draws.
    pub fn predicted_label(&self, sample: &StreamSample, exit: usize) -> Result<usize> {
        let classes = self.spec.num_classes;
        if sample.true_label >= classes {
            return Err(Error::Stream(format!(
                "label {} out of range for {classes} classes",
                sample.true_label
            )));
        }
        let bits = input_bits(sample);
        let (difficulty_salt, confusion_salt) = if self.nested[exit] {
            (SALT_DIFFICULTY, SALT_CONFUSION)
        } else {
            (
                SALT_DIFFICULTY ^ mix(exit as u64 + 1),
                SALT_CONFUSION ^ mix(exit as u64 + 1),
            )
        };
        let difficulty = unit_from_hash(hash_sample(self.spec.seed, &bits, difficulty_salt));
        if difficulty < self.spec.accuracies[exit] {
            return Ok(sample.true_label);
        }
        let draw = hash_sample(self.spec.seed, &bits, confusion_salt) % (classes as u64 - 1);
        let wrong = draw as usize;
        Ok(if wrong >= sample.true_label {
            wrong + 1
        } else {
            wrong
        })
    }

    fn scores(&self, sample: &StreamSample, exit: usize) -> Result<Vec<f64>> {
        let data = sample.input.data();
        if data.len() != self.spec.input_dim {
            return Err(Error::shape(
                "oracle input",
                format!("[{}]", self.spec.input_dim),
                format!("{:?}", sample.input.shape()),
            ));
        }
        let label = self.predicted_label(sample, exit)?;
        let projection: f64 = self.projections[exit]
            .iter()
            .zip(data)
            .map(|(w, x)| w * x)
            .sum();
        let base = self.spec.embed_gain * projection;
        let mut scores = vec![base; self.spec.num_classes];
        scores[label] += self.spec.label_gain;
        Ok(match self.spec.score_mode {
            ScoreMode::Logits => scores,
            ScoreMode::Probabilities => softmax(&scores),
        })
    }
}

const SALT_DIFFICULTY: u64 = 0x9e3779b97f4a7c15;
const SALT_CONFUSION: u64 = 0xbf58476d1ce4e5b9;

fn input_bits(sample: &StreamSample) -> Vec<u64> {
    sample.input.data().iter().map(|v| v.to_bits()).collect()
}

/// FNV-1a over the seed, salt and input bits, finished with a splitmix64
/// avalanche so low bits are well mixed.
fn hash_sample(seed: u64, bits: &[u64], salt: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut absorb = |word: u64| {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    absorb(seed);
    absorb(salt);
    for &word in bits {
        absorb(word);
    }
    mix(h)
}

fn mix(mut h: u64) -> u64 {
    h = h.wrapping_add(0x9e3779b97f4a7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

impl ExitModel for OracleExitModel {
    fn num_exits(&self) -> usize {
        self.spec.accuracies.len()
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn score_mode(&self) -> ScoreMode {
        self.spec.score_mode
    }

    fn direct_macs(&self, exit: usize) -> MacCount {
        MacCount(self.spec.cumulative_macs[exit])
    }

    fn cascade_macs(&self, exit: usize) -> MacCount {
        self.segment[..=exit].iter().copied().sum::<MacCount>()
            + self.branch[..=exit].iter().copied().sum()
    }

    fn execution<'a>(&'a self, sample: &'a StreamSample) -> Result<Box<dyn ReadingsProvider + 'a>> {
        if sample.input.data().len() != self.spec.input_dim {
            return Err(Error::shape(
                "oracle input",
                format!("[{}]", self.spec.input_dim),
                format!("{:?}", sample.input.shape()),
            ));
        }
        Ok(Box::new(OracleExecution {
            model: self,
            sample,
            readings: vec![None; self.num_exits()],
            ledger: CostLedger::new(self.segment.clone(), self.branch.clone()),
        }))
    }
}

struct OracleExecution<'a> {
    model: &'a OracleExitModel,
    sample: &'a StreamSample,
    readings: Vec<Option<ExitReading>>,
    ledger: CostLedger,
}

impl ReadingsProvider for OracleExecution<'_> {
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
        let scores = self.model.scores(self.sample, exit)?;
        self.ledger.charge_segments_through(exit);
        self.ledger.charge_branch(exit);
        let reading = ExitReading {
            exit_index: exit,
            scores,
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
