//! Experiment and generator configuration files: JSON schemas, loading and
//! validation with field-level error messages.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer};

use eenn_core::layer::MacCount;
use eenn_core::policy::{ConfidenceMetric, LabelingMode, PolicyConfig, PolicyKind};
use eenn_core::stream::{
    generate_scene_stream, recording_to_stream, synthesize_recording, zoom_sequence,
    ClassAssignment, RecordingSpec, SceneSpec, StreamSample,
};
use eenn_core::tensor::Tensor;

/// Accepts a JSON number or the strings "inf"/"infinity" (any case).
fn threshold_value<'de, D>(deserializer: D) -> std::result::Result<Option<f64>, D::Error>
where
    D: Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(deserializer)? {
        None => Ok(None),
        Some(Raw::Number(v)) => Ok(Some(v)),
        Some(Raw::Text(s)) => match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" => Ok(Some(f64::INFINITY)),
            _ => Err(serde::de::Error::custom(format!(
                "threshold string {s:?} is not \"inf\""
            ))),
        },
    }
}

/// One policy entry in an experiment file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyEntry {
    pub kind: PolicyKind,
    #[serde(default)]
    pub labeling: Option<LabelingMode>,
    #[serde(default)]
    pub metric: Option<ConfidenceMetric>,
    #[serde(default, deserialize_with = "threshold_value")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub patience_window: Option<usize>,
    #[serde(default)]
    pub budget: Option<u64>,
    /// Swept values for `sweep`: thresholds, or windows / budgets for the
    /// patience and budget baselines.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
}

impl PolicyEntry {
    pub fn to_policy_config(&self) -> PolicyConfig {
        let mut config = PolicyConfig::default();
        if let Some(t) = self.threshold {
            config.threshold = t;
        }
        if let Some(l) = self.labeling {
            config.labeling = l;
        }
        if let Some(m) = self.metric {
            config.metric = m;
        }
        if let Some(w) = self.patience_window {
            config.patience_window = w;
        }
        if let Some(b) = self.budget {
            config.budget = MacCount(b);
        }
        config
    }
}

/// Stream source: an existing JSONL file or an inline generator spec.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSource {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub generator: Option<Generator>,
}

/// Synthetic stream generators, mirroring the stream module's operations.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Scene-structured stream of prototype-plus-jitter samples.
    Scenes {
        num_scenes: usize,
        samples_per_scene: usize,
        input_dim: usize,
        num_classes: usize,
        prototype_spread: f64,
        jitter: f64,
        #[serde(default)]
        class_assignment: Option<ClassAssignment>,
        seed: u64,
    },
    /// Synthetic command recording split into overlapping windows.
    Recording {
        length: usize,
        #[serde(default)]
        commands: Option<Vec<(usize, usize)>>,
        /// Randomly placed commands when explicit positions are not given.
        #[serde(default)]
        num_commands: Option<usize>,
        noise_events: usize,
        num_classes: usize,
        event_len: usize,
        #[serde(default = "default_noise_level")]
        noise_level: f64,
        window: usize,
        stride: usize,
        seed: u64,
    },
    /// Zoom sequence over a seeded random image, flattened per frame.
    Zoom {
        size: usize,
        #[serde(default = "default_zoom_steps")]
        steps: usize,
        max_zoom: f64,
        label: usize,
        seed: u64,
    },
}

fn default_noise_level() -> f64 {
    0.1
}

fn default_zoom_steps() -> usize {
    10
}

impl Generator {
    pub fn seed(&self) -> u64 {
        match self {
            Generator::Scenes { seed, .. }
            | Generator::Recording { seed, .. }
            | Generator::Zoom { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, new_seed: u64) {
        match self {
            Generator::Scenes { seed, .. }
            | Generator::Recording { seed, .. }
            | Generator::Zoom { seed, .. } => *seed = new_seed,
        }
    }

    pub fn build(&self) -> Result<Vec<StreamSample>> {
        match self {
            Generator::Scenes {
                num_scenes,
                samples_per_scene,
                input_dim,
                num_classes,
                prototype_spread,
                jitter,
                class_assignment,
                seed,
            } => {
                let spec = SceneSpec {
                    num_scenes: *num_scenes,
                    samples_per_scene: *samples_per_scene,
                    input_dim: *input_dim,
                    num_classes: *num_classes,
                    prototype_spread: *prototype_spread,
                    jitter: *jitter,
                    class_assignment: class_assignment.clone().unwrap_or(ClassAssignment::Random),
                    seed: *seed,
                };
                generate_scene_stream(&spec).context("generator.scenes")
            }
            Generator::Recording {
                length,
                commands,
                num_commands,
                noise_events,
                num_classes,
                event_len,
                noise_level,
                window,
                stride,
                seed,
            } => {
                if *num_classes < 2 {
                    bail!("generator.num_classes: need the background class plus at least one command class");
                }
                let commands = match (commands, num_commands) {
                    (Some(explicit), _) => explicit.clone(),
                    (None, Some(count)) => {
                        random_commands(*count, *length, *event_len, *num_classes, *seed)?
                    }
                    (None, None) => {
                        bail!("generator.commands: provide explicit commands or num_commands")
                    }
                };
                let spec = RecordingSpec {
                    length: *length,
                    commands,
                    noise_events: *noise_events,
                    event_len: *event_len,
                    noise_level: *noise_level,
                    seed: *seed,
                };
                let recording = synthesize_recording(&spec).context("generator.recording")?;
                recording_to_stream(&recording, *window, *stride, *num_classes)
                    .context("generator.recording windows")
            }
            Generator::Zoom {
                size,
                steps,
                max_zoom,
                label,
                seed,
            } => {
                let image = seeded_image(*size, *seed)?;
                let frames = zoom_sequence(&image, *steps, *max_zoom).context("generator.zoom")?;
                Ok(frames
                    .into_iter()
                    .map(|frame| StreamSample {
                        input: frame.flattened(),
                        true_label: *label,
                        scene_truth: Some(0),
                    })
                    .collect())
            }
        }
    }
}

/// Commands at deterministic non-overlapping positions spread across the
/// recording, labels cycling through the command classes.
fn random_commands(
    count: usize,
    length: usize,
    event_len: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let slot = length / count;
    if slot < 2 * event_len {
        bail!("generator.num_commands: {count} commands do not fit a recording of length {length}");
    }
    Ok((0..count)
        .map(|i| {
            let label = 1 + (i + seed as usize) % (num_classes - 1);
            let pos = i * slot + slot / 4;
            (label, pos)
        })
        .collect())
}

fn seeded_image(size: usize, seed: u64) -> Result<Tensor> {
    use rand::{Rng, SeedableRng};
    if size < 2 {
        bail!("generator.size: image side must be at least 2");
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>()).collect();
    Ok(Tensor::new(vec![size, size], data)?)
}

/// `gen-stream` configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenStreamConfig {
    pub generator: Generator,
    pub output: PathBuf,
}

/// Experiment configuration file for `run`, `sweep` and `suggest-grid`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub stream: StreamSource,
    pub policies: Vec<PolicyEntry>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            bail!("policies: at least one policy entry is required");
        }
        if self.stream.path.is_none() && self.stream.generator.is_none() {
            bail!("stream: provide either stream.path or stream.generator");
        }
        if self.stream.path.is_some() && self.stream.generator.is_some() {
            bail!("stream: stream.path and stream.generator are mutually exclusive");
        }
        Ok(())
    }

    /// Loads or generates the stream, applying an optional seed override to
    /// inline generators.
    pub fn build_stream(&self, seed_override: Option<u64>) -> Result<Vec<StreamSample>> {
        match (&self.stream.path, &self.stream.generator) {
            (Some(path), None) => eenn_core::stream::read_stream(path)
                .with_context(|| format!("stream.path {}", path.display())),
            (None, Some(generator)) => {
                let mut generator = generator.clone();
                if let Some(seed) = seed_override {
                    generator.set_seed(seed);
                }
                generator.build()
            }
            _ => bail!("stream: provide either stream.path or stream.generator"),
        }
    }
}
