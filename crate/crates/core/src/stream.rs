//! Temporally correlated labeled streams: scene-structured synthetic
//! generators, zoom-sequence and overlapped-segment augmentation, synthetic
//! command recordings, and a JSONL file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One stream element: a model input with its ground-truth label and, for
/// synthetic streams, the scene it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub input: Tensor,
    pub true_label: usize,
    pub scene_truth: Option<usize>,
}

/// How scene classes are assigned in a synthetic scene stream.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAssignment {
    /// Draw each scene's class uniformly from `0..num_classes`, avoiding an
    /// immediate repeat of the previous scene's class when possible.
    #[default]
    Random,
    /// Explicit class per scene; length must equal `num_scenes`.
    Explicit(Vec<usize>),
}

/// Specification of a scene-structured synthetic stream: `num_scenes` scenes
/// of `samples_per_scene` samples each, every sample being its scene's
/// prototype plus Gaussian jitter. `jitter` well below `prototype_spread`
/// yields a strongly correlated stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_scenes: usize,
    pub samples_per_scene: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    pub prototype_spread: f64,
    pub jitter: f64,
    #[serde(default)]
    pub class_assignment: ClassAssignment,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_scenes == 0 {
            return Err(Error::Config("num_scenes must be at least 1".into()));
        }
        if self.samples_per_scene == 0 {
            return Err(Error::Config("samples_per_scene must be at least 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if !self.prototype_spread.is_finite() || self.prototype_spread <= 0.0 {
            return Err(Error::Config("prototype_spread must be positive".into()));
        }
        if !self.jitter.is_finite() || self.jitter < 0.0 {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        if let ClassAssignment::Explicit(classes) = &self.class_assignment {
            if classes.len() != self.num_scenes {
                return Err(Error::Config(format!(
                    "class_assignment lists {} classes for {} scenes",
                    classes.len(),
                    self.num_scenes
                )));
            }
            if let Some(&bad) = classes.iter().find(|&&c| c >= self.num_classes) {
                return Err(Error::Config(format!(
                    "class_assignment contains class {bad} but num_classes is {}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Standard normal via Box-Muller, driven by the seeded generator.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates a scene-structured stream: `K*L` samples, deterministic under
/// the spec's seed.
pub fn generate_scene_stream(spec: &SceneSpec) -> Result<Vec<StreamSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let classes: Vec<usize> = match &spec.class_assignment {
        ClassAssignment::Explicit(classes) => classes.clone(),
        ClassAssignment::Random => {
            let mut classes = Vec::with_capacity(spec.num_scenes);
            let mut prev = None;
            for _ in 0..spec.num_scenes {
                let mut c = rng.random_range(0..spec.num_classes);
                if spec.num_classes > 1 {
                    while Some(c) == prev {
                        c = rng.random_range(0..spec.num_classes);
                    }
                }
                prev = Some(c);
                classes.push(c);
            }
            classes
        }
    };

    let mut samples = Vec::with_capacity(spec.num_scenes * spec.samples_per_scene);
    for (scene_id, &class) in classes.iter().enumerate() {
        let prototype: Vec<f64> = (0..spec.input_dim)
            .map(|_| spec.prototype_spread * gaussian(&mut rng))
            .collect();
        for _ in 0..spec.samples_per_scene {
            let data: Vec<f64> = prototype
                .iter()
                .map(|&p| p + spec.jitter * gaussian(&mut rng))
                .collect();
            samples.push(StreamSample {
                input: Tensor::from_vec(data)?,
                true_label: class,
                scene_truth: Some(scene_id),
            });
        }
    }
    Ok(samples)
}

/// Bilinear sample of a square grid at fractional coordinates, clamped to the
/// image border.
fn bilinear(data: &[f64], size: usize, row: f64, col: f64) -> f64 {
    let clamp = |v: f64| v.clamp(0.0, (size - 1) as f64);
    let (row, col) = (clamp(row), clamp(col));
    let r0 = row.floor() as usize;
    let c0 = col.floor() as usize;
    let r1 = (r0 + 1).min(size - 1);
    let c1 = (c0 + 1).min(size - 1);
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    let at = |r: usize, c: usize| data[r * size + c];
    at(r0, c0) * (1.0 - fr) * (1.0 - fc)
        + at(r0, c1) * (1.0 - fr) * fc
        + at(r1, c0) * fr * (1.0 - fc)
        + at(r1, c1) * fr * fc
}

/// Produces `steps` progressively zoomed views of a square image: step `j`
/// center-crops a region whose side is `1 - max_zoom*j/steps` of the
/// original (so `max_zoom = 0.5` ends at a 50% side-length crop) and resizes
/// it back to the full resolution with bilinear interpolation.
pub fn zoom_sequence(image: &Tensor, steps: usize, max_zoom: f64) -> Result<Vec<Tensor>> {
    let shape = image.shape();
    let size = match shape {
        [h, w] if h == w && *h >= 2 => *h,
        _ => {
            return Err(Error::shape(
                "zoom_sequence",
                "square grid with side >= 2",
                format!("{shape:?}"),
            ))
        }
    };
    if steps == 0 {
        return Err(Error::Config("zoom steps must be at least 1".into()));
    }
    if !(0.0..=0.5).contains(&max_zoom) {
        return Err(Error::Config(format!(
            "max_zoom must be in [0, 0.5], got {max_zoom}"
        )));
    }

    let center = (size - 1) as f64 / 2.0;
    let mut frames = Vec::with_capacity(steps);
    for j in 1..=steps {
        let fraction = 1.0 - max_zoom * j as f64 / steps as f64;
        let mut data = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let src_r = center + (r as f64 - center) * fraction;
                let src_c = center + (c as f64 - center) * fraction;
                data.push(bilinear(image.data(), size, src_r, src_c));
            }
        }
        frames.push(Tensor::new(vec![size, size], data)?);
    }
    Ok(frames)
}

/// Splits a 1-D series into overlapping windows:
/// `floor((len - window) / stride) + 1` segments, consecutive segments
/// sharing `window - stride` elements.
pub fn overlap_segments(recording: &Tensor, window: usize, stride: usize) -> Result<Vec<Tensor>> {
    let shape = recording.shape();
    let len = match shape {
        [len] => *len,
        _ => {
            return Err(Error::shape(
                "overlap_segments",
                "1-D series",
                format!("{shape:?}"),
            ))
        }
    };
    if window == 0 || stride == 0 {
        return Err(Error::Config("window and stride must be at least 1".into()));
    }
    if window > len {
        return Err(Error::Config(format!(
            "window {window} exceeds recording length {len}"
        )));
    }
    let count = (len - window) / stride + 1;
    let data = recording.data();
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        segments.push(Tensor::from_vec(data[start..start + window].to_vec())?);
    }
    Ok(segments)
}

/// A synthetic 1-D recording with its per-position label timeline.
#[derive(Debug, Clone)]
pub struct Recording {
    pub series: Tensor,
    /// One label per position; class 0 is background.
    pub timeline: Vec<usize>,
}

/// Parameters for [`synthesize_recording`]. Command classes start at 1;
/// class 0 is the background.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingSpec {
    pub length: usize,
    /// Explicit command insertions as (label, start position).
    pub commands: Vec<(usize, usize)>,
    /// Count of high-amplitude distractor bursts placed at random
    /// non-overlapping positions; they stay labeled background.
    pub noise_events: usize,
    /// Length of every inserted command/noise signature.
    pub event_len: usize,
    /// Standard deviation of the background white noise.
    pub noise_level: f64,
    pub seed: u64,
}

const BACKGROUND: usize = 0;
const PLACEMENT_RETRIES: usize = 10_000;

/// Class-specific signature: a sinusoid whose frequency and phase derive from
/// the class index, large enough to stand out of the background noise.
fn command_signature(label: usize, event_len: usize) -> Vec<f64> {
    let freq = 1.0 + (label % 7) as f64 * 0.5;
    let phase = label as f64 * 0.9;
    (0..event_len)
        .map(|i| {
            let x = i as f64 / event_len as f64;
            3.0 * (std::f64::consts::TAU * freq * x + phase).sin()
        })
        .collect()
}

/// Builds a white-noise recording with inserted command signatures and
/// random distractor noise events, plus the ground-truth label timeline.
/// All insertions are mutually non-overlapping; random placements resample
/// on collision and fail after bounded retries.
pub fn synthesize_recording(spec: &RecordingSpec) -> Result<Recording> {
    if spec.length == 0 {
        return Err(Error::Config("recording length must be positive".into()));
    }
    if spec.event_len == 0 || spec.event_len > spec.length {
        return Err(Error::Config(format!(
            "event_len {} must be in 1..={}",
            spec.event_len, spec.length
        )));
    }
    for &(label, pos) in &spec.commands {
        if label == BACKGROUND {
            return Err(Error::Config(
                "command labels start at 1; 0 is the background class".into(),
            ));
        }
        if pos + spec.event_len > spec.length {
            return Err(Error::Config(format!(
                "command at position {pos} overruns recording of length {}",
                spec.length
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut series: Vec<f64> = (0..spec.length)
        .map(|_| spec.noise_level * gaussian(&mut rng))
        .collect();
    let mut timeline = vec![BACKGROUND; spec.length];

    let overlaps = |occupied: &[(usize, usize)], start: usize, len: usize| {
        occupied
            .iter()
            .any(|&(s, l)| start < s + l && s < start + len)
    };

    let mut occupied: Vec<(usize, usize)> = Vec::new();
    for &(label, pos) in &spec.commands {
        if overlaps(&occupied, pos, spec.event_len) {
            return Err(Error::Config(format!(
                "command insertions overlap at position {pos}"
            )));
        }
        occupied.push((pos, spec.event_len));
        let signature = command_signature(label, spec.event_len);
        for (i, v) in signature.iter().enumerate() {
            series[pos + i] += v;
            timeline[pos + i] = label;
        }
    }

    for _ in 0..spec.noise_events {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let pos = rng.random_range(0..=spec.length - spec.event_len);
            if !overlaps(&occupied, pos, spec.event_len) {
                occupied.push((pos, spec.event_len));
                for i in 0..spec.event_len {
                    // Burst of loud noise; stays background in the timeline.
                    series[pos + i] += 3.0 * gaussian(&mut rng);
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "could not place {} noise events of length {} in a recording of length {}",
                spec.noise_events, spec.event_len, spec.length
            )));
        }
    }

    Ok(Recording {
        series: Tensor::from_vec(series)?,
        timeline,
    })
}

/// Labels each window by majority overlap with the timeline; ties go to the
/// background class. Total and deterministic for every input.
pub fn label_segments(
    timeline: &[usize],
    window: usize,
    stride: usize,
    num_classes: usize,
) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 || window > timeline.len() {
        return Err(Error::Config(format!(
            "window {window} / stride {stride} invalid for timeline of length {}",
            timeline.len()
        )));
    }
    if let Some(&bad) = timeline.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Stream(format!(
            "timeline label {bad} out of range for {num_classes} classes"
        )));
    }
    let count = (timeline.len() - window) / stride + 1;
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let mut counts = vec![0usize; num_classes];
        for &l in &timeline[i * stride..i * stride + window] {
            counts[l] += 1;
        }
        let best = counts.iter().copied().max().unwrap_or(0);
        let winners: Vec<usize> = (0..num_classes).filter(|&c| counts[c] == best).collect();
        let label = if winners.len() == 1 {
            winners[0]
        } else {
            BACKGROUND
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Segments a recording into an overlapping-window stream with
/// majority-overlap labels.
pub fn recording_to_stream(
    recording: &Recording,
    window: usize,
    stride: usize,
    num_classes: usize,
) -> Result<Vec<StreamSample>> {
    let segments = overlap_segments(&recording.series, window, stride)?;
    let labels = label_segments(&recording.timeline, window, stride, num_classes)?;
    Ok(segments
        .into_iter()
        .zip(labels)
        .map(|(input, true_label)| StreamSample {
            input,
            true_label,
            scene_truth: None,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    input: Vec<f64>,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene: Option<usize>,
}

/// Writes a stream as JSONL, one `{"input": [...], "label": k, "scene": s?}`
/// object per line. Inputs are flattened.
pub fn write_stream(samples: &[StreamSample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BufWriter::new(file);
    for sample in samples {
        let line = SampleLine {
            input: sample.input.data().to_vec(),
            label: sample.true_label,
            scene: sample.scene_truth,
        };
        let json = serde_json::to_string(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            source: e,
        })?;
        writeln!(out, "{json}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads a JSONL stream, validating that every sample has the same input
/// dimension.
pub fn read_stream(path: &Path) -> Result<Vec<StreamSample>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: format!("{}:{}", path.display(), lineno + 1),
            source: e,
        })?;
        match dim {
            None => dim = Some(parsed.input.len()),
            Some(d) if d != parsed.input.len() => {
                return Err(Error::Stream(format!(
                    "line {}: input dimension {} differs from {}",
                    lineno + 1,
                    parsed.input.len(),
                    d
                )))
            }
            _ => {}
        }
        samples.push(StreamSample {
            input: Tensor::from_vec(parsed.input)?,
            true_label: parsed.label,
            scene_truth: parsed.scene,
        });
    }
    Ok(samples)
}
