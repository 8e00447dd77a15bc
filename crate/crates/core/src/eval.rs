//! Experiment harness: runs (model, stream, policy, threshold-grid)
//! evaluations, aggregates accuracy, mean MACs per inference, per-exit
//! termination shares and scene counts, and writes deterministic CSV and SVG
//! scatter outputs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layer::MacCount;
use crate::model::ExitModel;
use crate::policy::{Decision, LabelingMode, Policy, PolicyConfig, PolicyKind};
use crate::stream::StreamSample;
use crate::tensor::argmax;

/// One (policy, threshold) evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub policy: String,
    pub labeling_mode: LabelingMode,
    /// The swept value: a distance/confidence threshold, or the window for
    /// the patience baseline, or the MAC budget for the budget baselines.
    pub threshold: f64,
    pub accuracy: f64,
    pub mean_macs: f64,
    /// `mean_macs` relative to the single-exit reference model's cost.
    pub relative_macs: f64,
    /// Fraction of executed terminations per exit; sums to 1.
    pub exit_shares: Vec<f64>,
    pub num_scenes: usize,
    /// Digest of the evaluated stream, for joinability checks.
    pub stream_digest: u64,
    /// Snapshot of the full policy configuration behind this record.
    pub config: PolicyConfig,
}

/// FNV-1a digest over every sample's input bits and label.
pub fn stream_digest(stream: &[StreamSample]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut absorb = |word: u64| {
        for byte in word.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    absorb(stream.len() as u64);
    for sample in stream {
        absorb(sample.true_label as u64);
        for v in sample.input.data() {
            absorb(v.to_bits());
        }
    }
    h
}

/// Errors unless two records were computed over the same stream.
pub fn check_joinable(a: &SweepRecord, b: &SweepRecord) -> Result<()> {
    if a.stream_digest != b.stream_digest {
        return Err(Error::Config(format!(
            "stream digest mismatch: {:#x} vs {:#x}; records come from different streams",
            a.stream_digest, b.stream_digest
        )));
    }
    Ok(())
}

fn validate_stream(model: &dyn ExitModel, stream: &[StreamSample]) -> Result<()> {
    if stream.is_empty() {
        return Err(Error::Stream("stream is empty".into()));
    }
    if let Some(bad) = stream.iter().find(|s| s.true_label >= model.num_classes()) {
        return Err(Error::Stream(format!(
            "label {} out of range for {} classes",
            bad.true_label,
            model.num_classes()
        )));
    }
    Ok(())
}

/// Runs a policy over a whole stream, resetting its state first, and returns
/// the raw per-sample decisions.
pub fn run_stream(
    model: &dyn ExitModel,
    stream: &[StreamSample],
    policy: &mut Policy,
) -> Result<Vec<Decision>> {
    validate_stream(model, stream)?;
    policy.reset();
    let mut decisions = Vec::with_capacity(stream.len());
    for sample in stream {
        let mut provider = model.execution(sample)?;
        decisions.push(policy.step(provider.as_mut(), sample)?);
    }
    Ok(decisions)
}

/// Aggregates a decision log into a [`SweepRecord`].
pub fn summarize(
    model: &dyn ExitModel,
    stream: &[StreamSample],
    decisions: &[Decision],
    policy: PolicyKind,
    config: &PolicyConfig,
    threshold: f64,
) -> Result<SweepRecord> {
    if decisions.len() != stream.len() {
        return Err(Error::Stream(format!(
            "{} decisions for {} samples",
            decisions.len(),
            stream.len()
        )));
    }
    let len = stream.len() as f64;
    let correct = decisions
        .iter()
        .zip(stream)
        .filter(|(d, s)| d.label == s.true_label)
        .count();
    let total_macs: MacCount = decisions.iter().map(|d| d.macs_spent).sum();
    let mean_macs = total_macs.as_f64() / len;

    let exits = model.num_exits();
    let mut terminations = vec![0usize; exits];
    for decision in decisions {
        if let Some(exit) = decision.terminated_at {
            terminations[exit] += 1;
        }
    }
    let executed: usize = terminations.iter().sum();
    let exit_shares: Vec<f64> = if executed == 0 {
        vec![0.0; exits]
    } else {
        terminations
            .iter()
            .map(|&c| c as f64 / executed as f64)
            .collect()
    };

    Ok(SweepRecord {
        policy: policy.name().to_string(),
        labeling_mode: config.labeling,
        threshold,
        accuracy: correct as f64 / len,
        mean_macs,
        relative_macs: mean_macs / model.single_exit_macs().as_f64(),
        exit_shares,
        num_scenes: decisions.iter().filter(|d| d.new_scene).count(),
        stream_digest: stream_digest(stream),
        config: config.clone(),
    })
}

/// Evaluates one policy configuration over a stream.
pub fn evaluate(
    model: &dyn ExitModel,
    stream: &[StreamSample],
    kind: PolicyKind,
    config: &PolicyConfig,
) -> Result<SweepRecord> {
    let mut policy = Policy::new(kind, config.clone())?;
    let decisions = run_stream(model, stream, &mut policy)?;
    let threshold = swept_value(kind, config);
    summarize(model, stream, &decisions, kind, config, threshold)
}

fn swept_value(kind: PolicyKind, config: &PolicyConfig) -> f64 {
    match kind {
        PolicyKind::Patience => config.patience_window as f64,
        PolicyKind::BudgetAPriori | PolicyKind::BudgetJustInTime => config.budget.as_f64(),
        _ => config.threshold,
    }
}

/// Applies one grid value to a config, interpreting it per policy: distance
/// or confidence threshold, patience window, or MAC budget.
pub fn apply_grid_value(
    kind: PolicyKind,
    config: &PolicyConfig,
    value: f64,
) -> Result<PolicyConfig> {
    let mut config = config.clone();
    match kind {
        PolicyKind::Patience => {
            if !(value.is_finite() && value >= 2.0) {
                return Err(Error::Config(format!(
                    "patience grid value {value} is not a window >= 2"
                )));
            }
            config.patience_window = value.round() as usize;
        }
        PolicyKind::BudgetAPriori | PolicyKind::BudgetJustInTime => {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!(
                    "budget grid value {value} is not a non-negative MAC count"
                )));
            }
            config.budget = MacCount(value.round() as u64);
        }
        _ => config.threshold = value,
    }
    Ok(config)
}

/// Sweeps a policy over a threshold grid. Grid points are independent and
/// evaluated in parallel; records come back in grid order so parallelism
/// never changes output bytes.
pub fn sweep(
    model: &dyn ExitModel,
    stream: &[StreamSample],
    kind: PolicyKind,
    base_config: &PolicyConfig,
    grid: &[f64],
) -> Result<Vec<SweepRecord>> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    validate_stream(model, stream)?;

    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(grid.len());

    let mut results: Vec<Option<Result<SweepRecord>>> = Vec::new();
    results.resize_with(grid.len(), || None);

    if workers <= 1 {
        for (slot, &value) in results.iter_mut().zip(grid) {
            *slot = Some(
                apply_grid_value(kind, base_config, value)
                    .and_then(|config| evaluate(model, stream, kind, &config)),
            );
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots = std::sync::Mutex::new(&mut results);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= grid.len() {
                        break;
                    }
                    let record = apply_grid_value(kind, base_config, grid[i])
                        .and_then(|config| evaluate(model, stream, kind, &config));
                    slots.lock().expect("sweep worker panicked")[i] = Some(record);
                });
            }
        });
    }

    results
        .into_iter()
        .map(|slot| slot.expect("every grid point evaluated"))
        .collect()
}

/// Stream accuracy of the final classifier alone (direct runs, no branches).
pub fn exit_accuracy(model: &dyn ExitModel, stream: &[StreamSample], exit: usize) -> Result<f64> {
    validate_stream(model, stream)?;
    let mut correct = 0usize;
    for sample in stream {
        let reading = model.execution(sample)?.reading(exit)?;
        if argmax(&reading.scores) == sample.true_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / stream.len() as f64)
}

/// Accuracy of the single-exit reference: the final classifier on its own.
pub fn final_classifier_accuracy(model: &dyn ExitModel, stream: &[StreamSample]) -> Result<f64> {
    exit_accuracy(model, stream, model.num_exits() - 1)
}

/// Suggested threshold grid: `count` evenly spaced percentiles of the
/// consecutive exit-0 distance distribution observed on the stream.
pub fn suggest_grid(
    model: &dyn ExitModel,
    stream: &[StreamSample],
    count: usize,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    validate_stream(model, stream)?;
    if stream.len() < 2 {
        return Err(Error::Stream(
            "need at least two samples to observe distances".into(),
        ));
    }
    let scores: Vec<Vec<f64>> = stream
        .iter()
        .map(|s| Ok(model.execution(s)?.reading(0)?.scores))
        .collect::<Result<_>>()?;
    let mut distances: Vec<f64> = scores
        .windows(2)
        .map(|pair| crate::tensor::euclidean_distance(&pair[0], &pair[1]))
        .collect::<Result<_>>()?;
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let grid = (0..count)
        .map(|i| {
            let q = if count == 1 {
                0.5
            } else {
                i as f64 / (count - 1) as f64
            };
            let idx = (q * (distances.len() - 1) as f64).round() as usize;
            distances[idx]
        })
        .collect();
    Ok(grid)
}

/// Paired evaluation of one policy under both scene-labeling modes.
#[derive(Debug, Clone)]
pub struct LabelingComparison {
    pub policy: String,
    pub majority_vote: SweepRecord,
    pub final_classifier: SweepRecord,
    pub accuracy_delta: f64,
    pub mean_macs_delta: f64,
}

/// Runs each policy under majority-vote and final-classifier labeling on the
/// same stream and reports the deltas (majority minus final).
pub fn compare_labeling_modes(
    model: &dyn ExitModel,
    stream: &[StreamSample],
    policies: &[(PolicyKind, PolicyConfig)],
) -> Result<Vec<LabelingComparison>> {
    if model.num_exits() < 2 {
        return Err(Error::Model(
            "labeling-mode comparison needs at least two exits".into(),
        ));
    }
    let mut out = Vec::with_capacity(policies.len());
    for (kind, config) in policies {
        let mut config = config.clone();
        config.labeling = LabelingMode::MajorityVote;
        let majority = evaluate(model, stream, *kind, &config)?;
        config.labeling = LabelingMode::FinalClassifier;
        let final_only = evaluate(model, stream, *kind, &config)?;
        check_joinable(&majority, &final_only)?;
        out.push(LabelingComparison {
            policy: kind.name().to_string(),
            accuracy_delta: majority.accuracy - final_only.accuracy,
            mean_macs_delta: majority.mean_macs - final_only.mean_macs,
            majority_vote: majority,
            final_classifier: final_only,
        });
    }
    Ok(out)
}

/// Renders records as CSV with the fixed header
/// `policy,labeling_mode,threshold,accuracy,mean_macs,relative_macs,num_scenes,exit_share_0,...`.
/// Byte-deterministic for identical records.
pub fn render_csv(records: &[SweepRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no records to write".into()));
    }
    let exits = records[0].exit_shares.len();
    if let Some(bad) = records.iter().find(|r| r.exit_shares.len() != exits) {
        return Err(Error::Config(format!(
            "records mix exit counts {exits} and {}",
            bad.exit_shares.len()
        )));
    }
    let mut out =
        String::from("policy,labeling_mode,threshold,accuracy,mean_macs,relative_macs,num_scenes");
    for i in 0..exits {
        out.push_str(&format!(",exit_share_{i}"));
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.policy,
            r.labeling_mode.name(),
            r.threshold,
            r.accuracy,
            r.mean_macs,
            r.relative_macs,
            r.num_scenes
        ));
        for share in &r.exit_shares {
            out.push_str(&format!(",{share}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let csv = render_csv(records)?;
    fs::write(path, csv).map_err(|e| Error::io(path.display().to_string(), e))
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 56.0;

const SERIES_COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Renders a scatter plot (x = relative MACs, y = accuracy) as minimal
/// standalone SVG 1.1 markup, one series per policy, with axes and a legend.
/// Byte-deterministic for identical records.
pub fn render_svg_scatter(records: &[SweepRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no records to plot".into()));
    }
    let mut series_names: Vec<String> = Vec::new();
    for r in records {
        let key = format!("{} ({})", r.policy, r.labeling_mode.name());
        if !series_names.contains(&key) {
            series_names.push(key);
        }
    }
    series_names.sort();

    let x_min_data = records
        .iter()
        .map(|r| r.relative_macs)
        .fold(f64::INFINITY, f64::min);
    let x_max_data = records
        .iter()
        .map(|r| r.relative_macs)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = ((x_max_data - x_min_data) * 0.05).max(0.02);
    let x_min = (x_min_data - pad).max(0.0);
    let x_max = x_max_data + pad;

    let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_x = |v: f64| MARGIN_LEFT + (v - x_min) / (x_max - x_min) * plot_w;
    let to_y = |v: f64| MARGIN_TOP + (1.0 - v) * plot_h;

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>\n"
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    svg.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt2(x0),
        fmt2(y0),
        fmt2(x0 + plot_w),
        fmt2(y0)
    ));
    svg.push_str(&format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt2(x0),
        fmt2(MARGIN_TOP),
        fmt2(x0),
        fmt2(y0)
    ));

    // Ticks and grid.
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x_min + f * (x_max - x_min);
        let x = to_x(xv);
        svg.push_str(&format!(
            "  <line x1=\"{x}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y2}\" stroke=\"black\"/>\n",
            x = fmt2(x),
            y = fmt2(y0),
            y2 = fmt2(y0 + 5.0)
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            x = fmt2(x),
            y = fmt2(y0 + 18.0),
            label = fmt2(xv)
        ));
        let yv = f;
        let y = to_y(yv);
        svg.push_str(&format!(
            "  <line x1=\"{x1}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n",
            x1 = fmt2(x0),
            x2 = fmt2(x0 + plot_w),
            y = fmt2(y)
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label}</text>\n",
            x = fmt2(x0 - 6.0),
            y = fmt2(y + 4.0),
            label = fmt2(yv)
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "  <text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">relative MACs</text>\n",
        x = fmt2(x0 + plot_w / 2.0),
        y = fmt2(SVG_HEIGHT - 14.0)
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {y})\">accuracy</text>\n",
        y = fmt2(MARGIN_TOP + plot_h / 2.0)
    ));

    // Points, one series per policy, ordered by threshold inside a series.
    for (si, name) in series_names.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let mut points: Vec<&SweepRecord> = records
            .iter()
            .filter(|r| format!("{} ({})", r.policy, r.labeling_mode.name()) == *name)
            .collect();
        points.sort_by(|a, b| {
            a.threshold
                .partial_cmp(&b.threshold)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for r in points {
            svg.push_str(&format!(
                "  <circle cx=\"{x}\" cy=\"{y}\" r=\"3.5\" fill=\"{color}\" fill-opacity=\"0.75\"/>\n",
                x = fmt2(to_x(r.relative_macs)),
                y = fmt2(to_y(r.accuracy.clamp(0.0, 1.0)))
            ));
        }
        // Legend entry.
        let ly = MARGIN_TOP + 10.0 + si as f64 * 18.0;
        svg.push_str(&format!(
            "  <circle cx=\"{x}\" cy=\"{y}\" r=\"4\" fill=\"{color}\"/>\n",
            x = fmt2(SVG_WIDTH - MARGIN_RIGHT + 14.0),
            y = fmt2(ly)
        ));
        svg.push_str(&format!(
            "  <text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"11\">{name}</text>\n",
            x = fmt2(SVG_WIDTH - MARGIN_RIGHT + 24.0),
            y = fmt2(ly + 4.0)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg_scatter(records: &[SweepRecord], path: &Path) -> Result<()> {
    let svg = render_svg_scatter(records)?;
    fs::write(path, svg).map_err(|e| Error::io(path.display().to_string(), e))
}
