//! Benchmark harness: success-plot AUC over synthetic or on-disk suites,
//! and the optimizer convergence study.

use std::path::Path;

use serde::Serialize;

use crate::config::{Config, OptimizerKind, UpdateMode};
use crate::error::{Error, Result};
use crate::io::annotations::{self, Annotation};
use crate::image::GrayImage;
use crate::io::pnm;
use crate::lossmodel::{LossProblem, SampleSet};
use crate::metatrain::{generate_scene, SceneSpec};
use crate::modelpred::{
    init_filter, predict_on, CellBox, Curvature, Optimizer, PredictOptions, StepLengths,
};
use crate::tracking::{
    augmentations, extract_with, load_sequence, Frame, FrameData, FrameResult, HandCrafted, Sequence,
    TargetBox, Tracker,
};

/// Version tag of the `bench` JSON layout.
pub const BENCH_SCHEMA: &str = "dfp-bench/1";

/// Number of IoU thresholds in the success plot.
pub const AUC_THRESHOLDS: usize = 101;

/// Success-plot AUC in percent: the mean, over thresholds `t = k/100`,
/// of the fraction of frames whose IoU exceeds `t`.
pub fn success_auc(ious: &[f64]) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    let n = ious.len() as f64;
    let mut total = 0.0;
    for k in 0..AUC_THRESHOLDS {
        let t = k as f64 / (AUC_THRESHOLDS - 1) as f64;
        total += ious.iter().filter(|&&v| v > t).count() as f64 / n;
    }
    100.0 * total / AUC_THRESHOLDS as f64
}

/// Tracker configurations compared by `bench`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Steepest descent, memory updates.
    Ours,
    /// Fixed-step gradient descent, memory updates.
    Gd,
    /// Initializer only, re-pooled on the update schedule.
    Init,
    NoUpdate,
    ModelAveraging,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Ours,
        Variant::Gd,
        Variant::Init,
        Variant::NoUpdate,
        Variant::ModelAveraging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::Gd => "gd",
            Variant::Init => "init",
            Variant::NoUpdate => "no_update",
            Variant::ModelAveraging => "model_averaging",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn apply(self, base: &Config) -> Config {
        let mut cfg = base.clone();
        let (opt, mode) = match self {
            Variant::Ours => (OptimizerKind::SteepestDescent, UpdateMode::Ours),
            Variant::Gd => (OptimizerKind::GradientDescent, UpdateMode::Ours),
            Variant::Init => (OptimizerKind::InitOnly, UpdateMode::Ours),
            Variant::NoUpdate => (OptimizerKind::SteepestDescent, UpdateMode::NoUpdate),
            Variant::ModelAveraging => (OptimizerKind::SteepestDescent, UpdateMode::ModelAveraging),
        };
        cfg.optimizer = opt;
        cfg.update_mode = mode;
        cfg
    }
}

/// Runs the tracker over every frame; the first result is the
/// initialization frame.
pub fn track_sequence(seq: &Sequence, cfg: &Config) -> Result<Vec<FrameResult>> {
    let first = &seq.frames[0];
    let gt = seq.ground_truth(first.index).ok_or_else(|| Error::Format {
        path: seq.name.clone(),
        msg: format!("no annotation for the first frame ({})", first.index),
    })?;
    let mut tracker = Tracker::initialize(first, gt.target, cfg, Box::new(HandCrafted::from_config(cfg)))?;
    let mut out = Vec::with_capacity(seq.frames.len());
    out.push(tracker.first_result().clone());
    for frame in &seq.frames[1..] {
        out.push(tracker.track_frame(frame)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceRecord {
    pub mode: &'static str,
    pub sequence: String,
    /// Frames scored (the initialization frame is excluded).
    pub frames: usize,
    pub auc: f64,
    pub mean_iou: f64,
}

/// IoU of every tracked frame after the first against its annotation.
pub fn sequence_ious(seq: &Sequence, results: &[FrameResult]) -> Vec<f64> {
    results
        .iter()
        .skip(1)
        .filter_map(|r| seq.ground_truth(r.frame_index).map(|gt| r.target.iou(&gt.target)))
        .collect()
}

pub fn evaluate(seq: &Sequence, base: &Config, variant: Variant) -> Result<SequenceRecord> {
    let results = track_sequence(seq, &variant.apply(base))?;
    let ious = sequence_ious(seq, &results);
    let mean_iou = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    Ok(SequenceRecord {
        mode: variant.name(),
        sequence: seq.name.clone(),
        frames: ious.len(),
        auc: success_auc(&ious),
        mean_iou,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: &'static str,
    pub sequences: usize,
    /// Mean of the per-sequence AUCs.
    pub auc: f64,
    /// AUC over all scored frames pooled together.
    pub pooled_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema: &'static str,
    pub auc_thresholds: usize,
    pub records: Vec<SequenceRecord>,
    pub summary: Vec<ModeSummary>,
}

impl BenchReport {
    pub fn summary_for(&self, v: Variant) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == v.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Evaluates every variant on every sequence. Records are ordered by
/// variant, then sequence name.
pub fn run_bench(seqs: &[Sequence], base: &Config, variants: &[Variant]) -> Result<BenchReport> {
    let mut variants = variants.to_vec();
    variants.sort();
    variants.dedup();
    let mut order: Vec<&Sequence> = seqs.iter().collect();
    order.sort_by(|a, b| a.name.cmp(&b.name));
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &v in &variants {
        let mut pooled = Vec::new();
        let mut aucs = Vec::new();
        for seq in &order {
            let results = track_sequence(seq, &v.apply(base))?;
            let ious = sequence_ious(seq, &results);
            let auc = success_auc(&ious);
            let mean_iou = if ious.is_empty() {
                0.0
            } else {
                ious.iter().sum::<f64>() / ious.len() as f64
            };
            records.push(SequenceRecord {
                mode: v.name(),
                sequence: seq.name.clone(),
                frames: ious.len(),
                auc,
                mean_iou,
            });
            aucs.push(auc);
            pooled.extend(ious);
        }
        summary.push(ModeSummary {
            mode: v.name(),
            sequences: aucs.len(),
            auc: if aucs.is_empty() {
                0.0
            } else {
                aucs.iter().sum::<f64>() / aucs.len() as f64
            },
            pooled_auc: success_auc(&pooled),
        });
    }
    Ok(BenchReport {
        schema: BENCH_SCHEMA,
        auc_thresholds: AUC_THRESHOLDS,
        records,
        summary,
    })
}

/// Built-in synthetic suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteKind {
    /// Similar-looking distractors crossing the scene.
    Distractor,
    /// Target appearance rotating between two textures.
    Drift,
    /// Single-frame scenes of widely varying contrast for the convergence
    /// study.
    Descent,
}

impl SuiteKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "distractor" => Some(SuiteKind::Distractor),
            "drift" => Some(SuiteKind::Drift),
            "descent" => Some(SuiteKind::Descent),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Distractor => "distractor",
            SuiteKind::Drift => "drift",
            SuiteKind::Descent => "descent",
        }
    }

    /// Default sequence count and length.
    pub fn default_size(self) -> (usize, usize) {
        match self {
            SuiteKind::Distractor => (50, 60),
            SuiteKind::Drift => (30, 120),
            SuiteKind::Descent => (20, 1),
        }
    }
}

/// Scene settings of sequence `k` of a suite.
pub fn suite_scene(kind: SuiteKind, seed: u64, k: usize) -> SceneSpec {
    use rand::{Rng, SeedableRng};
    let tag = match kind {
        SuiteKind::Distractor => 1u64,
        SuiteKind::Drift => 2,
        SuiteKind::Descent => 3,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9).wrapping_add(tag << 32).wrapping_add(k as u64),
    );
    let size = rng.gen_range(32.0..44.0);
    let base = SceneSpec {
        seed: rng.gen(),
        target_w: size * rng.gen_range(0.85..1.15),
        target_h: size * rng.gen_range(0.85..1.15),
        ..SceneSpec::default()
    };
    match kind {
        SuiteKind::Distractor => SceneSpec {
            contrast: rng.gen_range(0.15..0.3),
            exposure: 4.0f64.powf(rng.gen_range(-1.0..0.5)),
            distractors: rng.gen_range(2..=4),
            similarity: rng.gen_range(0.5..0.8),
            speed: rng.gen_range(1.5..3.0),
            noise: 0.02,
            ..base
        },
        SuiteKind::Drift => SceneSpec {
            contrast: rng.gen_range(0.2..0.3),
            distractors: 3,
            similarity: 0.3,
            target_offset: 0.03,
            drift_rate: rng.gen_range(0.015..0.025),
            speed: rng.gen_range(1.0..2.0),
            noise: 0.02,
            ..base
        },
        SuiteKind::Descent => SceneSpec {
            contrast: 0.4 * 0.15f64.powf(rng.gen_range(0.0..1.0)),
            background_clutter: rng.gen_range(0.03..0.3),
            target_offset: rng.gen_range(0.0..0.15),
            distractors: rng.gen_range(0..3),
            noise: 0.01,
            ..base
        },
    }
}

/// Renders sequence `k` of a suite in memory.
pub fn suite_sequence(kind: SuiteKind, seed: u64, k: usize, frames: usize) -> Result<Sequence> {
    let spec = suite_scene(kind, seed, k);
    let scene = generate_scene(&spec, frames)?;
    let annotations = scene
        .iter()
        .map(|(f, b)| Annotation {
            frame_index: f.index,
            target: *b,
        })
        .collect();
    // frames are quantized to 8 bits so that a suite written to disk and
    // read back is identical to the in-memory one
    let frames = scene
        .into_iter()
        .map(|(f, _)| match f.data {
            FrameData::Image(img) => Frame::image(f.index, quantize(&img)),
            other => Frame { index: f.index, data: other },
        })
        .collect();
    Ok(Sequence {
        name: format!("seq_{k:03}"),
        frames,
        annotations,
    })
}

fn quantize(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |r, c| {
        (img.get(r, c).clamp(0.0, 1.0) * 255.0).round() / 255.0
    })
}

/// Writes `seq_<k>/frame_<j>.pgm` plus `gt.txt` for every sequence.
pub fn write_sequence(root: &Path, seq: &Sequence) -> Result<()> {
    let dir = root.join(&seq.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for frame in &seq.frames {
        let FrameData::Image(img) = &frame.data else {
            return Err(Error::InvalidArgument("only image frames can be written as PGM".into()));
        };
        pnm::write_pgm(&dir.join(format!("frame_{:04}.pgm", frame.index)), img)?;
    }
    annotations::write(&dir.join("gt.txt"), &seq.annotations)
}

/// Loads every `seq_*` directory (any subdirectory with a `gt.txt`) under
/// `root`, sorted by name.
pub fn load_suite(root: &Path, feature_stride: f64) -> Result<Vec<Sequence>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() && path.join("gt.txt").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format {
            path: root.display().to_string(),
            msg: "no sequence directories with gt.txt".into(),
        });
    }
    dirs.iter().map(|d| load_sequence(d, feature_stride)).collect()
}

/// First-frame training problem of one scene: the augmented set and the
/// pooled initial filter.
pub struct DescentProblem {
    pub set: SampleSet<f64>,
    pub boxes: Vec<CellBox>,
}

pub fn descent_problem(seq: &Sequence, cfg: &Config) -> Result<DescentProblem> {
    let frame = &seq.frames[0];
    let target: TargetBox = seq
        .ground_truth(frame.index)
        .ok_or_else(|| Error::InvalidArgument("first frame is not annotated".into()))?
        .target;
    let ex = HandCrafted::from_config(cfg);
    let mut samples = Vec::new();
    let mut boxes = Vec::new();
    for spec in augmentations(cfg) {
        let e = extract_with(frame, &target, &spec, 1.0, &ex, cfg)?;
        samples.push(e.sample.with_weight(cfg.aug_weight));
        boxes.push(e.target_cells);
    }
    Ok(DescentProblem {
        set: SampleSet::from_samples(samples),
        boxes,
    })
}

/// Loss after each of `iterations` recursions of `optimizer`, `f⁽⁰⁾`
/// first. Stops early (with a shorter trace) if an iterate stops being
/// finite.
pub fn loss_curve(
    problem: &DescentProblem,
    cfg: &Config,
    optimizer: Optimizer<f64>,
    iterations: usize,
) -> Result<Vec<f64>> {
    let params = cfg.tracking_loss_params()?;
    let k = cfg.filter_size;
    let f0 = init_filter(&problem.set, (k, k), &problem.boxes)?;
    let lp = LossProblem::new(&problem.set, &params, (k, k))?;
    let mut losses = vec![lp.loss(f0.weights())?];
    let mut f = f0;
    let opts = PredictOptions {
        iterations: 1,
        optimizer,
        keep_filters: false,
    };
    for _ in 0..iterations {
        match predict_on(&lp, f, &opts) {
            Ok((next, trace)) => {
                let l = *trace.losses().last().expect("non-empty trace");
                if !l.is_finite() {
                    break;
                }
                losses.push(l);
                f = next;
            }
            Err(_) => break,
        }
    }
    Ok(losses)
}

/// First iteration whose loss is within `rel` of `target` from above, or
/// `None` if never reached.
pub fn iterations_to_reach(losses: &[f64], target: f64, rel: f64) -> Option<usize> {
    losses.iter().position(|&l| l <= target * (1.0 + rel))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DescentStudy {
    /// Median iterations for steepest descent.
    pub sd_median: f64,
    /// Median iterations for each fixed step in the grid; unreached scenes
    /// count as infinite.
    pub gd_medians: Vec<(f64, f64)>,
    pub best_gd_step: f64,
    pub best_gd_median: f64,
}

/// Convergence comparison on a set of first-frame problems. The converged
/// loss of a scene is the lowest loss any method reaches in `budget`
/// iterations; a method reaches it when its loss is within `rel` of it.
pub fn descent_study(
    problems: &[DescentProblem],
    cfg: &Config,
    gd_steps: &[f64],
    budget: usize,
    rel: f64,
) -> Result<DescentStudy> {
    let mut sd_curves = Vec::new();
    let mut gd_curves = vec![Vec::new(); gd_steps.len()];
    for p in problems {
        sd_curves.push(loss_curve(p, cfg, Optimizer::SteepestDescent(Curvature::GaussNewton), budget)?);
        for (g, &step) in gd_steps.iter().enumerate() {
            gd_curves[g].push(loss_curve(
                p,
                cfg,
                Optimizer::GradientDescent(StepLengths::Scalar(step)),
                budget,
            )?);
        }
    }
    let converged: Vec<f64> = (0..problems.len())
        .map(|i| {
            let mut best = sd_curves[i].iter().copied().fold(f64::INFINITY, f64::min);
            for curves in &gd_curves {
                best = curves[i].iter().copied().fold(best, f64::min);
            }
            best
        })
        .collect();
    let med = |curves: &[Vec<f64>]| {
        let mut its: Vec<f64> = curves
            .iter()
            .zip(&converged)
            .map(|(c, &t)| iterations_to_reach(c, t, rel).map_or(f64::INFINITY, |v| v as f64))
            .collect();
        median(&mut its)
    };
    let sd_median = med(&sd_curves);
    let gd_medians: Vec<(f64, f64)> = gd_steps
        .iter()
        .zip(&gd_curves)
        .map(|(&s, c)| (s, med(c)))
        .collect();
    let (best_gd_step, best_gd_median) = gd_medians
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((f64::NAN, f64::INFINITY));
    Ok(DescentStudy {
        sd_median,
        gd_medians,
        best_gd_step,
        best_gd_median,
    })
}

/// Ten log-spaced steps from `lo` to `hi`.
pub fn step_grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..10)
        .map(|i| lo * (hi / lo).powf(i as f64 / 9.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_oracle() {
        // brute-force success curve
        let ious = [0.0, 0.25, 0.5, 0.75, 1.0, 0.333];
        let mut expected = 0.0;
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            let hits = ious.iter().filter(|&&v| v > t).count();
            expected += hits as f64 / ious.len() as f64;
        }
        expected = 100.0 * expected / 101.0;
        assert!((success_auc(&ious) - expected).abs() < 1e-12);
        assert_eq!(success_auc(&[1.0, 1.0]), 100.0 * 100.0 / 101.0);
        assert_eq!(success_auc(&[0.0]), 0.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn reach_threshold() {
        let l = [10.0, 5.0, 2.2, 2.05, 2.0];
        assert_eq!(iterations_to_reach(&l, 2.0, 0.1), Some(2));
        assert_eq!(iterations_to_reach(&l, 1.0, 0.1), None);
    }
}
