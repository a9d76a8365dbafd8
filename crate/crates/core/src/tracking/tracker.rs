//! The online loop: initialize on the first frame, then localize, store
//! confident samples and refine the model on schedule.

use std::collections::VecDeque;

use super::augment::{augmentations, PatchSpec};
use super::crop::{extract_with, Extracted};
use super::features::FeatureExtractor;
use super::{Frame, TargetBox};
use crate::config::{Config, OptimizerKind, UpdateMode};
use crate::error::Result;
use crate::lossmodel::{Center, LossParams, LossProblem, SampleSet, TrainingSample};
use crate::modelpred::{
    init_filter, predict_model, predict_on, CellBox, Curvature, Filter, Optimizer,
    OptimizerTrace, PredictOptions, Start, StepLengths,
};
use crate::numerics::{conv_valid, ScoreMap};

/// Everything the loop carries from frame to frame.
#[derive(Clone, Debug)]
pub struct TrackerState {
    pub filter: Filter<f64>,
    pub memory: SampleSet<f64>,
    /// Target extent of each memory sample, kept in step with `memory`.
    pub memory_boxes: VecDeque<CellBox>,
    pub target: TargetBox,
    pub frames_since_update: usize,
    pub loss_params: LossParams<f64>,
    pub scale_set: Vec<f64>,
    pub mode: UpdateMode,
    /// Trace of the first-frame prediction.
    pub init_trace: OptimizerTrace<f64>,
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame_index: usize,
    pub target: TargetBox,
    /// Raw peak score at the selected scale.
    pub confidence: f64,
    /// The filter changed on this frame.
    pub updated: bool,
    /// Optimizer recursions run on this frame.
    pub refine_iterations: usize,
    pub distractor: bool,
    pub stored: bool,
    pub scale_index: usize,
    pub scores: ScoreMap<f64>,
}

pub struct Tracker {
    cfg: Config,
    extractor: Box<dyn FeatureExtractor + Send + Sync>,
    state: TrackerState,
    first: FrameResult,
}

/// Sub-cell peak location around the argmax `(i, j)`: least-squares
/// quadratic on the 3×3 neighborhood, falling back to per-axis parabolas
/// at the border or when the fit is not a maximum.
pub fn refine_peak(s: &ScoreMap<f64>, i: usize, j: usize) -> (f64, f64) {
    let (h, w) = s.dims();
    if i >= 1 && i + 1 < h && j >= 1 && j + 1 < w {
        let (mut b, mut c, mut f, mut xx, mut yy, mut zz) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                let z = s.get((i as i32 + dy) as usize, (j as i32 + dx) as usize);
                let (x, y) = (dx as f64, dy as f64);
                b += x * z;
                c += y * z;
                f += x * y * z;
                xx += x * x * z;
                yy += y * y * z;
                zz += z;
            }
        }
        let (b, c, f) = (b / 6.0, c / 6.0, f / 4.0);
        let d_minus_e = (xx - yy) / 2.0;
        let d_plus_e = (xx + yy - 4.0 * zz / 3.0) / 2.0;
        let d = (d_plus_e + d_minus_e) / 2.0;
        let e = (d_plus_e - d_minus_e) / 2.0;
        let det = 4.0 * d * e - f * f;
        if d < 0.0 && det > 0.0 {
            let x = ((f * c - 2.0 * e * b) / det).clamp(-1.0, 1.0);
            let y = ((f * b - 2.0 * d * c) / det).clamp(-1.0, 1.0);
            return (i as f64 + y, j as f64 + x);
        }
    }
    let axis = |zm: Option<f64>, z0: f64, zp: Option<f64>| match (zm, zp) {
        (Some(zm), Some(zp)) => {
            let den = zm - 2.0 * z0 + zp;
            if den < 0.0 {
                ((zm - zp) / (2.0 * den)).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        }
        _ => 0.0,
    };
    let z0 = s.get(i, j);
    let dy = axis(
        (i > 0).then(|| s.get(i - 1, j)),
        z0,
        (i + 1 < h).then(|| s.get(i + 1, j)),
    );
    let dx = axis(
        (j > 0).then(|| s.get(i, j - 1)),
        z0,
        (j + 1 < w).then(|| s.get(i, j + 1)),
    );
    (i as f64 + dy, j as f64 + dx)
}

/// Strongest local maximum that reaches `ratio` of the global maximum at
/// `(i, j)` and lies more than `min_distance` cells away from it.
pub fn find_distractor(
    s: &ScoreMap<f64>,
    i: usize,
    j: usize,
    ratio: f64,
    min_distance: f64,
) -> Option<(usize, usize)> {
    let top = s.get(i, j);
    if !(top > 0.0) {
        return None;
    }
    let (h, w) = s.dims();
    let mut best: Option<(usize, usize, f64)> = None;
    for r in 0..h {
        for c in 0..w {
            let v = s.get(r, c);
            if v < ratio * top {
                continue;
            }
            let d = ((r as f64 - i as f64).powi(2) + (c as f64 - j as f64).powi(2)).sqrt();
            if d <= min_distance {
                continue;
            }
            let mut is_max = true;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    if s.get(rr, cc) > v {
                        is_max = false;
                    }
                }
            }
            if is_max && best.map_or(true, |(_, _, b)| v > b) {
                best = Some((r, c, v));
            }
        }
    }
    best.map(|(r, c, _)| (r, c))
}

fn optimizer(cfg: &Config) -> Optimizer<f64> {
    match cfg.optimizer {
        OptimizerKind::GradientDescent => {
            Optimizer::GradientDescent(StepLengths::Scalar(cfg.gd_step))
        }
        _ => Optimizer::SteepestDescent(Curvature::GaussNewton),
    }
}

fn peak_damping(cfg: &Config, scale_index: usize) -> f64 {
    let mid = cfg
        .scale_factors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.ln().abs().total_cmp(&b.1.ln().abs()))
        .map_or(0, |(k, _)| k);
    cfg.scale_damping.powi((scale_index as i32 - mid as i32).abs())
}

impl Tracker {
    /// Builds the augmented first-frame set, predicts the initial model and
    /// seeds the memory with the augmented samples.
    pub fn initialize(
        frame: &Frame,
        target: TargetBox,
        cfg: &Config,
        extractor: Box<dyn FeatureExtractor + Send + Sync>,
    ) -> Result<Tracker> {
        let loss_params = cfg.tracking_loss_params()?;
        let (samples, boxes) = augmented_set(frame, &target, cfg, extractor.as_ref())?;
        let mut memory = SampleSet::with_capacity(cfg.memory_size);
        let mut memory_boxes = VecDeque::with_capacity(cfg.memory_size);
        for (s, b) in samples.into_iter().zip(boxes) {
            if memory.push(s)?.is_some() {
                memory_boxes.pop_front();
            }
            memory_boxes.push_back(b);
        }
        let (filter, init_trace) = fresh_model(&memory, &memory_boxes, &loss_params, cfg)?;

        let base = extract_with(frame, &target, &PatchSpec::identity(), 1.0, extractor.as_ref(), cfg)?;
        let scores = conv_valid(&base.sample.features, filter.weights())?;
        let first = FrameResult {
            frame_index: frame.index,
            target,
            confidence: scores.max_value(),
            updated: true,
            refine_iterations: init_trace.len() - 1,
            distractor: false,
            stored: true,
            scale_index: 0,
            scores,
        };
        let state = TrackerState {
            filter,
            memory,
            memory_boxes,
            target,
            frames_since_update: 0,
            loss_params,
            scale_set: cfg.scale_factors.clone(),
            mode: cfg.update_mode,
            init_trace,
        };
        Ok(Tracker {
            cfg: cfg.clone(),
            extractor,
            state,
            first,
        })
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    /// Output record for the initialization frame.
    pub fn first_result(&self) -> &FrameResult {
        &self.first
    }

    pub fn set_update_mode(&mut self, mode: UpdateMode) {
        self.state.mode = mode;
    }

    pub fn track_frame(&mut self, frame: &Frame) -> Result<FrameResult> {
        let cfg = &self.cfg;
        let k = cfg.filter_size;
        let prev = self.state.target;

        let mut best: Option<(usize, Extracted, ScoreMap<f64>, f64)> = None;
        for (si, &scale) in self.state.scale_set.iter().enumerate() {
            let ex = extract_with(frame, &prev, &PatchSpec::identity(), scale, self.extractor.as_ref(), cfg)?;
            let scores = conv_valid(&ex.sample.features, self.state.filter.weights())?;
            let peak = scores.max_value();
            let damp = peak_damping(cfg, si);
            let damped = if peak > 0.0 { peak / damp } else { peak * damp };
            if best.as_ref().map_or(true, |b| damped > b.3) {
                best = Some((si, ex, scores, damped));
            }
        }
        let (scale_index, ex, scores, _) = best.expect("non-empty scale set");
        let (i, j, confidence) = scores.argmax();
        // a weak peak says little about scale, so the size is kept
        let scale = if confidence > cfg.confidence_threshold {
            1.0 + cfg.scale_rate * (self.state.scale_set[scale_index] - 1.0)
        } else {
            1.0
        };
        let (row, col) = refine_peak(&scores, i, j);
        let (x, y) = ex.score_to_frame(row, col, k);
        let (fw, fh) = frame.size();
        let target = TargetBox::new(
            x.clamp(0.0, fw),
            y.clamp(0.0, fh),
            (prev.w * scale).clamp(1.0, fw),
            (prev.h * scale).clamp(1.0, fh),
        )?;
        let distractor =
            find_distractor(&scores, i, j, cfg.distractor_ratio, cfg.distractor_min_distance)
                .is_some();

        let stored = confidence > cfg.confidence_threshold;
        let mut current = None;
        if stored {
            let half = k as f64 / 2.0;
            let z = 1.0 / (ex.crop.pixel_scale() * ex.cell as f64);
            let bx = CellBox::from_center(row + half, col + half, target.h * z, target.w * z);
            let sample = TrainingSample::new(ex.sample.features, Center::new(row, col))
                .with_weight(cfg.sample_weight);
            if self.state.mode == UpdateMode::ModelAveraging {
                current = Some((sample.clone(), bx));
            }
            if self.state.memory.push(sample)?.is_some() {
                self.state.memory_boxes.pop_front();
            }
            self.state.memory_boxes.push_back(bx);
        }

        self.state.frames_since_update += 1;
        let scheduled = self.state.frames_since_update >= cfg.refine_period;
        if scheduled {
            self.state.frames_since_update = 0;
        }
        let mut refine_iterations = 0;
        let mut updated = false;
        match self.state.mode {
            UpdateMode::Ours => {
                let n = if scheduled {
                    cfg.refine_iterations
                } else if distractor {
                    cfg.distractor_iterations
                } else {
                    0
                };
                if n > 0 {
                    if let Ok(f) = self.refine(n) {
                        self.state.filter = f;
                        refine_iterations = n;
                        updated = true;
                    }
                }
            }
            UpdateMode::NoUpdate => {}
            UpdateMode::ModelAveraging => {
                if let (Some((sample, bx)), true) = (current, cfg.averaging_rate > 0.0) {
                    if let Ok(f) = self.averaged(sample, bx) {
                        self.state.filter = f;
                        refine_iterations = self.cfg.init_iterations;
                        updated = true;
                    }
                }
            }
        }
        self.state.target = target;
        Ok(FrameResult {
            frame_index: frame.index,
            target,
            confidence,
            updated,
            refine_iterations,
            distractor,
            stored,
            scale_index,
            scores,
        })
    }

    /// `n` recursions on the memory starting from the current filter.
    fn refine(&self, n: usize) -> Result<Filter<f64>> {
        let st = &self.state;
        let filter_hw = st.filter.size();
        if self.cfg.optimizer == OptimizerKind::InitOnly {
            let boxes: Vec<CellBox> = st.memory_boxes.iter().copied().collect();
            return calibrated(init_filter(&st.memory, filter_hw, &boxes)?, &st.memory, &st.loss_params);
        }
        let problem = LossProblem::new(&st.memory, &st.loss_params, filter_hw)?;
        let opts = PredictOptions {
            iterations: n,
            optimizer: optimizer(&self.cfg),
            keep_filters: false,
        };
        Ok(predict_on(&problem, st.filter.clone(), &opts)?.0)
    }

    /// Blends the current filter with one predicted from this frame alone.
    fn averaged(&self, sample: TrainingSample<f64>, bx: CellBox) -> Result<Filter<f64>> {
        let set = SampleSet::from_samples(vec![sample]);
        let boxes = VecDeque::from([bx]);
        let (fresh, _) = fresh_model(&set, &boxes, &self.state.loss_params, &self.cfg)?;
        self.state.filter.blend(&fresh, self.cfg.averaging_rate)
    }
}

fn augmented_set(
    frame: &Frame,
    target: &TargetBox,
    cfg: &Config,
    extractor: &dyn FeatureExtractor,
) -> Result<(Vec<TrainingSample<f64>>, Vec<CellBox>)> {
    let mut samples = Vec::new();
    let mut boxes = Vec::new();
    for spec in augmentations(cfg) {
        let ex = extract_with(frame, target, &spec, 1.0, extractor, cfg)?;
        samples.push(ex.sample.with_weight(cfg.aug_weight));
        boxes.push(ex.target_cells);
    }
    Ok((samples, boxes))
}

/// Initializer followed by `init_iterations` recursions of the configured
/// optimizer.
fn fresh_model(
    set: &SampleSet<f64>,
    boxes: &VecDeque<CellBox>,
    params: &LossParams<f64>,
    cfg: &Config,
) -> Result<(Filter<f64>, OptimizerTrace<f64>)> {
    let boxes: Vec<CellBox> = boxes.iter().copied().collect();
    let iterations = match cfg.optimizer {
        OptimizerKind::InitOnly => 0,
        _ => cfg.init_iterations,
    };
    let opts = PredictOptions {
        iterations,
        optimizer: optimizer(cfg),
        keep_filters: false,
    };
    let k = cfg.filter_size;
    let (f, trace) = predict_model(
        set,
        params,
        Start::Pool {
            filter_hw: (k, k),
            boxes: &boxes,
        },
        &opts,
    )?;
    if cfg.optimizer == OptimizerKind::InitOnly {
        return Ok((calibrated(f, set, params)?, trace));
    }
    Ok((f, trace))
}

/// Scales a pooled filter onto the label scale, so that the confidence
/// tests see the same units as for an optimized filter.
fn calibrated(f: Filter<f64>, set: &SampleSet<f64>, params: &LossParams<f64>) -> Result<Filter<f64>> {
    let problem = LossProblem::new(set, params, f.size())?;
    let a = problem.best_scale(f.weights())?;
    Filter::new(f.weights().scale(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_peak_recovered_exactly() {
        // z = -(x - 0.3)^2 - 2(y + 0.2)^2 + 0.5 (x - 0.3)(y + 0.2)
        let s = ScoreMap::from_fn(5, 5, |r, c| {
            let (x, y) = (c as f64 - 2.0 - 0.3, r as f64 - 2.0 + 0.2);
            -x * x - 2.0 * y * y + 0.5 * x * y
        });
        let (row, col) = refine_peak(&s, 2, 2);
        assert!((row - 1.8).abs() < 1e-12, "{row}");
        assert!((col - 2.3).abs() < 1e-12, "{col}");
    }

    #[test]
    fn border_peak_uses_axis_fit() {
        let s = ScoreMap::from_fn(4, 4, |r, c| {
            let (x, y) = (c as f64 - 0.2, r as f64 - 1.9);
            -x * x - y * y
        });
        let (row, col) = refine_peak(&s, 2, 0);
        assert!((row - 1.9).abs() < 1e-12);
        assert_eq!(col, 0.0);
    }

    #[test]
    fn distractor_rule() {
        let mut s = ScoreMap::zeros(15, 15);
        s.set(7, 7, 1.0);
        s.set(7, 12, 0.6);
        assert_eq!(find_distractor(&s, 7, 7, 0.5, 3.0), Some((7, 12)));
        s.set(7, 12, 0.4);
        assert_eq!(find_distractor(&s, 7, 7, 0.5, 3.0), None);
        // close secondary peaks do not count
        s.set(7, 9, 0.9);
        assert_eq!(find_distractor(&s, 7, 7, 0.5, 3.0), None);
    }

    #[test]
    fn damping_centered_on_unit_scale() {
        let cfg = Config::default();
        assert_eq!(peak_damping(&cfg, 2), 1.0);
        assert!((peak_damping(&cfg, 0) - 1.02f64.powi(2)).abs() < 1e-15);
        assert!((peak_damping(&cfg, 3) - 1.02).abs() < 1e-15);
    }
}
