//! `key = value` configuration shared by every subcommand.
//!
//! Lists are whitespace-separated. Unknown keys, malformed values and
//! out-of-range values are rejected with the file, line and key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lossmodel::{LossParams, MaskInit};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Memory-based re-optimization on a fixed schedule.
    Ours,
    /// First-frame model used for the whole sequence.
    NoUpdate,
    /// Blend the current model with one re-predicted from a freshly
    /// augmented set at the current target location.
    ModelAveraging,
}

impl UpdateMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ours" => Some(UpdateMode::Ours),
            "no_update" | "no-update" => Some(UpdateMode::NoUpdate),
            "model_averaging" | "avg" => Some(UpdateMode::ModelAveraging),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UpdateMode::Ours => "ours",
            UpdateMode::NoUpdate => "no_update",
            UpdateMode::ModelAveraging => "model_averaging",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Steepest descent with Gauss-Newton step length.
    SteepestDescent,
    /// Fixed-step gradient descent (`gd_step`).
    GradientDescent,
    /// Initializer only; no recursions.
    InitOnly,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sd" => Some(OptimizerKind::SteepestDescent),
            "gd" => Some(OptimizerKind::GradientDescent),
            "init" => Some(OptimizerKind::InitOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::SteepestDescent => "sd",
            OptimizerKind::GradientDescent => "gd",
            OptimizerKind::InitOnly => "init",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    // target model and loss
    pub filter_size: usize,
    pub num_knots: usize,
    pub knot_spacing: f64,
    pub lambda: f64,
    pub mask_center: f64,
    pub mask_width: f64,
    /// Label standard deviation relative to the target size.
    pub label_sigma: f64,
    pub loss_params: Option<PathBuf>,

    // crop geometry and features
    pub search_area_factor: f64,
    pub patch_size: usize,
    pub feature_stride: usize,
    pub feature_gain: f64,
    pub gradient_gain: f64,
    /// Pixels per cell of precomputed (DFM1) feature frames.
    pub feature_file_stride: f64,

    // online loop
    pub memory_size: usize,
    pub init_iterations: usize,
    pub refine_period: usize,
    pub refine_iterations: usize,
    pub distractor_iterations: usize,
    pub confidence_threshold: f64,
    pub distractor_ratio: f64,
    pub distractor_min_distance: f64,
    pub scale_factors: Vec<f64>,
    pub scale_damping: f64,
    /// Fraction of the selected scale change applied to the box size.
    pub scale_rate: f64,
    pub sample_weight: f64,

    // first-frame augmentation
    pub aug_shift: f64,
    pub aug_flip: bool,
    pub aug_rotations: Vec<f64>,
    pub aug_blurs: Vec<f64>,
    pub aug_scales: Vec<f64>,
    pub aug_brightness: Vec<f64>,
    pub aug_weight: f64,

    // ablations
    pub update_mode: UpdateMode,
    pub averaging_rate: f64,
    pub optimizer: OptimizerKind,
    pub gd_step: f64,

    // meta-training
    pub meta_iterations: usize,
    pub meta_threshold: f64,
    pub meta_label_sigma: f64,
    pub meta_beta: f64,
    pub meta_frames: usize,
    pub meta_segment: usize,
    pub meta_knots: usize,
    pub meta_budget: usize,
    /// Random crop offset for episode frames, fraction of the crop side.
    pub meta_jitter: f64,

    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            filter_size: 4,
            num_knots: 100,
            knot_spacing: 0.1,
            lambda: crate::lossmodel::DEFAULT_LAMBDA,
            mask_center: 3.0,
            mask_width: 1.0,
            label_sigma: 0.25,
            loss_params: None,

            search_area_factor: 5.0,
            patch_size: 144,
            feature_stride: 8,
            feature_gain: 0.25,
            gradient_gain: 4.0,
            feature_file_stride: 16.0,

            memory_size: 50,
            init_iterations: 10,
            refine_period: 20,
            refine_iterations: 2,
            distractor_iterations: 1,
            confidence_threshold: 0.25,
            distractor_ratio: 0.5,
            distractor_min_distance: 3.0,
            scale_factors: vec![0.96 * 0.96, 0.96, 1.0, 1.04, 1.04 * 1.04],
            scale_damping: 1.02,
            scale_rate: 1.0,
            sample_weight: 1.0,

            aug_shift: 0.25,
            aug_flip: true,
            aug_rotations: vec![5.0, -5.0, 10.0],
            aug_blurs: vec![1.0, 2.0],
            aug_scales: vec![0.96, 1.04],
            aug_brightness: vec![0.05, -0.05],
            aug_weight: 1.0,

            update_mode: UpdateMode::Ours,
            averaging_rate: 0.02,
            optimizer: OptimizerKind::SteepestDescent,
            gd_step: 0.6,

            meta_iterations: 5,
            meta_threshold: 0.05,
            meta_label_sigma: 0.25,
            meta_beta: 100.0,
            meta_frames: 3,
            meta_segment: 60,
            meta_knots: 16,
            meta_budget: 500,
            meta_jitter: 0.1,

            seed: 0,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split_whitespace().map(parse_num::<f64>).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

impl Config {
    /// Every recognized key, in the order [`to_text`](Self::to_text) writes
    /// them.
    pub const KEYS: &'static [&'static str] = &[
        "filter_size",
        "num_knots",
        "knot_spacing",
        "lambda",
        "mask_center",
        "mask_width",
        "label_sigma",
        "loss_params",
        "search_area_factor",
        "patch_size",
        "feature_stride",
        "feature_gain",
        "gradient_gain",
        "feature_file_stride",
        "memory_size",
        "init_iterations",
        "refine_period",
        "refine_iterations",
        "distractor_iterations",
        "confidence_threshold",
        "distractor_ratio",
        "distractor_min_distance",
        "scale_factors",
        "scale_damping",
        "scale_rate",
        "sample_weight",
        "aug_shift",
        "aug_flip",
        "aug_rotations",
        "aug_blurs",
        "aug_scales",
        "aug_brightness",
        "aug_weight",
        "update_mode",
        "averaging_rate",
        "optimizer",
        "gd_step",
        "meta_iterations",
        "meta_threshold",
        "meta_label_sigma",
        "meta_beta",
        "meta_frames",
        "meta_segment",
        "meta_knots",
        "meta_budget",
        "meta_jitter",
        "seed",
    ];

    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "filter_size" => self.filter_size = parse_num(v)?,
            "num_knots" => self.num_knots = parse_num(v)?,
            "knot_spacing" => self.knot_spacing = parse_num(v)?,
            "lambda" => self.lambda = parse_num(v)?,
            "mask_center" => self.mask_center = parse_num(v)?,
            "mask_width" => self.mask_width = parse_num(v)?,
            "label_sigma" => self.label_sigma = parse_num(v)?,
            "loss_params" => {
                self.loss_params = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "search_area_factor" => self.search_area_factor = parse_num(v)?,
            "patch_size" => self.patch_size = parse_num(v)?,
            "feature_stride" => self.feature_stride = parse_num(v)?,
            "feature_gain" => self.feature_gain = parse_num(v)?,
            "gradient_gain" => self.gradient_gain = parse_num(v)?,
            "feature_file_stride" => self.feature_file_stride = parse_num(v)?,
            "memory_size" => self.memory_size = parse_num(v)?,
            "init_iterations" => self.init_iterations = parse_num(v)?,
            "refine_period" => self.refine_period = parse_num(v)?,
            "refine_iterations" => self.refine_iterations = parse_num(v)?,
            "distractor_iterations" => self.distractor_iterations = parse_num(v)?,
            "confidence_threshold" => self.confidence_threshold = parse_num(v)?,
            "distractor_ratio" => self.distractor_ratio = parse_num(v)?,
            "distractor_min_distance" => self.distractor_min_distance = parse_num(v)?,
            "scale_factors" => self.scale_factors = parse_list(v)?,
            "scale_damping" => self.scale_damping = parse_num(v)?,
            "scale_rate" => self.scale_rate = parse_num(v)?,
            "sample_weight" => self.sample_weight = parse_num(v)?,
            "aug_shift" => self.aug_shift = parse_num(v)?,
            "aug_flip" => self.aug_flip = parse_bool(v)?,
            "aug_rotations" => self.aug_rotations = parse_list(v)?,
            "aug_blurs" => self.aug_blurs = parse_list(v)?,
            "aug_scales" => self.aug_scales = parse_list(v)?,
            "aug_brightness" => self.aug_brightness = parse_list(v)?,
            "aug_weight" => self.aug_weight = parse_num(v)?,
            "update_mode" => {
                self.update_mode = UpdateMode::parse(v)
                    .ok_or_else(|| format!("expected ours|no_update|model_averaging, got `{v}`"))?
            }
            "averaging_rate" => self.averaging_rate = parse_num(v)?,
            "optimizer" => {
                self.optimizer = OptimizerKind::parse(v)
                    .ok_or_else(|| format!("expected sd|gd|init, got `{v}`"))?
            }
            "gd_step" => self.gd_step = parse_num(v)?,
            "meta_iterations" => self.meta_iterations = parse_num(v)?,
            "meta_threshold" => self.meta_threshold = parse_num(v)?,
            "meta_label_sigma" => self.meta_label_sigma = parse_num(v)?,
            "meta_beta" => self.meta_beta = parse_num(v)?,
            "meta_frames" => self.meta_frames = parse_num(v)?,
            "meta_segment" => self.meta_segment = parse_num(v)?,
            "meta_knots" => self.meta_knots = parse_num(v)?,
            "meta_budget" => self.meta_budget = parse_num(v)?,
            "meta_jitter" => self.meta_jitter = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Range checks. Returns the offending key and a message.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        fn need(ok: bool, key: &'static str, msg: &str) -> std::result::Result<(), (&'static str, String)> {
            if ok {
                Ok(())
            } else {
                Err((key, msg.to_string()))
            }
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        need(self.filter_size >= 1, "filter_size", "must be >= 1")?;
        need(self.num_knots >= 2, "num_knots", "must be >= 2")?;
        need(pos(self.knot_spacing), "knot_spacing", "must be > 0")?;
        need(nonneg(self.lambda), "lambda", "must be >= 0")?;
        need(self.mask_center.is_finite(), "mask_center", "must be finite")?;
        need(pos(self.mask_width), "mask_width", "must be > 0")?;
        need(pos(self.label_sigma), "label_sigma", "must be > 0")?;
        need(pos(self.search_area_factor), "search_area_factor", "must be > 0")?;
        need(self.feature_stride >= 1, "feature_stride", "must be >= 1")?;
        need(
            self.patch_size % self.feature_stride == 0,
            "patch_size",
            "must be a multiple of feature_stride",
        )?;
        need(
            self.patch_size / self.feature_stride >= self.filter_size,
            "patch_size",
            "feature grid smaller than the filter",
        )?;
        need(pos(self.feature_gain), "feature_gain", "must be > 0")?;
        need(nonneg(self.gradient_gain), "gradient_gain", "must be >= 0")?;
        need(pos(self.feature_file_stride), "feature_file_stride", "must be > 0")?;
        need(self.memory_size >= 1, "memory_size", "must be >= 1")?;
        need(self.refine_period >= 1, "refine_period", "must be >= 1")?;
        need(self.confidence_threshold.is_finite(), "confidence_threshold", "must be finite")?;
        need(
            self.distractor_ratio > 0.0 && self.distractor_ratio <= 1.0,
            "distractor_ratio",
            "must be in (0, 1]",
        )?;
        need(nonneg(self.distractor_min_distance), "distractor_min_distance", "must be >= 0")?;
        need(
            !self.scale_factors.is_empty() && self.scale_factors.iter().all(|&s| pos(s)),
            "scale_factors",
            "must be a non-empty list of positive factors",
        )?;
        need(
            self.scale_damping.is_finite() && self.scale_damping >= 1.0,
            "scale_damping",
            "must be >= 1",
        )?;
        need(
            self.scale_rate.is_finite() && (0.0..=1.0).contains(&self.scale_rate),
            "scale_rate",
            "must be in [0, 1]",
        )?;
        need(pos(self.sample_weight), "sample_weight", "must be > 0")?;
        need(nonneg(self.aug_shift) && self.aug_shift < 0.5, "aug_shift", "must be in [0, 0.5)")?;
        need(self.aug_rotations.iter().all(|v| v.is_finite()), "aug_rotations", "must be finite")?;
        need(self.aug_blurs.iter().all(|&v| pos(v)), "aug_blurs", "must be > 0")?;
        need(self.aug_scales.iter().all(|&v| pos(v)), "aug_scales", "must be > 0")?;
        need(self.aug_brightness.iter().all(|v| v.is_finite()), "aug_brightness", "must be finite")?;
        need(pos(self.aug_weight), "aug_weight", "must be > 0")?;
        need(
            (0.0..=1.0).contains(&self.averaging_rate),
            "averaging_rate",
            "must be in [0, 1]",
        )?;
        need(nonneg(self.gd_step), "gd_step", "must be >= 0")?;
        need(
            self.meta_threshold > 0.0 && self.meta_threshold < 1.0,
            "meta_threshold",
            "must be in (0, 1)",
        )?;
        need(pos(self.meta_label_sigma), "meta_label_sigma", "must be > 0")?;
        need(pos(self.meta_beta), "meta_beta", "must be > 0")?;
        need(self.meta_frames >= 1, "meta_frames", "must be >= 1")?;
        need(
            self.meta_segment >= 2 * self.meta_frames,
            "meta_segment",
            "must be >= 2 * meta_frames",
        )?;
        need(self.meta_knots >= 2, "meta_knots", "must be >= 2")?;
        need(self.meta_budget >= 1, "meta_budget", "must be >= 1")?;
        need(nonneg(self.meta_jitter) && self.meta_jitter < 0.5, "meta_jitter", "must be in [0, 0.5)")?;
        Ok(())
    }

    /// Parses config text on top of the defaults. Relative `loss_params`
    /// paths resolve against `base_dir`.
    pub fn from_text(text: &str, origin: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = Config::default();
        let mut key_lines: Vec<(&'static str, usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            cfg.set(key, value).map_err(|msg| Error::Config {
                path: origin.to_string(),
                line: line_no,
                key: key.to_string(),
                msg,
            })?;
            if let Some(k) = Self::KEYS.iter().find(|k| **k == key) {
                key_lines.push((k, line_no));
            }
        }
        if let (Some(base), Some(p)) = (base_dir, cfg.loss_params.as_ref()) {
            if p.is_relative() {
                cfg.loss_params = Some(base.join(p));
            }
        }
        cfg.check().map_err(|(key, msg)| {
            let line = key_lines
                .iter()
                .rev()
                .find(|(k, _)| *k == key)
                .map_or(0, |(_, l)| *l);
            Error::Config {
                path: origin.to_string(),
                line,
                key: key.to_string(),
                msg,
            }
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string(), path.parent())
    }

    /// Applies `key=value` overrides (from `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for ov in overrides {
            let (key, value) = ov.split_once('=').ok_or_else(|| Error::Config {
                path: "--set".into(),
                line: 0,
                key: ov.clone(),
                msg: "expected key=value".into(),
            })?;
            self.set(key.trim(), value).map_err(|msg| Error::Config {
                path: "--set".into(),
                line: 0,
                key: key.trim().to_string(),
                msg,
            })?;
        }
        self.check().map_err(|(key, msg)| Error::Config {
            path: "--set".into(),
            line: 0,
            key: key.to_string(),
            msg,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("filter_size", self.filter_size.to_string());
        kv("num_knots", self.num_knots.to_string());
        kv("knot_spacing", self.knot_spacing.to_string());
        kv("lambda", self.lambda.to_string());
        kv("mask_center", self.mask_center.to_string());
        kv("mask_width", self.mask_width.to_string());
        kv("label_sigma", self.label_sigma.to_string());
        kv(
            "loss_params",
            self.loss_params
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("search_area_factor", self.search_area_factor.to_string());
        kv("patch_size", self.patch_size.to_string());
        kv("feature_stride", self.feature_stride.to_string());
        kv("feature_gain", self.feature_gain.to_string());
        kv("gradient_gain", self.gradient_gain.to_string());
        kv("feature_file_stride", self.feature_file_stride.to_string());
        kv("memory_size", self.memory_size.to_string());
        kv("init_iterations", self.init_iterations.to_string());
        kv("refine_period", self.refine_period.to_string());
        kv("refine_iterations", self.refine_iterations.to_string());
        kv("distractor_iterations", self.distractor_iterations.to_string());
        kv("confidence_threshold", self.confidence_threshold.to_string());
        kv("distractor_ratio", self.distractor_ratio.to_string());
        kv("distractor_min_distance", self.distractor_min_distance.to_string());
        kv("scale_factors", fmt_list(&self.scale_factors));
        kv("scale_damping", self.scale_damping.to_string());
        kv("scale_rate", self.scale_rate.to_string());
        kv("sample_weight", self.sample_weight.to_string());
        kv("aug_shift", self.aug_shift.to_string());
        kv("aug_flip", self.aug_flip.to_string());
        kv("aug_rotations", fmt_list(&self.aug_rotations));
        kv("aug_blurs", fmt_list(&self.aug_blurs));
        kv("aug_scales", fmt_list(&self.aug_scales));
        kv("aug_brightness", fmt_list(&self.aug_brightness));
        kv("aug_weight", self.aug_weight.to_string());
        kv("update_mode", self.update_mode.name().to_string());
        kv("averaging_rate", self.averaging_rate.to_string());
        kv("optimizer", self.optimizer.name().to_string());
        kv("gd_step", self.gd_step.to_string());
        kv("meta_iterations", self.meta_iterations.to_string());
        kv("meta_threshold", self.meta_threshold.to_string());
        kv("meta_label_sigma", self.meta_label_sigma.to_string());
        kv("meta_beta", self.meta_beta.to_string());
        kv("meta_frames", self.meta_frames.to_string());
        kv("meta_segment", self.meta_segment.to_string());
        kv("meta_knots", self.meta_knots.to_string());
        kv("meta_budget", self.meta_budget.to_string());
        kv("meta_jitter", self.meta_jitter.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    /// Number of score cells across the crop.
    pub fn score_size(&self) -> usize {
        self.patch_size / self.feature_stride - self.filter_size + 1
    }

    /// Target side length in feature cells at the canonical crop scale.
    pub fn target_cells(&self) -> f64 {
        self.patch_size as f64 / self.search_area_factor / self.feature_stride as f64
    }

    pub fn mask_init(&self) -> MaskInit {
        MaskInit {
            center: self.mask_center,
            width: self.mask_width,
        }
    }

    /// Loss parameters for tracking: the `loss_params` file when set,
    /// otherwise the initialization with `num_knots` knots.
    pub fn tracking_loss_params(&self) -> Result<LossParams<f64>> {
        match &self.loss_params {
            Some(p) => LossParams::load(p),
            None => LossParams::init(
                self.num_knots,
                self.knot_spacing,
                self.label_sigma * self.target_cells(),
                self.mask_init(),
                self.lambda,
            ),
        }
    }

    /// Initialization fitted by meta-training: `meta_knots` knots spread
    /// over the same support as the tracking parametrization.
    pub fn meta_init_params(&self) -> Result<LossParams<f64>> {
        let delta = self.knot_spacing * self.num_knots as f64 / self.meta_knots as f64;
        LossParams::init(
            self.meta_knots,
            delta,
            self.label_sigma * self.target_cells(),
            self.mask_init(),
            self.lambda,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = Config::default();
        let back = Config::from_text(&cfg.to_text(), "cfg", None).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(Config::KEYS.len(), cfg.to_text().lines().count());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = Config::from_text("lambda = 0.1\nbogus_key = 3\n", "c.cfg", None).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("c.cfg:2") && msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn range_violation_reports_line() {
        let e = Config::from_text("\n\nlambda = -1\n", "c.cfg", None).unwrap_err();
        match e {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 3);
                assert_eq!(key, "lambda");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Config::from_text("patch_size = 100\n", "c", None).is_err());
        assert!(Config::from_text("update_mode = sometimes\n", "c", None).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = Config::default();
        cfg.apply_overrides(&["gd_step=0.5".into(), "update_mode = avg".into()])
            .unwrap();
        assert_eq!(cfg.gd_step, 0.5);
        assert_eq!(cfg.update_mode, UpdateMode::ModelAveraging);
        assert!(cfg.apply_overrides(&["nokey=1".into()]).is_err());
    }

    #[test]
    fn default_geometry() {
        let cfg = Config::default();
        assert_eq!(cfg.score_size(), 15);
        assert!((cfg.target_cells() - 3.6).abs() < 1e-12);
    }
}
