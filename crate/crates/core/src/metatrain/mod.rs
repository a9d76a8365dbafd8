//! Offline fitting of the loss parameters on train/test episodes, plus the
//! synthetic scene generator the benchmarks are built on.

pub mod episodes;
pub mod scene;

pub use episodes::{
    episode_from_frames, episode_scene, load_episodes, synthetic_episodes, toy_scene, write_episode_dir, Episode,
    EpisodeFrame,
};
pub use scene::{generate_scene, SceneSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::lossmodel::{Center, LossParams, SampleSet};
use crate::modelpred::{predict_model, CellBox, Filter, PredictOptions, Start};
use crate::numerics::{conv_valid, ScoreMap};

/// Outer objective settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaObjective {
    /// Weight of the classification term.
    pub beta: f64,
    /// Optimizer recursions unrolled per episode.
    pub iterations: usize,
    /// Label level separating target cells from background.
    pub threshold: f64,
    /// Test-label standard deviation relative to the target size.
    pub label_sigma: f64,
}

impl MetaObjective {
    pub fn from_config(cfg: &Config) -> Self {
        MetaObjective {
            beta: cfg.meta_beta,
            iterations: cfg.meta_iterations,
            threshold: cfg.meta_threshold,
            label_sigma: cfg.meta_label_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument("beta must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument("threshold must be in (0, 1)".into()));
        }
        if !(self.label_sigma > 0.0) {
            return Err(Error::InvalidArgument("label sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Pointwise test error: `s − z` where `z > T`, `max(0, s)` elsewhere.
pub fn test_error(s: &ScoreMap<f64>, z: &ScoreMap<f64>, threshold: f64) -> Result<ScoreMap<f64>> {
    s.zip_map(z, |s, z| if z > threshold { s - z } else { s.max(0.0) })
}

/// Gaussian label on an `h × w` grid centered at `center` (cells).
pub fn gaussian_label(center: Center<f64>, sigma: f64, dims: (usize, usize)) -> ScoreMap<f64> {
    ScoreMap::from_fn(dims.0, dims.1, |i, j| {
        let d = center.distance_to(i, j);
        (-d * d / (2.0 * sigma * sigma)).exp()
    })
}

/// `L_cls`: the summed squared test error over `test`, averaged over all
/// iterates (`f⁽⁰⁾` included).
pub fn cls_loss(filters: &[&Filter<f64>], test: &[EpisodeFrame], obj: &MetaObjective) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if filters.is_empty() {
        return Err(Error::InvalidArgument("no iterates".into()));
    }
    let mut labels = Vec::with_capacity(test.len());
    for fr in test {
        let (fh, fw) = filters[0].size();
        let dims = (
            fr.features.height().saturating_sub(fh) + 1,
            fr.features.width().saturating_sub(fw) + 1,
        );
        let sigma = obj.label_sigma * fr.target.height().max(0.0).sqrt() * fr.target.width().max(0.0).sqrt();
        labels.push(gaussian_label(fr.center, sigma, dims));
    }
    let mut total = 0.0;
    for f in filters {
        for (fr, z) in test.iter().zip(&labels) {
            let s = conv_valid(&fr.features, f.weights())?;
            let e = test_error(&s, z, obj.threshold)?;
            total += e.as_slice().iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(total / filters.len() as f64)
}

/// `L_cls` of one episode: predict from the train frames, score every
/// iterate on the test frames.
pub fn episode_loss(
    episode: &Episode,
    params: &LossParams<f64>,
    filter_size: usize,
    obj: &MetaObjective,
) -> Result<f64> {
    let set = SampleSet::from_samples(episode.train.iter().map(|f| f.sample()).collect());
    let boxes: Vec<CellBox> = episode.train.iter().map(|f| f.target).collect();
    let (_, trace) = predict_model(
        &set,
        params,
        Start::Pool {
            filter_hw: (filter_size, filter_size),
            boxes: &boxes,
        },
        &PredictOptions::steepest(obj.iterations).keep_filters(),
    )?;
    let filters = trace.filters().expect("filters kept");
    cls_loss(&filters, &episode.test, obj)
}

/// Mean `L_cls` over episodes, in fixed episode order.
pub fn mean_cls_loss(
    episodes: &[Episode],
    params: &LossParams<f64>,
    filter_size: usize,
    obj: &MetaObjective,
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::InvalidArgument("no episodes".into()));
    }
    let mut total = 0.0;
    for ep in episodes {
        total += episode_loss(ep, params, filter_size, obj)?;
    }
    Ok(total / episodes.len() as f64)
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: LossParams<f64>,
    /// `β · mean L_cls` at the initial parameters.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub evaluations: usize,
    pub accepted_steps: usize,
    /// Best objective after each round.
    pub history: Vec<f64>,
}

/// Derivative-free fitting of `[φ^y, φ^v, φ^m, λ]` by simultaneous
/// perturbation: each round probes `x ± cΔ` along a random sign vector
/// `Δ`, then tries a step along the resulting gradient estimate. The best
/// point seen is kept, so the returned objective never exceeds the initial
/// one. Failed evaluations count against the budget and are rejected.
pub fn fit_loss_params(
    episodes: &[Episode],
    init: &LossParams<f64>,
    obj: &MetaObjective,
    budget: usize,
    filter_size: usize,
    seed: u64,
) -> Result<FitReport> {
    obj.validate()?;
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let n = init.num_knots();
    let eval = |v: &[f64]| -> Option<f64> {
        let p = init.with_vector(v).ok()?;
        let l = mean_cls_loss(episodes, &p, filter_size, obj).ok()?;
        l.is_finite().then_some(obj.beta * l)
    };

    let mut x = init.to_vector();
    // per-coordinate probe scale: label and weight values are O(1), mask
    // logits span several units, λ is small
    let scale: Vec<f64> = (0..x.len())
        .map(|i| match i / n {
            0 | 1 => 0.05,
            2 => 0.5,
            _ => 0.005,
        })
        .collect();
    let best0 = eval(&x).ok_or_else(|| {
        Error::InvalidArgument("objective is not finite at the initial parameters".into())
    })?;
    let mut best = best0;
    let mut used = 1;
    let mut history = vec![best];
    let mut accepted = 0;
    let mut gain = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let consider = |cand: Vec<f64>, val: Option<f64>, x: &mut Vec<f64>, best: &mut f64| {
        if let Some(v) = val {
            if v < *best {
                *best = v;
                *x = cand;
                return true;
            }
        }
        false
    };

    while used + 3 <= budget {
        let delta: Vec<f64> = (0..x.len())
            .map(|i| if rng.gen_bool(0.5) { scale[i] } else { -scale[i] })
            .collect();
        let plus: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let minus: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a - d).collect();
        let (fp, fm) = (eval(&plus), eval(&minus));
        used += 2;
        let mut improved = false;
        if let (Some(fp), Some(fm)) = (fp, fm) {
            // directional slope along delta, normalized by the current best
            let slope = (fp - fm) / (2.0 * best.max(1e-300));
            let step: Vec<f64> = x
                .iter()
                .zip(&delta)
                .map(|(a, d)| a - gain * slope * d)
                .collect();
            let fs = eval(&step);
            used += 1;
            improved |= consider(step, fs, &mut x, &mut best);
        } else {
            used += 1;
        }
        improved |= consider(plus, fp, &mut x, &mut best);
        improved |= consider(minus, fm, &mut x, &mut best);
        if improved {
            accepted += 1;
            gain *= 1.5;
        } else {
            gain *= 0.6;
        }
        gain = gain.clamp(1e-3, 1e3);
        history.push(best);
    }
    let params = init.with_vector(&x)?;
    Ok(FitReport {
        params,
        initial_objective: best0,
        final_objective: best,
        evaluations: used,
        accepted_steps: accepted,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lossmodel::{residual, LossParams, MaskInit, RadialFunction, OutputTransform};
    use crate::numerics::Tensor3;

    #[test]
    fn test_error_branches() {
        let s = ScoreMap::from_vec(1, 3, vec![0.3, -0.4, 0.4]).unwrap();
        let z = ScoreMap::from_vec(1, 3, vec![0.5, 0.01, 0.01]).unwrap();
        let e = test_error(&s, &z, 0.05).unwrap();
        assert!((e.get(0, 0) + 0.2).abs() < 1e-15);
        assert_eq!(e.get(0, 1), 0.0);
        assert_eq!(e.get(0, 2), 0.4);
        assert!(test_error(&s, &ScoreMap::zeros(2, 2), 0.05).is_err());
    }

    fn constant_params(n: usize, y: f64, m_logit: f64) -> LossParams<f64> {
        let f = |v: f64, t| RadialFunction::new(vec![v; n], 0.5, t).unwrap();
        LossParams::new(
            f(y, OutputTransform::Identity),
            f(1.0, OutputTransform::Identity),
            f(m_logit, OutputTransform::Sigmoid),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn agrees_with_residual_in_limits() {
        let s = ScoreMap::from_fn(5, 5, |i, j| (i as f64 - 2.0) * 0.3 - (j as f64) * 0.1);
        let c = Center::new(2.0, 2.0);
        // target branch: m = 1, label = z, any z above T
        let z = ScoreMap::filled(5, 5, 0.7);
        let p = constant_params(6, 0.7, 60.0);
        let fields = crate::lossmodel::build_fields(&p, c, (5, 5)).unwrap();
        let r = residual(&s, &fields).unwrap();
        let e = test_error(&s, &z, 0.05).unwrap();
        for (a, b) in r.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        // background branch: m = 0, v = 1, y = 0
        let z = ScoreMap::zeros(5, 5);
        let p = constant_params(6, 0.0, -60.0);
        let fields = crate::lossmodel::build_fields(&p, c, (5, 5)).unwrap();
        let r = residual(&s, &fields).unwrap();
        let e = test_error(&s, &z, 0.05).unwrap();
        for (a, b) in r.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn tiny_frame(seed: u64) -> EpisodeFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = Tensor3::from_fn(7, 7, 2, |_, _, _| rng.gen_range(-1.0..1.0));
        EpisodeFrame {
            features,
            center: Center::new(2.2, 1.7),
            target: CellBox::from_center(3.7, 3.2, 2.0, 2.0),
            frame_index: 0,
        }
    }

    #[test]
    fn cls_loss_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let test = vec![tiny_frame(1), tiny_frame(2)];
        let filters: Vec<Filter<f64>> = (0..3)
            .map(|_| {
                Filter::new(Tensor3::from_fn(3, 3, 2, |_, _, _| rng.gen_range(-0.5..0.5))).unwrap()
            })
            .collect();
        let refs: Vec<&Filter<f64>> = filters.iter().collect();
        let obj = MetaObjective {
            beta: 100.0,
            iterations: 2,
            threshold: 0.05,
            label_sigma: 0.25,
        };
        let got = cls_loss(&refs, &test, &obj).unwrap();

        let mut expected = 0.0;
        for f in &filters {
            for fr in &test {
                let sigma = 0.25 * 2.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let mut s = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                for k in 0..2 {
                                    s += fr.features.get(i + a, j + b, k) * f.weights().get(a, b, k);
                                }
                            }
                        }
                        let d2 = (i as f64 - 2.2).powi(2) + (j as f64 - 1.7).powi(2);
                        let z = (-d2 / (2.0 * sigma * sigma)).exp();
                        let e = if z > 0.05 { s - z } else { s.max(0.0) };
                        expected += e * e;
                    }
                }
            }
        }
        expected /= 3.0;
        assert!((got - expected).abs() <= 1e-12 * expected.abs());

        let same = vec![&filters[0]; 4];
        let single = cls_loss(&[&filters[0]], &test, &obj).unwrap();
        assert!((cls_loss(&same, &test, &obj).unwrap() - single).abs() < 1e-12 * single);
        assert!(cls_loss(&refs, &[], &obj).is_err());
    }

    #[test]
    fn tiny_budget_returns_init() {
        let ep = Episode {
            train: vec![tiny_frame(3), tiny_frame(4)],
            test: vec![tiny_frame(5)],
            segment_length: 6,
        };
        let init = LossParams::init(8, 0.5, 0.5, MaskInit::default(), 0.01).unwrap();
        let obj = MetaObjective {
            beta: 1.0,
            iterations: 2,
            threshold: 0.05,
            label_sigma: 0.25,
        };
        let rep = fit_loss_params(&[ep.clone()], &init, &obj, 2, 3, 0).unwrap();
        assert_eq!(rep.params, init);
        assert_eq!(rep.final_objective, rep.initial_objective);

        let rep = fit_loss_params(&[ep], &init, &obj, 60, 3, 0).unwrap();
        assert!(rep.final_objective <= rep.initial_objective);
        assert!(rep.params.lambda() >= 0.0);
        assert!(rep.evaluations <= 60);
    }
}
