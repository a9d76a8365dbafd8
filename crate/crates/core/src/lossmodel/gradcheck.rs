//! Seeded central-difference check of the closed-form loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gradient, loss, Center, LossParams, SampleSet, TrainingSample};
use crate::error::{Error, Result};
use crate::numerics::{conv_valid, Tensor3};

/// Instance shape used by [`gradcheck`]: 8×8×2 features, 4×4×2 filter,
/// three samples.
pub const FEATURE_DIMS: (usize, usize, usize) = (8, 8, 2);
pub const FILTER_SIZE: usize = 4;
pub const SAMPLES: usize = 3;
/// Minimum distance of every score from the hinge kink at zero.
pub const KINK_MARGIN: f64 = 1e-3;
/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Instance {
    pub set: SampleSet<f64>,
    pub params: LossParams<f64>,
    pub filter: Tensor3<f64>,
}

fn uniform_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), lo: f64, hi: f64) -> Tensor3<f64> {
    Tensor3::from_fn(dims.0, dims.1, dims.2, |_, _, _| rng.gen_range(lo..hi))
}

/// Random loss parameters with a non-trivial label, weight and mask.
pub fn random_params(rng: &mut ChaCha8Rng, knots: usize, delta: f64) -> Result<LossParams<f64>> {
    let phi_y = (0..knots).map(|_| rng.gen_range(-0.5..1.5)).collect();
    let phi_v = (0..knots).map(|_| rng.gen_range(0.2..2.0)).collect();
    let phi_m = (0..knots).map(|_| rng.gen_range(-4.0..4.0)).collect();
    LossParams::from_coefficients(delta, phi_y, phi_v, phi_m, rng.gen_range(0.01..0.5))
}

/// Draws an instance whose scores all keep [`KINK_MARGIN`] from zero;
/// the filter is redrawn until that holds.
pub fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = FEATURE_DIMS;
    let k = FILTER_SIZE;
    let (sh, sw) = ((h - k + 1) as f64, (w - k + 1) as f64);
    let samples = (0..SAMPLES)
        .map(|_| {
            let x = uniform_tensor(&mut rng, FEATURE_DIMS, -1.0, 1.0);
            let center = Center::new(rng.gen_range(0.0..sh - 1.0), rng.gen_range(0.0..sw - 1.0));
            TrainingSample::new(x, center)
        })
        .collect();
    let set = SampleSet::from_samples(samples);
    let params = random_params(&mut rng, 12, 0.5)?;
    for _ in 0..1000 {
        let filter = uniform_tensor(&mut rng, (k, k, c), -0.5, 0.5);
        let mut clear = true;
        for s in set.iter() {
            let scores = conv_valid(&s.features, &filter)?;
            clear &= scores.as_slice().iter().all(|v| v.abs() >= KINK_MARGIN);
        }
        if clear {
            return Ok(Instance { set, params, filter });
        }
    }
    Err(Error::InvalidArgument(format!("seed {seed}: no filter clear of the kink")))
}

/// Central differences of the loss along every filter coefficient.
pub fn numeric_gradient(inst: &Instance, step: f64) -> Result<Tensor3<f64>> {
    let mut out = Tensor3::zeros(
        inst.filter.height(),
        inst.filter.width(),
        inst.filter.channels(),
    );
    for i in 0..inst.filter.as_slice().len() {
        let mut plus = inst.filter.clone();
        let mut minus = inst.filter.clone();
        plus.as_mut_slice()[i] += step;
        minus.as_mut_slice()[i] -= step;
        let d = loss(&plus, &inst.set, &inst.params)? - loss(&minus, &inst.set, &inst.params)?;
        out.as_mut_slice()[i] = d / (2.0 * step);
    }
    Ok(out)
}

/// `‖numeric − analytic‖∞ / ‖analytic‖∞`.
pub fn relative_error(analytic: &Tensor3<f64>, numeric: &Tensor3<f64>) -> f64 {
    let scale = analytic.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_rel_error: f64,
    /// Seed of the instance with the largest error.
    pub worst_seed: u64,
}

/// Checks `trials` instances seeded `seed, seed+1, …`.
pub fn gradcheck(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        trials,
        max_rel_error: 0.0,
        worst_seed: seed,
    };
    for t in 0..trials as u64 {
        let s = seed.wrapping_add(t);
        let inst = random_instance(s)?;
        let g = gradient(&inst.filter, &inst.set, &inst.params)?;
        let e = relative_error(&g, &numeric_gradient(&inst, FD_STEP)?);
        if e > report.max_rel_error || t == 0 {
            report.max_rel_error = e;
            report.worst_seed = s;
        }
    }
    Ok(report)
}
