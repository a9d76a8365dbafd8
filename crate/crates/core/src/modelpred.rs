//! Target model prediction: a pooling initializer followed by steepest
//! descent recursions whose step length minimizes a Gauss-Newton quadratic
//! model of the loss along the gradient.

use crate::error::{Error, Result};
use crate::lossmodel::{LossParams, LossProblem, SampleSet};
use crate::numerics::{norm_sq, Tensor3};
use crate::scalar::Scalar;

/// Convolution weights of the target model, K×K×C.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter<T = f64>(Tensor3<T>);

impl<T: Scalar> Filter<T> {
    pub fn new(weights: Tensor3<T>) -> Result<Self> {
        if weights.height() == 0 || weights.width() == 0 || weights.channels() == 0 {
            return Err(Error::shape("Filter::new", format!("empty filter {:?}", weights.dims())));
        }
        if !weights.is_finite() {
            return Err(Error::InvalidArgument("filter has non-finite weights".into()));
        }
        Ok(Filter(weights))
    }

    pub fn zeros(k: usize, channels: usize) -> Self {
        Filter(Tensor3::zeros(k, k, channels))
    }

    pub fn weights(&self) -> &Tensor3<T> {
        &self.0
    }

    pub fn into_weights(self) -> Tensor3<T> {
        self.0
    }

    /// `(height, width)` of the kernel.
    pub fn size(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    /// `(1 − γ)·self + γ·other`.
    pub fn blend(&self, other: &Filter<T>, gamma: T) -> Result<Filter<T>> {
        let keep = T::one() - gamma;
        Ok(Filter(self.0.zip_map(&other.0, |a, b| keep * a + gamma * b)?))
    }
}

/// Axis-aligned box on a feature grid. Cell `j` spans `[j, j+1)`, so a box
/// `[a, a+K)` covers exactly K cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellBox {
    pub row0: f64,
    pub col0: f64,
    pub row1: f64,
    pub col1: f64,
}

impl CellBox {
    pub fn from_center(row: f64, col: f64, height: f64, width: f64) -> Self {
        CellBox {
            row0: row - height / 2.0,
            col0: col - width / 2.0,
            row1: row + height / 2.0,
            col1: col + width / 2.0,
        }
    }

    pub fn height(&self) -> f64 {
        self.row1 - self.row0
    }

    pub fn width(&self) -> f64 {
        self.col1 - self.col0
    }

    pub fn area(&self) -> f64 {
        self.height().max(0.0) * self.width().max(0.0)
    }
}

/// Bilinear lookup at extent coordinates `(y, x)`; samples outside the map
/// are clamped to the border.
pub(crate) fn bilinear<T: Scalar>(x: &Tensor3<T>, y: f64, xx: f64, k: usize) -> T {
    let fy = (y - 0.5).clamp(0.0, (x.height() - 1) as f64);
    let fx = (xx - 0.5).clamp(0.0, (x.width() - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(x.height() - 1), (x0 + 1).min(x.width() - 1));
    let (ty, tx) = (T::of(fy - y0 as f64), T::of(fx - x0 as f64));
    let one = T::one();
    let top = x.get(y0, x0, k) * (one - tx) + x.get(y0, x1, k) * tx;
    let bottom = x.get(y1, x0, k) * (one - tx) + x.get(y1, x1, k) * tx;
    top * (one - ty) + bottom * ty
}

/// Average-pools the region `bx` of `x` into `out_h × out_w` bins. Each bin
/// averages a grid of bilinear samples with roughly one sample per cell.
pub fn roi_pool<T: Scalar>(
    x: &Tensor3<T>,
    bx: &CellBox,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor3<T>> {
    if !(bx.area() >= 1.0) {
        return Err(Error::DegenerateBox { area: bx.area() });
    }
    let bin_h = bx.height() / out_h as f64;
    let bin_w = bx.width() / out_w as f64;
    let ny = (bin_h.ceil() as usize).max(1);
    let nx = (bin_w.ceil() as usize).max(1);
    let norm = T::of(1.0 / (ny * nx) as f64);
    let mut out = Tensor3::zeros(out_h, out_w, x.channels());
    for a in 0..out_h {
        for b in 0..out_w {
            for k in 0..x.channels() {
                let mut acc = T::zero();
                for p in 0..ny {
                    let y = bx.row0 + a as f64 * bin_h + (p as f64 + 0.5) * bin_h / ny as f64;
                    for q in 0..nx {
                        let xx = bx.col0 + b as f64 * bin_w + (q as f64 + 0.5) * bin_w / nx as f64;
                        acc += bilinear(x, y, xx, k);
                    }
                }
                out.set(a, b, k, acc * norm);
            }
        }
    }
    Ok(out)
}

/// Initial model: the target region of every sample pooled to the filter
/// size, averaged over samples.
pub fn init_filter<T: Scalar>(
    set: &SampleSet<T>,
    filter_hw: (usize, usize),
    target_boxes: &[CellBox],
) -> Result<Filter<T>> {
    if set.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if target_boxes.len() != set.len() {
        return Err(Error::InvalidArgument(format!(
            "{} target boxes for {} samples",
            target_boxes.len(),
            set.len()
        )));
    }
    let mut acc: Option<Tensor3<T>> = None;
    for (sample, bx) in set.iter().zip(target_boxes) {
        let pooled = roi_pool(&sample.features, bx, filter_hw.0, filter_hw.1)?;
        acc = Some(match acc {
            None => pooled,
            Some(a) => a.zip_map(&pooled, |u, v| u + v)?,
        });
    }
    let n = T::of(set.len() as f64);
    Filter::new(acc.expect("non-empty set").map(|v| v / n))
}

/// Curvature matrix of the quadratic model used to pick the step length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Curvature<T = f64> {
    /// Gauss-Newton approximation of the Hessian of `L = ‖ξ‖²`, i.e. `2JᵀJ`.
    GaussNewton,
    /// `Q = I/β`, which turns the step into plain gradient descent with
    /// step `β`.
    ScaledIdentity(T),
}

/// Floor on the curvature denominator.
const CURVATURE_EPS: f64 = 1e-30;

#[derive(Clone, Debug)]
pub struct StepOutcome<T = f64> {
    pub filter: Filter<T>,
    pub alpha: T,
    pub loss_before: T,
    pub grad_norm_sq: T,
    pub h_norm_sq: T,
}

/// One steepest-descent recursion: `f − α∇L` with
/// `α = ∇Lᵀ∇L / ∇Lᵀ Q ∇L`.
pub fn steepest_descent_step<T: Scalar>(
    f: &Filter<T>,
    problem: &LossProblem<'_, T>,
    curvature: Curvature<T>,
) -> Result<StepOutcome<T>> {
    let (loss_before, g) = problem.loss_and_gradient(f.weights())?;
    let gg = norm_sq(&g);
    if gg == T::zero() {
        return Ok(StepOutcome {
            filter: f.clone(),
            alpha: T::zero(),
            loss_before,
            grad_norm_sq: gg,
            h_norm_sq: T::zero(),
        });
    }
    let (hh, denom) = match curvature {
        Curvature::GaussNewton => {
            let hh = problem.h_norm_sq(f.weights(), &g)?;
            if hh == T::zero() {
                return Err(Error::SingularCurvature);
            }
            (hh, T::of(2.0) * hh.max(T::of(CURVATURE_EPS)))
        }
        Curvature::ScaledIdentity(beta) => {
            if !(beta > T::zero()) {
                return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
            }
            (T::zero(), gg / beta)
        }
    };
    let alpha = gg / denom;
    let filter = Filter::new(f.weights().axpy(-alpha, &g)?)?;
    Ok(StepOutcome {
        filter,
        alpha,
        loss_before,
        grad_norm_sq: gg,
        h_norm_sq: hh,
    })
}

/// Fixed step lengths for the gradient descent baseline.
#[derive(Clone, Debug, PartialEq)]
pub enum StepLengths<T = f64> {
    Scalar(T),
    PerCoefficient(Tensor3<T>),
}

/// `f − α ⊙ ∇L`.
pub fn gradient_descent_step<T: Scalar>(
    f: &Filter<T>,
    problem: &LossProblem<'_, T>,
    steps: &StepLengths<T>,
) -> Result<StepOutcome<T>> {
    let (loss_before, g) = problem.loss_and_gradient(f.weights())?;
    let gg = norm_sq(&g);
    let (next, alpha) = match steps {
        StepLengths::Scalar(a) => (f.weights().axpy(-*a, &g)?, *a),
        StepLengths::PerCoefficient(a) => {
            a.same_shape("gradient_descent_step", &g)?;
            let scaled = a.zip_map(&g, |s, d| s * d)?;
            let mean = a.as_slice().iter().fold(T::zero(), |s, &v| s + v)
                / T::of(a.as_slice().len() as f64);
            (f.weights().zip_map(&scaled, |w, d| w - d)?, mean)
        }
    };
    Ok(StepOutcome {
        filter: Filter::new(next)?,
        alpha,
        loss_before,
        grad_norm_sq: gg,
        h_norm_sq: T::zero(),
    })
}

/// Which recursion [`predict_model`] applies.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T = f64> {
    SteepestDescent(Curvature<T>),
    GradientDescent(StepLengths<T>),
}

impl<T: Scalar> Default for Optimizer<T> {
    fn default() -> Self {
        Optimizer::SteepestDescent(Curvature::GaussNewton)
    }
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&self, f: &Filter<T>, problem: &LossProblem<'_, T>) -> Result<StepOutcome<T>> {
        match self {
            Optimizer::SteepestDescent(c) => steepest_descent_step(f, problem, *c),
            Optimizer::GradientDescent(s) => gradient_descent_step(f, problem, s),
        }
    }
}

#[derive(Clone, Debug)]
pub struct IterRecord<T = f64> {
    /// Loss at this iterate.
    pub loss: T,
    /// `‖∇L‖` at this iterate.
    pub grad_norm: T,
    /// Step length that produced this iterate; zero for `f⁽⁰⁾`.
    pub alpha: T,
    pub filter: Option<Filter<T>>,
}

/// One record per iterate, `f⁽⁰⁾` included.
#[derive(Clone, Debug, Default)]
pub struct OptimizerTrace<T = f64> {
    pub records: Vec<IterRecord<T>>,
}

impl<T: Scalar> OptimizerTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<T> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Iterates, when the trace was recorded with filter snapshots.
    pub fn filters(&self) -> Option<Vec<&Filter<T>>> {
        self.records.iter().map(|r| r.filter.as_ref()).collect()
    }
}

/// Where the recursion starts.
#[derive(Clone, Copy, Debug)]
pub enum Start<'a, T = f64> {
    Filter(&'a Filter<T>),
    Pool {
        filter_hw: (usize, usize),
        boxes: &'a [CellBox],
    },
}

#[derive(Clone, Debug)]
pub struct PredictOptions<T = f64> {
    pub iterations: usize,
    pub optimizer: Optimizer<T>,
    pub keep_filters: bool,
}

impl<T: Scalar> PredictOptions<T> {
    pub fn steepest(iterations: usize) -> Self {
        PredictOptions {
            iterations,
            optimizer: Optimizer::default(),
            keep_filters: false,
        }
    }

    pub fn keep_filters(mut self) -> Self {
        self.keep_filters = true;
        self
    }
}

/// Runs the model predictor: start filter, then `iterations` recursions.
pub fn predict_model<T: Scalar>(
    set: &SampleSet<T>,
    params: &LossParams<T>,
    start: Start<'_, T>,
    opts: &PredictOptions<T>,
) -> Result<(Filter<T>, OptimizerTrace<T>)> {
    let f0 = match start {
        Start::Filter(f) => f.clone(),
        Start::Pool { filter_hw, boxes } => init_filter(set, filter_hw, boxes)?,
    };
    let problem = LossProblem::new(set, params, f0.size())?;
    predict_on(&problem, f0, opts)
}

/// [`predict_model`] on an already prepared problem.
pub fn predict_on<T: Scalar>(
    problem: &LossProblem<'_, T>,
    f0: Filter<T>,
    opts: &PredictOptions<T>,
) -> Result<(Filter<T>, OptimizerTrace<T>)> {
    let mut trace = OptimizerTrace {
        records: Vec::with_capacity(opts.iterations + 1),
    };
    let snapshot = |f: &Filter<T>| opts.keep_filters.then(|| f.clone());
    let mut f = f0;
    let mut alpha = T::zero();
    for _ in 0..opts.iterations {
        let step = opts.optimizer.step(&f, problem)?;
        trace.records.push(IterRecord {
            loss: step.loss_before,
            grad_norm: step.grad_norm_sq.sqrt(),
            alpha,
            filter: snapshot(&f),
        });
        alpha = step.alpha;
        f = step.filter;
    }
    let (loss, g) = problem.loss_and_gradient(f.weights())?;
    trace.records.push(IterRecord {
        loss,
        grad_norm: norm_sq(&g).sqrt(),
        alpha,
        filter: snapshot(&f),
    });
    Ok((f, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lossmodel::{Center, TrainingSample};

    fn ls_params(lambda: f64, label: f64) -> LossParams {
        LossParams::from_coefficients(1.0, vec![label; 3], vec![1.0; 3], vec![60.0; 3], lambda)
            .unwrap()
    }

    #[test]
    fn aligned_box_copies_region() {
        let x = Tensor3::from_fn(8, 8, 2, |i, j, k| (i * 8 + j) as f64 + 0.5 * k as f64);
        let bx = CellBox {
            row0: 2.0,
            col0: 3.0,
            row1: 6.0,
            col1: 7.0,
        };
        let p = roi_pool(&x, &bx, 4, 4).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for k in 0..2 {
                    assert_eq!(p.get(a, b, k), x.get(a + 2, b + 3, k));
                }
            }
        }
    }

    #[test]
    fn pooling_preserves_constants() {
        let x = Tensor3::<f64>::filled(12, 12, 3, 0.7);
        let bx = CellBox::from_center(6.0, 6.0, 8.0, 8.0);
        let p = roi_pool(&x, &bx, 4, 4).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn degenerate_box_rejected() {
        let x = Tensor3::<f64>::filled(6, 6, 1, 1.0);
        let bx = CellBox::from_center(3.0, 3.0, 0.5, 1.5);
        assert!(matches!(roi_pool(&x, &bx, 2, 2), Err(Error::DegenerateBox { .. })));
    }

    #[test]
    fn init_averages_samples() {
        let a = Tensor3::from_fn(4, 4, 1, |i, j, _| (i + j) as f64);
        let b = Tensor3::from_fn(4, 4, 1, |i, j, _| (i * j) as f64);
        let set = SampleSet::from_samples(vec![
            TrainingSample::new(a.clone(), Center::new(0.0, 0.0)),
            TrainingSample::new(b.clone(), Center::new(0.0, 0.0)),
        ]);
        let bx = CellBox {
            row0: 1.0,
            col0: 1.0,
            row1: 3.0,
            col1: 3.0,
        };
        let f = init_filter(&set, (2, 2), &[bx, bx]).unwrap();
        let pa = roi_pool(&a, &bx, 2, 2).unwrap();
        let pb = roi_pool(&b, &bx, 2, 2).unwrap();
        for i in 0..4 {
            let want = (pa.as_slice()[i] + pb.as_slice()[i]) / 2.0;
            assert_eq!(f.weights().as_slice()[i], want);
        }
        assert!(init_filter(&set, (2, 2), &[bx]).is_err());
    }

    #[test]
    fn scalar_quadratic_solves_in_one_step() {
        // L(f) = (x f − y)² + λ² f² has its minimum at f* = x y / (x² + λ²).
        let (x, y, lambda) = (1.7, 0.6, 0.4);
        let set = SampleSet::from_samples(vec![TrainingSample::new(
            Tensor3::filled(1, 1, 1, x),
            Center::new(0.0, 0.0),
        )]);
        let p = ls_params(lambda, y);
        let problem = LossProblem::new(&set, &p, (1, 1)).unwrap();
        let f0 = Filter::new(Tensor3::filled(1, 1, 1, -2.0)).unwrap();
        let out = steepest_descent_step(&f0, &problem, Curvature::GaussNewton).unwrap();
        let f_star = x * y / (x * x + lambda * lambda);
        let got = out.filter.weights().get(0, 0, 0);
        assert!((got - f_star).abs() < 1e-12, "{got} vs {f_star}");
    }

    #[test]
    fn identity_curvature_gives_fixed_step() {
        let set = SampleSet::from_samples(vec![TrainingSample::new(
            Tensor3::from_fn(5, 5, 2, |i, j, k| ((i * 3 + j * 5 + k) % 7) as f64 * 0.2),
            Center::new(1.0, 1.0),
        )]);
        let p = ls_params(0.1, 0.5);
        let problem = LossProblem::new(&set, &p, (3, 3)).unwrap();
        let f0 = Filter::new(Tensor3::filled(3, 3, 2, 0.05)).unwrap();
        for beta in [1e-3, 0.1, 2.5] {
            let out = steepest_descent_step(&f0, &problem, Curvature::ScaledIdentity(beta)).unwrap();
            assert!((out.alpha - beta).abs() <= 1e-15 * beta);
            let gd = gradient_descent_step(&f0, &problem, &StepLengths::Scalar(out.alpha)).unwrap();
            assert_eq!(gd.filter, out.filter);
        }
    }

    #[test]
    fn stationary_point_is_fixed() {
        // Zero features, zero label, λ = 0: gradient vanishes everywhere.
        let set = SampleSet::from_samples(vec![TrainingSample::new(
            Tensor3::zeros(3, 3, 1),
            Center::new(0.0, 0.0),
        )]);
        let p = ls_params(0.0, 0.0);
        let f0 = Filter::new(Tensor3::filled(2, 2, 1, 0.3)).unwrap();
        let problem = LossProblem::new(&set, &p, (2, 2)).unwrap();
        let out = steepest_descent_step(&f0, &problem, Curvature::GaussNewton).unwrap();
        assert_eq!(out.alpha, 0.0);
        assert_eq!(out.filter, f0);
        let (f, trace) = predict_model(&set, &p, Start::Filter(&f0), &PredictOptions::steepest(7))
            .unwrap();
        assert_eq!(f, f0);
        assert_eq!(trace.len(), 8);
    }

    #[test]
    fn zero_gd_step_is_identity() {
        let set = SampleSet::from_samples(vec![TrainingSample::new(
            Tensor3::filled(3, 3, 1, 1.0),
            Center::new(0.0, 0.0),
        )]);
        let p = ls_params(0.2, 1.0);
        let problem = LossProblem::new(&set, &p, (2, 2)).unwrap();
        let f0 = Filter::new(Tensor3::filled(2, 2, 1, 0.3)).unwrap();
        let out = gradient_descent_step(&f0, &problem, &StepLengths::Scalar(0.0)).unwrap();
        assert_eq!(out.filter, f0);
        let per = StepLengths::PerCoefficient(Tensor3::zeros(2, 2, 1));
        assert_eq!(gradient_descent_step(&f0, &problem, &per).unwrap().filter, f0);
        let bad = StepLengths::PerCoefficient(Tensor3::zeros(3, 2, 1));
        assert!(gradient_descent_step(&f0, &problem, &bad).is_err());
    }

    #[test]
    fn trace_includes_initial_iterate() {
        let set = SampleSet::from_samples(vec![TrainingSample::new(
            Tensor3::from_fn(6, 6, 1, |i, j, _| ((i + 2 * j) % 5) as f64 * 0.3),
            Center::new(1.5, 1.5),
        )]);
        let p = ls_params(0.1, 0.5);
        let f0 = Filter::zeros(3, 1);
        let opts = PredictOptions::steepest(0).keep_filters();
        let (f, trace) = predict_model(&set, &p, Start::Filter(&f0), &opts).unwrap();
        assert_eq!(f, f0);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.records[0].alpha, 0.0);

        let opts = PredictOptions::steepest(5).keep_filters();
        let (f, trace) = predict_model(&set, &p, Start::Filter(&f0), &opts).unwrap();
        assert_eq!(trace.len(), 6);
        assert_eq!(trace.filters().unwrap()[5], &f);
        assert!(trace.records[1..].iter().all(|r| r.alpha > 0.0));
    }

    #[test]
    fn blend_endpoints() {
        let a = Filter::new(Tensor3::filled(2, 2, 1, 1.0)).unwrap();
        let b = Filter::new(Tensor3::filled(2, 2, 1, 3.0)).unwrap();
        assert_eq!(a.blend(&b, 0.0).unwrap(), a);
        assert_eq!(a.blend(&b, 1.0).unwrap(), b);
        assert_eq!(a.blend(&b, 0.5).unwrap().weights().get(0, 0, 0), 2.0);
    }
}
