//! Residual, loss, closed-form gradient and Gauss-Newton curvature.
//!
//! For a sample with scores `s = x ∗ f` the residual is
//! `r = v·(m·s + (1−m)·max(0, s) − y)`, and its derivative with respect to
//! the scores is the diagonal `q = v·(m + (1−m)·𝟙[s > 0])`. Everything below
//! is built from these two pointwise maps plus [`conv_valid`] and its adjoint
//! [`conv_transpose`].

use super::params::LossParams;
use super::samples::{Center, SampleSet, TrainingSample};
use crate::error::{Error, Result};
use crate::numerics::{conv_transpose, conv_valid, norm_sq, valid_shape, ScoreMap, Tensor3};
use crate::scalar::Scalar;

/// The three radial fields sampled on a score grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Fields<T = f64> {
    pub label: ScoreMap<T>,
    pub weight: ScoreMap<T>,
    pub mask: ScoreMap<T>,
}

impl<T: Scalar> Fields<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.label.dims()
    }
}

/// Samples `y_c`, `v_c` and `m_c` at every integer point of a
/// `score_shape` grid, with distances measured in cells from `center`.
pub fn build_fields<T: Scalar>(
    params: &LossParams<T>,
    center: Center<T>,
    score_shape: (usize, usize),
) -> Result<Fields<T>> {
    let (h, w) = score_shape;
    if h == 0 || w == 0 {
        return Err(Error::shape("build_fields", format!("empty score shape {h}x{w}")));
    }
    if !center.row.is_finite() || !center.col.is_finite() {
        return Err(Error::InvalidArgument("non-finite target center".into()));
    }
    let mut label = Vec::with_capacity(h * w);
    let mut weight = Vec::with_capacity(h * w);
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let d = center.distance_to(i, j);
            label.push(params.label_fn.eval_unchecked(d));
            weight.push(params.weight_fn.eval_unchecked(d));
            mask.push(params.mask_fn.eval_unchecked(d));
        }
    }
    Ok(Fields {
        label: ScoreMap::from_vec(h, w, label)?,
        weight: ScoreMap::from_vec(h, w, weight)?,
        mask: ScoreMap::from_vec(h, w, mask)?,
    })
}

/// Pointwise `v·(m·s + (1−m)·max(0, s) − y)`.
pub fn residual<T: Scalar>(scores: &ScoreMap<T>, fields: &Fields<T>) -> Result<ScoreMap<T>> {
    scores.same_shape("residual", &fields.label)?;
    let (h, w) = scores.dims();
    let s = scores.as_slice();
    let (y, v, m) = (
        fields.label.as_slice(),
        fields.weight.as_slice(),
        fields.mask.as_slice(),
    );
    let data = (0..h * w)
        .map(|i| v[i] * (m[i] * s[i] + (T::one() - m[i]) * s[i].max(T::zero()) - y[i]))
        .collect();
    ScoreMap::from_vec(h, w, data)
}

/// Derivative of the residual with respect to the scores.
fn residual_slope<T: Scalar>(s: T, v: T, m: T) -> T {
    let active = if s > T::zero() { T::one() } else { T::zero() };
    v * (m + (T::one() - m) * active)
}

struct Prepared<'a, T> {
    sample: &'a TrainingSample<T>,
    fields: Fields<T>,
    /// `weight / Σ weights`
    share: T,
}

/// A sample set with its loss fields evaluated once, ready for repeated
/// loss / gradient / curvature evaluations at different filters.
pub struct LossProblem<'a, T: Scalar = f64> {
    prepared: Vec<Prepared<'a, T>>,
    lambda: T,
    filter_hw: (usize, usize),
}

impl<'a, T: Scalar> LossProblem<'a, T> {
    pub fn new(
        set: &'a SampleSet<T>,
        params: &LossParams<T>,
        filter_hw: (usize, usize),
    ) -> Result<Self> {
        Self::from_samples(set.iter(), params, filter_hw)
    }

    pub fn from_samples(
        samples: impl IntoIterator<Item = &'a TrainingSample<T>>,
        params: &LossParams<T>,
        filter_hw: (usize, usize),
    ) -> Result<Self> {
        let samples: Vec<&TrainingSample<T>> = samples.into_iter().collect();
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let total = samples.iter().fold(T::zero(), |a, s| a + s.weight);
        if !(total > T::zero()) {
            return Err(Error::InvalidArgument("total sample weight must be positive".into()));
        }
        let mut prepared = Vec::with_capacity(samples.len());
        for sample in samples {
            let x = &sample.features;
            let shape = valid_shape((x.height(), x.width()), filter_hw).ok_or_else(|| {
                Error::shape(
                    "LossProblem",
                    format!("filter {filter_hw:?} does not fit features {:?}", x.dims()),
                )
            })?;
            prepared.push(Prepared {
                sample,
                fields: build_fields(params, sample.center, shape)?,
                share: sample.weight / total,
            });
        }
        Ok(LossProblem {
            prepared,
            lambda: params.lambda(),
            filter_hw,
        })
    }

    pub fn len(&self) -> usize {
        self.prepared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prepared.is_empty()
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn fields(&self, idx: usize) -> &Fields<T> {
        &self.prepared[idx].fields
    }

    fn check_filter(&self, f: &Tensor3<T>) -> Result<()> {
        if (f.height(), f.width()) != self.filter_hw {
            return Err(Error::shape(
                "LossProblem",
                format!("filter {:?}, problem prepared for {:?}", f.dims(), self.filter_hw),
            ));
        }
        Ok(())
    }

    /// Weighted mean of squared residual norms plus `λ²‖f‖²`.
    pub fn loss(&self, f: &Tensor3<T>) -> Result<T> {
        self.check_filter(f)?;
        let mut data = T::zero();
        for p in &self.prepared {
            let s = conv_valid(&p.sample.features, f)?;
            data += p.share * norm_sq(&residual(&s, &p.fields)?);
        }
        Ok(data + self.lambda * self.lambda * norm_sq(f))
    }

    /// Loss and `∇L = 2 Σ_j w̄_j (∂s/∂f)ᵀ(q·r) + 2λ²f` from one score pass.
    pub fn loss_and_gradient(&self, f: &Tensor3<T>) -> Result<(T, Tensor3<T>)> {
        self.check_filter(f)?;
        let two = T::of(2.0);
        let lambda_sq = self.lambda * self.lambda;
        let mut loss = T::zero();
        let mut grad = f.scale(two * lambda_sq);
        for p in &self.prepared {
            let s = conv_valid(&p.sample.features, f)?;
            let r = residual(&s, &p.fields)?;
            loss += p.share * norm_sq(&r);
            let (h, w) = s.dims();
            let (sv, rv) = (s.as_slice(), r.as_slice());
            let (vv, mv) = (p.fields.weight.as_slice(), p.fields.mask.as_slice());
            let back = (0..h * w)
                .map(|i| two * p.share * residual_slope(sv[i], vv[i], mv[i]) * rv[i])
                .collect();
            let back = ScoreMap::from_vec(h, w, back)?;
            let contrib = conv_transpose(&p.sample.features, &back, self.filter_hw)?;
            for (g, c) in grad.as_mut_slice().iter_mut().zip(contrib.as_slice()) {
                *g += *c;
            }
        }
        loss += lambda_sq * norm_sq(f);
        Ok((loss, grad))
    }

    /// `argmin_{α ≥ 0} L(α f)`. For `α ≥ 0` the hinge commutes with the
    /// scaling, so the loss along the ray is an exact quadratic in `α`.
    pub fn best_scale(&self, f: &Tensor3<T>) -> Result<T> {
        self.check_filter(f)?;
        let (mut num, mut den) = (T::zero(), self.lambda * self.lambda * norm_sq(f));
        for p in &self.prepared {
            let s = conv_valid(&p.sample.features, f)?;
            let (y, v, m) = (
                p.fields.label.as_slice(),
                p.fields.weight.as_slice(),
                p.fields.mask.as_slice(),
            );
            for (i, &sv) in s.as_slice().iter().enumerate() {
                let a = v[i] * (m[i] * sv + (T::one() - m[i]) * sv.max(T::zero()));
                num += p.share * a * v[i] * y[i];
                den += p.share * a * a;
            }
        }
        if den > T::zero() {
            Ok((num / den).max(T::zero()))
        } else {
            Ok(T::zero())
        }
    }

    pub fn gradient(&self, f: &Tensor3<T>) -> Result<Tensor3<T>> {
        Ok(self.loss_and_gradient(f)?.1)
    }

    /// `‖J g‖² = Σ_j w̄_j ‖q_j · (x_j ∗ g)‖² + λ²‖g‖²` with `q_j` taken at the
    /// scores of `f`. Never materializes `J`.
    pub fn h_norm_sq(&self, f: &Tensor3<T>, g: &Tensor3<T>) -> Result<T> {
        self.check_filter(f)?;
        f.same_shape("h_norm_sq", g)?;
        let mut total = T::zero();
        for p in &self.prepared {
            let s = conv_valid(&p.sample.features, f)?;
            let dg = conv_valid(&p.sample.features, g)?;
            let (sv, dv) = (s.as_slice(), dg.as_slice());
            let (vv, mv) = (p.fields.weight.as_slice(), p.fields.mask.as_slice());
            let mut acc = T::zero();
            for i in 0..sv.len() {
                let t = residual_slope(sv[i], vv[i], mv[i]) * dv[i];
                acc += t * t;
            }
            total += p.share * acc;
        }
        Ok(total + self.lambda * self.lambda * norm_sq(g))
    }
}

pub fn loss<T: Scalar>(f: &Tensor3<T>, set: &SampleSet<T>, params: &LossParams<T>) -> Result<T> {
    LossProblem::new(set, params, (f.height(), f.width()))?.loss(f)
}

pub fn gradient<T: Scalar>(
    f: &Tensor3<T>,
    set: &SampleSet<T>,
    params: &LossParams<T>,
) -> Result<Tensor3<T>> {
    LossProblem::new(set, params, (f.height(), f.width()))?.gradient(f)
}

pub fn h_norm_sq<T: Scalar>(
    f: &Tensor3<T>,
    g: &Tensor3<T>,
    set: &SampleSet<T>,
    params: &LossParams<T>,
) -> Result<T> {
    LossProblem::new(set, params, (f.height(), f.width()))?.h_norm_sq(f, g)
}
