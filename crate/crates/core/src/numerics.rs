//! Dense tensor substrate: storage, valid 2-D multi-channel convolution and
//! its adjoint, elementwise maps and reductions.
//!
//! Layout is row-major with the channel index fastest, so the element at
//! `(i, j, k)` lives at `((i * width) + j) * channels + k`. A K×K×C filter
//! window over a feature map is therefore K contiguous runs of K·C values.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// H×W×C dense grid. Houses both feature maps and filters.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T = f64> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// Single-channel H×W map produced by a valid convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap<T = f64> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{op}: non-finite value at flat index {pos}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Tensor3 {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Wraps `data`, rejecting a length mismatch or non-finite entries.
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(
                "Tensor3::from_vec",
                format!("{height}x{width}x{channels} needs {expected} values, got {}", data.len()),
            ));
        }
        check_finite("Tensor3::from_vec", &data)?;
        Ok(Tensor3 {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for k in 0..channels {
                    data.push(f(i, j, k));
                }
            }
        }
        Tensor3 {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.height && j < self.width && k < self.channels);
        (i * self.width + j) * self.channels + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: T) {
        let idx = self.index(i, j, k);
        self.data[idx] = v;
    }

    /// Applies `f` to every element.
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Combines two equally shaped tensors elementwise.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape("Tensor3::zip_map", other)?;
        Ok(Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|v| v * a)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: T, other: &Self) -> Result<Self> {
        self.zip_map(other, |x, y| x + a * y)
    }

    pub fn same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts the element type, e.g. to run an `f64` problem in `f32`.
    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> ScoreMap<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        ScoreMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "ScoreMap::from_vec",
                format!("{height}x{width} needs {} values, got {}", height * width, data.len()),
            ));
        }
        check_finite("ScoreMap::from_vec", &data)?;
        Ok(ScoreMap {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        ScoreMap {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.width + j] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape("ScoreMap::zip_map", other)?;
        Ok(ScoreMap {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.dims(), other.dims()),
            ));
        }
        Ok(())
    }

    /// Location and value of the largest score; ties resolve to the first in
    /// row-major order.
    pub fn argmax(&self) -> (usize, usize, T) {
        let mut best = 0;
        for (idx, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = idx;
            }
        }
        (best / self.width, best % self.width, self.data[best])
    }

    pub fn max_value(&self) -> T {
        self.argmax().2
    }
}

/// Flat view shared by both tensor kinds so reductions accept either.
pub trait Dense<T> {
    fn values(&self) -> &[T];
}

impl<T> Dense<T> for Tensor3<T> {
    fn values(&self) -> &[T] {
        &self.data
    }
}

impl<T> Dense<T> for ScoreMap<T> {
    fn values(&self) -> &[T] {
        &self.data
    }
}

impl<T> Dense<T> for [T] {
    fn values(&self) -> &[T] {
        self
    }
}

impl<T> Dense<T> for Vec<T> {
    fn values(&self) -> &[T] {
        self
    }
}

/// Inner product of two equally sized arrays.
pub fn dot<T: Scalar, A: Dense<T> + ?Sized, B: Dense<T> + ?Sized>(a: &A, b: &B) -> Result<T> {
    let (a, b) = (a.values(), b.values());
    if a.len() != b.len() {
        return Err(Error::shape("dot", format!("{} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y))
}

pub fn norm_sq<T: Scalar, A: Dense<T> + ?Sized>(a: &A) -> T {
    a.values().iter().fold(T::zero(), |acc, &x| acc + x * x)
}

/// Output shape of a valid convolution of an `x_hw` input by a `k_hw` kernel.
pub fn valid_shape(x_hw: (usize, usize), k_hw: (usize, usize)) -> Option<(usize, usize)> {
    if k_hw.0 == 0 || k_hw.1 == 0 || k_hw.0 > x_hw.0 || k_hw.1 > x_hw.1 {
        return None;
    }
    Some((x_hw.0 - k_hw.0 + 1, x_hw.1 - k_hw.1 + 1))
}

/// Valid-mode multi-channel correlation:
/// `out[i,j] = Σ_{u,v,k} x[i+u, j+v, k] · f[u,v,k]`.
pub fn conv_valid<T: Scalar>(x: &Tensor3<T>, f: &Tensor3<T>) -> Result<ScoreMap<T>> {
    if f.channels != x.channels {
        return Err(Error::shape(
            "conv_valid",
            format!("filter has {} channels, input {}", f.channels, x.channels),
        ));
    }
    let (oh, ow) = valid_shape((x.height, x.width), (f.height, f.width)).ok_or_else(|| {
        Error::shape(
            "conv_valid",
            format!("filter {:?} does not fit input {:?}", f.dims(), x.dims()),
        )
    })?;
    let c = x.channels;
    let row = f.width * c;
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = T::zero();
            for u in 0..f.height {
                let xs = ((i + u) * x.width + j) * c;
                let fs = u * row;
                acc += x.data[xs..xs + row]
                    .iter()
                    .zip(&f.data[fs..fs + row])
                    .fold(T::zero(), |s, (&a, &b)| s + a * b);
            }
            out.push(acc);
        }
    }
    Ok(ScoreMap {
        height: oh,
        width: ow,
        data: out,
    })
}

/// Adjoint of [`conv_valid`] with respect to the filter:
/// `out[u,v,k] = Σ_{i,j} x[i+u, j+v, k] · g[i,j]`, shaped `filter_shape`.
pub fn conv_transpose<T: Scalar>(
    x: &Tensor3<T>,
    g: &ScoreMap<T>,
    filter_shape: (usize, usize),
) -> Result<Tensor3<T>> {
    let expected = valid_shape((x.height, x.width), filter_shape);
    if expected != Some(g.dims()) {
        return Err(Error::shape(
            "conv_transpose",
            format!(
                "score map {:?} is not the valid output of {:?} by {:?}",
                g.dims(),
                x.dims(),
                filter_shape
            ),
        ));
    }
    let (kh, kw) = filter_shape;
    let c = x.channels;
    let row = kw * c;
    let mut out = vec![T::zero(); kh * row];
    for i in 0..g.height {
        for j in 0..g.width {
            let gv = g.data[i * g.width + j];
            if gv == T::zero() {
                continue;
            }
            for u in 0..kh {
                let xs = ((i + u) * x.width + j) * c;
                for (o, &xv) in out[u * row..(u + 1) * row]
                    .iter_mut()
                    .zip(&x.data[xs..xs + row])
                {
                    *o += xv * gv;
                }
            }
        }
    }
    Ok(Tensor3 {
        height: kh,
        width: kw,
        channels: c,
        data: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
        Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn reference_conv(x: &Tensor3, f: &Tensor3) -> Vec<Vec<f64>> {
        let oh = x.height() - f.height() + 1;
        let ow = x.width() - f.width() + 1;
        let mut out = vec![vec![0.0; ow]; oh];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, o) in row.iter_mut().enumerate() {
                for u in 0..f.height() {
                    for v in 0..f.width() {
                        for k in 0..f.channels() {
                            *o += x.get(i + u, j + v, k) * f.get(u, v, k);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_conv() {
        let x = Tensor3::from_vec(1, 1, 1, vec![3.0]).unwrap();
        let f = Tensor3::from_vec(1, 1, 1, vec![2.0]).unwrap();
        let s = conv_valid(&x, &f).unwrap();
        assert_eq!(s.dims(), (1, 1));
        assert_eq!(s.get(0, 0), 6.0);
    }

    #[test]
    fn window_sums() {
        let x = Tensor3::filled(4, 4, 1, 1.0);
        let f = Tensor3::filled(2, 2, 1, 1.0);
        let s = conv_valid(&x, &f).unwrap();
        assert_eq!(s.dims(), (3, 3));
        assert!(s.as_slice().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_tensor(&mut rng, 8, 8, 2);
        let f = random_tensor(&mut rng, 4, 4, 2);
        let s = conv_valid(&x, &f).unwrap();
        let r = reference_conv(&x, &f);
        for (i, row) in r.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!((s.get(i, j) - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor3::<f64>::zeros(4, 4, 2);
        assert!(conv_valid(&x, &Tensor3::zeros(2, 2, 3)).is_err());
        assert!(conv_valid(&x, &Tensor3::zeros(5, 2, 2)).is_err());
        let g = ScoreMap::zeros(2, 2);
        assert!(conv_transpose(&x, &g, (2, 2)).is_err());
        assert!(Tensor3::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Tensor3::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn transpose_of_ones() {
        let x = Tensor3::filled(4, 4, 1, 1.0);
        let g = ScoreMap::filled(3, 3, 1.0);
        let t = conv_transpose(&x, &g, (2, 2)).unwrap();
        assert_eq!(t.dims(), (2, 2, 1));
        assert!(t.as_slice().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn transpose_single_tap_is_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, 6, 7, 3);
        let mut g = ScoreMap::zeros(3, 4);
        g.set(0, 0, 1.0);
        let t = conv_transpose(&x, &g, (4, 4)).unwrap();
        for u in 0..4 {
            for v in 0..4 {
                for k in 0..3 {
                    assert_eq!(t.get(u, v, k), x.get(u, v, k));
                }
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let h = rng.gen_range(4..10);
            let w = rng.gen_range(4..10);
            let c = rng.gen_range(1..4);
            let k = rng.gen_range(1..4);
            let x = random_tensor(&mut rng, h, w, c);
            let f = random_tensor(&mut rng, k, k, c);
            let g = ScoreMap::from_fn(h - k + 1, w - k + 1, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = dot(&conv_valid(&x, &f).unwrap(), &g).unwrap();
            let rhs = dot(&f, &conv_transpose(&x, &g, (k, k)).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn dot_and_norm() {
        assert_eq!(dot(&vec![1.0, 2.0], &vec![3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(norm_sq(&vec![3.0, 4.0]), 25.0);
        assert!(dot(&vec![1.0], &vec![1.0, 2.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut oracle = 0.0;
        for i in 0..100 {
            oracle += a[i] * b[i];
        }
        let d = dot(&a, &b).unwrap();
        assert!((d - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        assert_eq!(dot(&a, &a).unwrap(), norm_sq(&a));
    }

    #[test]
    fn f32_kernels() {
        let x = Tensor3::<f32>::filled(4, 4, 2, 0.5);
        let f = Tensor3::<f32>::filled(2, 2, 2, 2.0);
        let s = conv_valid(&x, &f).unwrap();
        assert!(s.as_slice().iter().all(|&v| (v - 8.0).abs() < 1e-6));
    }

    #[test]
    fn argmax_first_tie() {
        let s = ScoreMap::from_vec(2, 2, vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        assert_eq!(s.argmax(), (0, 1, 3.0));
    }
}
