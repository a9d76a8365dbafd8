//! Free parameters of the discriminative loss and their text format.

use std::fmt::Write as _;
use std::path::Path;

use super::rbf::{OutputTransform, RadialFunction};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shape of the initial target mask, `0.5·(1 − tanh((d − center)/width))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskInit {
    pub center: f64,
    pub width: f64,
}

impl Default for MaskInit {
    fn default() -> Self {
        MaskInit {
            center: 3.0,
            width: 1.0,
        }
    }
}

impl MaskInit {
    pub fn target(&self, d: f64) -> f64 {
        0.5 * (1.0 - ((d - self.center) / self.width).tanh())
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.01;

/// Label `y_c`, spatial weight `v_c`, target mask `m_c` and regularization
/// factor `λ`. The three radial functions share knot count and spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct LossParams<T = f64> {
    pub label_fn: RadialFunction<T>,
    pub weight_fn: RadialFunction<T>,
    pub mask_fn: RadialFunction<T>,
    lambda: T,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    (p / (1.0 - p)).ln()
}

impl<T: Scalar> LossParams<T> {
    pub fn new(
        label_fn: RadialFunction<T>,
        weight_fn: RadialFunction<T>,
        mask_fn: RadialFunction<T>,
        lambda: T,
    ) -> Result<Self> {
        let n = label_fn.len();
        let delta = label_fn.knot_spacing();
        for rf in [&weight_fn, &mask_fn] {
            if rf.len() != n || rf.knot_spacing() != delta {
                return Err(Error::InvalidArgument(
                    "label, weight and mask functions must share knot count and spacing".into(),
                ));
            }
        }
        if label_fn.transform() != OutputTransform::Identity
            || weight_fn.transform() != OutputTransform::Identity
            || mask_fn.transform() != OutputTransform::Sigmoid
        {
            return Err(Error::InvalidArgument(
                "label and weight are identity-transformed, the mask is sigmoid-transformed".into(),
            ));
        }
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(LossParams {
            label_fn,
            weight_fn,
            mask_fn,
            lambda,
        })
    }

    /// Builds parameters from raw coefficient vectors.
    pub fn from_coefficients(
        delta: T,
        phi_y: Vec<T>,
        phi_v: Vec<T>,
        phi_m: Vec<T>,
        lambda: T,
    ) -> Result<Self> {
        Self::new(
            RadialFunction::new(phi_y, delta, OutputTransform::Identity)?,
            RadialFunction::new(phi_v, delta, OutputTransform::Identity)?,
            RadialFunction::new(phi_m, delta, OutputTransform::Sigmoid)?,
            lambda,
        )
    }

    /// Initial parameters: Gaussian label of standard deviation `sigma`,
    /// constant unit weight, and a scaled-tanh mask mapped through the
    /// inverse sigmoid at every knot.
    pub fn init(n: usize, delta: f64, sigma: f64, mask: MaskInit, lambda: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need N >= 2 knots, got {n}")));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
        }
        if !(mask.width > 0.0) {
            return Err(Error::InvalidArgument("mask width must be positive".into()));
        }
        let knot = |k: usize| k as f64 * delta;
        let phi_y = (0..n)
            .map(|k| T::of((-knot(k).powi(2) / (2.0 * sigma * sigma)).exp()))
            .collect();
        let phi_v = vec![T::one(); n];
        let phi_m = (0..n).map(|k| T::of(logit(mask.target(knot(k))))).collect();
        Self::from_coefficients(T::of(delta), phi_y, phi_v, phi_m, T::of(lambda))
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: T) -> Result<()> {
        if !(lambda >= T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        self.lambda = lambda;
        Ok(())
    }

    pub fn num_knots(&self) -> usize {
        self.label_fn.len()
    }

    pub fn knot_spacing(&self) -> T {
        self.label_fn.knot_spacing()
    }

    /// Writes the `key = value` text form. Values use 17 significant digits,
    /// enough to round-trip any `f64`.
    pub fn to_text(&self) -> String {
        fn row<T: Scalar>(out: &mut String, key: &str, vals: &[T]) {
            let _ = write!(out, "{key} =");
            for v in vals {
                let _ = write!(out, " {:.16e}", v.as_f64());
            }
            out.push('\n');
        }
        let mut out = String::from("# dfp loss parameters\n");
        let _ = writeln!(out, "n = {}", self.num_knots());
        let _ = writeln!(out, "delta = {:.16e}", self.knot_spacing().as_f64());
        let _ = writeln!(out, "lambda = {:.16e}", self.lambda.as_f64());
        row(&mut out, "phi_y", self.label_fn.coefficients());
        row(&mut out, "phi_v", self.weight_fn.coefficients());
        row(&mut out, "phi_m", self.mask_fn.coefficients());
        out
    }

    /// Parses the text form. `origin` names the source in diagnostics.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut n: Option<(usize, usize)> = None;
        let mut delta: Option<f64> = None;
        let mut lambda: Option<f64> = None;
        let mut phis: [Option<(usize, Vec<f64>)>; 3] = [None, None, None];

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let scalar = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|e| err(line_no, format!("key `{key}`: {e}")))
            };
            let slot = match key {
                "n" => {
                    let v = value
                        .parse::<usize>()
                        .map_err(|e| err(line_no, format!("key `n`: {e}")))?;
                    n = Some((v, line_no));
                    continue;
                }
                "delta" => {
                    delta = Some(scalar(value)?);
                    continue;
                }
                "lambda" => {
                    lambda = Some(scalar(value)?);
                    continue;
                }
                "phi_y" => 0,
                "phi_v" => 1,
                "phi_m" => 2,
                other => return Err(err(line_no, format!("unknown key `{other}`"))),
            };
            let vals = value
                .split_whitespace()
                .map(scalar)
                .collect::<Result<Vec<f64>>>()?;
            phis[slot] = Some((line_no, vals));
        }

        let (n, n_line) = n.ok_or_else(|| err(0, "missing key `n`".into()))?;
        let delta = delta.ok_or_else(|| err(0, "missing key `delta`".into()))?;
        let lambda = lambda.ok_or_else(|| err(0, "missing key `lambda`".into()))?;
        let names = ["phi_y", "phi_v", "phi_m"];
        let mut vecs = Vec::with_capacity(3);
        for (name, slot) in names.iter().zip(phis) {
            let (line, vals) = slot.ok_or_else(|| err(0, format!("missing key `{name}`")))?;
            if vals.len() != n {
                return Err(err(
                    line,
                    format!("key `{name}` has {} values, `n` (line {n_line}) says {n}", vals.len()),
                ));
            }
            vecs.push(vals.into_iter().map(T::of).collect::<Vec<T>>());
        }
        let phi_m = vecs.pop().unwrap();
        let phi_v = vecs.pop().unwrap();
        let phi_y = vecs.pop().unwrap();
        Self::from_coefficients(T::of(delta), phi_y, phi_v, phi_m, T::of(lambda)).map_err(|e| {
            err(0, e.to_string())
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Flattens all free parameters as `[φ^y, φ^v, φ^m, λ]`.
    pub fn to_vector(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(3 * self.num_knots() + 1);
        v.extend_from_slice(self.label_fn.coefficients());
        v.extend_from_slice(self.weight_fn.coefficients());
        v.extend_from_slice(self.mask_fn.coefficients());
        v.push(self.lambda);
        v
    }

    /// Inverse of [`to_vector`](Self::to_vector); λ is projected onto `[0, ∞)`.
    pub fn with_vector(&self, v: &[T]) -> Result<Self> {
        let n = self.num_knots();
        if v.len() != 3 * n + 1 {
            return Err(Error::shape(
                "LossParams::with_vector",
                format!("expected {} values, got {}", 3 * n + 1, v.len()),
            ));
        }
        Self::from_coefficients(
            self.knot_spacing(),
            v[..n].to_vec(),
            v[n..2 * n].to_vec(),
            v[2 * n..3 * n].to_vec(),
            v[3 * n].max(T::zero()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> LossParams {
        LossParams::init(100, 0.1, 0.9, MaskInit::default(), DEFAULT_LAMBDA).unwrap()
    }

    #[test]
    fn label_peaks_at_one() {
        let p = defaults();
        assert!((p.label_fn.eval(0.0).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mask_endpoints() {
        // 0.5·(1 − tanh(−3)) = 0.99753 and 0.5·(1 − tanh(6.9)) = 1.0e−6
        let expect_center = 0.5 * (1.0 - (-3.0f64).tanh());
        assert!(expect_center >= 0.95);
        let p = defaults();
        let m0 = p.mask_fn.eval(0.0).unwrap();
        let m_end = p.mask_fn.eval(9.9).unwrap();
        assert!((m0 - 0.997_527_376_843_365_2).abs() < 1e-9, "{m0}");
        assert!(m0 >= 0.95);
        assert!(m_end <= 0.05, "{m_end}");
    }

    #[test]
    fn weight_is_constant() {
        let p = defaults();
        for i in 0..20 {
            let d = (i as f64 * 0.731).rem_euclid(15.0);
            assert_eq!(p.weight_fn.eval(d).unwrap(), 1.0);
        }
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mut p = defaults();
        p.set_lambda(0.1 + 0.2).unwrap();
        p.label_fn.coefficients_mut()[3] = std::f64::consts::PI / 7.0;
        let back = LossParams::<f64>::from_text(&p.to_text(), "mem").unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn parse_errors_name_line_and_key() {
        let p = LossParams::<f64>::init(3, 1.0, 1.0, MaskInit::default(), 0.01).unwrap();
        let text = p.to_text().replace("phi_v", "phi_w");
        let e = LossParams::<f64>::from_text(&text, "p.txt").unwrap_err().to_string();
        assert!(e.contains("p.txt:6") && e.contains("phi_w"), "{e}");

        let text = p.to_text().replace("n = 3", "n = 4");
        let e = LossParams::<f64>::from_text(&text, "p.txt").unwrap_err().to_string();
        assert!(e.contains("phi_y"), "{e}");

        let text = p.to_text().replace("lambda = ", "lambda = x");
        assert!(LossParams::<f64>::from_text(&text, "p.txt").is_err());
    }

    #[test]
    fn negative_lambda_rejected() {
        let mut p = defaults();
        assert!(p.set_lambda(-1.0).is_err());
        let mut v = p.to_vector();
        *v.last_mut().unwrap() = -3.0;
        assert_eq!(p.with_vector(&v).unwrap().lambda(), 0.0);
    }
}
