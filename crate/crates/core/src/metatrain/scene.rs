//! Deterministic synthetic scenes with exact ground truth.
//!
//! The target is a textured blob whose opacity is a box blurred by a unit
//! tent, sampled at pixel centers. That profile has no energy at nonzero
//! integer frequencies up to first order, so the discrete mask centroid
//! equals the box center exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tracking::{Frame, TargetBox};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub target_w: f64,
    pub target_h: f64,
    /// Amplitude of the target texture around its mean.
    pub contrast: f64,
    /// Offset of the target mean from the background mean.
    pub target_offset: f64,
    /// Pixels per random texture cell.
    pub grain: f64,
    pub background_clutter: f64,
    pub distractors: usize,
    /// 1 makes every distractor an exact copy of the target.
    pub similarity: f64,
    /// Appearance rotation per frame, radians.
    pub drift_rate: f64,
    /// Pixels per frame.
    pub speed: f64,
    /// Heading random-walk step, radians per frame.
    pub turn: f64,
    pub noise: f64,
    /// Global gain about mid-gray, applied after noise.
    pub exposure: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            width: 320,
            height: 240,
            target_w: 40.0,
            target_h: 40.0,
            contrast: 0.2,
            target_offset: 0.1,
            grain: 6.0,
            background_clutter: 0.15,
            distractors: 0,
            similarity: 0.5,
            drift_rate: 0.0,
            speed: 2.0,
            turn: 0.2,
            noise: 0.0,
            exposure: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene spec: {m}")));
        if self.width < 8 || self.height < 8 {
            return bad("frame too small");
        }
        if !(self.target_w >= 2.0 && self.target_h >= 2.0) {
            return bad("target must be at least 2 px");
        }
        if self.target_w + 4.0 > self.width as f64 || self.target_h + 4.0 > self.height as f64 {
            return bad("target larger than frame");
        }
        if !(self.grain > 0.0) || !(0.0..=1.0).contains(&self.similarity) {
            return bad("grain must be positive and similarity in [0, 1]");
        }
        if !(self.exposure.is_finite() && self.exposure > 0.0) {
            return bad("exposure must be positive");
        }
        for v in [self.contrast, self.background_clutter, self.speed, self.turn, self.noise] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("amplitudes, speed and noise must be nonnegative");
            }
        }
        if !self.drift_rate.is_finite() || !self.target_offset.is_finite() {
            return bad("non-finite drift or offset");
        }
        Ok(())
    }
}

/// CDF of the unit tent on `[-1, 1]`.
fn tent_cdf(t: f64) -> f64 {
    if t <= -1.0 {
        0.0
    } else if t <= 0.0 {
        0.5 * (t + 1.0) * (t + 1.0)
    } else if t < 1.0 {
        1.0 - 0.5 * (1.0 - t) * (1.0 - t)
    } else {
        1.0
    }
}

/// Opacity profile of `[lo, hi]` along one axis at pixel `p`.
pub fn edge_profile(lo: f64, hi: f64, p: usize) -> f64 {
    let t = p as f64 + 0.5;
    tent_cdf(t - lo) - tent_cdf(t - hi)
}

/// Opacity of `bx` over a `width × height` frame.
pub fn target_alpha(bx: &TargetBox, width: usize, height: usize) -> GrayImage {
    GrayImage::from_fn(width, height, |r, c| {
        edge_profile(bx.y0(), bx.y1(), r) * edge_profile(bx.x0(), bx.x1(), c)
    })
}

/// Zero-mean, unit-variance smooth noise: random values on a coarse grid,
/// bilinearly upsampled.
fn smooth_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, grain: f64) -> GrayImage {
    let gw = (width as f64 / grain).ceil() as usize + 2;
    let gh = (height as f64 / grain).ceil() as usize + 2;
    let coarse = GrayImage::from_fn(gw, gh, |_, _| rng.gen_range(-1.0..1.0));
    let mut img = GrayImage::from_fn(width, height, |r, c| {
        coarse.sample((c as f64 + 0.5) / grain + 0.5, (r as f64 + 0.5) / grain + 0.5)
    });
    let n = (width * height) as f64;
    let mean = img.as_slice().iter().sum::<f64>() / n;
    let var = img.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for v in img.as_mut_slice() {
        *v = (*v - mean) / sd;
    }
    img
}

/// Appearance of one blob: mean plus a rotating mix of two textures.
#[derive(Clone, Debug)]
struct Appearance {
    mean: f64,
    a: GrayImage,
    b: GrayImage,
    contrast: f64,
}

/// Extra texture margin around the box, pixels.
const PAD: f64 = 4.0;

impl Appearance {
    fn value(&self, lx: f64, ly: f64, theta: f64) -> f64 {
        let (x, y) = (lx + PAD, ly + PAD);
        let (s, c) = theta.sin_cos();
        self.mean + self.contrast * (c * self.a.sample(x, y) + s * self.b.sample(x, y))
    }

    fn mix(&self, other: &Appearance, sim: f64) -> Appearance {
        let lerp = |p: &GrayImage, q: &GrayImage| {
            let data = p
                .as_slice()
                .iter()
                .zip(q.as_slice())
                .map(|(u, v)| sim * u + (1.0 - sim) * v)
                .collect();
            GrayImage::new(p.width(), p.height(), data).expect("same shape")
        };
        Appearance {
            mean: sim * self.mean + (1.0 - sim) * other.mean,
            a: lerp(&self.a, &other.a),
            b: lerp(&self.b, &other.b),
            contrast: self.contrast,
        }
    }
}

/// Constant-speed walker with a random-walk heading, reflected at the
/// frame border so the box stays inside.
#[derive(Clone, Debug)]
struct Walker {
    x: f64,
    y: f64,
    heading: f64,
}

impl Walker {
    fn step(&mut self, spec: &SceneSpec, rng: &mut ChaCha8Rng, turn: &Normal<f64>) {
        self.heading += turn.sample(rng);
        self.x += spec.speed * self.heading.cos();
        self.y += spec.speed * self.heading.sin();
        let (mx, my) = (spec.target_w / 2.0 + 2.0, spec.target_h / 2.0 + 2.0);
        let (w, h) = (spec.width as f64, spec.height as f64);
        if self.x < mx || self.x > w - mx {
            self.x = self.x.clamp(mx, w - mx);
            self.heading = std::f64::consts::PI - self.heading;
        }
        if self.y < my || self.y > h - my {
            self.y = self.y.clamp(my, h - my);
            self.heading = -self.heading;
        }
    }
}

fn composite(frame: &mut GrayImage, bx: &TargetBox, app: &Appearance, theta: f64) {
    let (w, h) = (frame.width(), frame.height());
    let c0 = (bx.x0() - 1.0).floor().max(0.0) as usize;
    let c1 = ((bx.x1() + 1.0).ceil() as usize).min(w);
    let r0 = (bx.y0() - 1.0).floor().max(0.0) as usize;
    let r1 = ((bx.y1() + 1.0).ceil() as usize).min(h);
    for r in r0..r1 {
        let ay = edge_profile(bx.y0(), bx.y1(), r);
        for c in c0..c1 {
            let alpha = ay * edge_profile(bx.x0(), bx.x1(), c);
            if alpha > 0.0 {
                let v = app.value(c as f64 + 0.5 - bx.x0(), r as f64 + 0.5 - bx.y0(), theta);
                let old = frame.get(r, c);
                frame.set(r, c, (1.0 - alpha) * old + alpha * v);
            }
        }
    }
}

/// Renders `num_frames` frames and their exact target boxes.
pub fn generate_scene(spec: &SceneSpec, num_frames: usize) -> Result<Vec<(Frame, TargetBox)>> {
    spec.validate()?;
    let mut tex_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut walk_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5bd1_e995);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);

    let (w, h) = (spec.width, spec.height);
    let mut background = smooth_noise(&mut tex_rng, w, h, spec.grain * 2.0);
    for v in background.as_mut_slice() {
        *v = 0.5 + spec.background_clutter * *v;
    }
    let tw = (spec.target_w + 2.0 * PAD).ceil() as usize;
    let th = (spec.target_h + 2.0 * PAD).ceil() as usize;
    let sign = if tex_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let target = Appearance {
        mean: 0.5 + sign * spec.target_offset,
        a: smooth_noise(&mut tex_rng, tw, th, spec.grain),
        b: smooth_noise(&mut tex_rng, tw, th, spec.grain),
        contrast: spec.contrast,
    };
    let mut distractor_apps = Vec::with_capacity(spec.distractors);
    for _ in 0..spec.distractors {
        let other = Appearance {
            mean: 0.5 + tex_rng.gen_range(-1.0..1.0) * spec.target_offset,
            a: smooth_noise(&mut tex_rng, tw, th, spec.grain),
            b: smooth_noise(&mut tex_rng, tw, th, spec.grain),
            contrast: spec.contrast,
        };
        distractor_apps.push(target.mix(&other, spec.similarity));
    }

    let (mx, my) = (spec.target_w / 2.0 + 2.0, spec.target_h / 2.0 + 2.0);
    let spawn = |rng: &mut ChaCha8Rng| Walker {
        x: rng.gen_range(mx..(w as f64 - mx)),
        y: rng.gen_range(my..(h as f64 - my)),
        heading: rng.gen_range(0.0..std::f64::consts::TAU),
    };
    let mut walker = spawn(&mut walk_rng);
    let mut others: Vec<Walker> = (0..spec.distractors).map(|_| spawn(&mut walk_rng)).collect();
    let turn = Normal::new(0.0, spec.turn).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut out = Vec::with_capacity(num_frames);
    for t in 0..num_frames {
        if t > 0 {
            walker.step(spec, &mut walk_rng, &turn);
            for o in &mut others {
                o.step(spec, &mut walk_rng, &turn);
            }
        }
        let theta = spec.drift_rate * t as f64;
        let mut img = background.clone();
        for (o, app) in others.iter().zip(&distractor_apps) {
            let bx = TargetBox::new(o.x, o.y, spec.target_w, spec.target_h)?;
            composite(&mut img, &bx, app, theta);
        }
        let bx = TargetBox::new(walker.x, walker.y, spec.target_w, spec.target_h)?;
        composite(&mut img, &bx, &target, theta);
        if spec.noise > 0.0 {
            for v in img.as_mut_slice() {
                *v += noise.sample(&mut noise_rng);
            }
        }
        for v in img.as_mut_slice() {
            *v = (0.5 + spec.exposure * (*v - 0.5)).clamp(0.0, 1.0);
        }
        out.push((Frame::image(t, img), bx));
    }
    Ok(out)
}
