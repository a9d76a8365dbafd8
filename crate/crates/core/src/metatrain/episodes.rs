//! Train/test episodes: frames from the first half of a segment train the
//! model, frames from the second half test it.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::{generate_scene, SceneSpec};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::annotations::{self, Annotation};
use crate::io::pnm;
use crate::lossmodel::{Center, TrainingSample};
use crate::modelpred::CellBox;
use crate::numerics::Tensor3;
use crate::tracking::{extract_with, load_sequence, FeatureExtractor, Frame, FrameData, PatchSpec, TargetBox};

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeFrame {
    pub features: Tensor3<f64>,
    /// Target center on the score grid.
    pub center: Center<f64>,
    /// Target extent on the feature grid.
    pub target: CellBox,
    pub frame_index: usize,
}

impl EpisodeFrame {
    pub fn sample(&self) -> TrainingSample<f64> {
        TrainingSample::new(self.features.clone(), self.center)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub train: Vec<EpisodeFrame>,
    pub test: Vec<EpisodeFrame>,
    pub segment_length: usize,
}

/// Picks `k` positions from `0..n` (all of them if `n <= k`), sorted.
fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Builds an episode from annotated frames ordered by index: `meta_frames`
/// train frames from the first half, as many test frames from the second.
/// Each crop is offset by a random fraction (up to `meta_jitter`) of its
/// side so targets do not always sit at the center.
pub fn episode_from_frames(
    frames: &[(Frame, TargetBox)],
    cfg: &Config,
    extractor: &dyn FeatureExtractor,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    if frames.len() < 2 {
        return Err(Error::InvalidArgument("an episode needs at least two frames".into()));
    }
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| frames[i].0.index);
    let half = frames.len() / 2;
    let (first, second) = order.split_at(half);
    let train_pos = pick(rng, first.len(), cfg.meta_frames);
    let test_pos = pick(rng, second.len(), cfg.meta_frames);
    let mut convert = |positions: Vec<usize>, pool: &[usize]| -> Result<Vec<EpisodeFrame>> {
        positions
            .into_iter()
            .map(|p| {
                let (frame, bx) = &frames[pool[p]];
                let j = cfg.meta_jitter;
                let spec = PatchSpec {
                    shift: (rng.gen_range(-j..=j), rng.gen_range(-j..=j)),
                    ..PatchSpec::identity()
                };
                let ex = extract_with(frame, bx, &spec, 1.0, extractor, cfg)?;
                Ok(EpisodeFrame {
                    features: ex.sample.features,
                    center: ex.sample.center,
                    target: ex.target_cells,
                    frame_index: frame.index,
                })
            })
            .collect()
    };
    let train = convert(train_pos, first)?;
    let test = convert(test_pos, second)?;
    let span = frames[*order.last().unwrap()].0.index - frames[order[0]].0.index + 1;
    Ok(Episode {
        train,
        test,
        segment_length: span,
    })
}

/// Scene settings for the `k`-th synthetic episode.
pub fn episode_scene(seed: u64, k: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
    let size = rng.gen_range(32.0..48.0);
    SceneSpec {
        seed: rng.gen(),
        target_w: size * rng.gen_range(0.85..1.15),
        target_h: size * rng.gen_range(0.85..1.15),
        contrast: rng.gen_range(0.12..0.3),
        distractors: rng.gen_range(0..3),
        similarity: rng.gen_range(0.3..0.7),
        drift_rate: rng.gen_range(0.0..0.01),
        speed: rng.gen_range(0.5..2.5),
        noise: 0.01,
        ..SceneSpec::default()
    }
}

/// Scene settings for the `k`-th toy episode: one well-contrasted target
/// on a mildly cluttered background, no distractors, no drift.
pub fn toy_scene(seed: u64, k: usize) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7_919).wrapping_add(k as u64));
    let size = rng.gen_range(34.0..46.0);
    SceneSpec {
        seed: rng.gen(),
        target_w: size,
        target_h: size * rng.gen_range(0.8..1.2),
        contrast: rng.gen_range(0.25..0.35),
        target_offset: 0.15,
        background_clutter: 0.05,
        speed: rng.gen_range(0.5..1.5),
        ..SceneSpec::default()
    }
}

/// Frames kept for one episode per scene: a `meta_segment` sequence is
/// rendered and `meta_frames` frames are drawn from each half.
pub fn synthetic_episodes(cfg: &Config, scenes: &[SceneSpec]) -> Result<Vec<Vec<(Frame, TargetBox)>>> {
    let mut out = Vec::with_capacity(scenes.len());
    for spec in scenes {
        let scene = generate_scene(spec, cfg.meta_segment)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xe9);
        let half = cfg.meta_segment / 2;
        let mut keep = pick(&mut rng, half, cfg.meta_frames);
        keep.extend(pick(&mut rng, cfg.meta_segment - half, cfg.meta_frames).into_iter().map(|p| p + half));
        out.push(keep.into_iter().map(|i| scene[i].clone()).collect());
    }
    Ok(out)
}

/// Writes `ep_<k>/frame_<j>.pgm` and `ep_<k>/gt.txt` under `root`.
pub fn write_episode_dir(root: &Path, k: usize, frames: &[(Frame, TargetBox)]) -> Result<()> {
    let dir = root.join(format!("ep_{k}"));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut gt = Vec::with_capacity(frames.len());
    for (frame, bx) in frames {
        let FrameData::Image(img) = &frame.data else {
            return Err(Error::InvalidArgument("only image frames can be written as PGM".into()));
        };
        pnm::write_pgm(&dir.join(format!("frame_{}.pgm", frame.index)), img)?;
        gt.push(Annotation {
            frame_index: frame.index,
            target: *bx,
        });
    }
    annotations::write(&dir.join("gt.txt"), &gt)
}

/// Loads every `ep_<k>` directory under `root`, in order of `k`.
pub fn load_episodes(root: &Path, cfg: &Config, extractor: &dyn FeatureExtractor) -> Result<Vec<Episode>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        let k = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ep_"))
            .and_then(|n| n.parse::<usize>().ok());
        if let (Some(k), true) = (k, path.is_dir()) {
            dirs.push((k, path));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format {
            path: root.display().to_string(),
            msg: "no ep_<k> directories".into(),
        });
    }
    let mut out = Vec::with_capacity(dirs.len());
    for (k, dir) in dirs {
        let seq = load_sequence(&dir, cfg.feature_file_stride)?;
        let mut frames = Vec::with_capacity(seq.frames.len());
        for frame in &seq.frames {
            let gt = seq.ground_truth(frame.index).ok_or_else(|| Error::Format {
                path: dir.join("gt.txt").display().to_string(),
                msg: format!("no annotation for frame {}", frame.index),
            })?;
            frames.push((frame.clone(), gt.target));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        out.push(episode_from_frames(&frames, cfg, extractor, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracking::HandCrafted;

    #[test]
    fn halves_are_ordered() {
        let cfg = Config {
            meta_segment: 12,
            ..Config::default()
        };
        let scenes: Vec<_> = (0..2).map(|k| episode_scene(5, k)).collect();
        let eps = synthetic_episodes(&cfg, &scenes).unwrap();
        let ex = HandCrafted::from_config(&cfg);
        for frames in &eps {
            assert_eq!(frames.len(), 6);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let ep = episode_from_frames(frames, &cfg, &ex, &mut rng).unwrap();
            let max_train = ep.train.iter().map(|f| f.frame_index).max().unwrap();
            let min_test = ep.test.iter().map(|f| f.frame_index).min().unwrap();
            assert!(max_train < min_test);
            assert!(max_train < 6 && min_test >= 6);
            assert_eq!(ep.train.len(), 3);
        }
    }
}
