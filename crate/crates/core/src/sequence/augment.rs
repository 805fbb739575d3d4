use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::world::{nearest_color, PALETTE};

/// Negative video augmentations for the consistency head. All operate in
/// pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    FrameSwap,
    FrameShuffle,
    ColorJitter,
    Affine,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::FrameSwap,
        Augmentation::FrameShuffle,
        Augmentation::ColorJitter,
        Augmentation::Affine,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Sampling weights of [`Augmentation::ALL`], in order. All zero disables
    /// the consistency negatives.
    pub probs: [f64; 4],
    pub max_rotation_deg: f64,
    pub max_translation_px: f64,
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probs: [0.25; 4],
            max_rotation_deg: 15.0,
            max_translation_px: 2.0,
            scale_range: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    pub fn enabled(&self) -> bool {
        self.probs.iter().any(|&p| p > 0.0)
    }

    fn draw(&self, rng: &mut rng::Rng) -> Result<Augmentation> {
        let total: f64 = self.probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("no augmentation enabled".into()));
        }
        let mut u = rng.gen::<f64>() * total;
        for (a, &p) in Augmentation::ALL.iter().zip(&self.probs) {
            if u < p {
                return Ok(*a);
            }
            u -= p;
        }
        Ok(Augmentation::Affine)
    }
}

/// Corrupts a clip's temporal consistency. `strategy = None` samples one per
/// `cfg.probs`. Frame swapping needs a `donor` clip of the same resolution.
pub fn negative_video_augment(
    clip: &VideoClip,
    strategy: Option<Augmentation>,
    seed: u64,
    donor: Option<&VideoClip>,
    cfg: &AugmentConfig,
) -> Result<(VideoClip, Augmentation)> {
    let mut rng = rng::rng(seed, &[stream::AUGMENT]);
    let strategy = match strategy {
        Some(s) => s,
        None => cfg.draw(&mut rng)?,
    };
    let mut out = clip.clone();
    let frames = clip.frames;
    match strategy {
        Augmentation::FrameSwap => {
            let donor = donor.ok_or_else(|| {
                Error::InvalidArgument("frame swapping needs a donor clip".into())
            })?;
            if donor.frame_len() != clip.frame_len() || donor.frames == 0 {
                return Err(Error::ShapeMismatch("donor resolution differs".into()));
            }
            let t = rng.gen_range(0..frames);
            let s = rng.gen_range(0..donor.frames);
            out.frame_mut(t).copy_from_slice(donor.frame(s));
        }
        Augmentation::FrameShuffle => {
            if frames < 2 {
                return Err(Error::InvalidArgument("cannot shuffle a single frame".into()));
            }
            let identity: Vec<usize> = (0..frames).collect();
            let mut order = identity.clone();
            while order == identity {
                order.shuffle(&mut rng);
            }
            for (t, &src) in order.iter().enumerate() {
                out.frame_mut(t).copy_from_slice(clip.frame(src));
            }
        }
        Augmentation::ColorJitter => {
            // object colors move one palette slot on
            let t = rng.gen_range(0..frames);
            for px in out.frame_mut(t).chunks_mut(3) {
                let c = nearest_color([px[0], px[1], px[2]]);
                if c < PALETTE.len() {
                    px.copy_from_slice(&PALETTE[(c + 1) % PALETTE.len()]);
                }
            }
        }
        Augmentation::Affine => {
            let t = rng.gen_range(0..frames);
            for _ in 0..16 {
                let warped = affine_frame(clip, t, &mut rng, cfg);
                out.frame_mut(t).copy_from_slice(&warped);
                if out.frame(t) != clip.frame(t) {
                    break;
                }
            }
        }
    }
    Ok((out, strategy))
}

/// Rotation, scale and translation about the frame centre, nearest-neighbour
/// sampled with edge clamping.
fn affine_frame(clip: &VideoClip, t: usize, rng: &mut rng::Rng, cfg: &AugmentConfig) -> Vec<u8> {
    let theta = rng
        .gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
        .to_radians();
    let scale = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
    let tx = rng.gen_range(-cfg.max_translation_px..=cfg.max_translation_px);
    let ty = rng.gen_range(-cfg.max_translation_px..=cfg.max_translation_px);
    let (w, h) = (clip.width, clip.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut out = vec![0u8; clip.frame_len()];
    for y in 0..h {
        for x in 0..w {
            // inverse map output pixel centre back to the source
            let (dx, dy) = (x as f64 + 0.5 - cx - tx, y as f64 + 0.5 - cy - ty);
            let sx = (cos * dx + sin * dy) / scale + cx;
            let sy = (-sin * dx + cos * dy) / scale + cy;
            let ix = (sx.floor() as i64).clamp(0, w as i64 - 1) as usize;
            let iy = (sy.floor() as i64).clamp(0, h as i64 - 1) as usize;
            let rgb = clip.pixel(t, iy, ix);
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&rgb);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{enumerate_specs, World};

    fn clips() -> (VideoClip, VideoClip) {
        let world = World::default();
        let specs = enumerate_specs();
        (
            world.generate_clip(&specs[10], 8, 1).unwrap(),
            world.generate_clip(&specs[300], 8, 2).unwrap(),
        )
    }

    fn changed_frames(a: &VideoClip, b: &VideoClip) -> usize {
        (0..a.frames).filter(|&t| a.frame(t) != b.frame(t)).count()
    }

    #[test]
    fn shuffle_permutes_frames() {
        let (clip, _) = clips();
        for seed in 0..50 {
            let (out, _) = negative_video_augment(
                &clip,
                Some(Augmentation::FrameShuffle),
                seed,
                None,
                &AugmentConfig::default(),
            )
            .unwrap();
            let mut a: Vec<&[u8]> = (0..8).map(|t| clip.frame(t)).collect();
            let mut b: Vec<&[u8]> = (0..8).map(|t| out.frame(t)).collect();
            assert_ne!(a, b);
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
        let single = VideoClip::new(1, 4, 4);
        assert!(negative_video_augment(
            &single,
            Some(Augmentation::FrameShuffle),
            0,
            None,
            &AugmentConfig::default()
        )
        .is_err());
    }

    #[test]
    fn single_frame_strategies_touch_one_frame() {
        let (clip, donor) = clips();
        let cfg = AugmentConfig::default();
        for seed in 0..50 {
            for strategy in [
                Augmentation::FrameSwap,
                Augmentation::ColorJitter,
                Augmentation::Affine,
            ] {
                let (out, s) =
                    negative_video_augment(&clip, Some(strategy), seed, Some(&donor), &cfg).unwrap();
                assert_eq!(s, strategy);
                assert_eq!(changed_frames(&clip, &out), 1, "{strategy:?} seed {seed}");
            }
        }
        assert!(negative_video_augment(&clip, Some(Augmentation::FrameSwap), 0, None, &cfg).is_err());
    }

    #[test]
    fn uniform_strategy_frequencies() {
        let clip = VideoClip::new(2, 2, 2);
        let cfg = AugmentConfig::default();
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for seed in 0..draws {
            let (_, s) = negative_video_augment(&clip, None, seed, Some(&clip), &cfg).unwrap();
            counts[Augmentation::ALL.iter().position(|&a| a == s).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }
}
