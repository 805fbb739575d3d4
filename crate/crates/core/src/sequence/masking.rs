use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Base masking strategies; the frame-keeping overlay is tracked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Per-token Bernoulli masking.
    Iid,
    /// Everything masked.
    All,
    /// One spatio-temporal box masked.
    Block,
    /// Everything except one spatio-temporal box masked.
    BlockNegation,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Iid,
        Strategy::All,
        Strategy::Block,
        Strategy::BlockNegation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskingConfig {
    /// Probabilities of [`Strategy::ALL`], in order.
    pub strategy_probs: [f64; 4],
    /// Probability of the frame-keeping overlay.
    pub keep_frames_prob: f64,
    /// Range of the i.i.d. masking rate.
    pub iid_rate: (f64, f64),
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            strategy_probs: [0.7, 0.1, 0.1, 0.1],
            keep_frames_prob: 0.2,
            iid_rate: (0.2, 0.9),
        }
    }
}

/// Which video positions a training sequence hides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskingPlan {
    pub strategy: Strategy,
    /// Frames left fully visible by the overlay, sorted.
    pub keep_frames: Option<Vec<usize>>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// One flag per video position; `true` means replaced by `[MASK]`.
    pub mask: Vec<bool>,
}

impl MaskingPlan {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn random_box(rng: &mut rng::Rng, dims: [usize; 3]) -> [(usize, usize); 3] {
    dims.map(|extent| {
        let len = rng.gen_range(1..=extent);
        let start = rng.gen_range(0..=extent - len);
        (start, start + len)
    })
}

/// Draws one masking plan for a `frames × height × width` grid.
pub fn sample_msm_plan(
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
    cfg: &MaskingConfig,
) -> MaskingPlan {
    let mut rng = rng::rng(seed, &[stream::MSM]);
    let n = frames * height * width;
    let total: f64 = cfg.strategy_probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut strategy = Strategy::Iid;
    for (s, &p) in Strategy::ALL.iter().zip(&cfg.strategy_probs) {
        if u < p {
            strategy = *s;
            break;
        }
        u -= p;
    }
    let mut mask = match strategy {
        Strategy::Iid => {
            let rate = rng.gen_range(cfg.iid_rate.0..=cfg.iid_rate.1);
            (0..n).map(|_| rng.gen_bool(rate)).collect()
        }
        Strategy::All => vec![true; n],
        Strategy::Block | Strategy::BlockNegation => {
            let b = random_box(&mut rng, [frames, height, width]);
            let inside = strategy == Strategy::Block;
            let mut m = vec![!inside; n];
            for t in b[0].0..b[0].1 {
                for y in b[1].0..b[1].1 {
                    for x in b[2].0..b[2].1 {
                        m[(t * height + y) * width + x] = inside;
                    }
                }
            }
            m
        }
    };
    let mut keep_frames = None;
    if frames >= 2 && rng.gen_bool(cfg.keep_frames_prob) {
        let mut kept: Vec<usize> = sample(&mut rng, frames, frames / 2).into_vec();
        kept.sort_unstable();
        for &t in &kept {
            mask[t * height * width..(t + 1) * height * width].fill(false);
        }
        keep_frames = Some(kept);
    }
    MaskingPlan {
        strategy,
        keep_frames,
        frames,
        height,
        width,
        mask,
    }
}

/// Replaces masked video positions with `[MASK]`. Returns the new sequence and
/// the masked indices, relative to the start of the video span.
pub fn apply_mask(
    seq: &TokenSequence,
    plan: &MaskingPlan,
    vocab: &Vocab,
) -> Result<(TokenSequence, Vec<usize>)> {
    if plan.mask.len() != seq.video_len() {
        return Err(Error::ShapeMismatch(format!(
            "plan covers {} positions, video span has {}",
            plan.mask.len(),
            seq.video_len()
        )));
    }
    let mut out = seq.clone();
    let mut masked = Vec::new();
    for (i, (id, &m)) in out.video_ids_mut().iter_mut().zip(&plan.mask).enumerate() {
        if m {
            *id = vocab.mask;
            masked.push(i);
        }
    }
    Ok((out, masked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::TokenGrid;
    use crate::sequence::{build_sequence, Controls};

    #[test]
    fn strategy_and_overlay_frequencies() {
        let cfg = MaskingConfig::default();
        let draws = 100_000;
        let mut counts = [0usize; 4];
        let mut overlays = 0;
        for s in 0..draws {
            let plan = sample_msm_plan(8, 2, 2, s, &cfg);
            counts[Strategy::ALL.iter().position(|&x| x == plan.strategy).unwrap()] += 1;
            overlays += plan.keep_frames.is_some() as usize;
        }
        for (c, p) in counts.iter().zip(cfg.strategy_probs) {
            assert!((*c as f64 / draws as f64 - p).abs() < 0.01);
        }
        assert!((overlays as f64 / draws as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn structural_contracts() {
        let cfg = MaskingConfig::default();
        let mut seen_all = false;
        for s in 0..2000 {
            let plan = sample_msm_plan(8, 4, 4, s, &cfg);
            assert_eq!(plan.mask.len(), 128);
            if let Some(kept) = &plan.keep_frames {
                assert_eq!(kept.len(), 4);
                let untouched = (0..8)
                    .filter(|t| plan.mask[t * 16..(t + 1) * 16].iter().all(|m| !m))
                    .count();
                assert!(untouched >= 4);
                for &t in kept {
                    assert!(plan.mask[t * 16..(t + 1) * 16].iter().all(|m| !m));
                }
            } else if plan.strategy == Strategy::All {
                assert!(plan.mask.iter().all(|&m| m));
                seen_all = true;
            }
        }
        assert!(seen_all);
        // no overlay possible with a single frame
        assert!((0..500).all(|s| sample_msm_plan(1, 4, 4, s, &cfg).keep_frames.is_none()));
    }

    #[test]
    fn apply_touches_only_masked_video_positions() {
        let vocab = Vocab::new(8);
        let controls = Controls {
            prompt: crate::world::parse_prompt("a red square").unwrap(),
            visual: None,
        };
        let grid = TokenGrid::new(2, 2, 2, vec![1, 2, 3, 4, 5, 6, 7, 0]).unwrap();
        let seq = build_sequence(&vocab, &controls, &grid, 4).unwrap();
        let mut plan = sample_msm_plan(2, 2, 2, 0, &MaskingConfig::default());
        plan.mask = vec![false; 8];
        let (same, idx) = apply_mask(&seq, &plan, &vocab).unwrap();
        assert_eq!(same, seq);
        assert!(idx.is_empty());
        plan.mask = vec![true; 8];
        let (all, idx) = apply_mask(&seq, &plan, &vocab).unwrap();
        assert_eq!(idx.len(), 8);
        assert!(all.video_ids().iter().all(|&i| i == vocab.mask));
        assert_eq!(all.control_ids(), seq.control_ids());
        assert_eq!(all.ids[all.vid_pos], vocab.vid);
        plan.mask = vec![true, false, true, false, false, false, false, true];
        let (_, idx) = apply_mask(&seq, &plan, &vocab).unwrap();
        assert_eq!(idx, vec![0, 2, 7]);
        plan.mask.pop();
        assert!(apply_mask(&seq, &plan, &vocab).is_err());
    }
}
