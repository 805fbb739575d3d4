//! Videos longer than the model's window, generated by freezing known frames
//! through the preservation mask: extrapolation slides the window forward,
//! interpolation fills the frame between two keyframes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, TokenGrid};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::{self, stream};
use crate::sampler::{mask_predict, SamplerParams};
use crate::sequence::{Controls, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongGenMode {
    Extrapolate,
    Interpolate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongGenPlan {
    pub mode: LongGenMode,
    /// Frames kept frozen at the start of each window.
    pub context_frames: usize,
    /// Frames generated per window.
    pub new_frames: usize,
    pub repeats: usize,
}

impl Default for LongGenPlan {
    fn default() -> Self {
        LongGenPlan {
            mode: LongGenMode::Extrapolate,
            context_frames: 6,
            new_frames: 2,
            repeats: 1,
        }
    }
}

impl LongGenPlan {
    /// Checks the plan against a model window of `window` frames.
    pub fn validate(&self, window: usize) -> Result<()> {
        if self.context_frames + self.new_frames != window {
            return Err(Error::InvalidArgument(format!(
                "context_frames {} + new_frames {} must equal the window of {window} frames",
                self.context_frames, self.new_frames
            )));
        }
        if self.new_frames == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument("new_frames and repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// Frame count of an extrapolated video.
    pub fn output_frames(&self, window: usize) -> usize {
        window + self.repeats * self.new_frames
    }
}

/// Extends `seed_grid` (one full window) by `plan.repeats · plan.new_frames`
/// frames. Each step freezes the last `context_frames` frames and generates
/// the next `new_frames`.
pub fn extrapolate<P: Predictor + ?Sized>(
    model: &P,
    vocab: &Vocab,
    controls: &Controls,
    seed_grid: &TokenGrid,
    plan: &LongGenPlan,
    sampler: &SamplerParams,
    seed: u64,
) -> Result<TokenGrid> {
    if plan.mode != LongGenMode::Extrapolate {
        return Err(Error::InvalidArgument("plan mode is not extrapolate".into()));
    }
    let window = seed_grid.frames;
    plan.validate(window)?;
    let fl = seed_grid.frame_len();
    let mut preserve = vec![false; window * fl];
    preserve[..plan.context_frames * fl].fill(true);
    let mut out = seed_grid.clone();
    for step in 0..plan.repeats {
        let mut init = out.frames_slice(out.frames - plan.context_frames..out.frames);
        init.append(&TokenGrid::filled(plan.new_frames, seed_grid.height, seed_grid.width, 0))?;
        let s = rng::derive(seed, &[stream::LONGGEN, step as u64]);
        let gen = mask_predict(model, vocab, controls, &preserve, &init, sampler, s)?;
        out.append(&gen.frames_slice(plan.context_frames..window))?;
    }
    Ok(out)
}

/// Generates the frame between `a` and `b` (single-frame grids). The window
/// holds `a`, the masked middle frame, `b`, then copies of `a` up to `window`
/// frames; all but the middle frame are frozen. Returns the three frames.
pub fn interpolate<P: Predictor + ?Sized>(
    model: &P,
    vocab: &Vocab,
    controls: &Controls,
    keyframes: (&TokenGrid, &TokenGrid),
    window: usize,
    sampler: &SamplerParams,
    seed: u64,
) -> Result<TokenGrid> {
    let (a, b) = keyframes;
    if a.frames != 1 || b.frames != 1 || (a.height, a.width) != (b.height, b.width) {
        return Err(Error::ShapeMismatch(format!(
            "keyframes must be single frames of equal size, got {}x{}x{} and {}x{}x{}",
            a.frames, a.height, a.width, b.frames, b.height, b.width
        )));
    }
    if window < 3 {
        return Err(Error::InvalidArgument(format!("interpolation needs a window of at least 3 frames, got {window}")));
    }
    let fl = a.frame_len();
    let mut init = a.clone();
    init.append(&TokenGrid::filled(1, a.height, a.width, 0))?;
    init.append(b)?;
    for _ in 3..window {
        init.append(a)?;
    }
    let mut preserve = vec![true; window * fl];
    preserve[fl..2 * fl].fill(false);
    let gen = mask_predict(model, vocab, controls, &preserve, &init, sampler, seed)?;
    Ok(gen.frames_slice(0..3))
}

/// Interpolates between every consecutive frame pair of `grid`, giving
/// `2·frames − 1` frames.
pub fn interpolate_chain<P: Predictor + ?Sized>(
    model: &P,
    vocab: &Vocab,
    controls: &Controls,
    grid: &TokenGrid,
    window: usize,
    sampler: &SamplerParams,
    seed: u64,
) -> Result<TokenGrid> {
    if grid.frames == 0 {
        return Err(Error::Empty("interpolation input"));
    }
    let mut out = grid.frames_slice(0..1);
    for t in 1..grid.frames {
        let (a, b) = (grid.frames_slice(t - 1..t), grid.frames_slice(t..t + 1));
        let s = rng::derive(seed, &[stream::LONGGEN, t as u64]);
        let tri = interpolate(model, vocab, controls, (&a, &b), window, sampler, s)?;
        out.append(&tri.frames_slice(1..3))?;
    }
    Ok(out)
}

/// Decodes `grid` into `dir` as numbered PNG frames plus `video.gif`.
pub fn write_video(codebook: &Codebook, grid: &TokenGrid, dir: &Path, fps: u16) -> Result<()> {
    let mut clip = codebook.decode(grid)?;
    clip.fps = fps;
    clip.write_png_frames(dir)?;
    clip.write_gif(&dir.join("video.gif"), 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, PredictorOutput, TransformerConfig};
    use crate::sequence::TokenSequence;
    use crate::world::TextPrompt;

    const K: usize = 16;

    /// Predicts, for each position, the token at the same place in the nearest
    /// earlier unmasked frame (later if none), with a confident peak.
    struct CopyNeighbour {
        mask: u32,
        offset: u32,
        frame_len: usize,
    }

    impl Predictor for CopyNeighbour {
        fn predict(&self, seq: &TokenSequence) -> Result<PredictorOutput> {
            let ids = seq.video_ids();
            let n = ids.len();
            let frames = n / self.frame_len;
            let mut logits = vec![0.0f32; n * K];
            for i in 0..n {
                let (t, p) = (i / self.frame_len, i % self.frame_len);
                let order = (0..t).rev().chain(t..frames);
                let src = order.map(|f| ids[f * self.frame_len + p]).find(|&id| id != self.mask);
                let tok = src.map_or(0, |id| (id - self.offset) as usize);
                logits[i * K + tok] = 25.0;
            }
            Ok(PredictorOutput { logits, n, k: K, rel_logit: 0.0, vid_logit: 0.0 })
        }

        fn video_vocab(&self) -> usize {
            K
        }
    }

    fn setup() -> (Vocab, CopyNeighbour, Controls, SamplerParams) {
        let vocab = Vocab::new(K);
        let fixture = CopyNeighbour { mask: vocab.mask, offset: vocab.video_offset, frame_len: 4 };
        let controls = Controls { prompt: TextPrompt::default(), visual: None };
        let sampler = SamplerParams { beams: 1, ..SamplerParams::default() };
        (vocab, fixture, controls, sampler)
    }

    fn ramp(frames: usize) -> TokenGrid {
        TokenGrid::new(frames, 2, 2, (0..frames * 4).map(|i| (i % K) as u16).collect()).unwrap()
    }

    #[test]
    fn extrapolation_keeps_the_seed_and_grows_by_the_plan() {
        let (vocab, fixture, controls, sampler) = setup();
        let seed_grid = ramp(8);
        let plan = LongGenPlan::default();
        let out = extrapolate(&fixture, &vocab, &controls, &seed_grid, &plan, &sampler, 1).unwrap();
        assert_eq!(out.frames, 10);
        assert_eq!(out.frames_slice(0..8), seed_grid);
        // the copy fixture repeats the last context frame
        assert_eq!(out.frame(8), seed_grid.frame(7));
        assert_eq!(out.frame(9), seed_grid.frame(7));

        let long = LongGenPlan { repeats: 100, ..plan.clone() };
        let out = extrapolate(&fixture, &vocab, &controls, &seed_grid, &long, &sampler, 1).unwrap();
        assert_eq!(out.frames, 208);
        assert_eq!(out.frames, long.output_frames(8));
        assert_eq!(out.frames_slice(0..8), seed_grid);
    }

    #[test]
    fn extrapolation_is_deterministic_with_a_real_model() {
        let vocab = Vocab::new(K);
        let cfg = TransformerConfig {
            layers: 1,
            heads: 1,
            model_dim: 8,
            ffn_dim: 16,
            image_vocab: K,
            video_vocab: K,
            dropout: 0.0,
            max_seq_len: 64,
            ..Default::default()
        }
        .with_vocab(&vocab);
        let model = init_model(cfg, 3).unwrap();
        let (_, _, controls, sampler) = setup();
        let plan = LongGenPlan { context_frames: 3, new_frames: 1, repeats: 4, ..Default::default() };
        let seed_grid = ramp(4);
        let a = extrapolate(&model, &vocab, &controls, &seed_grid, &plan, &sampler, 5).unwrap();
        let b = extrapolate(&model, &vocab, &controls, &seed_grid, &plan, &sampler, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames, 8);
        assert_eq!(a.frames_slice(0..4), seed_grid);
    }

    #[test]
    fn plan_must_fill_the_window() {
        let (vocab, fixture, controls, sampler) = setup();
        let bad = LongGenPlan { context_frames: 5, ..Default::default() };
        assert!(matches!(
            extrapolate(&fixture, &vocab, &controls, &ramp(8), &bad, &sampler, 0),
            Err(Error::InvalidArgument(_))
        ));
        let zero = LongGenPlan { repeats: 0, ..Default::default() };
        assert!(zero.validate(8).is_err());
        let interp = LongGenPlan { mode: LongGenMode::Interpolate, ..Default::default() };
        assert!(extrapolate(&fixture, &vocab, &controls, &ramp(8), &interp, &sampler, 0).is_err());
    }

    #[test]
    fn interpolation_freezes_keyframes() {
        let (vocab, fixture, controls, sampler) = setup();
        let grid = ramp(2);
        let (a, b) = (grid.frames_slice(0..1), grid.frames_slice(1..2));
        let tri = interpolate(&fixture, &vocab, &controls, (&a, &b), 8, &sampler, 2).unwrap();
        assert_eq!(tri.frames, 3);
        assert_eq!(tri.frame(0), a.frame(0));
        assert_eq!(tri.frame(2), b.frame(0));
        assert_eq!(tri.frame(1), a.frame(0));

        let big = TokenGrid::filled(1, 3, 3, 0);
        assert!(matches!(
            interpolate(&fixture, &vocab, &controls, (&a, &big), 8, &sampler, 2),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(interpolate(&fixture, &vocab, &controls, (&a, &b), 2, &sampler, 2).is_err());
    }

    #[test]
    fn chained_interpolation_doubles_frames_minus_one() {
        let (vocab, fixture, controls, sampler) = setup();
        let grid = ramp(8);
        let out = interpolate_chain(&fixture, &vocab, &controls, &grid, 8, &sampler, 0).unwrap();
        assert_eq!(out.frames, 15);
        for t in 0..8 {
            assert_eq!(out.frame(2 * t), grid.frame(t));
        }
    }
}
