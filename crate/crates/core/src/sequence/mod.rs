//! Transformer input construction: the `[REL] controls [VID] video` layout,
//! masking plans for masked-token training, negative pairs for the relevance
//! and video-consistency heads, and text dropout.

mod augment;
mod masking;
mod vocab;

pub use augment::{negative_video_augment, AugmentConfig, Augmentation};
pub use masking::{apply_mask, sample_msm_plan, MaskingConfig, MaskingPlan, Strategy};
pub use vocab::{Vocab, VOCAB_VERSION};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codebook::TokenGrid;
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::world::{enumerate_specs, render_text, ShapeSpec, TextPrompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Special,
    Text,
    ImageControl,
    Video,
}

impl Modality {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// `[REL] ⊕ text ⊕ image-control ⊕ [VID] ⊕ video`, with span bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub rel_pos: usize,
    pub vid_pos: usize,
    /// Half-open range of text and image-control positions.
    pub control_span: (usize, usize),
    /// Half-open range of video positions; its length is `T·h·w`.
    pub video_span: (usize, usize),
    pub tags: Vec<Modality>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn video_len(&self) -> usize {
        self.video_span.1 - self.video_span.0
    }

    pub fn video_ids(&self) -> &[u32] {
        &self.ids[self.video_span.0..self.video_span.1]
    }

    pub fn video_ids_mut(&mut self) -> &mut [u32] {
        &mut self.ids[self.video_span.0..self.video_span.1]
    }

    pub fn control_ids(&self) -> &[u32] {
        &self.ids[self.control_span.0..self.control_span.1]
    }

    /// Same controls, new video tokens (ids already offset).
    pub fn with_video_ids(&self, video: &[u32]) -> Result<TokenSequence> {
        if video.len() != self.video_len() {
            return Err(Error::ShapeMismatch(format!(
                "{} video ids for a span of {}",
                video.len(),
                self.video_len()
            )));
        }
        let mut out = self.clone();
        out.video_ids_mut().copy_from_slice(video);
        Ok(out)
    }

    /// Same video, controls taken from `other` (which must share the layout).
    pub fn with_controls_of(&self, other: &TokenSequence) -> Result<TokenSequence> {
        if other.control_span != self.control_span {
            return Err(Error::ShapeMismatch("control spans differ".into()));
        }
        let mut out = self.clone();
        let (a, b) = self.control_span;
        out.ids[a..b].copy_from_slice(&other.ids[a..b]);
        Ok(out)
    }
}

/// Control signals of one training item.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Controls {
    pub prompt: TextPrompt,
    pub visual: Option<Vec<u16>>,
}

/// Emits `[REL]`, the prompt padded to `max_text_len`, optional image-control
/// tokens, `[VID]`, then the flattened video.
pub fn build_sequence(
    vocab: &Vocab,
    controls: &Controls,
    video: &TokenGrid,
    max_text_len: usize,
) -> Result<TokenSequence> {
    let words = controls.prompt.len();
    if words > max_text_len {
        return Err(Error::PromptTooLong {
            len: words,
            max: max_text_len,
        });
    }
    let visual = controls.visual.as_deref().unwrap_or(&[]);
    let n = video.len();
    let total = 2 + max_text_len + visual.len() + n;
    let mut ids = Vec::with_capacity(total);
    let mut tags = Vec::with_capacity(total);
    ids.push(vocab.rel);
    tags.push(Modality::Special);
    for w in controls.prompt.words() {
        ids.push(vocab.word_id(w)?);
        tags.push(Modality::Text);
    }
    for _ in words..max_text_len {
        ids.push(vocab.pad);
        tags.push(Modality::Text);
    }
    for &t in visual {
        ids.push(vocab.image_id(t)?);
        tags.push(Modality::ImageControl);
    }
    let vid_pos = ids.len();
    ids.push(vocab.vid);
    tags.push(Modality::Special);
    for &t in &video.tokens {
        ids.push(vocab.video_id(t)?);
        tags.push(Modality::Video);
    }
    Ok(TokenSequence {
        ids,
        rel_pos: 0,
        vid_pos,
        control_span: (1, vid_pos),
        video_span: (vid_pos + 1, total),
        tags,
    })
}

/// How REL negatives are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelMode {
    /// Rotate controls by one position along the batch.
    Swap,
    /// Draw, per item, a fresh prompt for a different spec.
    Negative,
}

/// Controls paired against each item's video for the negative REL sequence.
pub fn swap_conditions(batch: &[Controls], mode: RelMode, seed: u64) -> Result<Vec<Controls>> {
    match mode {
        RelMode::Swap => {
            if batch.len() < 2 {
                return Err(Error::InvalidArgument(
                    "condition swapping needs a batch of at least 2".into(),
                ));
            }
            Ok((0..batch.len())
                .map(|i| batch[(i + 1) % batch.len()].clone())
                .collect())
        }
        RelMode::Negative => {
            let specs = enumerate_specs();
            batch
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let mut rng = rng::rng(seed, &[stream::SWAP, i as u64]);
                    let spec = loop {
                        let s: ShapeSpec = specs[rng.gen_range(0..specs.len())];
                        if Some(s) != item.prompt.spec_origin {
                            break s;
                        }
                    };
                    Ok(Controls {
                        prompt: render_text(&spec, rng.gen()),
                        visual: item.visual.clone(),
                    })
                })
                .collect()
        }
    }
}

/// Drops each sentence independently with probability `p_drop`.
pub fn text_dropout(prompt: &TextPrompt, p_drop: f64, seed: u64) -> Result<TextPrompt> {
    if !(0.0..=1.0).contains(&p_drop) {
        return Err(Error::InvalidArgument(format!("p_drop {p_drop} outside [0, 1]")));
    }
    let mut rng = rng::rng(seed, &[stream::DROPOUT]);
    let sentences = prompt
        .sentences
        .iter()
        .filter(|_| !rng.gen_bool(p_drop))
        .cloned()
        .collect();
    Ok(TextPrompt {
        sentences,
        spec_origin: prompt.spec_origin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::parse_prompt;

    fn prompt(text: &str) -> Controls {
        Controls {
            prompt: parse_prompt(text).unwrap(),
            visual: None,
        }
    }

    #[test]
    fn layout_and_spans() {
        let vocab = Vocab::new(16);
        let c = prompt("a small red square is moving in zigzag path towards north");
        let video = TokenGrid::new(2, 2, 2, (0..8).collect()).unwrap();
        let seq = build_sequence(&vocab, &c, &video, 13).unwrap();
        assert_eq!(seq.len(), 13 + 8 + 2);
        assert_eq!(seq.ids[seq.rel_pos], vocab.rel);
        assert_eq!(seq.ids[seq.vid_pos], vocab.vid);
        assert_eq!(seq.video_len(), 8);
        assert_eq!(seq.control_span, (1, 14));
        for (i, tag) in seq.tags.iter().enumerate() {
            let expect = if i == seq.rel_pos || i == seq.vid_pos {
                Modality::Special
            } else if i < seq.vid_pos {
                Modality::Text
            } else {
                Modality::Video
            };
            assert_eq!(*tag, expect);
        }
        assert_eq!(seq.ids[12], vocab.pad);
        assert!(build_sequence(&vocab, &c, &video, 5).is_err());
    }

    #[test]
    fn image_controls_take_their_own_range() {
        let vocab = Vocab::new(16);
        let c = Controls {
            prompt: TextPrompt::default(),
            visual: Some(vec![3, 4]),
        };
        let video = TokenGrid::filled(1, 1, 2, 3);
        let seq = build_sequence(&vocab, &c, &video, 2).unwrap();
        assert_eq!(seq.len(), 2 + 2 + 2 + 2);
        assert_eq!(&seq.tags[3..5], &[Modality::ImageControl; 2]);
        assert_ne!(seq.ids[3], seq.ids[seq.video_span.0]);
    }

    #[test]
    fn swap_rotates_and_restores() {
        let batch: Vec<Controls> = ["a red", "a green", "a blue"].iter().map(|t| prompt(t)).collect();
        let swapped = swap_conditions(&batch, RelMode::Swap, 0).unwrap();
        assert_eq!(swapped[0], batch[1]);
        assert_eq!(swapped[2], batch[0]);
        let mut cur = batch.clone();
        for _ in 0..batch.len() {
            cur = swap_conditions(&cur, RelMode::Swap, 0).unwrap();
        }
        assert_eq!(cur, batch);
        let pair = &batch[..2];
        let s = swap_conditions(pair, RelMode::Swap, 0).unwrap();
        assert_eq!((&s[0], &s[1]), (&pair[1], &pair[0]));
        assert!(swap_conditions(&batch[..1], RelMode::Swap, 0).is_err());
    }

    #[test]
    fn negative_mode_changes_every_spec() {
        let specs = enumerate_specs();
        let batch: Vec<Controls> = specs
            .iter()
            .step_by(7)
            .map(|s| Controls {
                prompt: render_text(s, 0),
                visual: None,
            })
            .collect();
        for seed in 0..5 {
            let neg = swap_conditions(&batch, RelMode::Negative, seed).unwrap();
            for (a, b) in batch.iter().zip(&neg) {
                assert!(b.prompt.spec_origin.is_some());
                assert_ne!(a.prompt.spec_origin, b.prompt.spec_origin);
            }
        }
        let single = swap_conditions(&batch[..1], RelMode::Negative, 0).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn dropout_extremes_and_rate() {
        let two = TextPrompt {
            sentences: vec![vec!["a".into()], vec!["red".into()]],
            spec_origin: None,
        };
        assert_eq!(text_dropout(&two, 0.0, 3).unwrap(), two);
        assert!(text_dropout(&two, 1.0, 3).unwrap().is_empty());
        assert!(text_dropout(&two, 1.5, 3).is_err());
        let trials = 100_000;
        let mut kept = [0usize; 2];
        for s in 0..trials {
            let out = text_dropout(&two, 0.3, s).unwrap();
            for (i, sentence) in two.sentences.iter().enumerate() {
                kept[i] += out.sentences.contains(sentence) as usize;
            }
        }
        for k in kept {
            let rate = k as f64 / trials as f64;
            assert!((rate - 0.7).abs() < 0.01, "{rate}");
        }
    }
}
