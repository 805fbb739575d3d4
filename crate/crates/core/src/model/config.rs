use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::Vocab;
use crate::world::MAX_PROMPT_WORDS;

/// Architecture and loss weights of the masked video transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub text_vocab: usize,
    pub image_vocab: usize,
    pub video_vocab: usize,
    /// Residual dropout rate during training.
    pub dropout: f64,
    pub lambda_msm: f64,
    pub lambda_rel: f64,
    pub lambda_vid: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 4,
            heads: 4,
            model_dim: 128,
            ffn_dim: 512,
            max_seq_len: MAX_PROMPT_WORDS + 8 * 8 * 8 + 2,
            text_vocab: crate::world::WORDS.len(),
            image_vocab: 256,
            video_vocab: 256,
            dropout: 0.1,
            lambda_msm: 1.0,
            lambda_rel: 1.0,
            lambda_vid: 1.0,
        }
    }
}

impl TransformerConfig {
    /// Copies the vocabulary sizes of `vocab` into the config.
    pub fn with_vocab(mut self, vocab: &Vocab) -> Self {
        self.text_vocab = vocab.words.len();
        self.image_vocab = vocab.image_size as usize;
        self.video_vocab = vocab.video_size as usize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad(format!(
                "layers, heads, model_dim and ffn_dim must be positive (got {}, {}, {}, {})",
                self.layers, self.heads, self.model_dim, self.ffn_dim
            ));
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!("model_dim {} not divisible by heads {}", self.model_dim, self.heads));
        }
        if self.max_seq_len < 3 {
            return bad(format!("max_seq_len {} too small", self.max_seq_len));
        }
        if self.video_vocab == 0 {
            return bad("video_vocab must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (name, l) in [("lambda_msm", self.lambda_msm), ("lambda_rel", self.lambda_rel), ("lambda_vid", self.lambda_vid)] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {l}"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Embedding rows: four specials plus every modality's vocabulary.
    pub fn vocab_size(&self) -> usize {
        Vocab::SPECIALS as usize + self.text_vocab + self.image_vocab + self.video_vocab
    }

    pub fn video_offset(&self) -> usize {
        Vocab::SPECIALS as usize + self.text_vocab + self.image_vocab
    }
}
