use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::WORDS;

pub const VOCAB_VERSION: u32 = 1;

/// Frozen id layout shared by the model and the sampler:
/// specials, then prompt words, then image-control tokens, then video tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub version: u32,
    pub pad: u32,
    pub mask: u32,
    pub rel: u32,
    pub vid: u32,
    pub text_offset: u32,
    pub words: Vec<String>,
    pub image_offset: u32,
    pub image_size: u32,
    pub video_offset: u32,
    pub video_size: u32,
}

impl Vocab {
    pub const SPECIALS: u32 = 4;

    /// Layout for a codebook of `k` entries, used for both image-control and
    /// video tokens.
    pub fn new(k: usize) -> Self {
        let words: Vec<String> = WORDS.iter().map(|w| w.to_string()).collect();
        let text_offset = Self::SPECIALS;
        let image_offset = text_offset + words.len() as u32;
        Vocab {
            version: VOCAB_VERSION,
            pad: 0,
            mask: 1,
            rel: 2,
            vid: 3,
            text_offset,
            words,
            image_offset,
            image_size: k as u32,
            video_offset: image_offset + k as u32,
            video_size: k as u32,
        }
    }

    pub fn size(&self) -> usize {
        (self.video_offset + self.video_size) as usize
    }

    pub fn word_id(&self, word: &str) -> Result<u32> {
        self.words
            .iter()
            .position(|w| w == word)
            .map(|i| self.text_offset + i as u32)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn video_id(&self, token: u16) -> Result<u32> {
        if token as u32 >= self.video_size {
            return Err(Error::TokenOutOfRange {
                token: token as u32,
                size: self.video_size as usize,
            });
        }
        Ok(self.video_offset + token as u32)
    }

    pub fn image_id(&self, token: u16) -> Result<u32> {
        if token as u32 >= self.image_size {
            return Err(Error::TokenOutOfRange {
                token: token as u32,
                size: self.image_size as usize,
            });
        }
        Ok(self.image_offset + token as u32)
    }

    /// Inverse of [`Vocab::video_id`]; `None` for anything that is not a video token.
    pub fn video_token(&self, id: u32) -> Option<u16> {
        (id >= self.video_offset && id < self.video_offset + self.video_size)
            .then(|| (id - self.video_offset) as u16)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let v: Vocab = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if v.version != VOCAB_VERSION {
            return Err(Error::format(path, format!("vocab version {}", v.version)));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_disjoint_and_file_round_trips() {
        let v = Vocab::new(256);
        assert!(v.text_offset >= Vocab::SPECIALS);
        assert_eq!(v.image_offset, v.text_offset + WORDS.len() as u32);
        assert_eq!(v.video_offset, v.image_offset + 256);
        assert_eq!(v.size(), 4 + WORDS.len() + 512);
        assert_eq!(v.video_token(v.video_id(17).unwrap()), Some(17));
        assert_eq!(v.video_token(v.image_id(17).unwrap()), None);
        assert!(v.video_id(256).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.toml");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
