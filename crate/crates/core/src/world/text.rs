use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Color, Direction, Motion, Shape, ShapeSpec, Size, Verdict};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// The closed prompt vocabulary: template words, then attribute words.
pub const WORDS: &[&str] = &[
    "a", "is", "moving", "in", "path", "towards", "the", "direction",
    "small", "large",
    "red", "green", "blue", "yellow",
    "square", "circle", "triangle",
    "straight", "zigzag",
    "north", "northeast", "east", "southeast", "south", "southwest", "west", "northwest",
];

/// Word count of the longest rendered template.
pub const MAX_PROMPT_WORDS: usize = 13;

/// A prompt as ordered sentences of words from [`WORDS`]. May be empty.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TextPrompt {
    pub sentences: Vec<Vec<String>>,
    pub spec_origin: Option<ShapeSpec>,
}

impl TextPrompt {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.join(" "))
            .collect::<Vec<_>>()
            .join(". ")
    }
}

/// A spec with some attributes left open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialSpec {
    pub shape: Option<Shape>,
    pub color: Option<Color>,
    pub size: Option<Size>,
    pub motion: Option<Motion>,
    pub direction: Option<Direction>,
}

impl PartialSpec {
    pub fn matches(&self, spec: &ShapeSpec) -> bool {
        self.shape.map_or(true, |v| v == spec.shape)
            && self.color.map_or(true, |v| v == spec.color)
            && self.size.map_or(true, |v| v == spec.size)
            && self.motion.map_or(true, |v| v == spec.motion)
            && self.direction.map_or(true, |v| v == spec.direction)
    }

    /// The attributes named in `words`; the first word of each kind wins.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut p = PartialSpec::default();
        for w in words {
            p.shape = p.shape.or(Shape::from_word(w));
            p.color = p.color.or(Color::from_word(w));
            p.size = p.size.or(Size::from_word(w));
            p.motion = p.motion.or(Motion::from_word(w));
            p.direction = p.direction.or(Direction::from_word(w));
        }
        p
    }

    /// Every constrained attribute is recognized with the constrained value.
    pub fn satisfied_by(&self, v: &Verdict) -> bool {
        self.shape.map_or(true, |x| v.shape == Some(x))
            && self.color.map_or(true, |x| v.color == Some(x))
            && self.size.map_or(true, |x| v.size == Some(x))
            && self.motion.map_or(true, |x| v.motion == Some(x))
            && self.direction.map_or(true, |x| v.direction == Some(x))
    }
}

impl From<ShapeSpec> for PartialSpec {
    fn from(s: ShapeSpec) -> Self {
        PartialSpec {
            shape: Some(s.shape),
            color: Some(s.color),
            size: Some(s.size),
            motion: Some(s.motion),
            direction: Some(s.direction),
        }
    }
}

fn template(p: &PartialSpec, second_form: bool) -> Vec<String> {
    let mut w: Vec<&str> = vec!["a"];
    w.extend(p.size.map(Size::word));
    w.extend(p.color.map(Color::word));
    w.extend(p.shape.map(Shape::word));
    w.extend(["is", "moving", "in"]);
    w.extend(p.motion.map(Motion::word));
    w.push("path");
    match (second_form, p.direction) {
        (false, d) => {
            w.push("towards");
            w.extend(d.map(Direction::word));
        }
        (true, d) => {
            w.extend(["in", "the"]);
            w.extend(d.map(Direction::word));
            w.push("direction");
        }
    }
    w.into_iter().map(str::to_owned).collect()
}

/// "a {size} {color} {shape} is moving in {motion} path towards {dir}" or
/// "... path in the {dir} direction", the form picked by `seed`.
pub fn render_text(spec: &ShapeSpec, seed: u64) -> TextPrompt {
    let second = rng::rng(seed, &[stream::TEXT]).gen_bool(0.5);
    TextPrompt {
        sentences: vec![template(&(*spec).into(), second)],
        spec_origin: Some(*spec),
    }
}

/// Same templates with the slots of open attributes left out.
pub fn render_partial_text(partial: &PartialSpec, seed: u64) -> TextPrompt {
    let second = rng::rng(seed, &[stream::TEXT]).gen_bool(0.5);
    TextPrompt {
        sentences: vec![template(partial, second)],
        spec_origin: None,
    }
}

/// Parses free text into a prompt. Sentences split on '.', words on
/// whitespace; every word must be in [`WORDS`].
pub fn parse_prompt(text: &str) -> Result<TextPrompt> {
    let mut sentences = Vec::new();
    for sentence in text.split('.') {
        let words: Vec<String> = sentence
            .split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if let Some(bad) = words.iter().find(|w| !WORDS.contains(&w.as_str())) {
            return Err(Error::UnknownWord(bad.clone()));
        }
        if !words.is_empty() {
            sentences.push(words);
        }
    }
    let mut prompt = TextPrompt {
        sentences,
        spec_origin: None,
    };
    prompt.spec_origin = spec_from_words(prompt.words());
    Ok(prompt)
}

fn spec_from_words<'a>(words: impl Iterator<Item = &'a str>) -> Option<ShapeSpec> {
    let mut p = PartialSpec::default();
    for w in words {
        fn set<T>(slot: &mut Option<T>, v: Option<T>) {
            if v.is_some() {
                *slot = v;
            }
        }
        set(&mut p.shape, Shape::from_word(w));
        set(&mut p.color, Color::from_word(w));
        set(&mut p.size, Size::from_word(w));
        set(&mut p.motion, Motion::from_word(w));
        set(&mut p.direction, Direction::from_word(w));
    }
    Some(ShapeSpec {
        shape: p.shape?,
        color: p.color?,
        size: p.size?,
        motion: p.motion?,
        direction: p.direction?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_template_fits_max_prompt_words() {
        let longest = crate::world::enumerate_specs()
            .iter()
            .flat_map(|s| [template(&(*s).into(), false).len(), template(&(*s).into(), true).len()])
            .max();
        assert_eq!(longest, Some(MAX_PROMPT_WORDS));
    }
    use crate::world::enumerate_specs;

    fn first_form_seed(want: bool) -> u64 {
        (0..100)
            .find(|&s| rng::rng(s, &[stream::TEXT]).gen_bool(0.5) == want)
            .unwrap()
    }

    #[test]
    fn matches_the_first_template() {
        let spec = ShapeSpec {
            shape: Shape::Square,
            color: Color::Red,
            size: Size::Large,
            motion: Motion::Straight,
            direction: Direction::NE,
        };
        let p = render_text(&spec, first_form_seed(false));
        assert_eq!(
            p.to_text(),
            "a large red square is moving in straight path towards northeast"
        );
        let q = render_text(&spec, first_form_seed(true));
        assert_eq!(
            q.to_text(),
            "a large red square is moving in straight path in the northeast direction"
        );
        assert_eq!(parse_prompt(&q.to_text()).unwrap().spec_origin, Some(spec));
    }

    #[test]
    fn every_attribute_word_appears_once() {
        for spec in enumerate_specs() {
            for seed in 0..2 {
                let p = render_text(&spec, seed);
                let words: Vec<&str> = p.words().collect();
                assert!(words.iter().all(|w| WORDS.contains(w)));
                let count = |w: &str| words.iter().filter(|&&x| x == w).count();
                assert_eq!(count(spec.shape.word()), 1);
                assert_eq!(count(spec.color.word()), 1);
                assert_eq!(count(spec.size.word()), 1);
                assert_eq!(count(spec.motion.word()), 1);
                assert_eq!(count(spec.direction.word()), 1);
                assert_eq!(p.spec_origin, Some(spec));
            }
        }
    }

    #[test]
    fn parse_rejects_unknown_words_and_allows_empty() {
        assert!(matches!(parse_prompt("a purple square"), Err(Error::UnknownWord(w)) if w == "purple"));
        let empty = parse_prompt("").unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.spec_origin, None);
    }

    #[test]
    fn partial_prompt_omits_open_slots() {
        let p = PartialSpec {
            color: Some(Color::Blue),
            ..Default::default()
        };
        let text = render_partial_text(&p, first_form_seed(false)).to_text();
        assert_eq!(text, "a blue is moving in path towards");
    }
}
