//! The moving-shapes world: attribute specs, the procedural renderer, templated
//! prompts and the pixel oracle that recovers attributes from frames.

mod dataset;
mod oracle;
mod render;
mod text;

pub use dataset::{
    generate_dataset, load_dataset, ClipMeta, DatasetClip, DatasetConfig, DatasetManifest, ManifestEntry, CLIP_META_FILE,
    MANIFEST_FILE,
};
pub(crate) use dataset::write_toml;
pub use oracle::{oracle_classify, Verdict};
pub use render::{EdgeMode, ShapeRaster, World, WorldConfig, PALETTE, TEXTURE};
pub(crate) use render::nearest_color;
pub use text::{parse_prompt, MAX_PROMPT_WORDS, render_partial_text, render_text, PartialSpec, TextPrompt, WORDS};

use serde::{Deserialize, Serialize};
use std::fmt;

macro_rules! closed_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self { $($name::$variant => $word),+ }
            }

            pub fn from_word(w: &str) -> Option<Self> {
                match w { $($word => Some($name::$variant),)+ _ => None }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

closed_enum!(Shape { Square => "square", Circle => "circle", Triangle => "triangle" });
closed_enum!(Color { Red => "red", Green => "green", Blue => "blue", Yellow => "yellow" });
closed_enum!(Size { Small => "small", Large => "large" });
closed_enum!(Motion { Straight => "straight", Zigzag => "zigzag" });
closed_enum!(
    /// Compass directions, clockwise from north. Image y grows downwards.
    Direction {
        N => "north",
        NE => "northeast",
        E => "east",
        SE => "southeast",
        S => "south",
        SW => "southwest",
        W => "west",
        NW => "northwest",
    }
);

impl Direction {
    /// Unit step on the pixel grid (x right, y down).
    pub fn step(self) -> (i32, i32) {
        match self {
            Direction::N => (0, -1),
            Direction::NE => (1, -1),
            Direction::E => (1, 0),
            Direction::SE => (1, 1),
            Direction::S => (0, 1),
            Direction::SW => (-1, 1),
            Direction::W => (-1, 0),
            Direction::NW => (-1, -1),
        }
    }

    /// Rotates by `eighths` * 45 degrees clockwise.
    pub fn rotate(self, eighths: i32) -> Direction {
        Direction::ALL[(self.index() as i32 + eighths).rem_euclid(8) as usize]
    }

    /// Nearest compass sector for a displacement (x right, y down).
    pub fn from_vector(dx: f64, dy: f64) -> Direction {
        // angle measured clockwise from north
        let angle = dx.atan2(-dy).to_degrees().rem_euclid(360.0);
        Direction::ALL[(((angle + 22.5) / 45.0).floor() as usize) % 8]
    }
}

/// Ground-truth attributes of one shapes video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub motion: Motion,
    pub direction: Direction,
}

impl ShapeSpec {
    pub const COUNT: usize = 3 * 4 * 2 * 2 * 8;

    /// Position of this spec in [`enumerate_specs`].
    pub fn ordinal(&self) -> usize {
        (((self.shape.index() * 4 + self.color.index()) * 2 + self.size.index()) * 2
            + self.motion.index())
            * 8
            + self.direction.index()
    }

    pub fn from_ordinal(i: usize) -> ShapeSpec {
        assert!(i < Self::COUNT, "spec ordinal {i} out of range");
        ShapeSpec {
            shape: Shape::ALL[i / 128],
            color: Color::ALL[(i / 32) % 4],
            size: Size::ALL[(i / 16) % 2],
            motion: Motion::ALL[(i / 8) % 2],
            direction: Direction::ALL[i % 8],
        }
    }
}

impl fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.size, self.color, self.shape, self.motion, self.direction
        )
    }
}

/// All specs of the world in lexicographic order.
pub fn enumerate_specs() -> Vec<ShapeSpec> {
    let mut out = Vec::with_capacity(ShapeSpec::COUNT);
    for &shape in Shape::ALL {
        for &color in Color::ALL {
            for &size in Size::ALL {
                for &motion in Motion::ALL {
                    for &direction in Direction::ALL {
                        out.push(ShapeSpec {
                            shape,
                            color,
                            size,
                            motion,
                            direction,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn enumeration_is_ordered_and_complete() {
        let specs = enumerate_specs();
        assert_eq!(specs.len(), 384);
        assert_eq!(
            specs[0],
            ShapeSpec {
                shape: Shape::Square,
                color: Color::Red,
                size: Size::Small,
                motion: Motion::Straight,
                direction: Direction::N,
            }
        );
        assert!(specs.windows(2).all(|w| w[0] < w[1]));
        let unique: HashSet<_> = specs.iter().collect();
        assert_eq!(unique.len(), 384);
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.ordinal(), i);
            assert_eq!(ShapeSpec::from_ordinal(i), *s);
        }
    }

    #[test]
    fn direction_sectors() {
        for &d in Direction::ALL {
            let (x, y) = d.step();
            assert_eq!(Direction::from_vector(x as f64, y as f64), d);
            assert_eq!(d.rotate(8), d);
        }
        assert_eq!(Direction::N.rotate(-1), Direction::NW);
        assert_eq!(Direction::from_vector(3.0, -4.0), Direction::NE);
    }
}
