use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Direction, Motion, Shape, ShapeSpec, Size};
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Object colors, indexed by [`super::Color`].
pub const PALETTE: [[u8; 3]; 4] = [[220, 50, 47], [60, 190, 75], [45, 95, 225], [235, 205, 50]];

/// Background texture levels. Muted so they never compete with the palette.
pub const TEXTURE: [[u8; 3]; 4] = [[34, 38, 46], [64, 66, 72], [94, 92, 96], [124, 118, 112]];

/// Index into `PALETTE ++ TEXTURE` of the color nearest to `rgb`.
pub(crate) fn nearest_color(rgb: [u8; 3]) -> usize {
    let dist = |c: &[u8; 3]| -> i32 { (0..3).map(|k| (rgb[k] as i32 - c[k] as i32).pow(2)).sum() };
    PALETTE
        .iter()
        .chain(TEXTURE.iter())
        .enumerate()
        .min_by_key(|(_, c)| dist(c))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// How an object trajectory that does not fit inside the frame is folded back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    Bounce,
    Wrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Side of the object's bounding box, in pixels.
    pub small_size: usize,
    pub large_size: usize,
    /// Pixels per frame along each moving axis.
    pub speed: usize,
    /// Lattice spacing of the value-noise background.
    pub texture_cell: usize,
    /// Background drift, pixels per frame.
    pub drift: usize,
    pub edge: EdgeMode,
    pub fps: u16,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            height: 32,
            width: 32,
            frames: 8,
            small_size: 8,
            large_size: 14,
            speed: 2,
            texture_cell: 8,
            drift: 1,
            edge: EdgeMode::Bounce,
            fps: 8,
        }
    }
}

/// Boolean `side × side` footprint of a shape, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRaster {
    pub side: usize,
    pub mask: Vec<bool>,
}

impl ShapeRaster {
    pub fn new(shape: Shape, side: usize) -> Self {
        let s = side as f64;
        let half = s / 2.0;
        let mut mask = vec![false; side * side];
        for j in 0..side {
            for i in 0..side {
                let (cx, cy) = (i as f64 + 0.5, j as f64 + 0.5);
                mask[j * side + i] = match shape {
                    Shape::Square => true,
                    Shape::Circle => (cx - half).powi(2) + (cy - half).powi(2) <= half * half,
                    // apex up, base on the bottom row
                    Shape::Triangle => (cx - half).abs() <= (j as f64 + 1.0) / 2.0,
                };
            }
        }
        ShapeRaster { side, mask }
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Procedural renderer for the shapes world.
#[derive(Debug, Clone, Default)]
pub struct World {
    pub config: WorldConfig,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let c = &config;
        if c.height == 0 || c.width == 0 || c.frames == 0 {
            return Err(Error::InvalidArgument("world dimensions must be positive".into()));
        }
        if c.small_size < 3 || c.large_size <= c.small_size {
            return Err(Error::InvalidArgument(
                "need 3 <= small_size < large_size".into(),
            ));
        }
        if c.large_size > c.height.min(c.width) || c.texture_cell == 0 {
            return Err(Error::InvalidArgument("object larger than frame".into()));
        }
        Ok(World { config })
    }

    pub fn side(&self, size: Size) -> usize {
        match size {
            Size::Small => self.config.small_size,
            Size::Large => self.config.large_size,
        }
    }

    /// Per-frame offsets of the object relative to its first position.
    pub fn trajectory(&self, motion: Motion, direction: Direction, frames: usize) -> Vec<(i32, i32)> {
        let speed = self.config.speed as i32;
        let mut pos = (0, 0);
        let mut out = vec![pos];
        for t in 1..frames {
            let heading = match motion {
                Motion::Straight => direction,
                // +45 deg for two frames, -45 deg for the next two, ...
                Motion::Zigzag => {
                    if ((t - 1) / 2) % 2 == 0 {
                        direction.rotate(1)
                    } else {
                        direction.rotate(-1)
                    }
                }
            };
            let (dx, dy) = heading.step();
            pos = (pos.0 + dx * speed, pos.1 + dy * speed);
            out.push(pos);
        }
        out
    }

    /// Renders one clip. Pure in `(spec, frames, seed)`.
    pub fn generate_clip(&self, spec: &ShapeSpec, frames: usize, seed: u64) -> Result<VideoClip> {
        if frames == 0 {
            return Err(Error::InvalidArgument("clip needs at least one frame".into()));
        }
        let cfg = &self.config;
        let mut rng = rng::rng(seed, &[stream::CLIP, spec.ordinal() as u64]);
        let side = self.side(spec.size);
        let raster = ShapeRaster::new(spec.shape, side);
        let traj = self.trajectory(spec.motion, spec.direction, frames);

        let x_pos = place_axis(&mut rng, traj.iter().map(|p| p.0), cfg.width, side, cfg.edge);
        let y_pos = place_axis(&mut rng, traj.iter().map(|p| p.1), cfg.height, side, cfg.edge);

        let drift = Direction::ALL[rng.gen_range(0..8)].step();
        let bg = ValueNoise {
            seed: rng.gen(),
            cell: cfg.texture_cell as i64,
        };

        let mut clip = VideoClip::new(frames, cfg.height, cfg.width);
        clip.fps = cfg.fps;
        let color = PALETTE[spec.color.index()];
        for t in 0..frames {
            let shift = (t * cfg.drift) as i64;
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let wx = x as i64 + drift.0 as i64 * shift;
                    let wy = y as i64 + drift.1 as i64 * shift;
                    clip.set_pixel(t, y, x, TEXTURE[bg.level(wx, wy)]);
                }
            }
            for j in 0..side {
                for i in 0..side {
                    if !raster.mask[j * side + i] {
                        continue;
                    }
                    let px = (x_pos[t] + i as i32).rem_euclid(cfg.width as i32) as usize;
                    let py = (y_pos[t] + j as i32).rem_euclid(cfg.height as i32) as usize;
                    clip.set_pixel(t, py, px, color);
                }
            }
        }
        Ok(clip)
    }
}

/// Chooses absolute positions along one axis for a list of relative offsets.
/// When the whole path fits, the start is drawn uniformly (on even pixels
/// when possible); otherwise the path is folded back per `edge`.
fn place_axis(
    rng: &mut rng::Rng,
    offsets: impl Iterator<Item = i32> + Clone,
    extent: usize,
    side: usize,
    edge: EdgeMode,
) -> Vec<i32> {
    let lo = offsets.clone().min().unwrap_or(0);
    let hi = offsets.clone().max().unwrap_or(0);
    let room = extent as i32 - side as i32;
    let (first, last) = (-lo, room - hi);
    if first <= last {
        let evens: Vec<i32> = (first..=last).filter(|v| v % 2 == 0).collect();
        let start = if evens.is_empty() {
            rng.gen_range(first..=last)
        } else {
            evens[rng.gen_range(0..evens.len())]
        };
        return offsets.map(|o| start + o).collect();
    }
    let start = room / 2;
    offsets
        .map(|o| {
            let p = start + o;
            match edge {
                EdgeMode::Wrap => p.rem_euclid(extent as i32),
                EdgeMode::Bounce => {
                    if room == 0 {
                        return 0;
                    }
                    let period = 2 * room;
                    let r = p.rem_euclid(period);
                    if r <= room {
                        r
                    } else {
                        period - r
                    }
                }
            }
        })
        .collect()
}

/// Lattice value noise with smoothstep interpolation, quantized to the
/// four texture levels.
struct ValueNoise {
    seed: u64,
    cell: i64,
}

impl ValueNoise {
    fn lattice(&self, ix: i64, iy: i64) -> f64 {
        let h = rng::derive(self.seed, &[ix as u64, iy as u64]);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn value(&self, x: i64, y: i64) -> f64 {
        let (cx, cy) = (x.div_euclid(self.cell), y.div_euclid(self.cell));
        let fx = (x.rem_euclid(self.cell) as f64 + 0.5) / self.cell as f64;
        let fy = (y.rem_euclid(self.cell) as f64 + 0.5) / self.cell as f64;
        let smooth = |f: f64| f * f * (3.0 - 2.0 * f);
        let (sx, sy) = (smooth(fx), smooth(fy));
        let top = self.lattice(cx, cy) * (1.0 - sx) + self.lattice(cx + 1, cy) * sx;
        let bottom = self.lattice(cx, cy + 1) * (1.0 - sx) + self.lattice(cx + 1, cy + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }

    fn level(&self, x: i64, y: i64) -> usize {
        const CUTS: [f64; 3] = [0.38, 0.5, 0.62];
        let v = self.value(x, y);
        CUTS.iter().filter(|&&c| v >= c).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{enumerate_specs, Color};

    fn object_pixels(clip: &VideoClip, t: usize, color: Color) -> Vec<(usize, usize)> {
        let rgb = PALETTE[color.index()];
        let mut out = Vec::new();
        for y in 0..clip.height {
            for x in 0..clip.width {
                if clip.pixel(t, y, x) == rgb {
                    out.push((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        let world = World::default();
        let spec = enumerate_specs()[77];
        let a = world.generate_clip(&spec, 8, 1).unwrap();
        let b = world.generate_clip(&spec, 8, 1).unwrap();
        assert_eq!(a, b);
        let c = world.generate_clip(&spec, 8, 2).unwrap();
        assert_ne!(a, c);
        assert!(world.generate_clip(&spec, 0, 1).is_err());
    }

    #[test]
    fn eastward_centroid_strictly_increases() {
        let world = World::default();
        for spec in enumerate_specs()
            .into_iter()
            .filter(|s| s.direction == Direction::E)
        {
            let clip = world.generate_clip(&spec, 8, 3).unwrap();
            let xs: Vec<f64> = (0..8)
                .map(|t| {
                    let px = object_pixels(&clip, t, spec.color);
                    px.iter().map(|p| p.0 as f64).sum::<f64>() / px.len() as f64
                })
                .collect();
            assert!(xs.windows(2).all(|w| w[1] > w[0]), "{spec}: {xs:?}");
        }
    }

    #[test]
    fn large_objects_cover_more_pixels_than_small() {
        let world = World::default();
        for spec in enumerate_specs()
            .into_iter()
            .filter(|s| s.size == Size::Small)
        {
            let large = ShapeSpec {
                size: Size::Large,
                ..spec
            };
            let a = world.generate_clip(&spec, 8, 5).unwrap();
            let b = world.generate_clip(&large, 8, 5).unwrap();
            for t in 0..8 {
                let small_n = object_pixels(&a, t, spec.color).len();
                assert!(small_n >= 9);
                assert!(object_pixels(&b, t, spec.color).len() > small_n);
            }
        }
    }

    #[test]
    fn pixels_come_from_palette_or_texture() {
        let world = World::default();
        let spec = enumerate_specs()[200];
        let clip = world.generate_clip(&spec, 8, 9).unwrap();
        for px in clip.data.chunks(3) {
            let rgb = [px[0], px[1], px[2]];
            assert!(PALETTE.contains(&rgb) || TEXTURE.contains(&rgb));
        }
    }

    #[test]
    fn long_clips_stay_in_frame() {
        let world = World::default();
        let spec = enumerate_specs()[5];
        let clip = world.generate_clip(&spec, 40, 2).unwrap();
        for t in 0..40 {
            assert!(object_pixels(&clip, t, spec.color).len() >= 9);
        }
    }
}
