use serde::{Deserialize, Serialize};

use super::render::{nearest_color, ShapeRaster};
#[cfg(test)]
use super::render::{PALETTE, TEXTURE};
use super::{Color, Direction, Motion, Shape, ShapeSpec, Size, World};
use crate::clip::VideoClip;

/// Smallest connected object footprint the oracle accepts in a frame.
const MIN_AREA: usize = 9;
/// Net displacement below this many pixels has no direction.
const MIN_DISPLACEMENT: f64 = 1.0;

/// Attributes recovered from pixels. `None` marks an unrecognizable attribute.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Verdict {
    pub shape: Option<Shape>,
    pub color: Option<Color>,
    pub size: Option<Size>,
    pub motion: Option<Motion>,
    pub direction: Option<Direction>,
    /// Per-attribute confidence in [0, 1], in field order.
    pub confidence: [f64; 5],
}

impl Verdict {
    pub fn spec(&self) -> Option<ShapeSpec> {
        Some(ShapeSpec {
            shape: self.shape?,
            color: self.color?,
            size: self.size?,
            motion: self.motion?,
            direction: self.direction?,
        })
    }

    /// Per-attribute hit flags against a reference; unrecognizable is a miss.
    pub fn matches(&self, spec: &ShapeSpec) -> [bool; 5] {
        [
            self.shape == Some(spec.shape),
            self.color == Some(spec.color),
            self.size == Some(spec.size),
            self.motion == Some(spec.motion),
            self.direction == Some(spec.direction),
        ]
    }

    /// "size color shape, motion, direction" with `?` for unrecognizable.
    pub fn describe(&self) -> String {
        fn w<T: std::fmt::Display>(v: Option<T>) -> String {
            v.map_or_else(|| "?".to_string(), |v| v.to_string())
        }
        format!(
            "{} {} {}, {}, {}",
            w(self.size),
            w(self.color),
            w(self.shape),
            w(self.motion),
            w(self.direction)
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct FrameObject {
    t: usize,
    area: usize,
    centroid: (f64, f64),
    features: [f64; 2],
}

/// Thresholds and prototypes derived from the renderer's own geometry.
struct Reference {
    size_threshold: f64,
    size_margin: f64,
    prototypes: Vec<(Shape, [f64; 2])>,
    motion_threshold: f64,
}

impl Reference {
    fn new(world: &World) -> Self {
        let areas = |size| {
            Shape::ALL
                .iter()
                .map(move |&s| ShapeRaster::new(s, world.side(size)).area() as f64)
        };
        let small_max = areas(Size::Small).fold(0.0, f64::max);
        let large_min = areas(Size::Large).fold(f64::INFINITY, f64::min);
        let mut prototypes = Vec::new();
        for &shape in Shape::ALL {
            for &size in Size::ALL {
                let r = ShapeRaster::new(shape, world.side(size));
                let side = r.side;
                let pixels: Vec<(usize, usize)> = (0..side * side)
                    .filter(|&i| r.mask[i])
                    .map(|i| (i % side, i / side))
                    .collect();
                prototypes.push((shape, shape_features(&pixels)));
            }
        }
        let frames = world.config.frames.max(3);
        let zig = Direction::ALL
            .iter()
            .map(|&d| {
                let traj = world.trajectory(Motion::Zigzag, d, frames);
                let pts: Vec<(usize, (f64, f64))> = traj
                    .iter()
                    .enumerate()
                    .map(|(t, p)| (t, (p.0 as f64, p.1 as f64)))
                    .collect();
                line_fit(&pts).2
            })
            .fold(f64::INFINITY, f64::min);
        Reference {
            size_threshold: (small_max + large_min) / 2.0,
            size_margin: (large_min - small_max) / 2.0,
            prototypes,
            motion_threshold: zig / 2.0,
        }
    }
}

/// (fill ratio of the bounding box, top-half / bottom-half area ratio).
fn shape_features(pixels: &[(usize, usize)]) -> [f64; 2] {
    let (x0, x1) = minmax(pixels.iter().map(|p| p.0));
    let (y0, y1) = minmax(pixels.iter().map(|p| p.1));
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let fill = pixels.len() as f64 / (bw * bh) as f64;
    let half = bh / 2;
    let top = pixels.iter().filter(|p| p.1 - y0 < half).count() as f64;
    let bottom = pixels.iter().filter(|p| p.1 - y0 >= bh - half).count() as f64;
    let asym = if bottom > 0.0 { (top / bottom).min(2.0) } else { 2.0 };
    [fill, asym]
}

fn minmax(it: impl Iterator<Item = usize>) -> (usize, usize) {
    it.fold((usize::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Least-squares `c(t) = a + v t`; returns (a, v, rms residual perpendicular to v).
fn line_fit(pts: &[(usize, (f64, f64))]) -> ((f64, f64), (f64, f64), f64) {
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let xm = pts.iter().map(|p| p.1 .0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1 .1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 as f64 - tm).powi(2)).sum();
    let (mut vx, mut vy) = (0.0, 0.0);
    if stt > 0.0 {
        vx = pts.iter().map(|p| (p.0 as f64 - tm) * (p.1 .0 - xm)).sum::<f64>() / stt;
        vy = pts.iter().map(|p| (p.0 as f64 - tm) * (p.1 .1 - ym)).sum::<f64>() / stt;
    }
    let speed = (vx * vx + vy * vy).sqrt();
    let ms: f64 = pts
        .iter()
        .map(|p| {
            let dt = p.0 as f64 - tm;
            let (rx, ry) = (p.1 .0 - xm - vx * dt, p.1 .1 - ym - vy * dt);
            if speed > 1e-9 {
                let r = (rx * -vy + ry * vx) / speed;
                r * r
            } else {
                rx * rx + ry * ry
            }
        })
        .sum::<f64>()
        / n;
    ((xm - vx * tm, ym - vy * tm), (vx, vy), ms.sqrt())
}

fn largest_component(mask: &[bool], w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut seen = vec![false; mask.len()];
    let mut best = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Recovers the five attributes of a clip rendered at the world's resolution.
///
/// Color is the palette color with the most nearest-match pixels; the object
/// in each frame is the largest 4-connected region of that color. Size
/// thresholds the median area, shape picks the nearest rendered prototype in
/// (fill ratio, vertical asymmetry), and motion and direction come from a
/// straight-line fit to the per-frame centroids.
pub fn oracle_classify(world: &World, clip: &VideoClip) -> Verdict {
    let reference = Reference::new(world);
    let (w, h) = (clip.width, clip.height);
    let labels: Vec<usize> = clip
        .data
        .chunks(3)
        .map(|p| nearest_color([p[0], p[1], p[2]]))
        .collect();

    let mut counts = [0usize; 4];
    for &l in &labels {
        if l < 4 {
            counts[l] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let (color_idx, &color_count) = counts
        .iter()
        .enumerate()
        .max_by_key(|(i, &c)| (c, std::cmp::Reverse(*i)))
        .unwrap();
    let mut verdict = Verdict::default();
    if color_count < MIN_AREA {
        return verdict;
    }
    verdict.color = Some(Color::ALL[color_idx]);
    verdict.confidence[1] = color_count as f64 / total as f64;

    let objects: Vec<FrameObject> = (0..clip.frames)
        .filter_map(|t| {
            let frame = &labels[t * w * h..(t + 1) * w * h];
            let mask: Vec<bool> = frame.iter().map(|&l| l == color_idx).collect();
            let comp = largest_component(&mask, w, h);
            if comp.len() < MIN_AREA {
                return None;
            }
            let n = comp.len() as f64;
            let cx = comp.iter().map(|p| p.0 as f64 + 0.5).sum::<f64>() / n;
            let cy = comp.iter().map(|p| p.1 as f64 + 0.5).sum::<f64>() / n;
            Some(FrameObject {
                t,
                area: comp.len(),
                centroid: (cx, cy),
                features: shape_features(&comp),
            })
        })
        .collect();
    if objects.is_empty() {
        return verdict;
    }

    let area = median(objects.iter().map(|o| o.area as f64).collect());
    verdict.size = Some(if area > reference.size_threshold {
        Size::Large
    } else {
        Size::Small
    });
    verdict.confidence[2] =
        ((area - reference.size_threshold).abs() / reference.size_margin).min(1.0);

    let feat = [
        median(objects.iter().map(|o| o.features[0]).collect()),
        median(objects.iter().map(|o| o.features[1]).collect()),
    ];
    let mut dists: Vec<(f64, Shape)> = reference
        .prototypes
        .iter()
        .map(|(s, p)| (((feat[0] - p[0]).powi(2) + (feat[1] - p[1]).powi(2)).sqrt(), *s))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0));
    verdict.shape = Some(dists[0].1);
    let runner_up = dists
        .iter()
        .find(|d| d.1 != dists[0].1)
        .map_or(f64::INFINITY, |d| d.0);
    verdict.confidence[0] = if runner_up.is_finite() && runner_up > 0.0 {
        1.0 - dists[0].0 / runner_up
    } else {
        1.0
    };

    if objects.len() < 2 {
        return verdict;
    }
    let pts: Vec<(usize, (f64, f64))> = objects.iter().map(|o| (o.t, o.centroid)).collect();
    let (_, v, rms) = line_fit(&pts);
    let span = (objects.last().unwrap().t - objects[0].t) as f64;
    let displacement = (v.0 * v.0 + v.1 * v.1).sqrt() * span;
    let thr = reference.motion_threshold;
    verdict.motion = Some(if rms > thr {
        Motion::Zigzag
    } else {
        Motion::Straight
    });
    verdict.confidence[3] = ((rms - thr).abs() / thr).min(1.0);
    if displacement >= MIN_DISPLACEMENT {
        let d = Direction::from_vector(v.0, v.1);
        verdict.direction = Some(d);
        // angular distance to the sector edge, normalized
        let angle = v.0.atan2(-v.1).to_degrees().rem_euclid(360.0);
        let off = (angle - d.index() as f64 * 45.0 + 180.0).rem_euclid(360.0) - 180.0;
        verdict.confidence[4] = 1.0 - off.abs() / 22.5;
    }
    verdict
}
