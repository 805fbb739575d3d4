//! Patch codebook: the first-stage tokenizer. Clips map to integer token grids
//! through nearest-centroid lookup over `p × p` RGB patches, and back through
//! centroid tiling.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::rng::{self, stream};

const CODEBOOK_MAGIC: &[u8; 4] = b"MVCB";
const GRID_MAGIC: &[u8; 4] = b"MVTG";
pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub patch: usize,
    pub channels: usize,
    /// `k × patch·patch·channels` centroids, row-major.
    pub entries: Vec<f32>,
}

/// `frames × height × width` token indices, frame-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop once the largest centroid shift, relative to the centroid norm,
    /// falls below this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iters: 50,
            tolerance: 1e-4,
        }
    }
}

impl TokenGrid {
    pub fn new(frames: usize, height: usize, width: usize, tokens: Vec<u16>) -> Result<Self> {
        if tokens.len() != frames * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} tokens for a {frames}x{height}x{width} grid",
                tokens.len()
            )));
        }
        Ok(TokenGrid {
            frames,
            height,
            width,
            tokens,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, token: u16) -> Self {
        TokenGrid {
            frames,
            height,
            width,
            tokens: vec![token; frames * height * width],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[u16] {
        let n = self.frame_len();
        &self.tokens[t * n..(t + 1) * n]
    }

    /// Frames `range` as a new grid.
    pub fn frames_slice(&self, range: std::ops::Range<usize>) -> TokenGrid {
        let n = self.frame_len();
        TokenGrid {
            frames: range.len(),
            height: self.height,
            width: self.width,
            tokens: self.tokens[range.start * n..range.end * n].to_vec(),
        }
    }

    /// Appends the frames of `other`, which must share the frame geometry.
    pub fn append(&mut self, other: &TokenGrid) -> Result<()> {
        if (other.height, other.width) != (self.height, self.width) {
            return Err(Error::ShapeMismatch("frame geometry differs".into()));
        }
        self.tokens.extend_from_slice(&other.tokens);
        self.frames += other.frames;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + 2 * self.tokens.len());
        buf.extend_from_slice(GRID_MAGIC);
        for v in [FORMAT_VERSION, self.frames as u32, self.height as u32, self.width as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for t in &self.tokens {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = bytes.as_slice();
        check_magic(&mut r, GRID_MAGIC, path)?;
        let [frames, height, width] = [0; 3].map(|_| read_u32(&mut r).unwrap_or(0) as usize);
        if r.len() != 2 * frames * height * width {
            return Err(Error::format(path, "token payload length mismatch"));
        }
        let tokens = r
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        TokenGrid::new(frames, height, width, tokens)
    }
}

/// Row-major frame-by-frame sequence of the grid's tokens.
pub fn flatten(grid: &TokenGrid) -> Vec<u16> {
    grid.tokens.clone()
}

pub fn unflatten(tokens: &[u16], frames: usize, height: usize, width: usize) -> Result<TokenGrid> {
    TokenGrid::new(frames, height, width, tokens.to_vec())
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.entries.len() / self.dim()
    }

    pub fn dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn entry(&self, j: usize) -> &[f32] {
        let d = self.dim();
        &self.entries[j * d..(j + 1) * d]
    }

    fn check_clip(&self, clip: &VideoClip) -> Result<()> {
        if clip.height % self.patch != 0 || clip.width % self.patch != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} frames are not divisible into {}-pixel patches",
                clip.height, clip.width, self.patch
            )));
        }
        Ok(())
    }

    /// Index of the nearest centroid by squared error, lowest index on ties.
    pub fn nearest(&self, patch: &[f32]) -> usize {
        let mut best = (f32::INFINITY, 0);
        for j in 0..self.k() {
            let d: f32 = self
                .entry(j)
                .iter()
                .zip(patch)
                .map(|(c, x)| (c - x) * (c - x))
                .sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    }

    pub fn encode(&self, clip: &VideoClip) -> Result<TokenGrid> {
        self.check_clip(clip)?;
        let (h, w) = (clip.height / self.patch, clip.width / self.patch);
        let mut tokens = Vec::with_capacity(clip.frames * h * w);
        let mut buf = vec![0f32; self.dim()];
        for t in 0..clip.frames {
            for py in 0..h {
                for px in 0..w {
                    extract_patch(clip, t, py, px, self.patch, |i, v| buf[i] = v as f32);
                    tokens.push(self.nearest(&buf) as u16);
                }
            }
        }
        TokenGrid::new(clip.frames, h, w, tokens)
    }

    pub fn decode(&self, grid: &TokenGrid) -> Result<VideoClip> {
        let k = self.k();
        if let Some(&bad) = grid.tokens.iter().find(|&&t| t as usize >= k) {
            return Err(Error::TokenOutOfRange {
                token: bad as u32,
                size: k,
            });
        }
        let p = self.patch;
        let mut clip = VideoClip::new(grid.frames, grid.height * p, grid.width * p);
        for t in 0..grid.frames {
            for py in 0..grid.height {
                for px in 0..grid.width {
                    let e = self.entry(grid.tokens[(t * grid.height + py) * grid.width + px] as usize);
                    for j in 0..p {
                        for i in 0..p {
                            let o = (j * p + i) * 3;
                            let rgb = [0, 1, 2].map(|c| e[o + c].round().clamp(0.0, 255.0) as u8);
                            clip.set_pixel(t, py * p + j, px * p + i, rgb);
                        }
                    }
                }
            }
        }
        Ok(clip)
    }

    /// Peak signal-to-noise ratio (dB) of encode→decode over `clips`;
    /// infinite when the round trip is exact.
    pub fn reconstruction_psnr(&self, clips: &[VideoClip]) -> Result<f64> {
        let (mut se, mut n) = (0.0f64, 0usize);
        for clip in clips {
            let back = self.decode(&self.encode(clip)?)?;
            for (&a, &b) in clip.data.iter().zip(&back.data) {
                se += (a as f64 - b as f64).powi(2);
            }
            n += clip.data.len();
        }
        if n == 0 {
            return Err(Error::Empty("psnr clips"));
        }
        let mse = se / n as f64;
        Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64 * 255.0 / mse).log10() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + 4 * self.entries.len());
        buf.extend_from_slice(CODEBOOK_MAGIC);
        for v in [FORMAT_VERSION, self.k() as u32, self.patch as u32, self.channels as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for e in &self.entries {
            buf.extend_from_slice(&e.to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = bytes.as_slice();
        check_magic(&mut r, CODEBOOK_MAGIC, path)?;
        let [k, patch, channels] = [0; 3].map(|_| read_u32(&mut r).unwrap_or(0) as usize);
        if k == 0 || patch == 0 || channels == 0 || r.len() != 4 * k * patch * patch * channels {
            return Err(Error::format(path, "codebook payload length mismatch"));
        }
        let entries = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Codebook {
            patch,
            channels,
            entries,
        })
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

pub(crate) fn check_magic(r: &mut &[u8], magic: &[u8; 4], path: &Path) -> Result<()> {
    if r.len() < 8 || &r[..4] != magic {
        return Err(Error::format(path, "bad magic"));
    }
    *r = &r[4..];
    match read_u32(r) {
        Some(FORMAT_VERSION) => Ok(()),
        v => Err(Error::format(path, format!("unsupported version {v:?}"))),
    }
}

pub(crate) fn read_u32(r: &mut &[u8]) -> Option<u32> {
    if r.len() < 4 {
        return None;
    }
    let v = u32::from_le_bytes([r[0], r[1], r[2], r[3]]);
    *r = &r[4..];
    Some(v)
}

fn extract_patch(
    clip: &VideoClip,
    t: usize,
    py: usize,
    px: usize,
    p: usize,
    mut put: impl FnMut(usize, u8),
) {
    for j in 0..p {
        for i in 0..p {
            let rgb = clip.pixel(t, py * p + j, px * p + i);
            for c in 0..3 {
                put((j * p + i) * 3 + c, rgb[c]);
            }
        }
    }
}

/// Weighted k-means over the distinct `p × p` patches of all frames.
///
/// Initialization is k-means++ drawn from `seed`; iteration stops at the cap
/// or once centroids settle. When fewer than `k` distinct patches exist the
/// surplus entries are parked far outside the pixel range so the codebook
/// stays free of duplicates.
pub fn fit_codebook(
    clips: &[VideoClip],
    k: usize,
    patch: usize,
    seed: u64,
    cfg: KMeansConfig,
) -> Result<Codebook> {
    if clips.is_empty() {
        return Err(Error::Empty("fit_codebook needs at least one clip"));
    }
    if k == 0 || k > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("codebook size {k} out of range")));
    }
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let dim = patch * patch * 3;
    let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
    for clip in clips {
        if clip.height % patch != 0 || clip.width % patch != 0 {
            return Err(Error::ShapeMismatch(format!(
                "patch {patch} does not divide {}x{}",
                clip.height, clip.width
            )));
        }
        let mut buf = vec![0u8; dim];
        for t in 0..clip.frames {
            for py in 0..clip.height / patch {
                for px in 0..clip.width / patch {
                    extract_patch(clip, t, py, px, patch, |i, v| buf[i] = v);
                    *counts.entry(buf.clone()).or_insert(0) += 1;
                }
            }
        }
    }
    let mut unique: Vec<(Vec<u8>, u64)> = counts.into_iter().collect();
    unique.sort_unstable();
    let n = unique.len();
    let points: Vec<f32> = unique.iter().flat_map(|(p, _)| p.iter().map(|&v| v as f32)).collect();
    let weights: Vec<f64> = unique.iter().map(|(_, c)| *c as f64).collect();

    let mut entries = vec![0f32; k * dim];
    let live = k.min(n);
    let mut rng = rng::rng(seed, &[stream::KMEANS]);

    // k-means++ seeding
    let mut d2 = vec![f64::INFINITY; n];
    let mut chosen = Vec::with_capacity(live);
    for c in 0..live {
        let scores: Vec<f64> = if c == 0 {
            weights.clone()
        } else {
            weights.iter().zip(&d2).map(|(w, d)| w * d).collect()
        };
        let total: f64 = scores.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, s) in scores.iter().enumerate() {
                if u < *s {
                    pick = i;
                    break;
                }
                u -= s;
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        entries[c * dim..(c + 1) * dim].copy_from_slice(&points[pick * dim..(pick + 1) * dim]);
        let centroid = &points[pick * dim..(pick + 1) * dim];
        for i in 0..n {
            let d = sq_dist(&points[i * dim..(i + 1) * dim], centroid) as f64;
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assign = vec![0usize; n];
    let mut dist = vec![0f32; n];
    for _ in 0..cfg.max_iters {
        assign_nearest(&points, &entries[..live * dim], dim, &mut assign, &mut dist);
        let mut sums = vec![0f64; live * dim];
        let mut mass = vec![0f64; live];
        for i in 0..n {
            let a = assign[i];
            mass[a] += weights[i];
            for d in 0..dim {
                sums[a * dim + d] += weights[i] * points[i * dim + d] as f64;
            }
        }
        // empty clusters take the worst-served point
        for c in 0..live {
            if mass[c] == 0.0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        (weights[a] * dist[a] as f64)
                            .total_cmp(&(weights[b] * dist[b] as f64))
                            .then(b.cmp(&a))
                    })
                    .unwrap_or(0);
                mass[c] = 1.0;
                for d in 0..dim {
                    sums[c * dim + d] = points[far * dim + d] as f64;
                }
                dist[far] = 0.0;
            }
        }
        let mut max_shift = 0f64;
        for c in 0..live {
            let mut shift = 0f64;
            let mut norm = 0f64;
            for d in 0..dim {
                let new = sums[c * dim + d] / mass[c];
                let old = entries[c * dim + d] as f64;
                shift += (new - old).powi(2);
                norm += new * new;
                entries[c * dim + d] = new as f32;
            }
            max_shift = max_shift.max(shift.sqrt() / norm.sqrt().max(1.0));
        }
        if max_shift < cfg.tolerance {
            break;
        }
    }
    for c in live..k {
        for d in 0..dim {
            entries[c * dim + d] = -1000.0 - (c - live) as f32;
        }
    }
    Ok(Codebook {
        patch,
        channels: 3,
        entries,
    })
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Blocked nearest-centroid search through `|x|² - 2 x·c + |c|²`.
fn assign_nearest(points: &[f32], centroids: &[f32], dim: usize, assign: &mut [usize], dist: &mut [f32]) {
    let n = points.len() / dim;
    let k = centroids.len() / dim;
    let cnorm: Vec<f32> = centroids.chunks(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
    const BLOCK: usize = 4096;
    let mut dots = vec![0f32; BLOCK * k];
    for start in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - start);
        let block = &points[start * dim..(start + rows) * dim];
        // dots = block · centroidsᵀ
        unsafe {
            matrixmultiply::sgemm(
                rows, dim, k, 1.0,
                block.as_ptr(), dim as isize, 1,
                centroids.as_ptr(), 1, dim as isize,
                0.0, dots.as_mut_ptr(), k as isize, 1,
            );
        }
        for r in 0..rows {
            let x = &block[r * dim..(r + 1) * dim];
            let xnorm: f32 = x.iter().map(|v| v * v).sum();
            let mut best = (f32::INFINITY, 0);
            for c in 0..k {
                let d = xnorm - 2.0 * dots[r * k + c] + cnorm[c];
                if d < best.0 {
                    best = (d, c);
                }
            }
            assign[start + r] = best.1;
            dist[start + r] = best.0.max(0.0);
        }
    }
}
