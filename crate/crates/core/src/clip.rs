//! Raw video clips and their on-disk forms (PNG frame directories, animated GIFs).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// `frames × height × width × 3` 8-bit RGB pixels, frame-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
    /// Playback rate; metadata only.
    pub fps: u16,
}

impl VideoClip {
    pub const CHANNELS: usize = 3;

    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        VideoClip {
            frames,
            height,
            width,
            data: vec![0; frames * height * width * 3],
            fps: 8,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [u8; 3] {
        let i = ((t * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, t: usize, y: usize, x: usize, rgb: [u8; 3]) {
        let i = ((t * self.height + y) * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Builds a clip from a list of frames, which must share a resolution.
    pub fn from_frames(frames: &[&[u8]], height: usize, width: usize) -> Result<Self> {
        let mut clip = VideoClip::new(frames.len(), height, width);
        for (t, f) in frames.iter().enumerate() {
            if f.len() != clip.frame_len() {
                return Err(Error::ShapeMismatch(format!(
                    "frame {t} has {} bytes, expected {}",
                    f.len(),
                    clip.frame_len()
                )));
            }
            clip.frame_mut(t).copy_from_slice(f);
        }
        Ok(clip)
    }

    pub fn write_png_frames(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for t in 0..self.frames {
            let path = dir.join(format!("frame_{t:03}.png"));
            write_png(&path, self.frame(t), self.width, self.height)?;
        }
        Ok(())
    }

    /// Reads `frame_000.png`, `frame_001.png`, ... until the first gap.
    pub fn read_png_frames(dir: &Path) -> Result<Self> {
        let mut frames = Vec::new();
        let mut dims = None;
        loop {
            let path = dir.join(format!("frame_{:03}.png", frames.len()));
            if !path.exists() {
                break;
            }
            let (data, w, h) = read_png(&path)?;
            match dims {
                None => dims = Some((w, h)),
                Some(d) if d != (w, h) => {
                    return Err(Error::format(&path, "frame resolution differs"));
                }
                _ => {}
            }
            frames.push(data);
        }
        let (w, h) = dims.ok_or_else(|| Error::MissingArtifact(dir.join("frame_000.png")))?;
        let refs: Vec<&[u8]> = frames.iter().map(|f| f.as_slice()).collect();
        VideoClip::from_frames(&refs, h, w)
    }

    /// Animated GIF, looping forever, upscaled by `scale` (nearest neighbour).
    pub fn write_gif(&self, path: &Path, scale: usize) -> Result<()> {
        let scale = scale.max(1);
        let (w, h) = (self.width * scale, self.height * scale);
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let gif_err = |e: gif::EncodingError| Error::format(path, e.to_string());
        let mut enc = gif::Encoder::new(BufWriter::new(file), w as u16, h as u16, &[])
            .map_err(gif_err)?;
        enc.set_repeat(gif::Repeat::Infinite).map_err(gif_err)?;
        let delay = (100 / self.fps.max(1)).max(1);
        for t in 0..self.frames {
            let src = self.frame(t);
            let mut rgb = vec![0u8; w * h * 3];
            for y in 0..h {
                for x in 0..w {
                    let s = ((y / scale) * self.width + x / scale) * 3;
                    rgb[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&src[s..s + 3]);
                }
            }
            let mut frame = gif::Frame::from_rgb_speed(w as u16, h as u16, &rgb, 10);
            frame.delay = delay;
            enc.write_frame(&frame).map_err(gif_err)?;
        }
        Ok(())
    }
}

pub fn write_png(path: &Path, rgb: &[u8], width: usize, height: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(rgb)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(())
}

/// Returns RGB bytes, width, height. Alpha is dropped, grayscale expanded.
pub fn read_png(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let mut rgb = Vec::with_capacity(w * h * 3);
    for px in buf[..info.buffer_size()].chunks(channels) {
        match channels {
            1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
            _ => rgb.extend_from_slice(&px[..3]),
        }
    }
    Ok((rgb, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut clip = VideoClip::new(3, 4, 5);
        for (i, v) in clip.data.iter_mut().enumerate() {
            *v = (i * 7 % 251) as u8;
        }
        clip.write_png_frames(dir.path()).unwrap();
        let back = VideoClip::read_png_frames(dir.path()).unwrap();
        assert_eq!(back.data, clip.data);
        clip.write_gif(&dir.path().join("a.gif"), 2).unwrap();
        assert!(dir.path().join("a.gif").exists());
    }
}
