use std::path::Path;

use super::MaskPredictRun;
use crate::clip::write_png;
use crate::codebook::{Codebook, TokenGrid};
use crate::error::Result;

/// Writes one PNG per iteration: the decoded frames side by side, with the
/// chosen beam's remasked patches darkened.
pub fn write_trace(run: &MaskPredictRun, codebook: &Codebook, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let g = &run.grid;
    let p = codebook.patch;
    for step in &run.trace {
        let grid = TokenGrid::new(g.frames, g.height, g.width, step.tokens.clone())?;
        let clip = codebook.decode(&grid)?;
        let (h, w) = (clip.height, clip.width);
        let mask = &step.beam_masks[step.chosen];
        let mut img = vec![0u8; h * w * g.frames * 3];
        let row_len = w * g.frames * 3;
        for t in 0..g.frames {
            for y in 0..h {
                for x in 0..w {
                    let idx = t * g.height * g.width + (y / p) * g.width + x / p;
                    let rgb = clip.pixel(t, y, x);
                    let dim = !mask[idx];
                    let o = y * row_len + (t * w + x) * 3;
                    for c in 0..3 {
                        img[o + c] = if dim { rgb[c] / 3 } else { rgb[c] };
                    }
                }
            }
        }
        write_png(&dir.join(format!("iter_{:03}.png", step.iteration)), &img, w * g.frames, h)?;
    }
    Ok(())
}
