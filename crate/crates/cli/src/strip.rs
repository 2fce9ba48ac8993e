use std::path::Path;

use crate::CliError;

/// 3×5 bitmap glyphs for the caption row (digits, dot, percent-free).
fn glyph(c: char) -> [u8; 15] {
    match c {
        '0' => [1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1],
        '1' => [0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1],
        '2' => [1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1],
        '3' => [1, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 1],
        '4' => [1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1],
        '5' => [1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1],
        '6' => [1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1],
        '7' => [1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0],
        '8' => [1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1],
        '9' => [1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1],
        '.' => [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
        _ => [0; 15],
    }
}

pub const CAPTION_HEIGHT: usize = 7;

/// One frame of a trajectory strip: the decoded image and the f₁ confidence
/// recorded at that iteration.
pub struct StripFrame {
    pub image: Vec<f32>,
    pub confidence: f64,
}

/// Rendered strip facts, for cross-checking captions against the trace.
#[allow(dead_code)] // width/height/captions are read by the test suite
pub struct StripInfo {
    pub width: u32,
    pub height: u32,
    /// Caption text per frame, exactly as drawn.
    pub captions: Vec<String>,
}

/// Horizontal grayscale strip: one frame per sampled iteration with its
/// f₁-confidence printed in a caption row under the pixels.
/// Width is frames × frame width; height is frame height + caption row.
pub fn emit_image_strip(
    frames: &[StripFrame],
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<StripInfo, CliError> {
    if frames.is_empty() {
        return Err(CliError::Runtime("image strip needs at least one frame".into()));
    }
    let width = cols * frames.len();
    let height = rows + CAPTION_HEIGHT;
    let mut canvas = vec![0u8; width * height];
    let mut captions = Vec::with_capacity(frames.len());

    for (fi, frame) in frames.iter().enumerate() {
        assert_eq!(frame.image.len(), rows * cols, "frame pixel count mismatch");
        let x0 = fi * cols;
        for r in 0..rows {
            for c in 0..cols {
                let v = (frame.image[r * cols + c].clamp(0.0, 1.0) * 255.0).round() as u8;
                canvas[r * width + x0 + c] = v;
            }
        }
        let caption = format!("{:.3}", frame.confidence);
        for (ci, ch) in caption.chars().enumerate() {
            let gx = x0 + 1 + ci * 4;
            if gx + 3 > x0 + cols {
                break;
            }
            let g = glyph(ch);
            for gr in 0..5 {
                for gc in 0..3 {
                    if g[gr * 3 + gc] == 1 {
                        canvas[(rows + 1 + gr) * width + gx + gc] = 255;
                    }
                }
            }
        }
        captions.push(caption);
    }

    let img = image::GrayImage::from_raw(width as u32, height as u32, canvas)
        .expect("canvas dimensions are consistent");
    img.save(path)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(StripInfo {
        width: width as u32,
        height: height as u32,
        captions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: f32, confidence: f64) -> StripFrame {
        StripFrame {
            image: (0..784).map(|i| ((i as f32 * seed) % 1.0).abs()).collect(),
            confidence,
        }
    }

    #[test]
    fn one_frame_strip_is_image_plus_caption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("strip.png");
        let info = emit_image_strip(&[frame(0.37, 0.9941)], 28, 28, &path).unwrap();
        assert_eq!(info.width, 28);
        assert_eq!(info.height, 28 + CAPTION_HEIGHT as u32);
        let loaded = image::open(&path).unwrap();
        assert_eq!(loaded.width(), 28);
        assert_eq!(loaded.height(), 35);
    }

    #[test]
    fn strip_width_is_frames_times_frame_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("strip.png");
        let frames: Vec<StripFrame> = (0..5).map(|i| frame(0.1 * i as f32, 0.5)).collect();
        let info = emit_image_strip(&frames, 28, 28, &path).unwrap();
        assert_eq!(info.width, 5 * 28);
    }

    #[test]
    fn captions_match_the_recorded_confidences() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("strip.png");
        let confidences = [0.9941, 0.123, 0.5];
        let frames: Vec<StripFrame> = confidences.iter().map(|&c| frame(0.2, c)).collect();
        let info = emit_image_strip(&frames, 28, 28, &path).unwrap();
        for (caption, confidence) in info.captions.iter().zip(&confidences) {
            assert_eq!(caption, &format!("{confidence:.3}"));
        }
    }
}
