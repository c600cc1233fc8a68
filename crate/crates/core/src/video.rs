//! Keyframe sampling for video records.
//!
//! Videos are stored as animated GIFs; frame durations come from the
//! per-frame delays. Keyframe `i` of `m` is the frame on screen at
//! `(i + 0.5) * duration / m`.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, RgbImage};

use crate::corpus::{MediaItem, MediaKind};
use crate::error::{Error, Result};

/// GIF frames with a zero delay are shown for this long by common players.
const ZERO_DELAY_MS: f64 = 100.0;

pub struct DecodedVideo {
    pub frames: Vec<RgbImage>,
    /// Display duration of each frame in milliseconds.
    pub durations_ms: Vec<f64>,
}

impl DecodedVideo {
    pub fn duration_ms(&self) -> f64 {
        self.durations_ms.iter().sum()
    }

    /// Index of the frame displayed at `t_ms`.
    pub fn frame_at(&self, t_ms: f64) -> usize {
        let mut end = 0.0;
        for (i, d) in self.durations_ms.iter().enumerate() {
            end += d;
            if t_ms < end {
                return i;
            }
        }
        self.frames.len().saturating_sub(1)
    }
}

pub fn decode_video(item: &MediaItem, path: &Path) -> Result<DecodedVideo> {
    let media_err = |message: String| Error::Media {
        id: item.id.clone(),
        message,
    };
    let file = File::open(path).map_err(|e| media_err(format!("open {}: {e}", path.display())))?;
    let decoder = GifDecoder::new(BufReader::new(file))
        .map_err(|e| media_err(format!("undecodable video: {e}")))?;
    let mut frames = Vec::new();
    let mut durations_ms = Vec::new();
    for frame in decoder.into_frames() {
        let frame = frame.map_err(|e| media_err(format!("undecodable video frame: {e}")))?;
        let (num, den) = frame.delay().numer_denom_ms();
        let ms = if den == 0 { 0.0 } else { num as f64 / den as f64 };
        durations_ms.push(if ms > 0.0 { ms } else { ZERO_DELAY_MS });
        frames.push(image::DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8());
    }
    if frames.is_empty() {
        return Err(media_err("video has no frames".into()));
    }
    Ok(DecodedVideo {
        frames,
        durations_ms,
    })
}

/// Sample timestamps (ms) for `m` keyframes over `duration_ms`.
pub fn keyframe_offsets(duration_ms: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| (i as f64 + 0.5) * duration_ms / m as f64)
        .collect()
}

/// Returns `min(n, frame_count)` frames sampled at uniform temporal offsets.
pub fn video_keyframes(item: &MediaItem, path: &Path, n: usize) -> Result<Vec<RgbImage>> {
    if item.kind != MediaKind::Video {
        return Err(Error::Media {
            id: item.id.clone(),
            message: "keyframes requested for a non-video item".into(),
        });
    }
    if n == 0 {
        return Err(Error::Media {
            id: item.id.clone(),
            message: "keyframe count must be at least 1".into(),
        });
    }
    let video = decode_video(item, path)?;
    let m = n.min(video.frames.len());
    Ok(keyframe_offsets(video.duration_ms(), m)
        .into_iter()
        .map(|t| video.frames[video.frame_at(t)].clone())
        .collect())
}
