//! Detects a frozen scanner display from inter-frame pixel change.
//!
//! Both frames are reduced to luma, area-averaged so the longer edge is
//! `downsample` pixels, and compared by mean absolute difference. A run of
//! `k` consecutive scores at or below `tau` counts as frozen.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Frame, PixelFormat};

#[derive(Debug, Error, PartialEq)]
pub enum FreezeError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("frame not decodable: {0}")]
    Undecodable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeConfig {
    /// Target length of the longer edge after downsampling.
    #[serde(default = "default_downsample")]
    pub downsample: u32,
    /// Mean-absolute-difference threshold, gray levels.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Consecutive below-threshold comparisons required.
    #[serde(default = "default_k")]
    pub k: u32,
}

fn default_downsample() -> u32 {
    64
}
fn default_tau() -> f64 {
    2.0
}
fn default_k() -> u32 {
    5
}

impl Default for FreezeConfig {
    fn default() -> Self {
        FreezeConfig {
            downsample: default_downsample(),
            tau: default_tau(),
            k: default_k(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FreezeState {
    pub consecutive_below: u32,
    pub frozen: bool,
    pub last_score: Option<f64>,
}

/// Advances the detector by one comparison score.
pub fn freeze_update(state: FreezeState, score: f64, config: &FreezeConfig) -> FreezeState {
    let consecutive_below = if score <= config.tau {
        state.consecutive_below.saturating_add(1)
    } else {
        0
    };
    FreezeState {
        consecutive_below,
        frozen: consecutive_below >= config.k,
        last_score: Some(score),
    }
}

/// Mean absolute luma difference between two frames, in gray levels.
pub fn freeze_score(prev: &Frame, curr: &Frame, downsample: u32) -> Result<f64, FreezeError> {
    let (a_w, a_h) = (prev.meta.width, prev.meta.height);
    let (b_w, b_h) = (curr.meta.width, curr.meta.height);
    if (a_w, a_h) != (b_w, b_h) {
        return Err(FreezeError::DimensionMismatch(a_w, a_h, b_w, b_h));
    }
    let a = downsampled_luma(prev, downsample)?;
    let b = downsampled_luma(curr, downsample)?;
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.len() as f64)
}

/// Luma plane with BT.601 weights for colour input.
pub fn luma(frame: &Frame) -> Result<Vec<f64>, FreezeError> {
    match frame.meta.pixel_format {
        PixelFormat::Gray8 => Ok(frame.payload.iter().map(|&v| v as f64).collect()),
        PixelFormat::Rgb8 => Ok(rgb_to_luma(&frame.payload)),
        PixelFormat::Jpeg => {
            let img = image::load_from_memory_with_format(&frame.payload, image::ImageFormat::Jpeg)
                .map_err(|e| FreezeError::Undecodable(e.to_string()))?;
            match img {
                image::DynamicImage::ImageLuma8(gray) => {
                    Ok(gray.into_raw().into_iter().map(f64::from).collect())
                }
                other => Ok(rgb_to_luma(other.to_rgb8().as_raw())),
            }
        }
    }
}

fn rgb_to_luma(rgb: &[u8]) -> Vec<f64> {
    rgb.chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn downsampled_luma(frame: &Frame, target: u32) -> Result<Vec<f64>, FreezeError> {
    let plane = luma(frame)?;
    let (w, h) = (frame.meta.width as usize, frame.meta.height as usize);
    let (out_w, out_h) = target_dims(w, h, target as usize);
    Ok(area_resample(&plane, w, h, out_w, out_h))
}

/// Output size with the longer edge at `target`; never upsamples.
fn target_dims(w: usize, h: usize, target: usize) -> (usize, usize) {
    let longest = w.max(h);
    if target == 0 || longest <= target {
        return (w, h);
    }
    let scale = target as f64 / longest as f64;
    let fit = |n: usize| ((n as f64 * scale).round() as usize).clamp(1, target);
    (fit(w), fit(h))
}

/// Box filter with fractional pixel coverage, applied separably.
fn area_resample(src: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if (w, h) == (out_w, out_h) {
        return src.to_vec();
    }
    let cols = coverage(w, out_w);
    let rows = coverage(h, out_h);
    let mut horiz = vec![0.0; out_w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (ox, taps) in cols.iter().enumerate() {
            horiz[y * out_w + ox] = taps.iter().map(|&(i, wt)| row[i] * wt).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for (oy, taps) in rows.iter().enumerate() {
        for ox in 0..out_w {
            out[oy * out_w + ox] = taps.iter().map(|&(y, wt)| horiz[y * out_w + ox] * wt).sum();
        }
    }
    out
}

/// For each output cell, the input indices it overlaps and their
/// normalized weights.
fn coverage(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let step = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let start = o as f64 * step;
            let end = start + step;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = end.min(i as f64 + 1.0) - start.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / step))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameMeta;
    use crate::source::{synthetic_pattern, Pattern};

    fn gray(w: u32, h: u32, payload: Vec<u8>) -> Frame {
        Frame {
            meta: FrameMeta {
                seq: 0,
                t_capture_ns: 0,
                t_wall_ns: 0,
                width: w,
                height: h,
                pixel_format: PixelFormat::Gray8,
            },
            payload: payload.into(),
        }
    }

    #[test]
    fn identical_frames_score_zero() {
        let f = gray(64, 48, synthetic_pattern(Pattern::Noise, 64, 48, 3));
        assert_eq!(freeze_score(&f, &f, 64).unwrap(), 0.0);
    }

    #[test]
    fn black_vs_white_scores_255() {
        let a = gray(640, 480, vec![0; 640 * 480]);
        let b = gray(640, 480, vec![255; 640 * 480]);
        assert_eq!(freeze_score(&a, &b, 64).unwrap(), 255.0);
        assert_eq!(freeze_score(&b, &a, 64).unwrap(), 255.0);
    }

    #[test]
    fn mismatched_dimensions_error() {
        let a = gray(4, 4, vec![0; 16]);
        let b = gray(8, 2, vec![0; 16]);
        assert_eq!(
            freeze_score(&a, &b, 64),
            Err(FreezeError::DimensionMismatch(4, 4, 8, 2))
        );
    }

    #[test]
    fn target_dims_keep_aspect() {
        assert_eq!(target_dims(640, 480, 64), (64, 48));
        assert_eq!(target_dims(480, 640, 64), (48, 64));
        assert_eq!(target_dims(32, 16, 64), (32, 16));
        assert_eq!(target_dims(1000, 3, 64), (64, 1));
    }

    #[test]
    fn area_resample_preserves_mean() {
        let src: Vec<f64> = (0..(10 * 7)).map(|v| (v * 37 % 256) as f64).collect();
        let out = area_resample(&src, 10, 7, 3, 2);
        let mean_in = src.iter().sum::<f64>() / src.len() as f64;
        let mean_out = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-9);
        // exact 2x reduction is a plain 2x2 average
        let quad = area_resample(&[0.0, 2.0, 4.0, 6.0], 2, 2, 1, 1);
        assert_eq!(quad, vec![3.0]);
    }

    #[test]
    fn rgb_uses_bt601_weights() {
        let f = Frame {
            meta: FrameMeta {
                seq: 0,
                t_capture_ns: 0,
                t_wall_ns: 0,
                width: 1,
                height: 1,
                pixel_format: PixelFormat::Rgb8,
            },
            payload: vec![255, 0, 0].into(),
        };
        let black = Frame {
            payload: vec![0, 0, 0].into(),
            ..f.clone()
        };
        let score = freeze_score(&f, &black, 64).unwrap();
        assert!((score - 0.299 * 255.0).abs() < 1e-9);
    }

    #[test]
    fn jpeg_frames_are_decoded() {
        let raw = synthetic_pattern(Pattern::Static, 32, 32, 0);
        let jpeg = crate::frame::encode_jpeg(&raw, 32, 32, PixelFormat::Gray8, 85).unwrap();
        let f = Frame {
            meta: FrameMeta {
                pixel_format: PixelFormat::Jpeg,
                ..gray(32, 32, vec![]).meta
            },
            payload: jpeg.into(),
        };
        let raw_frame = gray(32, 32, raw);
        // lossy, but close to the original
        assert!(freeze_score(&f, &raw_frame, 64).unwrap() < 10.0);
    }

    #[test]
    fn update_counts_consecutive_scores() {
        let cfg = FreezeConfig::default();
        let mut s = FreezeState::default();
        for i in 0..5 {
            assert!(!s.frozen, "frozen too early at {i}");
            s = freeze_update(s, 0.0, &cfg);
        }
        assert!(s.frozen);
        s = freeze_update(s, 50.0, &cfg);
        assert!(!s.frozen);
        assert_eq!(s.consecutive_below, 0);
    }

    #[test]
    fn reset_semantics() {
        let cfg = FreezeConfig {
            tau: 2.0,
            k: 5,
            ..Default::default()
        };
        let scores = [0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut s = FreezeState::default();
        let frozen: Vec<bool> = scores
            .iter()
            .map(|&x| {
                s = freeze_update(s, x, &cfg);
                s.frozen
            })
            .collect();
        assert_eq!(
            frozen,
            [false, false, false, false, false, false, false, false, true]
        );
        // equality with tau counts as below
        assert_eq!(
            freeze_update(FreezeState::default(), 2.0, &cfg).consecutive_below,
            1
        );
    }
}
