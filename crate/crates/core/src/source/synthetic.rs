//! Deterministic test-pattern frames.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameSource, SourceError};
use crate::clock;
use crate::frame::{Frame, FrameMeta, PixelFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// 8-pixel checkerboard, identical for every frame.
    Static,
    /// Horizontal ramp shifted right by one column per frame.
    MovingGradient,
    /// Uniform noise seeded by the frame sequence number.
    Noise,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Static => "static",
            Pattern::MovingGradient => "moving-gradient",
            Pattern::Noise => "noise",
        })
    }
}

impl FromStr for Pattern {
    type Err = SourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Pattern::Static),
            "moving-gradient" => Ok(Pattern::MovingGradient),
            "noise" => Ok(Pattern::Noise),
            other => Err(SourceError::InvalidSpec(format!(
                "unknown pattern {other:?} (expected static, moving-gradient or noise)"
            ))),
        }
    }
}

/// GRAY8 payload for `pattern` at `seq`. A pure function of its arguments.
pub fn synthetic_pattern(pattern: Pattern, width: u32, height: u32, seq: u64) -> Vec<u8> {
    let (w, h) = (width as usize, height as usize);
    match pattern {
        Pattern::Static => (0..h)
            .flat_map(|y| (0..w).map(move |x| if (x / 8 + y / 8) % 2 == 0 { 64 } else { 192 }))
            .collect(),
        Pattern::MovingGradient => {
            let shift = (seq % width as u64) as usize;
            let row: Vec<u8> = (0..w)
                .map(|x| {
                    let col = (x + w - shift) % w;
                    (255 * col / w) as u8
                })
                .collect();
            row.repeat(h)
        }
        Pattern::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seq);
            let mut buf = vec![0u8; w * h];
            rng.fill_bytes(&mut buf);
            buf
        }
    }
}

/// Paced generator of synthetic GRAY8 frames.
pub struct SyntheticSource {
    pattern: Pattern,
    width: u32,
    height: u32,
    interval: Duration,
    next_seq: u64,
    started: Option<Instant>,
}

impl SyntheticSource {
    pub fn new(pattern: Pattern, width: u32, height: u32, fps: f64) -> Self {
        SyntheticSource {
            pattern,
            width,
            height,
            interval: Duration::from_secs_f64(1.0 / fps),
            next_seq: 0,
            started: None,
        }
    }

    /// Builds the next frame immediately, ignoring the pacing schedule.
    pub fn generate_now(&mut self) -> Frame {
        let seq = self.next_seq;
        self.next_seq += 1;
        let payload = synthetic_pattern(self.pattern, self.width, self.height, seq);
        Frame {
            meta: FrameMeta {
                seq,
                t_capture_ns: clock::monotonic_ns(),
                t_wall_ns: clock::wall_ns(),
                width: self.width,
                height: self.height,
                pixel_format: PixelFormat::Gray8,
            },
            payload: payload.into(),
        }
    }
}

impl FrameSource for SyntheticSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        let started = *self.started.get_or_insert_with(Instant::now);
        let due = started + self.interval.mul_f64(self.next_seq as f64);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        Ok(Some(self.generate_now()))
    }

    fn nominal_interval(&self) -> Option<Duration> {
        Some(self.interval)
    }
}
