//! Frame sources: capture devices, recorded-session replay and synthetic
//! patterns behind one pull-based interface.
//!
//! A source is owned by a single reader. `next_frame` blocks until the next
//! frame is due and returns `Ok(None)` once a finite source is exhausted.

mod device;
mod replay;
mod synthetic;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use device::DeviceSource;
pub use replay::ReplaySource;
pub use synthetic::{synthetic_pattern, Pattern, SyntheticSource};

use crate::frame::Frame;

/// Nominal capture size and rate assumed for devices when not configured.
pub const DEFAULT_DEVICE_WIDTH: u32 = 1920;
pub const DEFAULT_DEVICE_HEIGHT: u32 = 1080;
pub const DEFAULT_DEVICE_FPS: f64 = 30.0;
/// JPEG quality used when transporting live device frames.
pub const DEVICE_JPEG_QUALITY: u8 = 85;

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("capture device {0} not found")]
    DeviceNotFound(u32),
    #[error("recording manifest {path} unreadable: {reason}")]
    ManifestUnreadable { path: PathBuf, reason: String },
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
    #[error("source failed: {0}")]
    SourceFailed(String),
}

/// Which source to open and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    Device {
        device_id: u32,
        #[serde(default = "default_device_width")]
        width: u32,
        #[serde(default = "default_device_height")]
        height: u32,
        #[serde(default = "default_device_fps")]
        fps: f64,
    },
    Replay {
        manifest_path: PathBuf,
        #[serde(default = "default_speed")]
        replay_speed: f64,
    },
    Synthetic {
        pattern: Pattern,
        width: u32,
        height: u32,
        fps: f64,
    },
}

fn default_device_width() -> u32 {
    DEFAULT_DEVICE_WIDTH
}
fn default_device_height() -> u32 {
    DEFAULT_DEVICE_HEIGHT
}
fn default_device_fps() -> f64 {
    DEFAULT_DEVICE_FPS
}
fn default_speed() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn device(device_id: u32) -> Self {
        SourceSpec::Device {
            device_id,
            width: DEFAULT_DEVICE_WIDTH,
            height: DEFAULT_DEVICE_HEIGHT,
            fps: DEFAULT_DEVICE_FPS,
        }
    }

    pub fn replay(manifest_path: impl Into<PathBuf>, replay_speed: f64) -> Self {
        SourceSpec::Replay {
            manifest_path: manifest_path.into(),
            replay_speed,
        }
    }

    pub fn synthetic(pattern: Pattern, width: u32, height: u32, fps: f64) -> Self {
        SourceSpec::Synthetic {
            pattern,
            width,
            height,
            fps,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        let check_dims = |w: u32, h: u32| {
            if w == 0 || h == 0 {
                Err(SourceError::InvalidSpec(format!(
                    "dimensions must be >= 1, got {w}x{h}"
                )))
            } else {
                Ok(())
            }
        };
        let check_rate = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SourceError::InvalidSpec(format!(
                    "{name} must be > 0, got {v}"
                )))
            }
        };
        match self {
            SourceSpec::Device {
                width, height, fps, ..
            }
            | SourceSpec::Synthetic {
                width, height, fps, ..
            } => {
                check_dims(*width, *height)?;
                check_rate("fps", *fps)
            }
            SourceSpec::Replay { replay_speed, .. } => check_rate("replay_speed", *replay_speed),
        }
    }
}

/// Parses the command-line selector syntax:
/// `device:<id>`, `replay:<manifest>[@<speed>]`, `synthetic:<pattern>:<W>x<H>@<fps>`.
impl FromStr for SourceSpec {
    type Err = SourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = |why: &str| SourceError::InvalidSpec(format!("{s:?}: {why}"));
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| invalid("missing kind prefix"))?;
        let spec = match kind {
            "device" => {
                let id = rest
                    .parse()
                    .map_err(|_| invalid("device id must be an integer"))?;
                SourceSpec::device(id)
            }
            "replay" => {
                // A trailing `@<number>` is the speed; anything else is part of the path.
                match rest.rsplit_once('@') {
                    Some((path, speed)) if speed.parse::<f64>().is_ok() => {
                        SourceSpec::replay(path, speed.parse().unwrap())
                    }
                    _ => SourceSpec::replay(rest, 1.0),
                }
            }
            "synthetic" => {
                let (pattern, geometry) = rest
                    .split_once(':')
                    .ok_or_else(|| invalid("expected <pattern>:<W>x<H>@<fps>"))?;
                let (dims, fps) = geometry
                    .split_once('@')
                    .ok_or_else(|| invalid("missing @<fps>"))?;
                let (w, h) = dims
                    .split_once('x')
                    .ok_or_else(|| invalid("expected <W>x<H>"))?;
                SourceSpec::synthetic(
                    pattern.parse()?,
                    w.parse().map_err(|_| invalid("bad width"))?,
                    h.parse().map_err(|_| invalid("bad height"))?,
                    fps.parse().map_err(|_| invalid("bad fps"))?,
                )
            }
            other => return Err(invalid(&format!("unknown source kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::Device { device_id, .. } => write!(f, "device:{device_id}"),
            SourceSpec::Replay {
                manifest_path,
                replay_speed,
            } => write!(f, "replay:{}@{replay_speed}", manifest_path.display()),
            SourceSpec::Synthetic {
                pattern,
                width,
                height,
                fps,
            } => write!(f, "synthetic:{pattern}:{width}x{height}@{fps}"),
        }
    }
}

/// A pull-based stream of frames.
pub trait FrameSource: Send {
    /// Blocks until the next frame is due. `Ok(None)` marks the end of a
    /// finite source; failures are reported as errors.
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError>;

    /// Expected spacing between frames, when the source has one.
    fn nominal_interval(&self) -> Option<Duration> {
        None
    }
}

pub fn open_source(spec: &SourceSpec) -> Result<Box<dyn FrameSource>, SourceError> {
    spec.validate()?;
    Ok(match spec {
        SourceSpec::Device {
            device_id,
            width,
            height,
            fps,
        } => Box::new(DeviceSource::open(*device_id, *width, *height, *fps)?),
        SourceSpec::Replay {
            manifest_path,
            replay_speed,
        } => Box::new(ReplaySource::open(manifest_path, *replay_speed)?),
        SourceSpec::Synthetic {
            pattern,
            width,
            height,
            fps,
        } => Box::new(SyntheticSource::new(*pattern, *width, *height, *fps)),
    })
}
