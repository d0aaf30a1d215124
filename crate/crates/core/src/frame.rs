//! The captured video frame and its pixel formats.

use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    #[serde(rename = "GRAY8")]
    Gray8,
    #[serde(rename = "RGB8")]
    Rgb8,
    #[serde(rename = "JPEG")]
    Jpeg,
}

impl PixelFormat {
    /// Exact payload size for raw formats, `None` for compressed ones.
    pub fn raw_len(self, width: u32, height: u32) -> Option<usize> {
        let px = width as usize * height as usize;
        match self {
            PixelFormat::Gray8 => Some(px),
            PixelFormat::Rgb8 => Some(px * 3),
            PixelFormat::Jpeg => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PixelFormat::Gray8 => "GRAY8",
            PixelFormat::Rgb8 => "RGB8",
            PixelFormat::Jpeg => "JPEG",
        }
    }
}

impl fmt::Display for PixelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PixelFormat {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GRAY8" => Ok(PixelFormat::Gray8),
            "RGB8" => Ok(PixelFormat::Rgb8),
            "JPEG" => Ok(PixelFormat::Jpeg),
            _ => Err(FrameError::UnknownPixelFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("{format} payload for {width}x{height} must be {expected} bytes, got {actual}")]
    PayloadLengthMismatch {
        format: PixelFormat,
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("JPEG payload is {actual_width}x{actual_height}, declared {width}x{height}")]
    JpegDimensionMismatch {
        width: u32,
        height: u32,
        actual_width: u32,
        actual_height: u32,
    },
    #[error("JPEG payload is not decodable: {0}")]
    InvalidJpeg(String),
    #[error("unknown pixel format {0:?}")]
    UnknownPixelFormat(String),
}

/// Everything about a frame except its pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub seq: u64,
    pub t_capture_ns: u64,
    pub t_wall_ns: u64,
    pub width: u32,
    pub height: u32,
    pub pixel_format: PixelFormat,
}

/// One captured video image. Cloning shares the payload buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub meta: FrameMeta,
    pub payload: Bytes,
}

impl Frame {
    /// Builds a frame after checking the payload against the declared
    /// dimensions. JPEG payloads are checked by reading their header only.
    pub fn new(meta: FrameMeta, payload: impl Into<Bytes>) -> Result<Self, FrameError> {
        let frame = Frame {
            meta,
            payload: payload.into(),
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let FrameMeta {
            width,
            height,
            pixel_format,
            ..
        } = self.meta;
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyDimensions { width, height });
        }
        match pixel_format.raw_len(width, height) {
            Some(expected) if expected != self.payload.len() => {
                Err(FrameError::PayloadLengthMismatch {
                    format: pixel_format,
                    width,
                    height,
                    expected,
                    actual: self.payload.len(),
                })
            }
            Some(_) => Ok(()),
            None => {
                let (actual_width, actual_height) = jpeg_dimensions(&self.payload)?;
                if (actual_width, actual_height) != (width, height) {
                    return Err(FrameError::JpegDimensionMismatch {
                        width,
                        height,
                        actual_width,
                        actual_height,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn seq(&self) -> u64 {
        self.meta.seq
    }
}

/// Reads the dimensions from a JPEG header without decoding the scan data.
pub fn jpeg_dimensions(data: &[u8]) -> Result<(u32, u32), FrameError> {
    image::ImageReader::with_format(std::io::Cursor::new(data), image::ImageFormat::Jpeg)
        .into_dimensions()
        .map_err(|e| FrameError::InvalidJpeg(e.to_string()))
}

/// Encodes a raw GRAY8 or RGB8 buffer as JPEG.
pub fn encode_jpeg(
    pixels: &[u8],
    width: u32,
    height: u32,
    format: PixelFormat,
    quality: u8,
) -> Result<Vec<u8>, FrameError> {
    let color = match format {
        PixelFormat::Gray8 => image::ExtendedColorType::L8,
        PixelFormat::Rgb8 => image::ExtendedColorType::Rgb8,
        PixelFormat::Jpeg => return Ok(pixels.to_vec()),
    };
    let mut out = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality)
        .encode(pixels, width, height, color)
        .map_err(|e| FrameError::InvalidJpeg(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(width: u32, height: u32, pixel_format: PixelFormat) -> FrameMeta {
        FrameMeta {
            seq: 0,
            t_capture_ns: 0,
            t_wall_ns: 0,
            width,
            height,
            pixel_format,
        }
    }

    #[test]
    fn raw_payload_lengths_are_enforced() {
        assert!(Frame::new(meta(2, 2, PixelFormat::Gray8), vec![0u8; 4]).is_ok());
        assert!(Frame::new(meta(2, 2, PixelFormat::Rgb8), vec![0u8; 12]).is_ok());
        assert!(matches!(
            Frame::new(meta(2, 2, PixelFormat::Gray8), vec![0u8; 3]),
            Err(FrameError::PayloadLengthMismatch {
                expected: 4,
                actual: 3,
                ..
            })
        ));
        assert!(matches!(
            Frame::new(meta(0, 2, PixelFormat::Gray8), Vec::new()),
            Err(FrameError::EmptyDimensions { .. })
        ));
    }

    #[test]
    fn jpeg_dimensions_are_checked() {
        let jpeg = encode_jpeg(&[128u8; 16 * 8], 16, 8, PixelFormat::Gray8, 85).unwrap();
        assert!(Frame::new(meta(16, 8, PixelFormat::Jpeg), jpeg.clone()).is_ok());
        assert!(matches!(
            Frame::new(meta(8, 16, PixelFormat::Jpeg), jpeg),
            Err(FrameError::JpegDimensionMismatch { .. })
        ));
        assert!(matches!(
            Frame::new(meta(8, 8, PixelFormat::Jpeg), vec![1, 2, 3]),
            Err(FrameError::InvalidJpeg(_))
        ));
    }

    #[test]
    fn pixel_format_names() {
        for f in [PixelFormat::Gray8, PixelFormat::Rgb8, PixelFormat::Jpeg] {
            assert_eq!(f.as_str().parse::<PixelFormat>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{f}\""));
        }
    }
}
