//! Live capture from a camera-class device (an HDMI-to-USB converter shows
//! up as one). Frames leave this module JPEG-encoded.

use std::path::PathBuf;

use super::SourceError;
#[cfg(feature = "v4l")]
use super::{FrameSource, DEVICE_JPEG_QUALITY};
#[cfg(feature = "v4l")]
use crate::frame::Frame;

fn device_path(device_id: u32) -> PathBuf {
    PathBuf::from(format!("/dev/video{device_id}"))
}

#[cfg(feature = "v4l")]
pub use v4l_impl::DeviceSource;

#[cfg(not(feature = "v4l"))]
pub struct DeviceSource {
    _private: (),
}

#[cfg(not(feature = "v4l"))]
impl DeviceSource {
    pub fn open(device_id: u32, _width: u32, _height: u32, _fps: f64) -> Result<Self, SourceError> {
        if !device_path(device_id).exists() {
            return Err(SourceError::DeviceNotFound(device_id));
        }
        Err(SourceError::InvalidSpec(
            "device capture support not compiled in; rebuild with `--features v4l`".into(),
        ))
    }
}

#[cfg(not(feature = "v4l"))]
impl super::FrameSource for DeviceSource {
    fn next_frame(&mut self) -> Result<Option<crate::frame::Frame>, SourceError> {
        unreachable!("DeviceSource cannot be constructed without the v4l feature")
    }
}

/// Converts packed YUYV (4:2:2) to RGB8 with BT.601 limited-range coefficients.
#[cfg_attr(not(feature = "v4l"), allow(dead_code))]
pub(crate) fn yuyv_to_rgb(yuyv: &[u8], width: u32, height: u32) -> Vec<u8> {
    let px = width as usize * height as usize;
    let mut rgb = Vec::with_capacity(px * 3);
    for chunk in yuyv.chunks_exact(4).take(px / 2) {
        let (y0, u, y1, v) = (
            chunk[0] as f32,
            chunk[1] as f32,
            chunk[2] as f32,
            chunk[3] as f32,
        );
        for y in [y0, y1] {
            let c = 1.164 * (y - 16.0);
            let d = u - 128.0;
            let e = v - 128.0;
            rgb.push((c + 1.596 * e).round().clamp(0.0, 255.0) as u8);
            rgb.push((c - 0.392 * d - 0.813 * e).round().clamp(0.0, 255.0) as u8);
            rgb.push((c + 2.017 * d).round().clamp(0.0, 255.0) as u8);
        }
    }
    rgb
}

#[cfg(feature = "v4l")]
mod v4l_impl {
    use v4l::buffer::Type;
    use v4l::io::mmap::Stream;
    use v4l::io::traits::CaptureStream;
    use v4l::video::capture::Parameters;
    use v4l::video::Capture;
    use v4l::{Device, FourCC};

    use super::*;
    use crate::clock;
    use crate::frame::{encode_jpeg, FrameMeta, PixelFormat};

    enum Wire {
        Mjpeg,
        Yuyv,
    }

    pub struct DeviceSource {
        stream: Stream<'static>,
        wire: Wire,
        width: u32,
        height: u32,
        seq: u64,
        // Keeps the file descriptor open for the stream's lifetime.
        _device: Device,
    }

    impl DeviceSource {
        pub fn open(
            device_id: u32,
            width: u32,
            height: u32,
            fps: f64,
        ) -> Result<Self, SourceError> {
            if !device_path(device_id).exists() {
                return Err(SourceError::DeviceNotFound(device_id));
            }
            let failed = |e: std::io::Error| SourceError::SourceFailed(e.to_string());
            let device = Device::with_path(device_path(device_id)).map_err(failed)?;
            let mut fmt = device.format().map_err(failed)?;
            fmt.width = width;
            fmt.height = height;
            fmt.fourcc = FourCC::new(b"MJPG");
            let mut fmt = device.set_format(&fmt).map_err(failed)?;
            if fmt.fourcc != FourCC::new(b"MJPG") {
                fmt.fourcc = FourCC::new(b"YUYV");
                fmt = device.set_format(&fmt).map_err(failed)?;
            }
            let wire = if fmt.fourcc == FourCC::new(b"MJPG") {
                Wire::Mjpeg
            } else if fmt.fourcc == FourCC::new(b"YUYV") {
                Wire::Yuyv
            } else {
                return Err(SourceError::InvalidSpec(format!(
                    "device {device_id} offers neither MJPG nor YUYV"
                )));
            };
            // Not every driver honours frame-interval requests.
            let _ = device.set_params(&Parameters::with_fps(fps.round().max(1.0) as u32));
            let stream = Stream::with_buffers(&device, Type::VideoCapture, 4).map_err(failed)?;
            Ok(DeviceSource {
                stream,
                wire,
                width: fmt.width,
                height: fmt.height,
                seq: 0,
                _device: device,
            })
        }
    }

    impl FrameSource for DeviceSource {
        fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
            let (buf, meta) = self
                .stream
                .next()
                .map_err(|e| SourceError::SourceFailed(format!("device read: {e}")))?;
            let t_capture_ns = clock::monotonic_ns();
            let t_wall_ns = clock::wall_ns();
            let data = &buf[..meta.bytesused as usize];
            let payload = match self.wire {
                Wire::Mjpeg => data.to_vec(),
                Wire::Yuyv => {
                    let rgb = yuyv_to_rgb(data, self.width, self.height);
                    encode_jpeg(
                        &rgb,
                        self.width,
                        self.height,
                        PixelFormat::Rgb8,
                        DEVICE_JPEG_QUALITY,
                    )
                    .map_err(|e| SourceError::SourceFailed(e.to_string()))?
                }
            };
            let frame = Frame::new(
                FrameMeta {
                    seq: self.seq,
                    t_capture_ns,
                    t_wall_ns,
                    width: self.width,
                    height: self.height,
                    pixel_format: PixelFormat::Jpeg,
                },
                payload,
            )
            .map_err(|e| SourceError::SourceFailed(e.to_string()))?;
            self.seq += 1;
            Ok(Some(frame))
        }
    }
}
