//! Binary framing for frames on the wire.
//!
//! ```text
//! +--------+----------------+----------------------+-----------+
//! | "LGF1" | header_len u32 | header (UTF-8 JSON)  | payload   |
//! | 4 B    | big-endian     | header_len bytes     | remainder |
//! +--------+----------------+----------------------+-----------+
//! ```
//!
//! The header object carries `seq`, `t_capture_ns`, `t_wall_ns`, `width`,
//! `height` and `pixel_format`, serialized in that order.

use thiserror::Error;

use crate::frame::{Frame, FrameError, FrameMeta};

pub const MAGIC: &[u8; 4] = b"LGF1";
const PREFIX_LEN: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("frame header unreadable: {0}")]
    HeaderParseError(String),
    #[error("payload length mismatch: expected {expected} bytes, got {actual}")]
    PayloadLengthMismatch { expected: usize, actual: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(FrameError),
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let header = serde_json::to_vec(&frame.meta).expect("frame header is always serializable");
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + frame.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&frame.payload);
    out
}

/// Decodes a message produced by [`encode_frame`]. The payload is copied
/// out of `bytes`; use [`decode_frame_shared`] to avoid that.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    decode_frame_shared(bytes::Bytes::copy_from_slice(bytes))
}

pub fn decode_frame_shared(bytes: bytes::Bytes) -> Result<Frame, WireError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(WireError::BadMagic(bytes[..bytes.len().min(4)].to_vec()));
    }
    if bytes.len() < PREFIX_LEN {
        return Err(WireError::HeaderParseError(
            "truncated length prefix".into(),
        ));
    }
    let header_len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            WireError::HeaderParseError(format!(
                "header_len {header_len} exceeds message of {} bytes",
                bytes.len()
            ))
        })?;
    let meta: FrameMeta = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
        .map_err(|e| WireError::HeaderParseError(e.to_string()))?;
    let payload = bytes.slice(header_end..);
    if let Some(expected) = meta.pixel_format.raw_len(meta.width, meta.height) {
        if expected != payload.len() {
            return Err(WireError::PayloadLengthMismatch {
                expected,
                actual: payload.len(),
            });
        }
    }
    Frame::new(meta, payload).map_err(WireError::InvalidFrame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::PixelFormat;

    fn gray(seq: u64, w: u32, h: u32, payload: Vec<u8>) -> Frame {
        Frame {
            meta: FrameMeta {
                seq,
                t_capture_ns: 11,
                t_wall_ns: 22,
                width: w,
                height: h,
                pixel_format: PixelFormat::Gray8,
            },
            payload: payload.into(),
        }
    }

    #[test]
    fn layout_is_magic_len_header_payload() {
        let bytes = encode_frame(&gray(0, 1, 1, vec![0x7f]));
        assert_eq!(&bytes[..4], b"LGF1");
        assert_eq!(*bytes.last().unwrap(), 0x7f);
        let header_len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 8 + header_len + 1);
        assert_eq!(
            std::str::from_utf8(&bytes[8..8 + header_len]).unwrap(),
            r#"{"seq":0,"t_capture_ns":11,"t_wall_ns":22,"width":1,"height":1,"pixel_format":"GRAY8"}"#
        );
    }

    #[test]
    fn round_trip() {
        let f = gray(3, 2, 2, vec![1, 2, 3, 4]);
        assert_eq!(decode_frame(&encode_frame(&f)).unwrap(), f);
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let mut bytes = encode_frame(&gray(3, 2, 2, vec![1, 2, 3, 4]));
        bytes.pop();
        assert_eq!(
            decode_frame(&bytes),
            Err(WireError::PayloadLengthMismatch {
                expected: 4,
                actual: 3
            })
        );
    }

    #[test]
    fn malformed_inputs_are_distinguished() {
        assert!(matches!(
            decode_frame(b"XXXX\0\0\0\0{}"),
            Err(WireError::BadMagic(_))
        ));
        assert!(matches!(decode_frame(b"LG"), Err(WireError::BadMagic(_))));
        assert!(matches!(
            decode_frame(b"LGF1\0\0"),
            Err(WireError::HeaderParseError(_))
        ));
        let bytes = encode_frame(&gray(0, 1, 1, vec![9]));
        // cut inside the header
        assert!(matches!(
            decode_frame(&bytes[..20]),
            Err(WireError::HeaderParseError(_))
        ));
        let mut garbage = b"LGF1\0\0\0\x02{]".to_vec();
        garbage.push(0);
        assert!(matches!(
            decode_frame(&garbage),
            Err(WireError::HeaderParseError(_))
        ));
    }
}
