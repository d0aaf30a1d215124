//! Encode a frame the way it travels on `/frames` and `/engine`, then show
//! how each kind of damaged message is classified.
//!
//! ```text
//! cargo run --example wire_codec
//! ```

use livegate::frame::{Frame, FrameMeta, PixelFormat};
use livegate::wire::{self, WireError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = Frame::new(
        FrameMeta {
            seq: 7,
            t_capture_ns: livegate::clock::monotonic_ns(),
            t_wall_ns: livegate::clock::wall_ns(),
            width: 4,
            height: 2,
            pixel_format: PixelFormat::Gray8,
        },
        vec![0u8, 32, 64, 96, 128, 160, 192, 224],
    )?;

    let bytes = wire::encode_frame(&frame);
    let header_len = u32::from_be_bytes(bytes[4..8].try_into()?) as usize;
    println!("{} bytes on the wire", bytes.len());
    println!("  magic   {:?}", std::str::from_utf8(&bytes[..4])?);
    println!(
        "  header  {}",
        std::str::from_utf8(&bytes[8..8 + header_len])?
    );
    println!("  payload {:?}", &bytes[8 + header_len..]);

    let back = wire::decode_frame(&bytes)?;
    assert_eq!(back, frame);
    println!(
        "decoded seq {} {}x{} {}",
        back.seq(),
        back.meta.width,
        back.meta.height,
        back.meta.pixel_format.as_str()
    );

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_header = bytes.clone();
    bad_header[8] = b'!';
    let truncated = &bytes[..bytes.len() - 3];

    for (label, input) in [
        ("wrong magic", &bad_magic[..]),
        ("corrupt header", &bad_header[..]),
        ("truncated payload", truncated),
    ] {
        let err: WireError = wire::decode_frame(input).unwrap_err();
        println!("{label:>18}: {err}");
    }
    Ok(())
}
