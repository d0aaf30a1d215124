//! Record everything published on a bus, verify the recording, and play it
//! back as a frame source.
//!
//! ```text
//! cargo run --example record_and_replay [output-dir]
//! ```

use std::path::PathBuf;

use livegate::bus::FrameBus;
use livegate::recorder::{start_recording, verify_recording, MANIFEST_FILE};
use livegate::source::{FrameSource, Pattern, ReplaySource, SourceSpec, SyntheticSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| scratch.path().to_path_buf());

    let bus = FrameBus::new();
    let spec = SourceSpec::synthetic(Pattern::Noise, 160, 120, 30.0);
    let mut recording = start_recording(&bus, &out, Some(spec))?;

    let mut source = SyntheticSource::new(Pattern::Noise, 160, 120, 30.0);
    let mut originals = Vec::new();
    for _ in 0..90 {
        let frame = source.generate_now();
        originals.push(frame.payload.clone());
        bus.publish(frame)?;
    }
    bus.shutdown();
    let manifest = recording.finalize()?;
    println!(
        "recorded {} frames into {} (complete: {})",
        manifest.frame_count,
        recording.dir().display(),
        manifest.complete
    );

    let report = verify_recording(recording.dir())?;
    println!("verify: {}", serde_json::to_string(&report)?);

    // Ten times faster than it was captured.
    let mut replay = ReplaySource::open(&recording.dir().join(MANIFEST_FILE), 10.0)?;
    let started = std::time::Instant::now();
    let mut n = 0;
    while let Some(frame) = replay.next_frame()? {
        assert_eq!(frame.payload, originals[n], "frame {n} differs");
        n += 1;
    }
    println!("replayed {n} identical frames in {:.2?}", started.elapsed());
    Ok(())
}
