//! Replays a recorded session in manifest order at a chosen speed.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::time::{Duration, Instant};

use super::{FrameSource, SourceError};
use crate::clock;
use crate::frame::{Frame, FrameMeta};
use crate::recorder::{FrameEntry, RecordingManifest};

pub struct ReplaySource {
    entries: Vec<FrameEntry>,
    container: File,
    speed: f64,
    cursor: usize,
    started: Option<Instant>,
}

impl ReplaySource {
    pub fn open(manifest_path: &Path, speed: f64) -> Result<Self, SourceError> {
        let unreadable = |reason: String| SourceError::ManifestUnreadable {
            path: manifest_path.to_path_buf(),
            reason,
        };
        let manifest =
            RecordingManifest::load(manifest_path).map_err(|e| unreadable(e.to_string()))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let container = File::open(dir.join(&manifest.container_file))
            .map_err(|e| unreadable(format!("container {}: {e}", manifest.container_file)))?;
        Ok(ReplaySource {
            entries: manifest.frames,
            container,
            speed,
            cursor: 0,
            started: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn due(&self, index: usize) -> Option<Duration> {
        let first = self.entries.first()?.t_capture_ns;
        let offset_ns = self.entries[index].t_capture_ns.saturating_sub(first);
        Some(Duration::from_nanos(offset_ns).div_f64(self.speed))
    }
}

impl FrameSource for ReplaySource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        let Some(entry) = self.entries.get(self.cursor).cloned() else {
            return Ok(None);
        };
        let started = *self.started.get_or_insert_with(Instant::now);
        if let Some(offset) = self.due(self.cursor) {
            let due = started + offset;
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        let mut payload = vec![0u8; entry.byte_len as usize];
        self.container
            .read_exact_at(&mut payload, entry.byte_offset)
            .map_err(|e| SourceError::SourceFailed(format!("reading frame {}: {e}", entry.seq)))?;
        if crc32fast::hash(&payload) != entry.crc32 {
            return Err(SourceError::SourceFailed(format!(
                "checksum mismatch for recorded frame {}",
                entry.seq
            )));
        }
        let meta = FrameMeta {
            seq: self.cursor as u64,
            t_capture_ns: clock::monotonic_ns(),
            t_wall_ns: clock::wall_ns(),
            width: entry.width,
            height: entry.height,
            pixel_format: entry.pixel_format,
        };
        self.cursor += 1;
        Frame::new(meta, payload)
            .map(Some)
            .map_err(|e| SourceError::SourceFailed(e.to_string()))
    }

    fn nominal_interval(&self) -> Option<Duration> {
        if self.entries.len() < 2 {
            return None;
        }
        let span = self.due(self.entries.len() - 1)?;
        Some(span / (self.entries.len() as u32 - 1))
    }
}
