//! Lossless recording of the frame stream.
//!
//! Each session is written to `<output_dir>/<session_id>/` as a flat
//! container (`frames.lgr`, payloads back to back) plus a JSON index
//! (`manifest.json`) with per-frame offsets and CRC-32 checksums. The
//! recorder consumes a reliable bus subscription on its own thread, so disk
//! latency never reaches the publisher; if it falls more than the queue
//! capacity behind, the recording is marked incomplete.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};
use uuid::Uuid;

use crate::bus::{
    DeliveryMode, FrameBus, RecvError, SubscriptionCloser, DEFAULT_RELIABLE_CAPACITY,
};
use crate::frame::PixelFormat;
use crate::source::SourceSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONTAINER_FILE: &str = "frames.lgr";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("recording i/o: {0}")]
    Io(#[from] io::Error),
    #[error("recording already finalized")]
    AlreadyFinalized,
    #[error("manifest.json missing in {0}")]
    ManifestMissing(PathBuf),
    #[error("container file missing: {0}")]
    ContainerMissing(PathBuf),
    #[error("manifest unreadable: {0}")]
    ManifestInvalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub seq: u64,
    pub t_capture_ns: u64,
    pub t_wall_ns: u64,
    pub width: u32,
    pub height: u32,
    pub pixel_format: PixelFormat,
    pub byte_offset: u64,
    pub byte_len: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub manifest_version: u32,
    pub session_id: String,
    pub created_wall: DateTime<Utc>,
    pub source_spec: Option<SourceSpec>,
    /// False when frames were lost to overflow or a write error.
    pub complete: bool,
    #[serde(default)]
    pub dropped_frames: u64,
    pub frame_count: u64,
    pub container_file: String,
    pub frames: Vec<FrameEntry>,
}

impl RecordingManifest {
    pub fn load(path: &Path) -> Result<Self, RecorderError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| RecorderError::ManifestInvalid(e.to_string()))
    }

    fn store(&self, dir: &Path) -> io::Result<()> {
        let tmp = dir.join(".manifest.json.tmp");
        let mut json = serde_json::to_vec_pretty(self).expect("manifest is serializable");
        json.push(b'\n');
        fs::write(&tmp, json)?;
        fs::rename(tmp, dir.join(MANIFEST_FILE))
    }
}

struct WriterOutcome {
    frames: Vec<FrameEntry>,
    dropped: u64,
    overflowed: bool,
    io_error: Option<io::Error>,
}

/// A running recording. Call [`finalize`](Self::finalize) to stop it.
pub struct RecordingHandle {
    session_id: String,
    dir: PathBuf,
    created_wall: DateTime<Utc>,
    source_spec: Option<SourceSpec>,
    closer: SubscriptionCloser,
    recorded: Arc<AtomicU64>,
    faulted: Arc<AtomicBool>,
    writer: Option<JoinHandle<WriterOutcome>>,
}

/// Starts recording every frame published on `bus` from now on.
pub fn start_recording(
    bus: &FrameBus,
    output_dir: &Path,
    source_spec: Option<SourceSpec>,
) -> Result<RecordingHandle, RecorderError> {
    let session_id = Uuid::new_v4().to_string();
    let dir = output_dir.join(&session_id);
    fs::create_dir_all(&dir)?;
    let container = BufWriter::new(File::create(dir.join(CONTAINER_FILE))?);

    let mut sub = bus.subscribe(DeliveryMode::Reliable, Some(DEFAULT_RELIABLE_CAPACITY));
    let closer = sub.closer();
    let recorded = Arc::new(AtomicU64::new(0));
    let progress = recorded.clone();
    let faulted = Arc::new(AtomicBool::new(false));
    let fault_flag = faulted.clone();

    let writer = std::thread::Builder::new()
        .name("recorder".into())
        .spawn(move || {
            let mut out = WriterOutcome {
                frames: Vec::new(),
                dropped: 0,
                overflowed: false,
                io_error: None,
            };
            let mut container = container;
            let mut offset = 0u64;
            loop {
                let frame = match sub.recv_blocking() {
                    Ok(frame) => frame,
                    Err(RecvError::Closed) => break,
                    Err(RecvError::Overflow { dropped }) => {
                        out.overflowed = true;
                        out.dropped = dropped;
                        break;
                    }
                };
                if let Err(e) = container.write_all(&frame.payload) {
                    out.io_error = Some(e);
                    break;
                }
                let len = frame.payload.len() as u64;
                out.frames.push(FrameEntry {
                    seq: frame.meta.seq,
                    t_capture_ns: frame.meta.t_capture_ns,
                    t_wall_ns: frame.meta.t_wall_ns,
                    width: frame.meta.width,
                    height: frame.meta.height,
                    pixel_format: frame.meta.pixel_format,
                    byte_offset: offset,
                    byte_len: len,
                    crc32: crc32fast::hash(&frame.payload),
                });
                offset += len;
                progress.fetch_add(1, Ordering::Relaxed);
            }
            if let Err(e) = container
                .flush()
                .and_then(|_| container.get_ref().sync_data())
            {
                out.io_error.get_or_insert(e);
            }
            if out.overflowed || out.io_error.is_some() {
                fault_flag.store(true, Ordering::SeqCst);
            }
            out
        })?;

    info!(session_id = %session_id, dir = %dir.display(), "recording started");
    Ok(RecordingHandle {
        session_id,
        dir,
        created_wall: Utc::now(),
        source_spec,
        closer,
        recorded,
        faulted,
        writer: Some(writer),
    })
}

impl RecordingHandle {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Frames written so far.
    pub fn frame_count(&self) -> u64 {
        self.recorded.load(Ordering::Relaxed)
    }

    /// True once the writer has stopped on overflow or an i/o error.
    pub fn is_faulted(&self) -> bool {
        self.faulted.load(Ordering::SeqCst)
    }

    pub fn is_finalized(&self) -> bool {
        self.writer.is_none()
    }

    /// Stops accepting new frames, writes out everything already queued,
    /// then stores `manifest.json`.
    pub fn finalize(&mut self) -> Result<RecordingManifest, RecorderError> {
        let writer = self.writer.take().ok_or(RecorderError::AlreadyFinalized)?;
        self.closer.close();
        let outcome = writer
            .join()
            .map_err(|_| RecorderError::Io(io::Error::other("recorder thread panicked")))?;
        let manifest = RecordingManifest {
            manifest_version: MANIFEST_VERSION,
            session_id: self.session_id.clone(),
            created_wall: self.created_wall,
            source_spec: self.source_spec.clone(),
            complete: !outcome.overflowed && outcome.io_error.is_none(),
            dropped_frames: outcome.dropped,
            frame_count: outcome.frames.len() as u64,
            container_file: CONTAINER_FILE.to_string(),
            frames: outcome.frames,
        };
        if !manifest.complete {
            warn!(
                session_id = %self.session_id,
                dropped = manifest.dropped_frames,
                "recording is incomplete"
            );
        }
        manifest.store(&self.dir)?;
        if let Some(e) = outcome.io_error {
            return Err(RecorderError::Io(e));
        }
        info!(session_id = %self.session_id, frames = manifest.frame_count, "recording finalized");
        Ok(manifest)
    }
}

impl Drop for RecordingHandle {
    fn drop(&mut self) {
        if self.writer.is_some() {
            let _ = self.finalize();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub frame_count: u64,
    pub first_bad_seq: Option<u64>,
    pub complete: bool,
}

/// Re-reads a recording and checks ordering, bounds and checksums.
pub fn verify_recording(dir: &Path) -> Result<VerifyReport, RecorderError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(RecorderError::ManifestMissing(dir.to_path_buf()));
    }
    let manifest = RecordingManifest::load(&manifest_path)?;
    let container_path = dir.join(&manifest.container_file);
    let mut container = match File::open(&container_path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(RecorderError::ContainerMissing(container_path))
        }
        Err(e) => return Err(e.into()),
    };
    let container_len = container.metadata()?.len();

    let mut first_bad_seq = None;
    let mut prev: Option<&FrameEntry> = None;
    let mut buf = Vec::new();
    for entry in &manifest.frames {
        let ordered = prev.is_none_or(|p| {
            entry.seq == p.seq + 1 && entry.byte_offset >= p.byte_offset + p.byte_len
        });
        let in_bounds = entry
            .byte_offset
            .checked_add(entry.byte_len)
            .is_some_and(|end| end <= container_len);
        let intact = in_bounds && {
            buf.resize(entry.byte_len as usize, 0);
            container.seek(SeekFrom::Start(entry.byte_offset))?;
            container.read_exact(&mut buf)?;
            crc32fast::hash(&buf) == entry.crc32
        };
        if !(ordered && intact) {
            first_bad_seq = Some(entry.seq);
            break;
        }
        prev = Some(entry);
    }
    let count_matches = manifest.frame_count == manifest.frames.len() as u64;
    Ok(VerifyReport {
        ok: first_bad_seq.is_none() && count_matches,
        frame_count: manifest.frame_count,
        first_bad_seq,
        complete: manifest.complete,
    })
}
