use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use livegate::bus::FrameBus;
use livegate::frame::{Frame, FrameMeta, PixelFormat};
use livegate::recorder::{
    start_recording, verify_recording, RecordingManifest, CONTAINER_FILE, MANIFEST_FILE,
};
use livegate::source::{synthetic_pattern, Pattern};

const BIN: &str = env!("CARGO_BIN_EXE_livegate");

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn livegate(cwd: &Path, args: &[&str]) -> Command {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(cwd)
        .args(args)
        .env_remove("LIVEGATE_CONFIG")
        .env("RUST_LOG", "warn");
    cmd
}

fn run(cwd: &Path, args: &[&str]) -> Output {
    livegate(cwd, args).output().unwrap()
}

/// A recording of `n` 64×48 frames captured 10 ms apart.
fn make_recording(root: &Path, n: u64) -> PathBuf {
    let bus = FrameBus::new();
    let mut rec = start_recording(&bus, root, None).unwrap();
    for seq in 0..n {
        let meta = FrameMeta {
            seq,
            t_capture_ns: 1_000_000_000 + seq * 10_000_000,
            t_wall_ns: seq,
            width: 64,
            height: 48,
            pixel_format: PixelFormat::Gray8,
        };
        let payload = synthetic_pattern(Pattern::MovingGradient, 64, 48, seq);
        bus.publish(Frame::new(meta, payload).unwrap()).unwrap();
    }
    rec.finalize().unwrap();
    rec.dir().to_path_buf()
}

fn summary_field(stdout: &str, key: &str) -> Option<String> {
    let line = stdout.lines().find(|l| l.starts_with("session ended"))?;
    line.split([';', ' '])
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")))
        .map(str::to_string)
}

#[test]
fn replay_session_runs_to_end_of_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let recording = make_recording(&tmp.path().join("source"), 100);
    let port = free_port().to_string();
    let out = run(
        tmp.path(),
        &[
            "replay",
            recording.to_str().unwrap(),
            "--bind",
            &format!("127.0.0.1:{port}"),
            "--record",
            "--output-dir",
            "again",
        ],
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{stderr}");
    assert!(stdout.contains("session ended: end-of-stream"), "{stdout}");
    assert_eq!(summary_field(&stdout, "frames").as_deref(), Some("100"));
    let results: u64 = summary_field(&stdout, "results").unwrap().parse().unwrap();
    assert!(results >= 1, "{stdout}");

    let copies: Vec<_> = std::fs::read_dir(tmp.path().join("again"))
        .unwrap()
        .collect();
    assert_eq!(copies.len(), 1);
    let copy = copies[0].as_ref().unwrap().path();
    let report = verify_recording(&copy).unwrap();
    assert!(report.ok && report.complete);
    assert_eq!(report.frame_count, 100);
    assert!(tmp.path().join("logs/mock-1.log").exists());
}

#[test]
fn occupied_port_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let holder = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = holder.local_addr().unwrap().to_string();
    let out = run(tmp.path(), &["run", "--bind", &addr]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cannot bind"), "{stderr}");
}

#[test]
fn record_verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = make_recording(tmp.path(), 20);
    let ok = run(tmp.path(), &["record-verify", dir.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains(r#""ok":true"#));

    // Flip one byte inside frame 5.
    let manifest = RecordingManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    let offset = manifest.frames[5].byte_offset as usize + 3;
    let path = dir.join(CONTAINER_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[offset] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    let bad = run(tmp.path(), &["record-verify", dir.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains(r#""first_bad_seq":5"#));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("seq 5"));

    let missing = run(tmp.path(), &["record-verify", "no-such-dir"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["run", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(
        tmp.path().join("bad.json"),
        r#"{"source": {"kind": "synthetic", "pattern": "static", "width": 8, "height": 8, "fps": 5},
            "pipeline": {"stages": ["pcbm"]}, "engines": []}"#,
    )
    .unwrap();
    let out = run(tmp.path(), &["run", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pcbm"));

    let out = livegate(tmp.path(), &["run"])
        .env("LIVEGATE_CONFIG", tmp.path().join("bad.json"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "LIVEGATE_CONFIG is the fallback"
    );

    let out = run(tmp.path(), &["run", "--bind", "0.0.0.0:8799"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-lan"));

    let out = run(tmp.path(), &["run", "--source", "webcam:0"]);
    assert_eq!(out.status.code(), Some(2), "clap rejects bad selectors");
}

fn wait_for_frames(port: &str, child: &mut Child, at_least: u64) -> serde_json::Value {
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        assert!(child.try_wait().unwrap().is_none(), "session exited early");
        assert!(Instant::now() < deadline, "session never got going");
        if let Ok(body) = http::blocking_get(&format!("http://127.0.0.1:{port}/healthz")) {
            let health: serde_json::Value = serde_json::from_str(&body).unwrap();
            if health["frames_published"].as_u64().unwrap_or(0) >= at_least
                && health["results_published"].as_u64().unwrap_or(0) >= 1
            {
                return health;
            }
        }
        std::thread::sleep(Duration::from_millis(100));
    }
}

mod http {
    /// Minimal blocking GET over a plain socket.
    pub fn blocking_get(url: &str) -> Result<String, std::io::Error> {
        use std::io::{Read, Write};
        let rest = url.strip_prefix("http://").unwrap();
        let (host, path) = rest.split_once('/').unwrap();
        let mut s = std::net::TcpStream::connect(host)?;
        write!(
            s,
            "GET /{path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n"
        )?;
        let mut buf = String::new();
        s.read_to_string(&mut buf)?;
        let (head, body) = buf.split_once("\r\n\r\n").unwrap_or(("", ""));
        if !head.starts_with("HTTP/1.1 200") {
            return Err(std::io::Error::other(head.to_string()));
        }
        Ok(body.to_string())
    }
}

#[test]
fn interrupt_finalizes_recording() {
    let tmp = tempfile::tempdir().unwrap();
    let port = free_port().to_string();
    let mut child = livegate(
        tmp.path(),
        &[
            "run",
            "--bind",
            &format!("127.0.0.1:{port}"),
            "--record",
            "--source",
            "synthetic:moving-gradient:160x120@20",
        ],
    )
    .stdout(Stdio::piped())
    .stderr(Stdio::piped())
    .spawn()
    .unwrap();

    let health = wait_for_frames(&port, &mut child, 10);
    assert_eq!(health["recorder"], "ok");
    assert_eq!(health["children"][0]["name"], "mock-1");
    assert_eq!(health["children"][0]["state"], "up");
    assert_eq!(health["engines"][0]["state"], "up");

    nix::sys::signal::kill(
        nix::unistd::Pid::from_raw(child.id() as i32),
        nix::sys::signal::Signal::SIGINT,
    )
    .unwrap();
    let out = child.wait_with_output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("session ended: interrupted"), "{stdout}");

    let published: u64 = summary_field(&stdout, "frames").unwrap().parse().unwrap();
    let recordings: Vec<_> = std::fs::read_dir(tmp.path().join("recordings"))
        .unwrap()
        .collect();
    let dir = recordings[0].as_ref().unwrap().path();
    let manifest = RecordingManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.frame_count, published);
    assert!(verify_recording(&dir).unwrap().ok);
}

#[test]
fn bench_subcommand_writes_report_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        tmp.path(),
        &[
            "bench",
            "--samples",
            "30",
            "--warmup",
            "2",
            "--fps",
            "50",
            "--csv",
            "frames.csv",
        ],
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{stdout}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for row in ["native", "framework", "difference"] {
        assert!(stdout.contains(row), "{stdout}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("frames.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("seq,t_capture_ns,t_result_ns,latency_s"));
    assert_eq!(lines.count(), 30);

    let out = run(tmp.path(), &["bench", "--samples", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
