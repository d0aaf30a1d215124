#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use livegate::config::{EngineDecl, SessionConfig};
use livegate::engine::{run_mock_engine, EngineClientError, EngineDescriptor, MockBehavior};
use livegate::frame::{Frame, FrameMeta, PixelFormat};
use livegate::gateway::PipelineConfig;
use livegate::result::PredictionResult;
use livegate::session::{Session, SessionOptions};
use livegate::source::{Pattern, SourceSpec};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

pub fn gray_frame(seq: u64, width: u32, height: u32) -> Frame {
    let payload = livegate::source::synthetic_pattern(Pattern::MovingGradient, width, height, seq);
    Frame::new(
        FrameMeta {
            seq,
            t_capture_ns: livegate::clock::monotonic_ns(),
            t_wall_ns: livegate::clock::wall_ns(),
            width,
            height,
            pixel_format: PixelFormat::Gray8,
        },
        bytes::Bytes::from(payload),
    )
    .unwrap()
}

/// A session config with external engines only, on an ephemeral port.
pub fn external_config(stages: &[&str], dir: &Path) -> SessionConfig {
    let mut config = SessionConfig::with_mock_engine(Path::new("unused"));
    config.bind = "127.0.0.1:0".parse().unwrap();
    config.source = SourceSpec::synthetic(Pattern::MovingGradient, 64, 48, 10.0);
    config.pipeline = PipelineConfig {
        stages: stages.iter().map(|s| s.to_string()).collect(),
        ..PipelineConfig::single("x")
    };
    config.engines = stages
        .iter()
        .map(|s| EngineDecl::External {
            name: s.to_string(),
        })
        .collect();
    config.engine_wait_ms = 0;
    config.output_dir = dir.join("recordings");
    config.log_dir = dir.join("logs");
    config
}

pub async fn start(config: SessionConfig) -> Session {
    Session::start(
        config,
        SessionOptions {
            publish_log: true,
            submission_log: true,
            shutdown_grace: None,
        },
    )
    .await
    .expect("session starts")
}

pub fn engine_url(addr: SocketAddr) -> String {
    format!("ws://{addr}/engine")
}

pub fn spawn_mock(
    addr: SocketAddr,
    name: &str,
    behavior: MockBehavior,
) -> JoinHandle<Result<u64, EngineClientError>> {
    let descriptor = EngineDescriptor::new(
        name,
        vec![PixelFormat::Gray8, PixelFormat::Rgb8, PixelFormat::Jpeg],
    );
    let url = engine_url(addr);
    tokio::spawn(async move { run_mock_engine(behavior, descriptor, &url).await })
}

pub async fn wait_up(session: &Session, names: &[&str]) {
    let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    assert!(
        session
            .registry()
            .wait_until_up(&names, Duration::from_secs(10))
            .await,
        "engines {names:?} never registered"
    );
}

pub type Ws =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

pub async fn ws(addr: SocketAddr, path: &str) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}{path}"))
        .await
        .expect("websocket connects")
        .0
}

/// Next result JSON from a `/results` socket, or `None` once it closes.
pub async fn next_result(ws: &mut Ws) -> Option<PredictionResult> {
    loop {
        match tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .ok()??
        {
            Ok(Message::Text(text)) => {
                return Some(serde_json::from_str(&text).expect("valid result JSON"))
            }
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

pub async fn send_text(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.to_string())).await.unwrap();
}

pub async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let resp = reqwest::get(format!("http://{addr}{path}"))
        .await
        .expect("http request");
    let status = resp.status().as_u16();
    (status, resp.text().await.unwrap())
}
