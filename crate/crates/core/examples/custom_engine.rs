//! Writing an engine from scratch with [`EngineConnection`]: this one calls
//! only accepts a frame as a standard plane when it has visible texture.
//!
//! ```text
//! livegate run &                                  # a gateway on :8780
//! cargo run --example custom_engine -- ws://127.0.0.1:8780/engine
//! ```
//!
//! Started without an argument it brings up its own gateway and feeds it a
//! few synthetic frames.

use std::time::{Duration, Instant};

use livegate::config::{EngineDecl, SessionConfig};
use livegate::engine::{EngineConnection, EngineDescriptor, InferReply, InferRequest};
use livegate::frame::{Frame, FrameMeta, PixelFormat};
use livegate::gateway::PipelineConfig;
use livegate::result::{Concept, Plane, Verdict};
use livegate::session::{Session, SessionOptions};
use livegate::source::{synthetic_pattern, Pattern};

fn texture(request: &InferRequest) -> InferReply {
    let started = Instant::now();
    let payload = &request.frame.payload;
    let n = payload.len().max(1) as f64;
    let mean = payload.iter().map(|&b| b as f64).sum::<f64>() / n;
    let std = (payload
        .iter()
        .map(|&b| (b as f64 - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let textured = std > 10.0;
    InferReply {
        request_id: request.request_id,
        frame_seq: request.frame.seq(),
        verdict: if textured {
            Verdict::StandardPlane
        } else {
            Verdict::UnknownPlane
        },
        plane: Plane::Other,
        concepts: vec![Concept::new("texture", textured, (std / 128.0).min(1.0))],
        engine_ms: started.elapsed().as_secs_f64() * 1e3,
        upstream_seen: request.upstream.is_some(),
        error: None,
    }
}

async fn serve(url: String) -> Result<u64, Box<dyn std::error::Error + Send + Sync>> {
    let descriptor = EngineDescriptor::new("texture", vec![PixelFormat::Gray8]);
    let mut conn = EngineConnection::connect(&url, descriptor).await?;
    let mut served = 0;
    while let Some(request) = conn.next_request().await? {
        conn.send_reply(&texture(&request)).await?;
        served += 1;
    }
    Ok(served)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    if let Some(url) = std::env::args().nth(1) {
        let served = serve(url).await?;
        println!("gateway closed after {served} requests");
        return Ok(());
    }

    let scratch = tempfile::tempdir()?;
    let mut config = SessionConfig::with_mock_engine(std::path::Path::new("unused"));
    config.bind = "127.0.0.1:0".parse()?;
    config.pipeline = PipelineConfig::single("texture");
    config.engines = vec![EngineDecl::External {
        name: "texture".into(),
    }];
    config.engine_wait_ms = 0;
    config.log_dir = scratch.path().to_path_buf();
    let session = Session::start(config, SessionOptions::default()).await?;

    let engine = tokio::spawn(serve(format!("ws://{}/engine", session.addr())));
    session
        .registry()
        .wait_until_up(&["texture".to_string()], Duration::from_secs(5))
        .await;

    let mut results = session.hub().tap();
    let inputs = [
        ("blank", vec![0u8; 64 * 64]),
        (
            "checkerboard",
            synthetic_pattern(Pattern::Static, 64, 64, 1),
        ),
        ("noise", synthetic_pattern(Pattern::Noise, 64, 64, 2)),
    ];
    for (seq, (label, payload)) in inputs.into_iter().enumerate() {
        let meta = FrameMeta {
            seq: seq as u64,
            t_capture_ns: livegate::clock::monotonic_ns(),
            t_wall_ns: livegate::clock::wall_ns(),
            width: 64,
            height: 64,
            pixel_format: PixelFormat::Gray8,
        };
        let frame = Frame::new(meta, payload)?;
        session.bus().publish(frame)?;
        let r = results.recv().await.ok_or("no result")?;
        println!("{label:>12}: {:?} {:?}", r.verdict, r.concepts);
    }
    println!("{}", session.stop().await);
    println!("engine served {} requests", engine.await??);
    Ok(())
}
