//! A two-stage pipeline served by in-process mock engines. The second stage
//! receives the first stage's result alongside each frame.
//!
//! ```text
//! cargo run --example mock_pipeline
//! ```

use std::time::Duration;

use livegate::config::{EngineDecl, SessionConfig};
use livegate::engine::{run_mock_engine, EngineDescriptor, MockBehavior};
use livegate::frame::PixelFormat;
use livegate::gateway::PipelineConfig;
use livegate::result::{Concept, Plane, Verdict};
use livegate::session::{Session, SessionOptions};
use livegate::source::{Pattern, SyntheticSource};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let mut config = SessionConfig::with_mock_engine(std::path::Path::new("unused"));
    config.bind = "127.0.0.1:0".parse()?;
    config.pipeline = PipelineConfig {
        stages: vec!["classifier".into(), "explainer".into()],
        ..PipelineConfig::single("classifier")
    };
    config.engines = ["classifier", "explainer"]
        .into_iter()
        .map(|name| EngineDecl::External { name: name.into() })
        .collect();
    config.engine_wait_ms = 0;
    config.log_dir = scratch.path().to_path_buf();

    let session = Session::start(config, SessionOptions::default()).await?;
    let url = format!("ws://{}/engine", session.addr());
    println!("gateway on http://{}", session.addr());

    let stages = [
        ("classifier", MockBehavior::head_plane(20)),
        (
            "explainer",
            MockBehavior::constant(
                Verdict::StandardPlane,
                Plane::Head,
                vec![Concept::new("cavum", false, 0.12)],
                10,
            ),
        ),
    ];
    for (name, behavior) in stages {
        let url = url.clone();
        let descriptor = EngineDescriptor::new(name, vec![PixelFormat::Gray8]);
        tokio::spawn(async move { run_mock_engine(behavior, descriptor, &url).await });
    }
    let names = vec!["classifier".to_string(), "explainer".to_string()];
    if !session
        .registry()
        .wait_until_up(&names, Duration::from_secs(5))
        .await
    {
        return Err("engines did not register".into());
    }

    let mut results = session.hub().tap();
    let mut source = SyntheticSource::new(Pattern::MovingGradient, 128, 96, 20.0);
    let mut tick = tokio::time::interval(Duration::from_millis(50));
    for _ in 0..20 {
        tick.tick().await;
        session.bus().publish(source.generate_now())?;
    }
    tokio::time::sleep(Duration::from_millis(200)).await;

    while let Ok(r) = results.try_recv() {
        println!(
            "frame {:>2}  {:<10} {:?} {:?}  upstream={}  {:.1} ms",
            r.frame_seq,
            r.engine,
            r.status,
            r.verdict,
            r.upstream_seen,
            r.latency_ns() as f64 / 1e6
        );
    }
    println!("{}", session.stop().await);
    Ok(())
}
