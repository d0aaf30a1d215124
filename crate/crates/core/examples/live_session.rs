//! A complete session the way `livegate run` starts one: synthetic source,
//! recorder, and a supervised mock engine. Open the printed address in a
//! browser while it runs, or stop it early with Ctrl-C.
//!
//! ```text
//! cargo build && cargo run --example live_session -- [seconds]
//! ```

use std::path::PathBuf;
use std::time::Duration;

use livegate::config::SessionConfig;
use livegate::session::{interrupt, Session, SessionOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seconds: u64 = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(5);

    // The mock engine is the `livegate` binary itself.
    let exe = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/debug/livegate");
    if !exe.exists() {
        return Err(format!("{} not found; run `cargo build` first", exe.display()).into());
    }
    let scratch = tempfile::tempdir()?;
    let mut config = SessionConfig::with_mock_engine(&exe);
    config.bind = "127.0.0.1:0".parse()?;
    config.record = true;
    config.output_dir = scratch.path().join("recordings");
    config.log_dir = scratch.path().join("logs");

    let session = Session::start(config, SessionOptions::default()).await?;
    println!("viewer and /healthz on http://{}", session.addr());
    let addr = session.addr();

    let stop = async move {
        tokio::select! {
            _ = tokio::time::sleep(Duration::from_secs(seconds)) => {}
            _ = interrupt() => {}
        }
        let health = reqwest::get(format!("http://{addr}/healthz")).await;
        if let Ok(body) = match health {
            Ok(r) => r.text().await,
            Err(e) => Err(e),
        } {
            println!("healthz before stopping: {body}");
        }
    };
    println!("{}", session.run(stop).await);
    Ok(())
}
