//! Keep a flaky child process alive. The child exits with an error shortly
//! after each start; the supervisor restarts it after 1 s, 2 s, 4 s, and so
//! on, and kills the whole process group on shutdown.
//!
//! ```text
//! cargo run --example supervised_restart
//! ```

use std::time::Duration;

use livegate::supervisor::{ChildEventKind, ChildSpec, RestartPolicy, Supervisor};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let logs = tempfile::tempdir()?;
    let supervisor = Supervisor::new(Some(logs.path().to_path_buf()));

    let mut flaky = ChildSpec::new(
        "flaky",
        vec![
            "sh".into(),
            "-c".into(),
            "echo started; sleep 0.2; exit 3".into(),
        ],
    );
    flaky.restart = RestartPolicy::OnFailure;
    let child = supervisor.spawn(flaky)?;

    let steady = ChildSpec::new("steady", vec!["sleep".into(), "60".into()]);
    supervisor.spawn(steady)?;

    tokio::time::sleep(Duration::from_millis(7800)).await;
    for status in supervisor.children() {
        println!("{}", serde_json::to_string(&status)?);
    }
    supervisor.shutdown().await;

    let t0 = child.events().first().map(|e| e.t_ns).unwrap_or(0);
    for event in child.events() {
        let at = (event.t_ns - t0) as f64 / 1e9;
        match event.kind {
            ChildEventKind::RestartScheduled { delay_ms } => {
                println!("{at:6.2}s  restart in {delay_ms} ms")
            }
            kind => println!("{at:6.2}s  {kind:?}"),
        }
    }
    println!(
        "\nflaky.log:\n{}",
        std::fs::read_to_string(logs.path().join("flaky.log"))?
    );
    Ok(())
}
