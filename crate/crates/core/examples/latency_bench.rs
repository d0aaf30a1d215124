//! Compare end-to-end latency through the gateway with calling the engine
//! directly, at a few simulated engine delays.
//!
//! ```text
//! cargo run --release --example latency_bench
//! ```

use livegate::bench::{diff_report, measure_framework, measure_native_mock, BenchConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    for delay in [0, 20, 50] {
        let config = BenchConfig {
            engine_delay_ms: delay,
            warmup: 5,
            samples: 40,
            ..BenchConfig::default()
        };
        let native = measure_native_mock(&config)?;
        let framework = measure_framework(&config).await?;
        let report = diff_report(&format!("{delay} ms engine"), &native, &framework.stats);
        println!("{}", report.to_text(4));
        println!(
            "framework p50 {:.2} ms, p95 {:.2} ms, p99 {:.2} ms\n",
            framework.stats.p50_s * 1e3,
            framework.stats.p95_s * 1e3,
            framework.stats.p99_s * 1e3
        );
    }
    Ok(())
}
