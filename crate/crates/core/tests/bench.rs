use std::hint::black_box;
use std::time::Duration;

use livegate::bench::{
    diff_report, measure_framework, measure_native, measure_native_mock, read_latencies_csv,
    write_samples_csv, BenchConfig, BenchError, LatencyStats,
};
use livegate::source::{Pattern, SyntheticSource};

fn frames(n: usize) -> Vec<livegate::frame::Frame> {
    let mut source = SyntheticSource::new(Pattern::MovingGradient, 640, 480, 10.0);
    (0..n).map(|_| source.generate_now()).collect()
}

#[test]
fn native_sleep_engine_mean_is_close_to_the_sleep() {
    let stats = measure_native(
        |_| std::thread::sleep(Duration::from_millis(100)),
        &frames(2),
        2,
        100,
    )
    .unwrap();
    let mean_ms = stats.mean_s * 1e3;
    assert!((100.0..=110.0).contains(&mean_ms), "mean {mean_ms} ms");
}

#[test]
fn constant_work_engine_is_stable() {
    let stats = measure_native(
        |frame| {
            let mut acc = 0u64;
            for _ in 0..20 {
                for &b in frame.payload.iter() {
                    acc = acc.wrapping_mul(31).wrapping_add(b as u64);
                }
            }
            black_box(acc);
        },
        &frames(4),
        5,
        60,
    )
    .unwrap();
    assert!(
        stats.std_s < 0.2 * stats.mean_s,
        "{} ± {}",
        stats.mean_s,
        stats.std_s
    );
}

#[test]
fn too_few_samples_is_rejected() {
    assert!(matches!(
        measure_native(|_| {}, &frames(1), 0, 1),
        Err(BenchError::TooFewSamples { .. })
    ));
}

#[tokio::test(flavor = "multi_thread")]
async fn framework_never_beats_native() {
    let config = BenchConfig {
        engine_delay_ms: 100,
        warmup: 3,
        samples: 30,
        ..BenchConfig::default()
    };
    let native = measure_native_mock(&config).unwrap();
    let framework = measure_framework(&config).await.unwrap();
    assert_eq!(framework.stats.n, 30);
    assert!(
        framework.stats.mean_s >= native.mean_s,
        "framework {} < native {}",
        framework.stats.mean_s,
        native.mean_s
    );
    let report = diff_report("test", &native, &framework.stats);
    assert!(report.diff_mean_s >= 0.0);

    // The CSV export reproduces the stats exactly.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frames.csv");
    write_samples_csv(&path, &framework.samples).unwrap();
    let again = LatencyStats::from_samples(read_latencies_csv(&path).unwrap()).unwrap();
    assert_eq!(again, framework.stats);
}

#[tokio::test(flavor = "multi_thread")]
async fn recording_stays_off_the_latency_path() {
    let dir = tempfile::tempdir().unwrap();
    let base = BenchConfig {
        warmup: 10,
        samples: 60,
        fps: 20.0,
        ..BenchConfig::default()
    };
    let without = measure_framework(&base).await.unwrap();
    let with = measure_framework(&BenchConfig {
        record_to: Some(dir.path().to_path_buf()),
        ..base.clone()
    })
    .await
    .unwrap();
    assert_eq!(with.recorded, Some(70));
    let delta_ms = (with.stats.mean_s - without.stats.mean_s).abs() * 1e3;
    assert!(
        delta_ms < 10.0,
        "recorder shifted the mean by {delta_ms} ms"
    );
}
