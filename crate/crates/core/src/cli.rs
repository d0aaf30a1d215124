//! The `livegate` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing::error;
use tracing_subscriber::EnvFilter;

use crate::bench::{self, BenchConfig};
use crate::config::{parse_config, ConfigError, ConfigOverrides, SessionConfig, CONFIG_ENV};
use crate::engine::{
    run_mock_engine, EngineClientError, EngineDescriptor, FailureMode, MockBehavior,
};
use crate::frame::PixelFormat;
use crate::recorder::{verify_recording, MANIFEST_FILE};
use crate::result::{Concept, Plane, Verdict};
use crate::session::{interrupt, Session, SessionEnd, SessionOptions, GATEWAY_ENV};
use crate::source::SourceSpec;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "livegate", version, about = "Live video inference gateway")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a session until the source ends or the process is interrupted.
    Run(SessionArgs),
    /// Run a session with a recording as the source.
    Replay {
        /// Recording directory (holds manifest.json).
        dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[command(flatten)]
        session: SessionArgs,
    },
    /// Check a recording's manifest and checksums.
    RecordVerify { dir: PathBuf },
    /// Measure per-frame latency natively and through the framework.
    Bench(BenchArgs),
    /// Serve the built-in mock engine against a gateway.
    MockEngine(MockArgs),
}

#[derive(Debug, Args, Default)]
pub struct SessionArgs {
    /// Session config file; falls back to $LIVEGATE_CONFIG, then to a
    /// built-in session with one supervised mock engine.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `device:<id>`, `replay:<manifest>[@speed]` or `synthetic:<pattern>:<W>x<H>@<fps>`.
    #[arg(long)]
    pub source: Option<SourceSpec>,
    /// Listen address [default: 127.0.0.1:8780]
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    /// Allow binding a non-loopback address.
    #[arg(long)]
    pub allow_lan: bool,
    /// Record every frame to the output directory
    #[arg(long)]
    pub record: bool,
    /// Where recordings go [default: recordings]
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// tracing filter, e.g. `info` or `livegate=debug`
    #[arg(long)]
    pub log_level: Option<String>,
    /// Directory holding the built viewer, served at `/`
    #[arg(long)]
    pub viewer_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    pub engine_delay_ms: u64,
    #[arg(long, default_value_t = 300)]
    pub samples: usize,
    #[arg(long, default_value_t = 30)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10.0)]
    pub fps: f64,
    /// Per-frame CSV: seq, t_capture_ns, t_result_ns, latency_s.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Column label in the report.
    #[arg(long, default_value = "this machine")]
    pub label: String,
    /// Record the stream while measuring, into this directory.
    #[arg(long)]
    pub record_to: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value = "mock-1")]
    pub name: String,
    #[arg(long, env = GATEWAY_ENV, default_value = "ws://127.0.0.1:8780/engine")]
    pub gateway: String,
    #[arg(long, default_value = "standard_plane")]
    pub verdict: String,
    #[arg(long, default_value = "head")]
    pub plane: String,
    #[arg(long, default_value_t = 0)]
    pub delay_ms: u64,
    /// Exit abruptly on the request after serving this many.
    #[arg(long)]
    pub crash_after: Option<u64>,
    /// Stop answering after serving this many requests.
    #[arg(long)]
    pub hang_after: Option<u64>,
    /// JSON file holding a full `MockBehavior`; overrides the other flags.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub max_concurrent: u32,
}

fn init_logging(level: &str) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .try_init();
}

/// Parses arguments and runs the chosen command.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    ExitCode::from(runtime.block_on(execute(cli)))
}

pub async fn execute(cli: Cli) -> u8 {
    match cli.command {
        Command::Run(args) => run_session(args, None).await,
        Command::Replay {
            dir,
            speed,
            session,
        } => {
            let manifest = dir.join(MANIFEST_FILE);
            run_session(session, Some(SourceSpec::replay(manifest, speed))).await
        }
        Command::RecordVerify { dir } => record_verify(&dir),
        Command::Bench(args) => run_bench(args).await,
        Command::MockEngine(args) => mock_engine(args).await,
    }
}

/// Loads the session config: `--config`, then `$LIVEGATE_CONFIG`, then
/// the built-in mock session.
pub fn load_config(
    args: &SessionArgs,
    source: Option<SourceSpec>,
) -> Result<SessionConfig, ConfigError> {
    let overrides = ConfigOverrides {
        source: source.or_else(|| args.source.clone()),
        bind: args.bind,
        allow_lan: args.allow_lan,
        record: args.record,
        output_dir: args.output_dir.clone(),
        log_level: args.log_level.clone(),
        viewer_dir: args.viewer_dir.clone(),
    };
    let path = args
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(path) => parse_config(&path, overrides),
        None => {
            let exe = std::env::current_exe().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let mut config = SessionConfig::with_mock_engine(&exe);
            config.apply(overrides);
            config.validate()?;
            Ok(config)
        }
    }
}

async fn run_session(args: SessionArgs, source: Option<SourceSpec>) -> u8 {
    let config = match load_config(&args, source) {
        Ok(c) => c,
        Err(e) => {
            init_logging("info");
            error!("config error: {e}");
            eprintln!("livegate: config error: {e}");
            return EXIT_CONFIG;
        }
    };
    init_logging(&config.log_level);
    let session = match Session::start(config, SessionOptions::default()).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("livegate: {e}");
            return EXIT_FAILURE;
        }
    };
    eprintln!("livegate: gateway on http://{}", session.addr());
    let summary = session.run(interrupt()).await;
    println!("{summary}");
    match summary.end {
        SessionEnd::SourceFailed { .. } => EXIT_FAILURE,
        SessionEnd::EndOfStream | SessionEnd::Interrupted => EXIT_OK,
    }
}

fn record_verify(dir: &Path) -> u8 {
    match verify_recording(dir) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string(&report).expect("report is serializable")
            );
            match report.first_bad_seq {
                Some(seq) => eprintln!("livegate: recording corrupt at seq {seq}"),
                None if !report.ok => eprintln!("livegate: recording failed verification"),
                None => {}
            }
            if report.ok {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("livegate: {e}");
            EXIT_FAILURE
        }
    }
}

async fn run_bench(args: BenchArgs) -> u8 {
    init_logging("warn");
    let config = BenchConfig {
        engine_delay_ms: args.engine_delay_ms,
        fps: args.fps,
        warmup: args.warmup,
        samples: args.samples,
        record_to: args.record_to,
        ..BenchConfig::default()
    };
    let native = match bench::measure_native_mock(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("livegate: {e}");
            return if matches!(e, bench::BenchError::TooFewSamples { .. }) {
                EXIT_CONFIG
            } else {
                EXIT_FAILURE
            };
        }
    };
    let run = match bench::measure_framework(&config).await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("livegate: {e}");
            return EXIT_FAILURE;
        }
    };
    let report = bench::diff_report(&args.label, &native, &run.stats);
    println!("{}", report.to_text(3));
    println!(
        "framework p50={:.4}s p95={:.4}s p99={:.4}s n={}",
        run.stats.p50_s, run.stats.p95_s, run.stats.p99_s, run.stats.n
    );
    if let Some(path) = args.csv {
        if let Err(e) = bench::write_samples_csv(&path, &run.samples) {
            eprintln!("livegate: {e}");
            return EXIT_FAILURE;
        }
    }
    EXIT_OK
}

fn mock_behavior(args: &MockArgs) -> Result<MockBehavior, String> {
    if let Some(path) = &args.script {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        return serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()));
    }
    let verdict: Verdict = serde_json::from_value(args.verdict.clone().into())
        .map_err(|e| format!("--verdict: {e}"))?;
    let plane: Plane =
        serde_json::from_value(args.plane.clone().into()).map_err(|e| format!("--plane: {e}"))?;
    let present = verdict == Verdict::StandardPlane;
    let concepts = vec![
        Concept::new("skull", present, 0.97),
        Concept::new("midline", present, 0.92),
    ];
    let mut behavior = MockBehavior::constant(verdict, plane, concepts, args.delay_ms);
    if let Some(n) = args.crash_after {
        behavior = behavior.with_failure(FailureMode::CrashAfterN { n });
    } else if let Some(n) = args.hang_after {
        behavior = behavior.with_failure(FailureMode::Hang { n });
    }
    Ok(behavior)
}

async fn mock_engine(args: MockArgs) -> u8 {
    init_logging("info");
    let behavior = match mock_behavior(&args) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("livegate: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut descriptor = EngineDescriptor::new(
        args.name.clone(),
        vec![PixelFormat::Gray8, PixelFormat::Rgb8, PixelFormat::Jpeg],
    );
    descriptor.stage_role = "mock".into();
    descriptor.max_concurrent = args.max_concurrent;
    match run_mock_engine(behavior, descriptor, &args.gateway).await {
        Ok(served) => {
            eprintln!(
                "livegate: mock engine {} done after {served} requests",
                args.name
            );
            EXIT_OK
        }
        Err(EngineClientError::Crashed { served }) => {
            eprintln!(
                "livegate: mock engine {} crashing after {served} requests",
                args.name
            );
            EXIT_FAILURE
        }
        Err(e) => {
            eprintln!("livegate: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn source_flag_parses_selectors() {
        let cli = Cli::try_parse_from([
            "livegate",
            "run",
            "--source",
            "synthetic:static:64x48@5",
            "--record",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else {
            panic!("expected run")
        };
        assert!(args.record);
        assert!(matches!(
            args.source,
            Some(SourceSpec::Synthetic { width: 64, .. })
        ));
    }

    #[test]
    fn built_in_config_honours_flags() {
        let args = SessionArgs {
            record: true,
            bind: Some("127.0.0.1:9999".parse().unwrap()),
            ..Default::default()
        };
        if std::env::var_os(CONFIG_ENV).is_some() {
            return;
        }
        let c = load_config(&args, None).unwrap();
        assert!(c.record);
        assert_eq!(c.bind.port(), 9999);
    }

    #[test]
    fn mock_flags_build_behavior() {
        let cli = Cli::try_parse_from([
            "livegate",
            "mock-engine",
            "--verdict",
            "near_standard_plane",
            "--plane",
            "femur",
            "--crash-after",
            "3",
        ])
        .unwrap();
        let Command::MockEngine(args) = cli.command else {
            panic!("expected mock-engine")
        };
        let b = mock_behavior(&args).unwrap();
        assert_eq!(b.script[0].verdict, Verdict::NearStandardPlane);
        assert_eq!(b.script[0].plane, Plane::Femur);
        assert_eq!(b.failure_mode, FailureMode::CrashAfterN { n: 3 });
        let mut bad = args;
        bad.verdict = "great".into();
        assert!(mock_behavior(&bad).is_err());
    }
}
