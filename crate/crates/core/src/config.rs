//! Session configuration: one JSON document describing the whole topology.
//!
//! ```json
//! {
//!   "source": {"kind": "synthetic", "pattern": "moving-gradient", "width": 640, "height": 480, "fps": 10},
//!   "bind": "127.0.0.1:8780",
//!   "record": true,
//!   "output_dir": "recordings",
//!   "pipeline": {"stages": ["mock-1"], "mode": "continuous"},
//!   "engines": [
//!     {"launch": "supervised", "name": "mock-1", "command": ["livegate", "mock-engine", "--name", "mock-1"]},
//!     {"launch": "external", "name": "pcbm"}
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::PipelineConfig;
use crate::source::{Pattern, SourceSpec};
use crate::supervisor::ChildSpec;

/// Config path fallback when no `--config` flag is given.
pub const CONFIG_ENV: &str = "LIVEGATE_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:8780";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("{path}:{line}:{column}: at `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("pipeline stage `{0}` is not a declared engine")]
    UnresolvedEngine(String),
    #[error("{0}")]
    Invalid(String),
}

/// An engine the session expects. Supervised engines are launched and kept
/// alive by the session; external ones connect on their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "launch", rename_all = "kebab-case")]
pub enum EngineDecl {
    Supervised(ChildSpec),
    External { name: String },
}

impl EngineDecl {
    pub fn name(&self) -> &str {
        match self {
            EngineDecl::Supervised(spec) => &spec.name,
            EngineDecl::External { name } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub source: SourceSpec,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Required for any non-loopback `bind`.
    #[serde(default)]
    pub allow_lan: bool,
    #[serde(default)]
    pub record: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub engines: Vec<EngineDecl>,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    /// Where supervised children write `<name>.log`.
    #[serde(default = "default_log_dir")]
    pub log_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewer_dir: Option<PathBuf>,
    /// How long to wait for pipeline engines before frames start flowing.
    #[serde(default = "default_engine_wait_ms")]
    pub engine_wait_ms: u64,
}

fn default_bind() -> SocketAddr {
    DEFAULT_BIND.parse().unwrap()
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("recordings")
}
fn default_log_level() -> String {
    "info".into()
}
fn default_log_dir() -> PathBuf {
    PathBuf::from("logs")
}
fn default_engine_wait_ms() -> u64 {
    10_000
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub source: Option<SourceSpec>,
    pub bind: Option<SocketAddr>,
    pub allow_lan: bool,
    pub record: bool,
    pub output_dir: Option<PathBuf>,
    pub log_level: Option<String>,
    pub viewer_dir: Option<PathBuf>,
}

impl SessionConfig {
    /// A self-contained session: moving-gradient source and one supervised
    /// mock engine launched from `exe`.
    pub fn with_mock_engine(exe: &Path) -> Self {
        let mock = ChildSpec::new(
            "mock-1",
            vec![
                exe.display().to_string(),
                "mock-engine".into(),
                "--name".into(),
                "mock-1".into(),
            ],
        );
        SessionConfig {
            source: SourceSpec::synthetic(Pattern::MovingGradient, 640, 480, 10.0),
            bind: default_bind(),
            allow_lan: false,
            record: false,
            output_dir: default_output_dir(),
            pipeline: PipelineConfig::single("mock-1"),
            engines: vec![EngineDecl::Supervised(mock)],
            log_level: default_log_level(),
            log_dir: default_log_dir(),
            viewer_dir: None,
            engine_wait_ms: default_engine_wait_ms(),
        }
    }

    pub fn apply(&mut self, o: ConfigOverrides) {
        if let Some(source) = o.source {
            self.source = source;
        }
        if let Some(bind) = o.bind {
            self.bind = bind;
        }
        self.allow_lan |= o.allow_lan;
        self.record |= o.record;
        if let Some(dir) = o.output_dir {
            self.output_dir = dir;
        }
        if let Some(level) = o.log_level {
            self.log_level = level;
        }
        if let Some(dir) = o.viewer_dir {
            self.viewer_dir = Some(dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.source
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("source: {e}")))?;
        if self.bind.port() == 0 {
            return Err(ConfigError::Invalid(
                "bind port must be in 1..=65535".into(),
            ));
        }
        if !self.bind.ip().is_loopback() && !self.allow_lan {
            return Err(ConfigError::Invalid(format!(
                "bind {} is not loopback; pass --allow-lan to serve the local network",
                self.bind
            )));
        }
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("pipeline: {e}")))?;
        let mut names = HashSet::new();
        for engine in &self.engines {
            if !names.insert(engine.name()) {
                return Err(ConfigError::Invalid(format!(
                    "engine `{}` declared twice",
                    engine.name()
                )));
            }
            if let EngineDecl::Supervised(spec) = engine {
                spec.validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        if let Some(stage) = self
            .pipeline
            .stages
            .iter()
            .find(|s| !names.contains(s.as_str()))
        {
            return Err(ConfigError::UnresolvedEngine(stage.clone()));
        }
        Ok(())
    }

    pub fn supervised(&self) -> impl Iterator<Item = &ChildSpec> {
        self.engines.iter().filter_map(|e| match e {
            EngineDecl::Supervised(spec) => Some(spec),
            EngineDecl::External { .. } => None,
        })
    }
}

/// Parses a config document. `path` is only used in diagnostics.
pub fn parse_config_str(text: &str, path: &Path) -> Result<SessionConfig, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: SessionConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path: path.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        field: ".".into(),
        message: e.to_string(),
    })?;
    Ok(config)
}

/// Reads `path`, applies `overrides`, and validates the result.
pub fn parse_config(path: &Path, overrides: ConfigOverrides) -> Result<SessionConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut config = parse_config_str(&text, path)?;
    config.apply(overrides);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "source": {"kind": "synthetic", "pattern": "static", "width": 64, "height": 48, "fps": 10},
        "pipeline": {"stages": ["mock-1"]},
        "engines": [{"launch": "supervised", "name": "mock-1", "command": ["livegate", "mock-engine"]}]
    }"#;

    fn parse(text: &str) -> Result<SessionConfig, ConfigError> {
        let c = parse_config_str(text, Path::new("test.json"))?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_config_is_valid() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.bind, "127.0.0.1:8780".parse().unwrap());
        assert!(!c.record);
        assert_eq!(c.supervised().count(), 1);
    }

    #[test]
    fn undeclared_stage_is_unresolved() {
        let text = MINIMAL.replace(r#""stages": ["mock-1"]"#, r#""stages": ["pcbm"]"#);
        assert!(matches!(parse(&text), Err(ConfigError::UnresolvedEngine(s)) if s == "pcbm"));
    }

    #[test]
    fn external_engines_resolve_stages() {
        let text = MINIMAL.replace(r#""stages": ["mock-1"]"#, r#""stages": ["mock-1", "pcbm"]"#);
        let text = text.replace(
            r#""command": ["livegate", "mock-engine"]}"#,
            r#""command": ["livegate", "mock-engine"]}, {"launch": "external", "name": "pcbm"}"#,
        );
        assert!(parse(&text).is_ok());
    }

    #[test]
    fn record_flag_overrides_file() {
        let text = MINIMAL.replacen('{', r#"{"record": false,"#, 1);
        let mut c = parse(&text).unwrap();
        c.apply(ConfigOverrides {
            record: true,
            ..Default::default()
        });
        assert!(c.record);
    }

    #[test]
    fn lan_bind_needs_allow_lan() {
        let text = MINIMAL.replacen('{', r#"{"bind": "0.0.0.0:8780","#, 1);
        assert!(matches!(parse(&text), Err(ConfigError::Invalid(_))));
        let text = MINIMAL.replacen('{', r#"{"bind": "0.0.0.0:8780", "allow_lan": true,"#, 1);
        assert!(parse(&text).is_ok());
    }

    #[test]
    fn port_zero_is_rejected() {
        let text = MINIMAL.replacen('{', r#"{"bind": "127.0.0.1:0","#, 1);
        assert!(matches!(parse(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn parse_errors_carry_location_and_field() {
        let text = MINIMAL.replace(
            r#""stages": ["mock-1"]"#,
            r#""stages": ["mock-1"], "engine_timeout_ms": "soon""#,
        );
        match parse(&text) {
            Err(ConfigError::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "pipeline.engine_timeout_ms");
            }
            other => panic!("unexpected {other:?}"),
        }
        // Tagged sections report the section, not the leaf.
        let text = MINIMAL.replace(r#""fps": 10"#, r#""fps": "fast""#);
        assert!(matches!(parse(&text), Err(ConfigError::Parse { field, .. }) if field == "source"));
        let text = MINIMAL.replacen('{', r#"{"recrod": true,"#, 1);
        assert!(matches!(parse(&text), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn round_trip_is_identical() {
        let c = parse(MINIMAL).unwrap();
        let again = parse(&serde_json::to_string_pretty(&c).unwrap()).unwrap();
        assert_eq!(c, again);
        let built_in = SessionConfig::with_mock_engine(Path::new("/usr/bin/livegate"));
        built_in.validate().unwrap();
        assert_eq!(
            built_in,
            parse(&serde_json::to_string(&built_in).unwrap()).unwrap()
        );
    }
}
