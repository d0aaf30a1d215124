//! Routes the newest frame to inference engines and fans results out to
//! viewers.

mod dispatch;
mod registry;
mod results;
mod server;

pub use dispatch::{
    dispatch, DispatchMode, DispatchStats, Dispatcher, PipelineConfig, SubmissionRecord,
};
pub use registry::{
    DispatchError, EngineLink, EngineRegistry, EngineState, EngineStatus, Registration,
    RegistryError, StateTransition,
};
pub use results::{ResultHub, ResultSubscriber};
pub use server::{health, router, EngineHealth, GatewayState, Health, RecorderStatus, StatusBoard};
