//! livegate: live video inference gateway.
//!
//! Frames flow from a [`source`] onto the [`bus`], where the
//! [`recorder`] takes every frame and the [`gateway`] takes only the newest.
//! The gateway hands frames to engines speaking the [`engine`] protocol and
//! fans their results out to viewers. The [`supervisor`] keeps engine
//! processes alive; [`bench`] measures what the path costs.

pub mod bench;
pub mod bus;
pub mod cli;
pub mod clock;
pub mod config;
pub mod engine;
pub mod frame;
pub mod freeze;
pub mod gateway;
pub mod recorder;
pub mod result;
pub mod session;
pub mod source;
pub mod supervisor;
pub mod wire;
