//! Kernel-side half of a learned-policy offload: a lifecycle-managed proxy
//! that arbitrates between an installed decision program and a baseline
//! heuristic, the framed wire protocol to a user-space agent, and a
//! deterministic log-structured GC simulator to drive it.
//!
//! Everything here is integer arithmetic over [`fxp::Fx32`]; the crate is
//! `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod digest;
pub mod efficiency;
pub mod fxp;
pub mod gc_sim;
pub mod kernel;
pub mod policy;
pub mod proxy;
pub mod wire;

pub use fxp::Fx32;
pub use proxy::{Arm, Lifecycle, MlModelProxy, Mode, ProxyConfig, ProxyError};
