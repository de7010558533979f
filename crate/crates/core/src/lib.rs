//! A layered distributed debugging engine over a simulated message-passing
//! runtime, and a controller that drives an application through an ordered
//! list of global breakpoints read from a behavior specification.
//!
//! Layers, bottom up:
//!
//! * [`engine`]: local engine owning the node debuggers of one node.
//! * [`remote`]: node daemon plus a routing library mapping global tids
//!   to `(node, local tid)`.
//! * [`hub`]: multi-client daemon that serializes requests and delivers
//!   replies and notifications as events.
//!
//! [`launcher`] captures debug-flagged spawns, [`tess`] reads behavior
//! specifications and [`deipa`] drives the application through them.

pub mod client;
pub mod console;
pub mod corpus;
pub mod deipa;
pub mod engine;
pub mod hub;
pub mod launcher;
pub mod minipvm;
mod net;
pub mod remote;
pub mod service;
pub mod tess;
pub mod wire;

pub use net::ServerHandle;
