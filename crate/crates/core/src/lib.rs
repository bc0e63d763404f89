//! Discrete-event simulator of a single-hop vehicular network in which
//! vehicles deliver urgent and routine traffic to one roadside sink.
//!
//! Two MAC protocols are modelled: plain EDCA CSMA/CA with RTS/CTS, and
//! FROG, which splits routine packets into fragments separated by short
//! pauses so urgent traffic can cut in.

pub mod channel;
pub mod config;
pub mod edca;
pub mod engine;
pub mod error;
pub mod frog;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod sweep;
pub mod time;
pub mod traffic;

pub use channel::{Channel, Frame, FrameKind, NodeId};
pub use config::{parse_config, Protocol, ScenarioConfig};
pub use edca::PriorityClass;
pub use error::SimError;
pub use metrics::{Aggregate, RunSummary};
pub use sim::{RunOutput, Simulation};
pub use time::SimTime;
