//! Plug-and-play DC microgrid control: network model, decentralized baseline,
//! distributed L1 adaptive augmentation, offline certification and an
//! event-driven nonlinear simulator.

pub mod baseline;
pub mod certification;
pub mod grid;
pub mod l1;
pub mod linalg;
pub mod metrics;
pub mod plant;
pub mod presets;
pub mod sim;

pub use grid::{DguParams, LineParams, MicrogridTopology, NodeId};
pub use plant::LineModel;
