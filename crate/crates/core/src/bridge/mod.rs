//! Renderer bridge: the binary wire protocol, axis-convention conversion and
//! the TCP publish server.

mod client;
mod convention;
mod server;
pub mod wire;

pub use client::BridgeClient;
pub use convention::{conversion_matrix, convert_point, convert_pose, Handedness, RendererConvention, UpAxis};
pub use server::{
    resolve_port, AgentPose, BridgeConfig, BridgeError, BridgePublisher, BridgeServer, BridgeSnapshot, Topic,
    DEFAULT_PORT, DEFAULT_RATE_HZ, PORT_ENV, RELIABLE_QUEUE_DEPTH,
};
pub use wire::{decode, encode, WireError, WireMessage, WIRE_MAGIC};
