//! Coordinate frames: rigid transforms, timestamps, and the buffered frame tree.

mod time;
mod transform;
mod tree;

pub use time::{Timestamp, NANOS_PER_SEC};
pub use transform::{slerp, RigidTransform};
pub use tree::{FrameError, FrameTree, FrameTreeConfig, SharedFrameTree, StampedTransform};

/// Conventional frame ids.
pub const MAP_FRAME: &str = "map";
pub const VEHICLE_FRAME: &str = "vehicle";
pub const LIDAR_FRAME: &str = "lidar";

/// `a ∘ b`: applies `b` then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}
