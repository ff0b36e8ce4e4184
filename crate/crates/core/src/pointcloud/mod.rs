//! Point clouds: storage, file formats, voxel reduction, the kd-tree index and
//! map building.

mod cloud;
pub mod io;
mod kdtree;
mod map;
mod mapping;
pub mod pcd;
mod voxel;

pub use cloud::{transform_cloud, Aabb, Point, PointCloud};
pub use io::{cloud_hash, decode_cloud, encode_cloud, load_cloud, save_cloud, CloudIoError};
pub use kdtree::{Neighbor, SpatialIndex};
pub use map::PointCloudMap;
pub use mapping::{build_map, build_map_from_scans, BuiltMap, MapBuildConfig, MapBuildError};
pub use voxel::{voxel_downsample, voxel_key, VoxelGrid, VoxelKey};
