use std::sync::OnceLock;

use super::io::cloud_hash;
use super::{PointCloud, SpatialIndex};

/// An immutable point-cloud map with its spatial index.
///
/// Shared by both execution platforms: staged entities live in its frame, and
/// the localizer registers scans against it.
#[derive(Debug)]
pub struct PointCloudMap {
    cloud: PointCloud,
    index: SpatialIndex,
    hash: OnceLock<String>,
}

impl Clone for PointCloudMap {
    fn clone(&self) -> Self {
        PointCloudMap { cloud: self.cloud.clone(), index: self.index.clone(), hash: self.hash.clone() }
    }
}

impl PointCloudMap {
    pub fn new(cloud: PointCloud) -> Self {
        let index = SpatialIndex::build(&cloud);
        PointCloudMap { cloud, index, hash: OnceLock::new() }
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Hex SHA-256 of the map's file encoding.
    pub fn hash(&self) -> &str {
        self.hash.get_or_init(|| cloud_hash(&self.cloud))
    }

    /// Distance from `p` to the closest map point, if the map is non-empty.
    pub fn distance_to(&self, p: &[f64; 3]) -> Option<f64> {
        self.index.nearest(p).map(|n| n.distance)
    }
}
