use std::collections::HashMap;

use super::{Point, PointCloud};

pub type VoxelKey = (i64, i64, i64);

pub fn voxel_key(p: &Point, voxel: f64) -> VoxelKey {
    ((p.x / voxel).floor() as i64, (p.y / voxel).floor() as i64, (p.z / voxel).floor() as i64)
}

#[derive(Clone, Debug, Default)]
struct Cell {
    sum: [f64; 3],
    intensity_sum: f64,
    intensity_count: usize,
    count: usize,
}

/// Incremental centroid grid. Output order is the order in which voxels were
/// first occupied, so results are deterministic for a given insertion order.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    voxel: f64,
    lookup: HashMap<VoxelKey, usize>,
    cells: Vec<Cell>,
}

impl VoxelGrid {
    pub fn new(voxel: f64) -> Self {
        assert!(voxel > 0.0 && voxel.is_finite(), "voxel size must be positive");
        VoxelGrid { voxel, lookup: HashMap::new(), cells: Vec::new() }
    }

    pub fn voxel(&self) -> f64 {
        self.voxel
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn insert(&mut self, p: &Point) {
        let key = voxel_key(p, self.voxel);
        let next = self.cells.len();
        let idx = *self.lookup.entry(key).or_insert(next);
        if idx == next {
            self.cells.push(Cell::default());
        }
        let cell = &mut self.cells[idx];
        cell.sum[0] += p.x;
        cell.sum[1] += p.y;
        cell.sum[2] += p.z;
        cell.count += 1;
        if let Some(i) = p.intensity {
            cell.intensity_sum += i as f64;
            cell.intensity_count += 1;
        }
    }

    pub fn extend<'a>(&mut self, points: impl IntoIterator<Item = &'a Point>) {
        for p in points {
            self.insert(p);
        }
    }

    pub fn centroids(&self) -> Vec<Point> {
        self.cells
            .iter()
            .map(|c| {
                let n = c.count as f64;
                let intensity = (c.intensity_count == c.count).then(|| (c.intensity_sum / n) as f32);
                Point { x: c.sum[0] / n, y: c.sum[1] / n, z: c.sum[2] / n, intensity }
            })
            .collect()
    }
}

/// One output point per occupied voxel, at the centroid of its members.
/// Intensity is averaged when every member carries one.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut grid = VoxelGrid::new(voxel);
    grid.extend(&cloud.points);
    PointCloud { points: grid.centroids(), frame: cloud.frame.clone() }
}
