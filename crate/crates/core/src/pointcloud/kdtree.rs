//! Static kd-tree over 3-D points.
//!
//! Splits on the axis of largest extent at the median. Results are exact and
//! ties on distance break toward the lower original point index, so queries
//! agree with an exhaustive scan bit for bit.

use super::PointCloud;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Index into the cloud the index was built from.
    pub index: usize,
    pub distance: f64,
    pub distance_squared: f64,
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn better(d2: f64, id: u32, best_d2: f64, best_id: u32) -> bool {
    d2 < best_d2 || (d2 == best_d2 && id < best_id)
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.xyz()).collect();
        Self::from_xyz(points)
    }

    pub fn from_xyz(points: Vec<[f64; 3]>) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        if n > 0 {
            build_node(&points, &mut order, 0, n, &mut nodes);
        }
        let reordered = order.iter().map(|&i| points[i as usize]).collect();
        SpatialIndex { points: reordered, ids: order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates of the point with original index `index`.
    pub fn point(&self, index: usize) -> [f64; 3] {
        // ids is a permutation; a reverse lookup is only needed off the hot path
        let pos = self.ids.iter().position(|&i| i as usize == index).expect("index out of range");
        self.points[pos]
    }

    pub fn nearest(&self, q: &[f64; 3]) -> Option<Neighbor> {
        self.nearest_within(q, f64::INFINITY)
    }

    /// Nearest point no farther than `max_distance` (inclusive).
    pub fn nearest_within(&self, q: &[f64; 3], max_distance: f64) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (max_distance * max_distance, u32::MAX, usize::MAX);
        self.search_nearest(0, q, &mut best);
        if best.2 == usize::MAX {
            return None;
        }
        let pos = best.2;
        Some(Neighbor { index: self.ids[pos] as usize, distance: best.0.sqrt(), distance_squared: best.0 })
    }

    /// Like [`nearest_within`](Self::nearest_within) but also returns the
    /// neighbor's coordinates, avoiding a second lookup.
    pub fn nearest_point_within(&self, q: &[f64; 3], max_distance: f64) -> Option<(Neighbor, [f64; 3])> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (max_distance * max_distance, u32::MAX, usize::MAX);
        self.search_nearest(0, q, &mut best);
        if best.2 == usize::MAX {
            return None;
        }
        let pos = best.2;
        Some((
            Neighbor { index: self.ids[pos] as usize, distance: best.0.sqrt(), distance_squared: best.0 },
            self.points[pos],
        ))
    }

    fn search_nearest(&self, node: usize, q: &[f64; 3], best: &mut (f64, u32, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start as usize..end as usize {
                    let d2 = dist2(&self.points[pos], q);
                    let id = self.ids[pos];
                    if d2 <= best.0 && (best.2 == usize::MAX || better(d2, id, best.0, best.1)) {
                        *best = (d2, id, pos);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_nearest(near as usize, q, best);
                if diff * diff <= best.0 {
                    self.search_nearest(far as usize, q, best);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), sorted by ascending distance,
    /// ties by original index.
    pub fn radius_search(&self, q: &[f64; 3], radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        if self.nodes.is_empty() || radius < 0.0 {
            return out;
        }
        let r2 = radius * radius;
        self.search_radius(0, q, r2, &mut out);
        out.sort_by(|a, b| a.distance_squared.total_cmp(&b.distance_squared).then(a.index.cmp(&b.index)));
        out
    }

    fn search_radius(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start as usize..end as usize {
                    let d2 = dist2(&self.points[pos], q);
                    if d2 <= r2 {
                        out.push(Neighbor { index: self.ids[pos] as usize, distance: d2.sqrt(), distance_squared: d2 });
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search_radius(near as usize, q, r2, out);
                if diff * diff <= r2 {
                    self.search_radius(far as usize, q, r2, out);
                }
            }
        }
    }
}

fn build_node(points: &[[f64; 3]], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
        return id;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &order[start..end] {
        let p = &points[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dim = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    if hi[dim] - lo[dim] == 0.0 {
        // all coincident
        nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
        return id;
    }
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a as usize][dim].total_cmp(&points[b as usize][dim]).then(a.cmp(&b))
    });
    let value = points[order[mid] as usize][dim];
    nodes.push(Node::Split { dim: dim as u8, value, left: 0, right: 0 });
    let left = build_node(points, order, start, mid, nodes);
    let right = build_node(points, order, mid, end, nodes);
    nodes[id as usize] = Node::Split { dim: dim as u8, value, left, right };
    id
}
