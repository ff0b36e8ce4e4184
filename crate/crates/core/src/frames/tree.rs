use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use super::{RigidTransform, Timestamp, NANOS_PER_SEC};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("inserting {parent} -> {child} would create a cycle")]
    Cycle { parent: String, child: String },
    #[error("frame {child} already has parent {existing}; cannot reparent to {requested}")]
    Reparent { child: String, existing: String, requested: String },
    #[error("unknown frame {0}")]
    UnknownFrame(String),
    #[error("frames {0} and {1} are not connected")]
    NotConnected(String, String),
    #[error("lookup of {parent} -> {child} at {at} outside buffered range [{oldest}, {newest}]")]
    Extrapolation { parent: String, child: String, at: Timestamp, oldest: Timestamp, newest: Timestamp },
}

/// A parent→child relative transform valid at `stamp`.
#[derive(Clone, Debug, PartialEq)]
pub struct StampedTransform {
    pub parent: String,
    pub child: String,
    pub stamp: Timestamp,
    pub transform: RigidTransform,
}

impl StampedTransform {
    pub fn new(parent: impl Into<String>, child: impl Into<String>, stamp: Timestamp, transform: RigidTransform) -> Self {
        StampedTransform { parent: parent.into(), child: child.into(), stamp, transform }
    }
}

#[derive(Clone, Debug)]
pub struct FrameTreeConfig {
    pub retention_nanos: u64,
    pub extrapolation_slack_nanos: u64,
}

impl Default for FrameTreeConfig {
    fn default() -> Self {
        FrameTreeConfig { retention_nanos: 10 * NANOS_PER_SEC, extrapolation_slack_nanos: 100_000_000 }
    }
}

#[derive(Clone, Debug)]
struct EdgeBuffer {
    parent: String,
    is_static: bool,
    entries: Vec<(Timestamp, RigidTransform)>,
}

impl EdgeBuffer {
    fn sample(&self, child: &str, at: Timestamp, slack: u64) -> Result<RigidTransform, FrameError> {
        if self.is_static {
            return Ok(self.entries[0].1);
        }
        let (oldest, first) = self.entries[0];
        let (newest, last) = *self.entries.last().expect("edge buffers are never empty");
        if at.0 + slack < oldest.0 || at.0 > newest.0 + slack {
            return Err(FrameError::Extrapolation {
                parent: self.parent.clone(),
                child: child.to_string(),
                at,
                oldest,
                newest,
            });
        }
        if at <= oldest {
            return Ok(first);
        }
        if at >= newest {
            return Ok(last);
        }
        match self.entries.binary_search_by_key(&at, |e| e.0) {
            Ok(i) => Ok(self.entries[i].1),
            Err(i) => {
                let (t0, a) = self.entries[i - 1];
                let (t1, b) = self.entries[i];
                let s = (at.0 - t0.0) as f64 / (t1.0 - t0.0) as f64;
                Ok(RigidTransform::interpolate(&a, &b, s))
            }
        }
    }
}

/// Tree of coordinate frames with time-buffered parent→child transforms.
///
/// Every child has exactly one parent. `lookup(target, source, t)` returns the
/// transform that maps coordinates expressed in `source` into `target`,
/// chaining edges through the lowest common ancestor.
#[derive(Clone, Debug, Default)]
pub struct FrameTree {
    config: FrameTreeConfig,
    frames: BTreeSet<String>,
    /// Keyed by child frame.
    edges: HashMap<String, EdgeBuffer>,
}

impl FrameTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_config(config: FrameTreeConfig) -> Self {
        FrameTree { config, ..Default::default() }
    }

    pub fn config(&self) -> &FrameTreeConfig {
        &self.config
    }

    pub fn frames(&self) -> impl Iterator<Item = &str> {
        self.frames.iter().map(String::as_str)
    }

    pub fn contains(&self, frame: &str) -> bool {
        self.frames.contains(frame)
    }

    pub fn parent_of(&self, frame: &str) -> Option<&str> {
        self.edges.get(frame).map(|e| e.parent.as_str())
    }

    /// Buffered stamps on the edge ending at `child`, oldest first.
    pub fn stamps(&self, child: &str) -> Vec<Timestamp> {
        self.edges.get(child).map(|e| e.entries.iter().map(|x| x.0).collect()).unwrap_or_default()
    }

    fn check_link(&self, parent: &str, child: &str) -> Result<(), FrameError> {
        let cycle = || FrameError::Cycle { parent: parent.to_string(), child: child.to_string() };
        if parent == child {
            return Err(cycle());
        }
        if let Some(edge) = self.edges.get(child) {
            if edge.parent != parent {
                return Err(FrameError::Reparent {
                    child: child.to_string(),
                    existing: edge.parent.clone(),
                    requested: parent.to_string(),
                });
            }
            return Ok(());
        }
        // child must not be an ancestor of parent
        let mut cur = parent;
        while let Some(edge) = self.edges.get(cur) {
            if edge.parent == child {
                return Err(cycle());
            }
            cur = &edge.parent;
        }
        Ok(())
    }

    pub fn set_transform(&mut self, st: StampedTransform) -> Result<(), FrameError> {
        self.check_link(&st.parent, &st.child)?;
        if let Some(edge) = self.edges.get(&st.child) {
            if edge.is_static {
                return Err(FrameError::Reparent {
                    child: st.child.clone(),
                    existing: edge.parent.clone(),
                    requested: st.parent.clone(),
                });
            }
        }
        self.frames.insert(st.parent.clone());
        self.frames.insert(st.child.clone());
        let retention = self.config.retention_nanos;
        let edge = self.edges.entry(st.child).or_insert_with(|| EdgeBuffer {
            parent: st.parent,
            is_static: false,
            entries: Vec::new(),
        });
        match edge.entries.binary_search_by_key(&st.stamp, |e| e.0) {
            Ok(i) => edge.entries[i].1 = st.transform,
            Err(i) => edge.entries.insert(i, (st.stamp, st.transform)),
        }
        let newest = edge.entries.last().unwrap().0;
        let cutoff = newest.saturating_sub_nanos(retention);
        let keep_from = edge.entries.partition_point(|e| e.0 < cutoff);
        edge.entries.drain(..keep_from);
        Ok(())
    }

    /// Registers a time-invariant edge (e.g. vehicle→lidar mounting).
    pub fn set_static_transform(&mut self, parent: &str, child: &str, transform: RigidTransform) -> Result<(), FrameError> {
        self.check_link(parent, child)?;
        self.frames.insert(parent.to_string());
        self.frames.insert(child.to_string());
        self.edges.insert(
            child.to_string(),
            EdgeBuffer { parent: parent.to_string(), is_static: true, entries: vec![(Timestamp::ZERO, transform)] },
        );
        Ok(())
    }

    fn ancestors<'a>(&'a self, frame: &'a str) -> Vec<&'a str> {
        let mut chain = vec![frame];
        let mut cur = frame;
        while let Some(edge) = self.edges.get(cur) {
            cur = &edge.parent;
            chain.push(cur);
        }
        chain
    }

    /// Transform from `ancestor` to `frame` (points in `frame` → `ancestor`).
    fn chain_down(&self, path_up: &[&str], at: Timestamp) -> Result<RigidTransform, FrameError> {
        // path_up = [frame, parent, ..., ancestor]
        let mut acc = RigidTransform::identity();
        for child in path_up[..path_up.len() - 1].iter().rev() {
            let edge = &self.edges[*child];
            let t = edge.sample(child, at, self.config.extrapolation_slack_nanos)?;
            acc = acc.compose(&t);
        }
        Ok(acc)
    }

    pub fn lookup(&self, target: &str, source: &str, at: Timestamp) -> Result<RigidTransform, FrameError> {
        if target == source {
            return Ok(RigidTransform::identity());
        }
        for f in [target, source] {
            if !self.frames.contains(f) {
                return Err(FrameError::UnknownFrame(f.to_string()));
            }
        }
        let up_t = self.ancestors(target);
        let up_s = self.ancestors(source);
        let lca_pos_s = up_s.iter().position(|f| up_t.contains(f));
        let Some(js) = lca_pos_s else {
            return Err(FrameError::NotConnected(target.to_string(), source.to_string()));
        };
        let lca = up_s[js];
        let jt = up_t.iter().position(|f| *f == lca).unwrap();
        let lca_to_target = self.chain_down(&up_t[..=jt], at)?;
        let lca_to_source = self.chain_down(&up_s[..=js], at)?;
        Ok(lca_to_target.inverse().compose(&lca_to_source))
    }
}

/// Single-writer / multi-reader handle. Insertions take the write lock for the
/// whole edge update, so readers never see a partial edge.
#[derive(Clone, Debug, Default)]
pub struct SharedFrameTree(Arc<RwLock<FrameTree>>);

impl SharedFrameTree {
    pub fn new(tree: FrameTree) -> Self {
        SharedFrameTree(Arc::new(RwLock::new(tree)))
    }

    pub fn set_transform(&self, st: StampedTransform) -> Result<(), FrameError> {
        self.0.write().unwrap_or_else(|e| e.into_inner()).set_transform(st)
    }

    pub fn lookup(&self, target: &str, source: &str, at: Timestamp) -> Result<RigidTransform, FrameError> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).lookup(target, source, at)
    }

    pub fn read<R>(&self, f: impl FnOnce(&FrameTree) -> R) -> R {
        f(&self.0.read().unwrap_or_else(|e| e.into_inner()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn secs(s: f64) -> Timestamp {
        Timestamp::from_secs_f64(s)
    }

    #[test]
    fn insert_then_lookup_exact() {
        let mut tree = FrameTree::new();
        let t = RigidTransform::from_xyz_yaw(3.0, 1.0, 0.0, 0.4);
        tree.set_transform(StampedTransform::new("map", "vehicle", Timestamp::ZERO, t)).unwrap();
        assert_eq!(tree.lookup("map", "vehicle", Timestamp::ZERO).unwrap(), t);
    }

    #[test]
    fn reverse_edge_is_cycle() {
        let mut tree = FrameTree::new();
        tree.set_transform(StampedTransform::new("map", "vehicle", Timestamp::ZERO, RigidTransform::identity()))
            .unwrap();
        let err = tree
            .set_transform(StampedTransform::new("vehicle", "map", Timestamp::ZERO, RigidTransform::identity()))
            .unwrap_err();
        assert!(matches!(err, FrameError::Cycle { .. }));
        let err = tree
            .set_transform(StampedTransform::new("odom", "vehicle", Timestamp::ZERO, RigidTransform::identity()))
            .unwrap_err();
        assert!(matches!(err, FrameError::Reparent { .. }));
        let err = tree
            .set_transform(StampedTransform::new("map", "map", Timestamp::ZERO, RigidTransform::identity()))
            .unwrap_err();
        assert!(matches!(err, FrameError::Cycle { .. }));
    }

    #[test]
    fn deep_cycle_rejected() {
        let mut tree = FrameTree::new();
        let id = RigidTransform::identity();
        tree.set_transform(StampedTransform::new("a", "b", Timestamp::ZERO, id)).unwrap();
        tree.set_transform(StampedTransform::new("b", "c", Timestamp::ZERO, id)).unwrap();
        let err = tree.set_transform(StampedTransform::new("c", "a", Timestamp::ZERO, id)).unwrap_err();
        assert!(matches!(err, FrameError::Cycle { .. }));
    }

    #[test]
    fn out_of_order_inserts_are_sorted() {
        let mut tree = FrameTree::new();
        let id = RigidTransform::identity();
        tree.set_transform(StampedTransform::new("map", "vehicle", secs(5.0), id)).unwrap();
        tree.set_transform(StampedTransform::new("map", "vehicle", secs(3.0), id)).unwrap();
        assert_eq!(tree.stamps("vehicle"), vec![secs(3.0), secs(5.0)]);
    }

    #[test]
    fn retention_evicts_old_entries() {
        let mut tree = FrameTree::new();
        let id = RigidTransform::identity();
        for s in 0..=12 {
            tree.set_transform(StampedTransform::new("map", "vehicle", secs(s as f64), id)).unwrap();
        }
        assert_eq!(tree.stamps("vehicle").first(), Some(&secs(2.0)));
        assert!(matches!(tree.lookup("map", "vehicle", secs(1.0)), Err(FrameError::Extrapolation { .. })));
    }

    #[test]
    fn linear_interpolation_midpoint() {
        let mut tree = FrameTree::new();
        tree.set_transform(StampedTransform::new("map", "vehicle", secs(0.0), RigidTransform::identity())).unwrap();
        tree.set_transform(StampedTransform::new(
            "map",
            "vehicle",
            secs(1.0),
            RigidTransform::from_translation(2.0, 0.0, 0.0),
        ))
        .unwrap();
        let t = tree.lookup("map", "vehicle", secs(0.5)).unwrap();
        assert!(t.approx_eq(&RigidTransform::from_translation(1.0, 0.0, 0.0), 1e-12));
    }

    #[test]
    fn slack_holds_then_errors() {
        let mut tree = FrameTree::new();
        let t = RigidTransform::from_translation(1.0, 0.0, 0.0);
        tree.set_transform(StampedTransform::new("map", "vehicle", secs(1.0), t)).unwrap();
        assert_eq!(tree.lookup("map", "vehicle", secs(1.09)).unwrap(), t);
        assert_eq!(tree.lookup("map", "vehicle", secs(0.91)).unwrap(), t);
        assert!(matches!(tree.lookup("map", "vehicle", secs(1.2)), Err(FrameError::Extrapolation { .. })));
    }

    #[test]
    fn chained_lookup_matches_manual_compose() {
        let mut tree = FrameTree::new();
        let mv = RigidTransform::from_xyz_yaw(10.0, -2.0, 0.0, 0.7);
        let vl = RigidTransform::from_scaled_axis(Vector3::new(0.0, 0.05, 0.0), Vector3::new(0.5, 0.0, 1.8));
        tree.set_transform(StampedTransform::new("map", "vehicle", Timestamp::ZERO, mv)).unwrap();
        tree.set_static_transform("vehicle", "lidar", vl).unwrap();
        let chained = tree.lookup("map", "lidar", Timestamp::ZERO).unwrap();
        assert!(chained.approx_eq(&mv.compose(&vl), 1e-12));
        let back = tree.lookup("lidar", "map", Timestamp::ZERO).unwrap();
        assert!(back.compose(&chained).approx_eq(&RigidTransform::identity(), 1e-9));
    }

    #[test]
    fn unknown_and_disconnected() {
        let mut tree = FrameTree::new();
        let id = RigidTransform::identity();
        tree.set_transform(StampedTransform::new("map", "vehicle", Timestamp::ZERO, id)).unwrap();
        tree.set_transform(StampedTransform::new("other", "thing", Timestamp::ZERO, id)).unwrap();
        assert!(matches!(tree.lookup("map", "nowhere", Timestamp::ZERO), Err(FrameError::UnknownFrame(_))));
        assert!(matches!(tree.lookup("map", "thing", Timestamp::ZERO), Err(FrameError::NotConnected(..))));
        assert_eq!(tree.lookup("map", "map", secs(99.0)).unwrap(), id);
    }

    #[test]
    fn shared_tree_concurrent_readers() {
        let shared = SharedFrameTree::new(FrameTree::new());
        shared
            .set_transform(StampedTransform::new("map", "vehicle", Timestamp::ZERO, RigidTransform::identity()))
            .unwrap();
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let s = shared.clone();
                std::thread::spawn(move || {
                    for _ in 0..100 {
                        s.lookup("map", "vehicle", Timestamp::ZERO).unwrap();
                    }
                })
            })
            .collect();
        for i in 1..50u64 {
            shared
                .set_transform(StampedTransform::new(
                    "map",
                    "vehicle",
                    Timestamp::from_millis(i),
                    RigidTransform::from_translation(i as f64, 0.0, 0.0),
                ))
                .unwrap();
        }
        for r in readers {
            r.join().unwrap();
        }
    }
}
