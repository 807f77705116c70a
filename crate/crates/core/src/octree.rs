//! Adaptive octree-spline free-form deformation.
//!
//! The root cube is split into leaves down to `max_depth`; a leaf maps a
//! point by trilinear interpolation of displacements stored at its eight
//! corners. Corners are shared between neighbouring leaves. A corner that
//! lies on the face or edge of a larger neighbour ("hanging" corner) is not a
//! free parameter: its value is the larger neighbour's interpolation at that
//! position, which keeps the field continuous across every face.
//!
//! Node coordinates are integers on the finest lattice, `0..=2^max_depth`
//! per axis.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};

pub type NodeKey = [u32; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub depth: u8,
    pub index: [u32; 3],
}

impl Cell {
    pub const ROOT: Cell = Cell {
        depth: 0,
        index: [0, 0, 0],
    };

    /// Children in `x`-fastest bit order.
    pub fn children(&self) -> [Cell; 8] {
        std::array::from_fn(|c| Cell {
            depth: self.depth + 1,
            index: std::array::from_fn(|a| self.index[a] * 2 + ((c >> a) & 1) as u32),
        })
    }
}

/// Sparse linear combination of free nodes.
pub type NodeWeights = Vec<(NodeKey, f64)>;

pub const MAX_SUPPORTED_DEPTH: u8 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeSplineFFD {
    origin: Point3,
    size: f64,
    max_depth: u8,
    regularization: f64,
    leaves: BTreeSet<Cell>,
    /// Displacement of every leaf corner, hanging ones included.
    nodes: BTreeMap<NodeKey, Vec3>,
    /// Hanging corner -> expansion over free nodes.
    hanging: BTreeMap<NodeKey, NodeWeights>,
}

impl OctreeSplineFFD {
    /// Zero field over the cube `[origin, origin + size]³`, split once into
    /// eight leaves.
    pub fn new(origin: Point3, size: f64, max_depth: u8, regularization: f64) -> Result<Self> {
        if !(size > 0.0) || !size.is_finite() {
            return Err(Error::InvalidConfig(format!("root box size must be > 0, got {size}")));
        }
        if max_depth == 0 || max_depth > MAX_SUPPORTED_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "max_depth must be in 1..={MAX_SUPPORTED_DEPTH}, got {max_depth}"
            )));
        }
        if !(regularization >= 0.0) || !regularization.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "regularization weight must be >= 0, got {regularization}"
            )));
        }
        let leaves: BTreeSet<Cell> = Cell::ROOT.children().into_iter().collect();
        let mut ffd = Self {
            origin,
            size,
            max_depth,
            regularization,
            leaves,
            nodes: BTreeMap::new(),
            hanging: BTreeMap::new(),
        };
        ffd.rebuild_topology(|_| Vec3::zeros());
        Ok(ffd)
    }

    /// Smallest cube centred on the box `[lo, hi]`, grown by `padding` on
    /// every side.
    pub fn enclosing(lo: Point3, hi: Point3, padding: f64, max_depth: u8, regularization: f64) -> Result<Self> {
        // Snapped to 1/1024 mm so that the box corners survive a text
        // round trip through `lo`, `lo + size`.
        let snap = |v: f64| (v * 1024.0).round() / 1024.0;
        let extent = ((hi - lo).max() + 2.0 * padding) * 1024.0;
        let extent = extent.ceil() / 1024.0;
        let center = Point3::from((lo.coords + hi.coords) * 0.5);
        let origin = (center - Vec3::repeat(extent * 0.5)).map(snap);
        Self::new(origin, extent, max_depth, regularization)
    }

    /// Rebuild from explicit leaves and corner values, as read from a dump.
    pub(crate) fn from_parts(
        origin: Point3,
        size: f64,
        max_depth: u8,
        regularization: f64,
        leaves: BTreeSet<Cell>,
        corner_values: &BTreeMap<NodeKey, Vec3>,
    ) -> Result<Self> {
        let mut ffd = Self::new(origin, size, max_depth, regularization)?;
        if leaves.is_empty() || leaves.iter().any(|c| c.depth > max_depth) {
            return Err(Error::InvalidInput("octree leaves exceed max_depth".into()));
        }
        ffd.leaves = leaves;
        ffd.rebuild_topology(|key| corner_values.get(key).copied().unwrap_or_else(Vec3::zeros));
        Ok(ffd)
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn max_depth(&self) -> u8 {
        self.max_depth
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn leaves(&self) -> &BTreeSet<Cell> {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn deepest_level(&self) -> u8 {
        self.leaves.iter().map(|c| c.depth).max().unwrap_or(0)
    }

    fn resolution(&self) -> u32 {
        1 << self.max_depth
    }

    fn step(&self, depth: u8) -> u32 {
        1 << (self.max_depth - depth)
    }

    pub fn node_position(&self, key: &NodeKey) -> Point3 {
        let h = self.size / self.resolution() as f64;
        self.origin + Vec3::new(key[0] as f64, key[1] as f64, key[2] as f64) * h
    }

    pub fn corners(&self, cell: &Cell) -> [NodeKey; 8] {
        let s = self.step(cell.depth);
        std::array::from_fn(|c| std::array::from_fn(|a| (cell.index[a] + ((c >> a) & 1) as u32) * s))
    }

    pub fn node_value(&self, key: &NodeKey) -> Option<Vec3> {
        self.nodes.get(key).copied()
    }

    /// Free (optimizable) nodes in key order.
    pub fn free_nodes(&self) -> impl Iterator<Item = &NodeKey> + '_ {
        self.nodes.keys().filter(|k| !self.hanging.contains_key(*k))
    }

    pub fn free_node_count(&self) -> usize {
        self.nodes.len() - self.hanging.len()
    }

    pub fn is_hanging(&self, key: &NodeKey) -> bool {
        self.hanging.contains_key(key)
    }

    /// Largest displacement norm over all corners.
    pub fn max_displacement(&self) -> f64 {
        self.nodes.values().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Leaf containing the fine lattice cell `fine` (each coordinate in
    /// `0..resolution`).
    fn leaf_at_fine(&self, fine: [u32; 3]) -> Cell {
        for depth in 0..=self.max_depth {
            let s = self.step(depth);
            let cell = Cell {
                depth,
                index: [fine[0] / s, fine[1] / s, fine[2] / s],
            };
            if self.leaves.contains(&cell) {
                return cell;
            }
        }
        unreachable!("octree leaves do not cover fine cell {fine:?}")
    }

    /// Continuous finest-lattice coordinates of `p`, clamped to the root cube.
    fn lattice_coords(&self, p: &Point3) -> [f64; 3] {
        let n = self.resolution() as f64;
        std::array::from_fn(|a| ((p[a] - self.origin[a]) / self.size * n).clamp(0.0, n))
    }

    fn locate(&self, p: &Point3) -> (Cell, [f64; 3]) {
        let u = self.lattice_coords(p);
        let last = self.resolution() - 1;
        let fine = std::array::from_fn(|a| (u[a].floor() as u32).min(last));
        let cell = self.leaf_at_fine(fine);
        let s = self.step(cell.depth) as f64;
        let t = std::array::from_fn(|a| ((u[a] - cell.index[a] as f64 * s) / s).clamp(0.0, 1.0));
        (cell, t)
    }

    pub fn leaf_containing(&self, p: &Point3) -> Cell {
        self.locate(p).0
    }

    fn trilinear(t: [f64; 3]) -> [f64; 8] {
        std::array::from_fn(|c| {
            (0..3)
                .map(|a| if (c >> a) & 1 == 1 { t[a] } else { 1.0 - t[a] })
                .product()
        })
    }

    /// Displacement at `p`; points outside the root cube use the clamped
    /// boundary point.
    pub fn displacement(&self, p: &Point3) -> Vec3 {
        let (cell, t) = self.locate(p);
        let w = Self::trilinear(t);
        let corners = self.corners(&cell);
        let mut u = Vec3::zeros();
        for c in 0..8 {
            if w[c] != 0.0 {
                u += w[c] * self.nodes[&corners[c]];
            }
        }
        u
    }

    /// Displacement at `p` as a sparse combination of free nodes.
    pub fn weights_at(&self, p: &Point3) -> NodeWeights {
        let (cell, t) = self.locate(p);
        let w = Self::trilinear(t);
        let corners = self.corners(&cell);
        let mut out: NodeWeights = Vec::with_capacity(8);
        for c in 0..8 {
            if w[c] != 0.0 {
                self.expand_into(&corners[c], w[c], &mut out);
            }
        }
        out
    }

    pub(crate) fn expand_into(&self, key: &NodeKey, scale: f64, out: &mut NodeWeights) {
        match self.hanging.get(key) {
            Some(ws) => {
                for (k, w) in ws {
                    push_weight(out, *k, scale * w);
                }
            }
            None => push_weight(out, *key, scale),
        }
    }

    /// Unique edges of all leaves, as node pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> BTreeSet<(NodeKey, NodeKey)> {
        const EDGES: [(usize, usize); 12] = [
            (0, 1),
            (2, 3),
            (4, 5),
            (6, 7),
            (0, 2),
            (1, 3),
            (4, 6),
            (5, 7),
            (0, 4),
            (1, 5),
            (2, 6),
            (3, 7),
        ];
        let mut set = BTreeSet::new();
        for cell in &self.leaves {
            let c = self.corners(cell);
            for (a, b) in EDGES {
                let (x, y) = (c[a], c[b]);
                set.insert(if x < y { (x, y) } else { (y, x) });
            }
        }
        set
    }

    /// Sum of squared displacement differences across all unique edges.
    pub fn membrane_energy(&self) -> f64 {
        self.edges()
            .iter()
            .map(|(a, b)| (self.nodes[a] - self.nodes[b]).norm_squared())
            .sum()
    }

    /// Assign free node values (in [`free_nodes`](Self::free_nodes) order,
    /// three components each) and refresh hanging corners.
    pub fn set_free_values(&mut self, params: &[f64]) {
        let keys: Vec<NodeKey> = self.free_nodes().copied().collect();
        assert_eq!(params.len(), keys.len() * 3, "parameter vector length");
        for (i, key) in keys.iter().enumerate() {
            self.nodes
                .insert(*key, Vec3::new(params[3 * i], params[3 * i + 1], params[3 * i + 2]));
        }
        self.sync_hanging();
    }

    pub fn free_values(&self) -> Vec<f64> {
        self.free_nodes()
            .flat_map(|k| {
                let v = self.nodes[k];
                [v.x, v.y, v.z]
            })
            .collect()
    }

    /// Set a free node directly. Returns false for unknown or hanging keys.
    pub fn set_node(&mut self, key: &NodeKey, value: Vec3) -> bool {
        if self.hanging.contains_key(key) || !self.nodes.contains_key(key) {
            return false;
        }
        self.nodes.insert(*key, value);
        self.sync_hanging();
        true
    }

    fn sync_hanging(&mut self) {
        let updates: Vec<(NodeKey, Vec3)> = self
            .hanging
            .iter()
            .map(|(k, ws)| (*k, ws.iter().map(|(n, w)| *w * self.nodes[n]).sum()))
            .collect();
        for (k, v) in updates {
            self.nodes.insert(k, v);
        }
    }

    /// Coarsest leaf whose closure contains `key` without having it as a
    /// corner.
    fn hanging_host(&self, key: &NodeKey) -> Option<Cell> {
        let n = self.resolution();
        let mut best: Option<Cell> = None;
        for octant in 0..8usize {
            let mut fine = [0u32; 3];
            let mut inside = true;
            for a in 0..3 {
                let up = (octant >> a) & 1 == 1;
                let v = if up { key[a] } else { key[a].wrapping_sub(1) };
                if v >= n {
                    inside = false;
                    break;
                }
                fine[a] = v;
            }
            if !inside {
                continue;
            }
            let cell = self.leaf_at_fine(fine);
            let s = self.step(cell.depth);
            let is_corner = key.iter().all(|k| k % s == 0);
            if !is_corner && best.is_none_or(|b| cell.depth < b.depth) {
                best = Some(cell);
            }
        }
        best
    }

    fn resolve(&self, key: &NodeKey, memo: &mut HashMap<NodeKey, NodeWeights>) -> NodeWeights {
        if let Some(w) = memo.get(key) {
            return w.clone();
        }
        let out = match self.hanging_host(key) {
            None => vec![(*key, 1.0)],
            Some(host) => {
                let s = self.step(host.depth) as f64;
                let t = std::array::from_fn(|a| (key[a] as f64 - host.index[a] as f64 * s) / s);
                let w = Self::trilinear(t);
                let corners = self.corners(&host);
                let mut acc = NodeWeights::new();
                for c in 0..8 {
                    if w[c] != 0.0 {
                        for (k, wk) in self.resolve(&corners[c], memo) {
                            push_weight(&mut acc, k, w[c] * wk);
                        }
                    }
                }
                acc
            }
        };
        memo.insert(*key, out.clone());
        out
    }

    /// Recompute corner set and hanging expansions after a structural
    /// change; free nodes take their value from `init`.
    fn rebuild_topology(&mut self, init: impl Fn(&NodeKey) -> Vec3) {
        let mut keys = BTreeSet::new();
        for cell in &self.leaves {
            keys.extend(self.corners(cell));
        }
        let mut memo = HashMap::new();
        let mut hanging = BTreeMap::new();
        for key in &keys {
            let w = self.resolve(key, &mut memo);
            if !(w.len() == 1 && w[0].0 == *key) {
                hanging.insert(*key, w);
            }
        }
        self.hanging = hanging;
        self.nodes = keys.iter().map(|k| (*k, init(k))).collect();
        self.sync_hanging();
    }

    /// Split every leaf shallower than `max_depth` that contains at least
    /// one point whose residual exceeds `threshold`. The new corners take
    /// the current field's values, so the deformation is unchanged.
    pub fn refine(&self, points: &[Point3], residuals: &[f64], threshold: f64) -> OctreeSplineFFD {
        let to_split: BTreeSet<Cell> = points
            .iter()
            .zip(residuals)
            .filter(|(_, r)| **r > threshold)
            .map(|(p, _)| self.leaf_containing(p))
            .filter(|c| c.depth < self.max_depth)
            .collect();
        self.split(&to_split)
    }

    /// Split the given leaves (non-leaves and max-depth leaves are ignored).
    pub fn split(&self, cells: &BTreeSet<Cell>) -> OctreeSplineFFD {
        let mut out = self.clone();
        let mut changed = false;
        for cell in cells {
            if cell.depth < self.max_depth && out.leaves.remove(cell) {
                out.leaves.extend(cell.children());
                changed = true;
            }
        }
        if changed {
            out.rebuild_topology(|k| self.displacement(&self.node_position(k)));
        }
        out
    }

    /// Walk the tree depth-first from the root, calling `visit` with each
    /// cell and whether it is a leaf.
    pub fn visit_depth_first(&self, mut visit: impl FnMut(&Cell, bool)) {
        fn walk(ffd: &OctreeSplineFFD, cell: Cell, visit: &mut impl FnMut(&Cell, bool)) {
            let leaf = ffd.leaves.contains(&cell);
            visit(&cell, leaf);
            if !leaf {
                for child in cell.children() {
                    walk(ffd, child, visit);
                }
            }
        }
        walk(self, Cell::ROOT, &mut visit);
    }
}

fn push_weight(out: &mut NodeWeights, key: NodeKey, w: f64) {
    match out.iter_mut().find(|(k, _)| *k == key) {
        Some(entry) => entry.1 += w,
        None => out.push((key, w)),
    }
}
