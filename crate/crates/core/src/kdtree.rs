//! Static 3D k-d tree for k-nearest-neighbour queries.
//!
//! Results are ordered by `(squared distance, id)`, so equal distances are
//! broken by ascending id and the output is identical to a sorted linear scan.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::types::Point3;

#[derive(Clone, Debug)]
struct Node {
    point: Point3,
    id: u64,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct KdIndex {
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.id.cmp(&other.id))
    }
}

// Max-heap ordering on (distance, id) so the worst candidate sits on top.
struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[inline]
pub(crate) fn dist_sq(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdIndex {
    pub fn build(points: &[(u64, Point3)]) -> Self {
        let mut items: Vec<(u64, Point3)> = points.to_vec();
        let mut index = KdIndex {
            nodes: Vec::with_capacity(items.len()),
            root: None,
        };
        index.root = index.build_rec(&mut items);
        index
    }

    fn build_rec(&mut self, items: &mut [(u64, Point3)]) -> Option<usize> {
        if items.is_empty() {
            return None;
        }
        // Split on the axis of widest spread.
        let axis = (0..3)
            .map(|a| {
                let (lo, hi) = items.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p.1[a]), hi.max(p.1[a]))
                });
                (a, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0;
        items.sort_by(|a, b| a.1[axis].total_cmp(&b.1[axis]).then(a.0.cmp(&b.0)));
        let mid = items.len() / 2;
        let (id, point) = items[mid];
        let slot = self.nodes.len();
        self.nodes.push(Node {
            point,
            id,
            axis,
            left: None,
            right: None,
        });
        let (lower, rest) = items.split_at_mut(mid);
        let left = self.build_rec(lower);
        let right = self.build_rec(&mut rest[1..]);
        self.nodes[slot].left = left;
        self.nodes[slot].right = right;
        Some(slot)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn nearest(&self, query: Point3, k: usize) -> Vec<Neighbor> {
        self.nearest_excluding(query, k, None)
    }

    /// Like [`KdIndex::nearest`] but never returns the point with id `exclude`.
    pub fn nearest_excluding(&self, query: Point3, k: usize, exclude: Option<u64>) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, query, k, exclude, &mut heap);
        }
        let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    fn search(
        &self,
        slot: usize,
        query: Point3,
        k: usize,
        exclude: Option<u64>,
        heap: &mut BinaryHeap<HeapEntry>,
    ) {
        let node = &self.nodes[slot];
        if exclude != Some(node.id) {
            let cand = Neighbor {
                id: node.id,
                dist_sq: dist_sq(query, node.point),
            };
            if heap.len() < k {
                heap.push(HeapEntry(cand));
            } else if cand.key_cmp(&heap.peek().expect("heap is full").0) == Ordering::Less {
                heap.pop();
                heap.push(HeapEntry(cand));
            }
        }
        let diff = query[node.axis] - node.point[node.axis];
        let (near, far) = if diff < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.search(n, query, k, exclude, heap);
        }
        if let Some(f) = far {
            // Points on the far side are at least |diff| away; an equal
            // distance may still win on id, so only strictly worse is pruned.
            let worst = heap.peek().map(|e| e.0.dist_sq);
            if heap.len() < k || worst.is_some_and(|w| diff * diff <= w) {
                self.search(f, query, k, exclude, heap);
            }
        }
    }
}
