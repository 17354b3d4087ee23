use std::cmp::Ordering;

use super::knn::{cmp_candidate, squared_distance};
use crate::autodiff::Real;

const BUCKET: usize = 12;

enum Node<T> {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: T,
        left: u32,
        right: u32,
    },
}

/// Static 3-D kd-tree over a borrowed row-major point array.
///
/// Splits at the median along the axis of widest spread. Every point on the
/// left of a split has coordinate `<= value`, every point on the right `>=`,
/// so the plane distance is a valid lower bound even with duplicates.
pub struct KdTree<'a, T> {
    points: &'a [T],
    perm: Vec<u32>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Real> KdTree<'a, T> {
    pub fn build(points: &'a [T]) -> Self {
        let n = points.len() / 3;
        let mut tree = KdTree {
            points,
            perm: (0..n as u32).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build_node(0, n);
        }
        tree
    }

    #[inline]
    fn coord(&self, idx: u32, axis: usize) -> T {
        self.points[idx as usize * 3 + axis]
    }

    #[inline]
    fn point(&self, idx: u32) -> &[T] {
        let i = idx as usize * 3;
        &self.points[i..i + 3]
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= BUCKET {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            let ca = points[a as usize * 3 + axis];
            let cb = points[b as usize * 3 + axis];
            ca.partial_cmp(&cb).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        let value = self.coord(self.perm[mid], axis);
        // placeholder, patched once the children exist
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize] = Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut best = (0, T::ZERO);
        for axis in 0..3 {
            let mut lo = self.coord(self.perm[start], axis);
            let mut hi = lo;
            for &p in &self.perm[start + 1..end] {
                let c = self.coord(p, axis);
                if c < lo {
                    lo = c;
                }
                if c > hi {
                    hi = c;
                }
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    /// The `want` nearest points to point `i`, excluding `i` itself, sorted by
    /// (distance, index).
    pub fn knn_excluding_self(&self, i: usize, want: usize, out: &mut Vec<(T, u32)>) {
        let q = [
            self.points[i * 3],
            self.points[i * 3 + 1],
            self.points[i * 3 + 2],
        ];
        self.query(&q, want, Some(i as u32), out);
    }

    /// The `want` nearest points to an arbitrary query, optionally skipping one
    /// index. Results sorted by (distance, index).
    pub fn query(&self, q: &[T; 3], want: usize, skip: Option<u32>, out: &mut Vec<(T, u32)>) {
        out.clear();
        if want == 0 || self.nodes.is_empty() {
            return;
        }
        self.search(0, q, want, skip, out);
    }

    fn search(&self, node: u32, q: &[T; 3], want: usize, skip: Option<u32>, out: &mut Vec<(T, u32)>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &p in &self.perm[start as usize..end as usize] {
                    if Some(p) == skip {
                        continue;
                    }
                    let cand = (squared_distance(q, self.point(p)), p);
                    if out.len() == want {
                        if cmp_candidate(&cand, &out[want - 1]) != Ordering::Less {
                            continue;
                        }
                        out.pop();
                    }
                    let pos = out
                        .binary_search_by(|c| cmp_candidate(c, &cand))
                        .unwrap_or_else(|e| e);
                    out.insert(pos, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= T::ZERO {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, want, skip, out);
                // `<=` keeps equal-distance candidates with smaller indices reachable
                if out.len() < want || diff * diff <= out[want - 1].0 {
                    self.search(far, q, want, skip, out);
                }
            }
        }
    }
}
