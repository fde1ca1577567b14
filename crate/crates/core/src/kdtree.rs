//! Exact static KD-tree over 3-D points.
//!
//! Results are ordered by `(squared distance, point index)`, the same order a
//! stable linear scan produces, so ties are resolved identically.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    /// Point indices permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `n` nearest points as `(index, squared distance)`, ascending.
    pub fn nearest(&self, q: &Vector3<f64>, n: usize) -> Vec<(usize, f64)> {
        if self.points.is_empty() || n == 0 {
            return Vec::new();
        }
        let n = n.min(self.points.len());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(n + 1);
        self.search(0, q, n, &mut best, [0.0; 3], 0.0);
        best.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn worst(best: &[(f64, usize)], n: usize) -> f64 {
        if best.len() < n {
            f64::INFINITY
        } else {
            best[best.len() - 1].0
        }
    }

    /// `off` holds the per-axis offsets from `q` to the node's cell and
    /// `rd` their squared sum, a lower bound on any distance inside it.
    fn search(&self, node: usize, q: &Vector3<f64>, n: usize, best: &mut Vec<(f64, usize)>, mut off: [f64; 3], rd: f64) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    let cand = (d, i);
                    if best.len() == n && !lex_less(cand, best[n - 1]) {
                        continue;
                    }
                    let pos = best.partition_point(|b| lex_less(*b, cand));
                    best.insert(pos, cand);
                    best.truncate(n);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, n, best, off, rd);
                let far_rd = rd - off[axis] * off[axis] + diff * diff;
                // `<=` and the rounding slack keep equal-distance candidates on
                // the far side reachable for tie-breaking.
                if far_rd * (1.0 - 1e-12) <= Self::worst(best, n) {
                    off[axis] = diff;
                    self.search(far, q, n, best, off, far_rd);
                }
            }
        }
    }

    /// Indices of all points within `radius` of `q`, unordered.
    pub fn within(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.collect_within(0, q, radius * radius, &mut out);
        }
        out
    }

    fn collect_within(&self, node: usize, q: &Vector3<f64>, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.collect_within(near, q, r2, out);
                if diff * diff <= r2 {
                    self.collect_within(far, q, r2, out);
                }
            }
        }
    }
}

fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}
