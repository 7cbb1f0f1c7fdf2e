//! Exact nearest neighbor over matrix rows with an axis-split tree.
//!
//! Exactness matters here: results must agree with a brute-force scan
//! bit-for-bit, including the lowest-index tie rule, so subtree pruning is
//! strict (`>` against the best distance) and candidate comparison prefers
//! the lower index on exact distance ties.

use nalgebra::DMatrix;

struct Node {
    split_dim: usize,
    split_val: f64,
    left: usize,
    right: usize,
    /// Range into the leaf index arena; empty for interior nodes.
    leaf: (u32, u32),
}

/// Axis-split tree over the rows of a points matrix.
pub struct KdTree {
    points: DMatrix<f64>,
    nodes: Vec<Node>,
    leaf_indices: Vec<usize>,
    root: usize,
}

const LEAF_SIZE: usize = 12;

impl KdTree {
    pub fn build(points: &DMatrix<f64>) -> Self {
        let n = points.nrows();
        let mut indices: Vec<usize> = (0..n).collect();
        let mut tree = KdTree {
            points: points.clone(),
            nodes: Vec::new(),
            leaf_indices: Vec::with_capacity(n),
            root: 0,
        };
        let root = tree.build_node(&mut indices);
        tree.root = root;
        tree
    }

    fn build_node(&mut self, indices: &mut [usize]) -> usize {
        if indices.len() <= LEAF_SIZE {
            let start = self.leaf_indices.len() as u32;
            // Ascending order inside leaves keeps tie handling by index easy.
            let mut sorted = indices.to_vec();
            sorted.sort_unstable();
            self.leaf_indices.extend_from_slice(&sorted);
            let end = self.leaf_indices.len() as u32;
            self.nodes.push(Node {
                split_dim: 0,
                split_val: 0.0,
                left: usize::MAX,
                right: usize::MAX,
                leaf: (start, end),
            });
            return self.nodes.len() - 1;
        }

        // Split on the widest-spread dimension at the median.
        let dim = self.points.ncols();
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in indices.iter() {
                let v = self.points[(i, d)];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            self.points[(a, best_dim)].total_cmp(&self.points[(b, best_dim)])
        });
        let split_val = self.points[(indices[mid], best_dim)];

        let (left_slice, right_slice) = indices.split_at_mut(mid);
        let left = self.build_node(left_slice);
        let right = self.build_node(right_slice);
        self.nodes.push(Node {
            split_dim: best_dim,
            split_val,
            left,
            right,
            leaf: (0, 0),
        });
        self.nodes.len() - 1
    }

    /// Index and squared distance of the nearest row; exact, lowest index on
    /// ties.
    pub fn nearest(&self, query: &[f64]) -> (usize, f64) {
        debug_assert_eq!(query.len(), self.points.ncols());
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        best
    }

    fn search(&self, node_id: usize, query: &[f64], best: &mut (usize, f64)) {
        let node = &self.nodes[node_id];
        if node.left == usize::MAX {
            let (start, end) = node.leaf;
            for &i in &self.leaf_indices[start as usize..end as usize] {
                let mut d2 = 0.0;
                for (d, &q) in query.iter().enumerate() {
                    let diff = self.points[(i, d)] - q;
                    d2 += diff * diff;
                }
                if d2 < best.1 || (d2 == best.1 && i < best.0) {
                    *best = (i, d2);
                }
            }
            return;
        }

        let delta = query[node.split_dim] - node.split_val;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, best);
        // Strict comparison: the boundary case may hide an equal-distance,
        // lower-index candidate.
        if delta * delta <= best.1 {
            self.search(far, query, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &DMatrix<f64>, query: &[f64]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for i in 0..points.nrows() {
            let mut d2 = 0.0;
            for (d, &q) in query.iter().enumerate() {
                let diff = points[(i, d)] - q;
                d2 += diff * diff;
            }
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for &(n, dim) in &[(1usize, 3usize), (50, 2), (300, 8), (200, 30)] {
            let points = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.0..1.0));
            let tree = KdTree::build(&points);
            for _ in 0..50 {
                let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.2..1.2)).collect();
                assert_eq!(tree.nearest(&q), brute_force(&points, &q));
            }
            // Queries on data points hit themselves at distance zero.
            for i in 0..n.min(10) {
                let q: Vec<f64> = points.row(i).iter().copied().collect();
                let (idx, d2) = tree.nearest(&q);
                assert_eq!(d2, 0.0);
                // Duplicates resolve to the lowest index.
                assert!(idx <= i);
            }
        }
    }

    #[test]
    fn duplicate_points_tie_to_lowest_index() {
        let mut points = DMatrix::zeros(40, 4);
        for i in 0..40 {
            for d in 0..4 {
                points[(i, d)] = ((i / 5) + d) as f64; // groups of 5 duplicates
            }
        }
        let tree = KdTree::build(&points);
        for g in 0..8 {
            let q: Vec<f64> = (0..4).map(|d| (g + d) as f64).collect();
            let (idx, d2) = tree.nearest(&q);
            assert_eq!(d2, 0.0);
            assert_eq!(idx, g * 5);
        }
    }
}
