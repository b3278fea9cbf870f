//! Small static kd-tree for nearest-neighbor queries on point clouds.

use crate::model::Vec3;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    root: Node,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n = order.len();
        let root = build(points, &mut order, 0, n);
        Self { points, order, root }
    }

    /// The `k` nearest neighbors of `query` as `(index, distance)`, nearest first.
    /// `exclude` skips one index (the query point itself).
    pub fn nearest(&self, query: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(&self.root, query, k, exclude, &mut best);
        }
        best.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
    }

    fn search(&self, node: &Node, q: &Vec3, k: usize, exclude: Option<usize>, best: &mut Vec<(f64, usize)>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let d2 = (self.points[i] - q).norm_squared();
                    if best.len() < k || d2 < best[best.len() - 1].0 {
                        let pos = best.partition_point(|&(bd, bi)| (bd, bi) < (d2, i));
                        best.insert(pos, (d2, i));
                        best.truncate(k);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, exclude, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.search(far, q, k, exclude, best);
                }
            }
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let value = points[slice[mid]][axis];
    let m = start + mid;
    Node::Split {
        axis,
        value,
        left: Box::new(build(points, order, start, m)),
        right: Box::new(build(points, order, m, end)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.1))
            .collect();
        let tree = KdTree::new(&pts);
        for q in 0..200 {
            let got = tree.nearest(&pts[q], 3, Some(q));
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != q)
                .map(|(i, p)| ((p - pts[q]).norm_squared(), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (g, e) in got.iter().zip(&all) {
                assert_eq!(g.0, e.1);
            }
        }
    }
}
