use super::Point3;

const LEAF_SIZE: usize = 8;

/// Static 3-d tree over a point slice. Nodes are implicit: each subtree is a
/// contiguous range of `order`, split at its median along the axis of largest
/// extent.
pub struct KdTree {
    points: Vec<Point3>,
    /// Original index of each entry in `points`.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

struct Node {
    start: usize,
    end: usize,
    axis: usize,
    split: f64,
    /// Children indices into `nodes`; `None` for leaves.
    children: Option<(usize, usize)>,
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Self {
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

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            start,
            end,
            axis: 0,
            split: 0.0,
            children: None,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let mut pairs: Vec<(Point3, usize)> = self.points[start..end]
            .iter()
            .copied()
            .zip(self.order[start..end].iter().copied())
            .collect();
        pairs.select_nth_unstable_by(mid - start, |a, b| {
            a.0.coord(axis).total_cmp(&b.0.coord(axis))
        });
        for (k, (p, o)) in pairs.into_iter().enumerate() {
            self.points[start + k] = p;
            self.order[start + k] = o;
        }
        let split = self.points[mid].coord(axis);
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        let node = &mut self.nodes[id];
        node.axis = axis;
        node.split = split;
        node.children = Some((left, right));
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points[start..end] {
            for (a, v) in p.to_array().into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0)
    }

    /// Original index and squared distance of the nearest point.
    ///
    /// Panics on an empty tree.
    pub fn nearest(&self, query: &Point3) -> (usize, f64) {
        assert!(!self.nodes.is_empty(), "nearest() on an empty tree");
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    fn search(&self, id: usize, q: &Point3, best: &mut (usize, f64)) {
        let node = &self.nodes[id];
        match node.children {
            None => {
                for k in node.start..node.end {
                    let d = self.points[k].dist_sq(q);
                    if d < best.1 || (d == best.1 && self.order[k] < best.0) {
                        *best = (self.order[k], d);
                    }
                }
            }
            Some((left, right)) => {
                let diff = q.coord(node.axis) - node.split;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn nearest_matches_scan() {
        let mut rng = SeededRng::new(11);
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(rng.normal(), rng.normal(), rng.normal()))
            .collect();
        let tree = KdTree::build(&pts);
        for _ in 0..200 {
            let q = Point3::new(rng.normal(), rng.normal(), rng.normal());
            let (idx, d) = tree.nearest(&q);
            let (bi, bd) = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p.dist_sq(&q)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert_eq!(d, bd);
            assert_eq!(idx, bi);
        }
    }
}
