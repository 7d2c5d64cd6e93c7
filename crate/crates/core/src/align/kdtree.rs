use nalgebra::Vector3;

/// Below this many points queries scan exhaustively.
pub const BRUTE_FORCE_BELOW: usize = 200;

const LEAF_SIZE: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3D kd-tree for nearest-neighbor queries.
///
/// Ties in distance resolve to the lower point index, matching an
/// exhaustive scan in index order.
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut tree = Self { points, order: (0..points.len()).collect(), nodes: Vec::new() };
        if points.len() >= BRUTE_FORCE_BELOW {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
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
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let value = pts[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index and squared distance of the nearest point; `None` if empty.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        if self.nodes.is_empty() {
            for (i, p) in self.points.iter().enumerate() {
                consider(&mut best, i, (p - q).norm_squared());
            }
        } else {
            self.search(0, q, &mut best);
        }
        Some(best)
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    consider(best, i, (self.points[i] - q).norm_squared());
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = q[axis] - value;
                let (near, far) = if d < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` so equal-distance points with lower indices on the far side are still found
                if d * d <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[inline]
fn consider(best: &mut (usize, f64), i: usize, d2: f64) {
    if d2 < best.1 || (d2 == best.1 && i < best.0) {
        *best = (i, d2);
    }
}
