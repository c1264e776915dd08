//! Static kd-tree over 3D points.
//!
//! Neighbor lists are ordered by `(squared distance, index)` so that equal
//! distances resolve to the lower index. Graph construction and the metrics
//! depend on that for reproducible output.

use crate::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    perm: Vec<usize>,
    // split axis for the node whose splitter sits at perm[mid]; u8::MAX marks a leaf range
    axes: Vec<u8>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            axes: vec![u8::MAX; points.len()],
        };
        let n = points.len();
        tree.build(0, n);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point3 {
        &self.points[i]
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let mut min = Point3::repeat(f64::INFINITY);
        let mut max = Point3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.perm[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        self.axes[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    /// The `k` nearest points to `query`, optionally skipping one index
    /// (typically the query point itself). Sorted by distance, then index.
    pub fn nearest(&self, query: &Point3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.nearest_rec(0, self.points.len(), query, k, exclude, &mut best);
        }
        best.into_iter().map(|(d, i)| (i, d)).collect()
    }

    fn nearest_rec(
        &self,
        lo: usize,
        hi: usize,
        q: &Point3,
        k: usize,
        exclude: Option<usize>,
        best: &mut Vec<(f64, usize)>,
    ) {
        if hi <= lo {
            return;
        }
        if hi - lo <= LEAF_SIZE {
            for &i in &self.perm[lo..hi] {
                self.offer(i, q, k, exclude, best);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axes[mid] as usize;
        let split = self.perm[mid];
        let diff = q[axis] - self.points[split][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(near.0, near.1, q, k, exclude, best);
        self.offer(split, q, k, exclude, best);
        if best.len() < k || diff * diff <= best[best.len() - 1].0 {
            self.nearest_rec(far.0, far.1, q, k, exclude, best);
        }
    }

    #[inline]
    fn offer(&self, i: usize, q: &Point3, k: usize, exclude: Option<usize>, best: &mut Vec<(f64, usize)>) {
        if Some(i) == exclude {
            return;
        }
        let d = (self.points[i] - q).norm_squared();
        let cand = (d, i);
        if best.len() == k {
            let worst = best[k - 1];
            if cand.0 > worst.0 || (cand.0 == worst.0 && cand.1 > worst.1) {
                return;
            }
            best.pop();
        }
        let pos = best
            .iter()
            .position(|&(bd, bi)| cand.0 < bd || (cand.0 == bd && cand.1 < bi))
            .unwrap_or(best.len());
        best.insert(pos, cand);
    }

    /// All points within Euclidean distance `radius` of `query`, in index order.
    pub fn within(&self, query: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.within_rec(0, self.points.len(), query, radius * radius, &mut out);
        out.sort_unstable();
        out
    }

    fn within_rec(&self, lo: usize, hi: usize, q: &Point3, r2: f64, out: &mut Vec<usize>) {
        if hi <= lo {
            return;
        }
        if hi - lo <= LEAF_SIZE {
            for &i in &self.perm[lo..hi] {
                if (self.points[i] - q).norm_squared() <= r2 {
                    out.push(i);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axes[mid] as usize;
        let split = self.perm[mid];
        let diff = q[axis] - self.points[split][axis];
        if (self.points[split] - q).norm_squared() <= r2 {
            out.push(split);
        }
        if diff < 0.0 || diff * diff <= r2 {
            self.within_rec(lo, mid, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.within_rec(mid + 1, hi, q, r2, out);
        }
    }
}
