use crate::dataset::LabeledDataset;

/// k-nearest neighbours under squared Euclidean distance. Distance ties go to
/// the earlier position in the training subset; vote ties to the lowest class.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    k: usize,
    dim: usize,
    n_classes: usize,
    points: Vec<f64>,
    labels: Vec<u32>,
}

impl KnnModel {
    pub fn fit(data: &LabeledDataset, subset: &[usize], k: usize, n_classes: usize) -> Self {
        let mut points = Vec::with_capacity(subset.len() * data.dim());
        for &i in subset {
            points.extend_from_slice(data.features(i));
        }
        KnnModel {
            k: k.max(1),
            dim: data.dim(),
            n_classes,
            points,
            labels: subset.iter().map(|&i| data.label(i)).collect(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> u32 {
        if self.k == 1 {
            let mut best = (f64::INFINITY, 0usize);
            for (pos, p) in self.points.chunks_exact(self.dim).enumerate() {
                let d = sq_dist(p, x);
                if d < best.0 {
                    best = (d, pos);
                }
            }
            return self.labels[best.1];
        }
        // Sorted by (distance, position); a later point only enters on a
        // strictly smaller distance than the current k-th.
        let k = self.k.min(self.labels.len());
        let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (pos, p) in self.points.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(p, x);
            if nearest.len() == k && d >= nearest[k - 1].0 {
                continue;
            }
            let at = nearest.partition_point(|&(nd, _)| nd <= d);
            nearest.insert(at, (d, pos));
            nearest.truncate(k);
        }
        let labels: Vec<u32> = nearest.iter().map(|&(_, pos)| self.labels[pos]).collect();
        knn_vote(&labels, self.n_classes)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority label among `neighbors`; ties go to the lowest class index.
pub fn knn_vote(neighbors: &[u32], n_classes: usize) -> u32 {
    let width = n_classes.max(neighbors.iter().map(|&y| y as usize + 1).max().unwrap_or(0));
    let mut counts = vec![0usize; width];
    for &y in neighbors {
        counts[y as usize] += 1;
    }
    super::argmax_by(&counts) as u32
}
