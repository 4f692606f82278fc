//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid after each assignment pass.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++: first centre uniform, later ones with probability proportional to
/// the squared distance to the nearest chosen centre. Stops early when every
/// remaining point coincides with a centre, which reduces `k`.
fn seed<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("positive total");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Cluster `points` into at most `k` non-empty groups.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> KMeans {
    let n = points.len();
    if n == 0 || k == 0 {
        return KMeans {
            assignments: vec![0; n],
            centroids: Vec::new(),
            objective_trace: Vec::new(),
        };
    }
    let dim = points[0].len();
    let mut centroids = seed(points, k.min(n), rng);
    let k = centroids.len();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            dist[i] = d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // refill empty clusters with the worst-served point of a shared cluster
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&i, &j| dist[i].total_cmp(&dist[j]).then(j.cmp(&i)))
                .expect("k <= n leaves a shared cluster");
            counts[assignments[far]] -= 1;
            assignments[far] = empty;
            counts[empty] = 1;
            dist[far] = 0.0;
            centroids[empty] = points[far].clone();
            changed = true;
        }
        trace.push(dist.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in points.iter().zip(&assignments) {
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, s) in sums.into_iter().enumerate() {
            centroids[c] = s.into_iter().map(|x| x / counts[c] as f64).collect();
        }
    }
    KMeans {
        assignments,
        centroids,
        objective_trace: trace,
    }
}
