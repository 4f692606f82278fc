//! Gaussian similarity graph, unnormalized Laplacian and eigengap clustering.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use super::kmeans::kmeans;
use super::SlicingError;
use crate::mobility::Point;

/// Symmetric matrix of pairwise Gaussian similarities, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    a: DMatrix<f64>,
}

impl SimilarityMatrix {
    /// Wrap an existing matrix. Panics if it is not square.
    pub fn from_matrix(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "similarity matrix must be square");
        SimilarityMatrix { a }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

/// `exp(-d / (2 sigma^2))`, or `exp(-d^2 / (2 sigma^2))` when `squared`.
pub fn gaussian_similarity(distance_m: f64, sigma_m: f64, squared: bool) -> f64 {
    let d = if squared {
        distance_m * distance_m
    } else {
        distance_m
    };
    (-d / (2.0 * sigma_m * sigma_m)).exp()
}

pub fn similarity_matrix(positions: &[Point], sigma_m: f64, squared: bool) -> SimilarityMatrix {
    assert!(sigma_m > 0.0, "sigma must be positive");
    let n = positions.len();
    let mut a = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in i + 1..n {
            let s = gaussian_similarity(positions[i].distance(positions[j]), sigma_m, squared);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    SimilarityMatrix { a }
}

/// `L = D - W`, where `W` is the similarity matrix without self-loops.
pub fn laplacian(a: &SimilarityMatrix) -> DMatrix<f64> {
    let n = a.n();
    let mut l = -a.as_matrix().clone();
    for i in 0..n {
        let degree: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j)).sum();
        l[(i, i)] = degree;
    }
    l
}

/// Largest gap between consecutive ascending eigenvalues, ties to the first,
/// clamped to `[1, ceil(n / 2)]`.
pub fn eigengap_k(eigenvalues_ascending: &[f64]) -> usize {
    let n = eigenvalues_ascending.len();
    if n < 2 {
        return 1;
    }
    let mut best = (f64::NEG_INFINITY, 1);
    for i in 1..n {
        let gap = eigenvalues_ascending[i] - eigenvalues_ascending[i - 1];
        if gap > best.0 {
            best = (gap, i);
        }
    }
    best.1.clamp(1, n.div_ceil(2))
}

/// Eigenpairs of a symmetric matrix sorted by ascending eigenvalue.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Column `i` belongs to `values[i]`.
    pub vectors: DMatrix<f64>,
}

pub fn spectrum(l: &DMatrix<f64>) -> Result<Spectrum, SlicingError> {
    let n = l.nrows();
    let eig = SymmetricEigen::try_new(l.clone(), f64::EPSILON, 100 * n.max(10))
        .ok_or(SlicingError::EigenNoConvergence { n })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(Spectrum { values, vectors })
}

/// Rows of the `k` eigenvectors with the smallest eigenvalues.
pub fn spectral_embed(l: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>, SlicingError> {
    let n = l.nrows();
    if k == 0 || k > n {
        return Err(SlicingError::BadDimension { k, n });
    }
    Ok(spectrum(l)?.vectors.columns(0, k).into_owned())
}

/// Clusters as sorted member-index lists, ordered by their smallest member.
pub type Clusters = Vec<Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub clusters: Clusters,
    pub k: usize,
    /// The eigensolver failed and threshold components were used instead.
    pub fallback: bool,
}

/// Similarity, Laplacian, eigengap, embedding and k-means in one pass.
pub fn cluster_vehicles<R: Rng + ?Sized>(
    positions: &[Point],
    sigma_m: f64,
    squared: bool,
    rng: &mut R,
) -> ClusterOutcome {
    let n = positions.len();
    if n <= 1 {
        return ClusterOutcome {
            clusters: if n == 1 { vec![vec![0]] } else { Vec::new() },
            k: n,
            fallback: false,
        };
    }
    let a = similarity_matrix(positions, sigma_m, squared);
    let l = laplacian(&a);
    let eig = match spectrum(&l) {
        Ok(s) => s,
        Err(_) => {
            let clusters = threshold_components(&a, (-1.0f64).exp());
            return ClusterOutcome {
                k: clusters.len(),
                clusters,
                fallback: true,
            };
        }
    };
    let k = eigengap_k(&eig.values);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|r| (0..k).map(|c| eig.vectors[(r, c)]).collect())
        .collect();
    let km = kmeans(&points, k, rng);
    let clusters = canonical(&km.assignments, km.centroids.len());
    ClusterOutcome {
        k: clusters.len(),
        clusters,
        fallback: false,
    }
}

/// Group indices by label, sort members, and order groups by first member.
pub fn canonical(labels: &[usize], n_labels: usize) -> Clusters {
    let mut groups = vec![Vec::new(); n_labels];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Connected components of the graph with an edge wherever `a_ij >= threshold`.
pub fn threshold_components(a: &SimilarityMatrix, threshold: f64) -> Clusters {
    let n = a.n();
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if label[j] == usize::MAX && i != j && a.get(i, j) >= threshold {
                    label[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    canonical(&label, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_reference_values() {
        let p = [
            Point::new(0.0, 0.0),
            Point::new(0.0, 0.0),
            Point::new(50.0, 0.0),
        ];
        let a = similarity_matrix(&p, 5.0, false);
        assert_eq!(a.get(0, 1), 1.0);
        assert_abs_diff_eq!(a.get(0, 2), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(a.get(0, 2), 0.3679, epsilon = 1e-4);
        assert_eq!(a.get(2, 0), a.get(0, 2));
        let sq = similarity_matrix(&p, 50.0, true);
        assert_abs_diff_eq!(sq.get(0, 2), (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn two_node_laplacian() {
        let a = SimilarityMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let l = laplacian(&a);
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
    }

    #[test]
    fn eigengap_examples() {
        assert_eq!(eigengap_k(&[0.0, 0.0, 0.0, 2.1, 2.3]), 3);
        assert_eq!(eigengap_k(&[0.0, 5.0]), 1);
        assert_eq!(eigengap_k(&[0.0]), 1);
        assert_eq!(eigengap_k(&[]), 1);
        // the largest gap sits at i = 5 but ceil(6/2) caps it
        assert_eq!(eigengap_k(&[0.0, 0.1, 0.2, 0.3, 0.4, 9.0]), 3);
        // equal gaps resolve to the smallest index
        assert_eq!(eigengap_k(&[0.0, 1.0, 2.0, 3.0]), 1);
    }

    #[test]
    fn embedding_of_connected_graph_is_constant_sign() {
        let p: Vec<Point> = (0..6).map(|i| Point::new(i as f64, 0.0)).collect();
        let l = laplacian(&similarity_matrix(&p, 3.0, true));
        let u = spectral_embed(&l, 1).unwrap();
        let first = u[(0, 0)];
        for r in 0..6 {
            assert_abs_diff_eq!(u[(r, 0)], first, epsilon = 1e-8);
        }
        assert!(spectral_embed(&l, 7).is_err());
    }

    #[test]
    fn embedding_columns_are_orthonormal() {
        let mut rng = stream(4, StreamKind::Placement);
        let p: Vec<Point> = (0..20)
            .map(|_| Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..20.0)))
            .collect();
        let l = laplacian(&similarity_matrix(&p, 10.0, true));
        let u = spectral_embed(&l, 5).unwrap();
        let gram = u.transpose() * &u;
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(gram[(i, j)], want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn block_diagonal_rows_coincide_within_blocks() {
        let p = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1000.0, 0.0),
            Point::new(1001.0, 0.0),
        ];
        let l = laplacian(&similarity_matrix(&p, 2.0, true));
        let u = spectral_embed(&l, 2).unwrap();
        for (a, b) in [(0, 1), (0, 2), (3, 4)] {
            assert_abs_diff_eq!((u.row(a) - u.row(b)).norm(), 0.0, epsilon = 1e-8);
        }
        assert!((u.row(0) - u.row(3)).norm() > 0.1);
    }

    #[test]
    fn two_far_groups_split_in_two() {
        let mut p: Vec<Point> = (0..5).map(|i| Point::new(i as f64 * 2.0, 2.0)).collect();
        p.extend((0..4).map(|i| Point::new(500.0 + i as f64 * 2.0, 6.0)));
        let out = cluster_vehicles(&p, 5.0, false, &mut stream(1, StreamKind::Kmeans));
        assert_eq!(out.clusters, vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8]]);
        assert!(!out.fallback);
    }

    #[test]
    fn tight_group_is_one_cluster() {
        let p: Vec<Point> = (0..8)
            .map(|i| Point::new(i as f64 * 0.1, (i % 2) as f64 * 0.5))
            .collect();
        let out = cluster_vehicles(&p, 50.0, false, &mut stream(1, StreamKind::Kmeans));
        assert_eq!(out.clusters.len(), 1);
    }

    #[test]
    fn threshold_components_split_on_weak_edges() {
        let p = [
            Point::new(0.0, 0.0),
            Point::new(3.0, 0.0),
            Point::new(40.0, 0.0),
        ];
        let a = similarity_matrix(&p, 5.0, true);
        assert_eq!(
            threshold_components(&a, (-1.0f64).exp()),
            vec![vec![0, 1], vec![2]]
        );
    }
}
