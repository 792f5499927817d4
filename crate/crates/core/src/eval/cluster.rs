//! View clustering: seeded k-means with restarts, then an optimal
//! cluster-to-label matching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 50, max_iter: 100, seed: 0x6b6d_6561_6e73 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist<T: Real>(a: &[T], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &c)| (x.as_f64() - c).powi(2)).sum()
}

fn nearest<T: Real>(x: &[T], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, later ones with probability
/// proportional to squared distance (uniform when all distances vanish).
fn seed_centers<T: Real>(data: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.rows();
    let row = |i: usize| data.row(i).iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    let mut centers = vec![row(rng.random_range(0..n))];
    while centers.len() < k {
        let d: Vec<f64> = (0..n).map(|i| nearest(data.row(i), &centers).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if target < di {
                    idx = i;
                    break;
                }
                target -= di;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick));
    }
    centers
}

fn lloyd<T: Real>(data: &Matrix<T>, mut centers: Vec<Vec<f64>>, max_iter: usize) -> KMeansResult {
    let (n, dim, k) = (data.rows(), data.cols(), centers.len());
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(data.row(i), &centers);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(data.row(i)) {
                *s += v.as_f64();
            }
        }
        for c in 0..k {
            // An empty cluster keeps its previous center.
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(data.row(i), &centers[assign[i]])).sum();
    KMeansResult { assignments: assign, inertia }
}

/// Best of `restarts` seeded k-means runs by inertia; ties keep the earlier
/// run.
pub fn kmeans<T: Real>(data: &Matrix<T>, k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if k == 0 || data.rows() < 1 {
        return Err(Error::InvalidArgument("k-means needs k >= 1 and at least one point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let run = lloyd(data, seed_centers(data, k, &mut rng), cfg.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`), by the shortest augmenting path method. Returns the
/// column chosen for each row. Among equal-cost optima the lowest column
/// indices win.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= cols");
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    out
}

/// Cluster the embeddings into `n_views` groups and report the fraction of
/// rows whose cluster maps to their own view under the best one-to-one
/// cluster-to-view matching.
pub fn view_cluster_accuracy<T: Real>(
    embeddings: &Matrix<T>,
    labels: &[usize],
    n_views: usize,
    cfg: &KMeansConfig,
) -> Result<f64> {
    if n_views < 2 {
        return Err(Error::InvalidArgument("view clustering needs at least 2 views".into()));
    }
    if labels.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} embeddings", labels.len(), embeddings.rows())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_views) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {n_views} views")));
    }
    let km = kmeans(embeddings, n_views, cfg)?;
    let mut counts = vec![vec![0.0; n_views]; n_views];
    for (&c, &l) in km.assignments.iter().zip(labels) {
        counts[c][l] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let matched: f64 = min_cost_assignment(&cost).iter().enumerate().map(|(c, &l)| counts[c][l]).sum();
    Ok(matched / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn separated(n_views: usize, per: usize, spread: f64, seed: u64) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for v in 0..n_views {
            for _ in 0..per {
                let ang = v as f64 * 2.0 * std::f64::consts::PI / n_views as f64;
                data.extend([10.0 * ang.cos() + rng.random_range(-spread..spread), 10.0 * ang.sin() + rng.random_range(-spread..spread), 0.1]);
                labels.push(v);
            }
        }
        (Matrix::from_vec(n_views * per, 3, data).unwrap(), labels)
    }

    #[test]
    fn separated_clusters_score_one() {
        let (data, labels) = separated(8, 20, 0.5, 1);
        assert_eq!(view_cluster_accuracy(&data, &labels, 8, &KMeansConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn identical_embeddings_score_uniform() {
        let data = Matrix::filled(40, 5, 0.25);
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert_eq!(view_cluster_accuracy(&data, &labels, 4, &KMeansConfig::default()).unwrap(), 0.25);
    }

    #[test]
    fn relabelling_views_does_not_change_accuracy() {
        let (data, labels) = separated(5, 10, 4.0, 2);
        let cfg = KMeansConfig::default();
        let base = view_cluster_accuracy(&data, &labels, 5, &cfg).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let relabelled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        assert_eq!(view_cluster_accuracy(&data, &relabelled, 5, &cfg).unwrap(), base);
    }

    #[test]
    fn rejects_bad_input() {
        let data = Matrix::filled(4, 2, 0.0);
        assert!(view_cluster_accuracy(&data, &[0, 0, 0, 0], 1, &KMeansConfig::default()).is_err());
        assert!(view_cluster_accuracy(&data, &[0, 1], 2, &KMeansConfig::default()).is_err());
        assert!(view_cluster_accuracy(&data, &[0, 1, 2, 0], 2, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn tie_break_prefers_lowest_columns() {
        let cost = vec![vec![0.0; 4]; 2];
        assert_eq!(min_cost_assignment(&cost), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn assignment_matches_exhaustive_permutations(n in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..20) as f64).collect()).collect();
            let got = min_cost_assignment(&cost);
            let mut seen = vec![false; n];
            for &c in &got {
                prop_assert!(!seen[c]);
                seen[c] = true;
            }
            let total = |p: &[usize]| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>();
            let best = permutations(n).iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(total(&got), best);
        }

        #[test]
        fn rectangular_assignment_matches_exhaustive(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cost: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let got = min_cost_assignment(&cost);
            let total: f64 = got.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            let mut best = f64::INFINITY;
            for a in 0..5 {
                for b in 0..5 {
                    for c in 0..5 {
                        if a != b && b != c && a != c {
                            best = best.min(cost[0][a] + cost[1][b] + cost[2][c]);
                        }
                    }
                }
            }
            prop_assert!((total - best).abs() < 1e-12);
        }
    }
}
