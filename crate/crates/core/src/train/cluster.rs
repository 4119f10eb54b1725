//! K-means regrouping of items by their embedding centroids.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeResult {
    pub iteration: usize,
    /// Item → group, groups numbered by their lowest item index.
    pub item_to_group: Vec<usize>,
    pub item_centroids: Vec<Vec<f64>>,
    pub group_centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances.
    pub within_cluster_sse: f64,
    pub rounds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansParams {
    pub max_rounds: usize,
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { max_rounds: 100, tolerance: 1e-6 }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, r: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[r.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        let mut target = r.random::<f64>() * total;
        let mut pick = weights.iter().rposition(|&w| w > 0.0).expect("distinct points remain");
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        centers.push(points[pick].clone());
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centers).0).collect()
}

fn means(points: &[Vec<f64>], assignment: &[usize], k: usize, previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignment) {
        counts[c] += 1;
        sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| if n == 0 { previous[c].clone() } else { s.into_iter().map(|v| v / n as f64).collect() })
        .collect()
}

/// Give every empty cluster the member of the largest cluster that lies
/// farthest from that cluster's center.
fn repair_empty(points: &[Vec<f64>], assignment: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        assignment.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else { return };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("k > 0");
        let far = (0..points.len())
            .filter(|&i| assignment[i] == largest)
            .max_by(|&a, &b| {
                dist2(&points[a], &centers[largest]).total_cmp(&dist2(&points[b], &centers[largest])).then(b.cmp(&a))
            })
            .expect("largest cluster is non-empty");
        assignment[far] = empty;
        centers[empty] = points[far].clone();
    }
}

/// Partition `centroids` into exactly `groups` non-empty groups with k-means
/// (k-means++ seeding from `seed`).
pub fn cluster_items(centroids: &[Vec<f64>], groups: usize, seed: u64, params: KMeansParams) -> Result<MergeResult> {
    let n = centroids.len();
    if groups == 0 || n < groups {
        return Err(Error::Clustering(format!("cannot form {groups} groups from {n} items")));
    }
    let dim = centroids[0].len();
    if centroids.iter().any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Clustering("centroids must be finite and equally sized".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for c in centroids {
        if !distinct.contains(&c) {
            distinct.push(c);
        }
    }
    if distinct.len() < groups {
        return Err(Error::Clustering(format!(
            "only {} distinct centroids, {groups} groups impossible",
            distinct.len()
        )));
    }

    let mut r = rng(seed);
    let mut centers = kmeans_pp(centroids, groups, &mut r);
    let mut assignment = assign(centroids, &centers);
    repair_empty(centroids, &mut assignment, &mut centers);
    let mut rounds = 0;
    while rounds < params.max_rounds {
        rounds += 1;
        let updated = means(centroids, &assignment, groups, &centers);
        let shift = updated.iter().zip(&centers).map(|(a, b)| dist2(a, b).sqrt()).fold(0.0, f64::max);
        centers = updated;
        let next = assign(centroids, &centers);
        let changed = next != assignment;
        assignment = next;
        repair_empty(centroids, &mut assignment, &mut centers);
        if !changed && shift <= params.tolerance {
            break;
        }
    }
    centers = means(centroids, &assignment, groups, &centers);

    // canonical numbering: by lowest member index
    let mut first_member = vec![usize::MAX; groups];
    for (i, &g) in assignment.iter().enumerate() {
        first_member[g] = first_member[g].min(i);
    }
    let mut order: Vec<usize> = (0..groups).collect();
    order.sort_by_key(|&g| first_member[g]);
    let mut relabel = vec![0; groups];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let item_to_group: Vec<usize> = assignment.iter().map(|&g| relabel[g]).collect();
    let group_centers: Vec<Vec<f64>> = order.iter().map(|&g| centers[g].clone()).collect();
    let within_cluster_sse = centroids.iter().zip(&item_to_group).map(|(p, &g)| dist2(p, &group_centers[g])).sum();
    Ok(MergeResult {
        iteration: 0,
        item_to_group,
        item_centroids: centroids.to_vec(),
        group_centers,
        within_cluster_sse,
        rounds,
    })
}
