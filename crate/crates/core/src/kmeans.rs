//! Small-dimension k-means for splitting the school into sub-groups, and the
//! agent-to-cluster matching.

use thiserror::Error;

use crate::rng::RngHandle;
use crate::types::Vec2;

const MAX_ITERS: usize = 100;
const TOL: f64 = 1e-9;
/// Above this many agents the matching falls back to greedy.
const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("length mismatch: {agents} agents vs {clusters} clusters")]
    LengthMismatch { agents: usize, clusters: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec2>,
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

/// Cluster centroids plus which cluster each agent follows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub centroids: Vec<Vec2>,
    pub agent_to_cluster: Vec<usize>,
}

/// Lloyd iterations from k-means++ seeding.
pub fn kmeans_partition(
    points: &[Vec2],
    k: usize,
    rng: &mut RngHandle,
) -> Result<KMeansResult, KMeansError> {
    check(points, k)?;
    let init = plus_plus_seeds(points, k, rng);
    Ok(lloyd(points, init))
}

/// Lloyd iterations from caller-supplied centroids (warm start).
pub fn kmeans_from(points: &[Vec2], init: &[Vec2]) -> Result<KMeansResult, KMeansError> {
    check(points, init.len())?;
    Ok(lloyd(points, init.to_vec()))
}

fn check(points: &[Vec2], k: usize) -> Result<(), KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if points.len() < k {
        return Err(KMeansError::TooFewPoints { k, n: points.len() });
    }
    Ok(())
}

fn plus_plus_seeds(points: &[Vec2], k: usize, rng: &mut RngHandle) -> Vec<Vec2> {
    let mut centroids = vec![points[rng.below(points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| p.distance_sq(centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.uniform() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if r < *w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.below(points.len())
        };
        let c = points[idx];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.distance_sq(c));
        }
    }
    centroids
}

fn nearest_index(p: Vec2, centroids: &[Vec2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = p.distance_sq(*c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Give every empty cluster the point farthest from its current centroid,
/// taken from a cluster that can spare one.
fn repair_empty(points: &[Vec2], centroids: &mut [Vec2], labels: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = points[a].distance_sq(centroids[labels[a]]);
                let db = points[b].distance_sq(centroids[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("n >= k guarantees a donor");
        labels[donor] = empty;
        centroids[empty] = points[donor];
    }
}

fn objective(points: &[Vec2], centroids: &[Vec2], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| p.distance_sq(centroids[l]))
        .sum()
}

fn lloyd(points: &[Vec2], mut centroids: Vec<Vec2>) -> KMeansResult {
    let k = centroids.len();
    let mut labels = vec![0usize; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest_index(*p, &centroids);
        }
        repair_empty(points, &mut centroids, &mut labels);

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l].0 += p.x;
            sums[l].1 += p.y;
            sums[l].2 += 1;
        }
        let mut shift = 0.0f64;
        for (c, (sx, sy, n)) in centroids.iter_mut().zip(sums) {
            let next = Vec2::new(sx / n as f64, sy / n as f64);
            shift = shift.max(c.distance(next));
            *c = next;
        }
        trace.push(objective(points, &centroids, &labels));
        if shift < TOL {
            break;
        }
    }
    KMeansResult {
        centroids,
        labels,
        iterations,
        objective_trace: trace,
    }
}

/// Bijection from agents to clusters minimizing the summed distance.
///
/// Exhaustive over permutations up to eight agents; larger teams use a
/// greedy nearest-pair matching.
pub fn assign_agents_to_clusters(
    agents: &[Vec2],
    centroids: &[Vec2],
) -> Result<Vec<usize>, KMeansError> {
    if agents.len() != centroids.len() {
        return Err(KMeansError::LengthMismatch {
            agents: agents.len(),
            clusters: centroids.len(),
        });
    }
    let n = agents.len();
    if n <= EXHAUSTIVE_LIMIT {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = perm.clone();
        let mut best_cost = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = p
                .iter()
                .enumerate()
                .map(|(i, &c)| agents[i].distance(centroids[c]))
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best.copy_from_slice(p);
            }
        });
        Ok(best)
    } else {
        Ok(greedy_assignment(agents, centroids))
    }
}

/// Visits permutations in lexicographic order, so ties keep the first.
fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items[start..=i].rotate_right(1);
        permute(items, start + 1, visit);
        items[start..=i].rotate_left(1);
    }
}

fn greedy_assignment(agents: &[Vec2], centroids: &[Vec2]) -> Vec<usize> {
    let n = agents.len();
    let mut pairs: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (agents[i].distance(centroids[j]), i, j))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (_, i, j) in pairs {
        if out[i] == usize::MAX && !taken[j] {
            out[i] = j;
            taken[j] = true;
        }
    }
    out
}
