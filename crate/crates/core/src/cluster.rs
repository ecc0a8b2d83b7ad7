//! K-means (k-means++ seeding, Lloyd iterations) over a [`FeatureMatrix`].

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{derive_seed, rng_from, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    PlusPlus,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansOptions {
    pub init: Init,
    pub max_iter: usize,
    /// Independent runs; the lowest-inertia run is kept.
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            init: Init::PlusPlus,
            max_iter: 300,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub ids: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// L2 (not squared) distance of each row to its assigned centroid.
    pub distances: Vec<f64>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Inertia recomputed from the features, centroids and assignment.
    pub fn recompute_inertia(&self, features: &FeatureMatrix) -> f64 {
        (0..features.len())
            .map(|i| sq_dist(features.row(i), &self.centroids[self.assignment[i]]))
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(&a, &b)| (a as f64 - b).powi(2)).sum()
}

fn nearest(x: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest centroid for every row (ties to the lowest index) and its L2 distance.
pub fn assign(features: &FeatureMatrix, centroids: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<f64>)> {
    if centroids.is_empty() {
        return Err(Error::Config("assign needs at least one centroid".into()));
    }
    if let Some(c) = centroids.iter().find(|c| c.len() != features.dim()) {
        return Err(Error::Shape(format!(
            "centroid dimension {} vs feature dimension {}",
            c.len(),
            features.dim()
        )));
    }
    let (labels, sq) = assign_sq(features, centroids);
    Ok((labels, sq.into_iter().map(f64::sqrt).collect()))
}

fn assign_sq(features: &FeatureMatrix, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..features.len())
        .map(|i| nearest(features.row(i), centroids))
        .unzip()
}

fn seed_centroids(features: &FeatureMatrix, k: usize, init: Init, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let as_f64 = |i: usize| features.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>();
    match init {
        Init::Uniform => rand::seq::index::sample(rng, n, k)
            .into_iter()
            .map(as_f64)
            .collect(),
        Init::PlusPlus => {
            let mut chosen = vec![rng.gen_range(0..n)];
            let mut centroids = vec![as_f64(chosen[0])];
            let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), &centroids[0])).collect();
            while centroids.len() < k {
                let total: f64 = d2.iter().sum();
                let pick = if total > 0.0 {
                    let target = rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (i, &d) in d2.iter().enumerate() {
                        acc += d;
                        if d > 0.0 && acc > target {
                            pick = Some(i);
                            break;
                        }
                    }
                    // rounding can leave target just above the final partial sum
                    pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
                } else {
                    (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
                };
                chosen.push(pick);
                let c = as_f64(pick);
                for (i, d) in d2.iter_mut().enumerate() {
                    *d = d.min(sq_dist(features.row(i), &c));
                }
                centroids.push(c);
            }
            centroids
        }
    }
}

fn update_centroids(features: &FeatureMatrix, assignment: &[usize], k: usize) -> Vec<Vec<f64>> {
    let d = features.dim();
    let mut sums = vec![vec![0.0f64; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums[a].iter_mut().zip(features.row(i)) {
            *s += v as f64;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Give each empty cluster the farthest point of a cluster that can spare one.
fn repair_empty(assignment: &mut [usize], sq: &mut [f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..assignment.len() {
            if counts[assignment[i]] > 1 && best.map_or(true, |b| sq[i] > sq[b]) {
                best = Some(i);
            }
        }
        let i = best.expect("k <= n leaves a donor");
        counts[assignment[i]] -= 1;
        counts[j] = 1;
        assignment[i] = j;
        sq[i] = 0.0;
    }
}

fn validate(features: &FeatureMatrix, k: usize, max_iter: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if k > features.len() {
        return Err(Error::Config(format!("k = {k} exceeds {} samples", features.len())));
    }
    if max_iter < 1 {
        return Err(Error::Config("max_iter must be >= 1".into()));
    }
    Ok(())
}

fn lloyd(features: &FeatureMatrix, k: usize, seed: u64, init: Init, max_iter: usize) -> ClusterModel {
    let n = features.len();
    let mut rng = rng_from(seed);
    let mut centroids = seed_centroids(features, k, init, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut sq = vec![0.0; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let (labels, d2) = assign_sq(features, &centroids);
        history.push(d2.iter().sum());
        sq = d2;
        if labels == assignment {
            converged = true;
            break;
        }
        assignment = labels;
        repair_empty(&mut assignment, &mut sq, k);
        centroids = update_centroids(features, &assignment, k);
    }
    if !converged {
        // centroids were just refreshed; distances must describe them
        sq = (0..n)
            .map(|i| sq_dist(features.row(i), &centroids[assignment[i]]))
            .collect();
    }
    ClusterModel {
        k,
        ids: features.ids().to_vec(),
        centroids,
        assignment,
        inertia: sq.iter().sum(),
        distances: sq.into_iter().map(f64::sqrt).collect(),
        iterations,
        converged,
        history,
    }
}

/// Single k-means++ run.
pub fn kmeans(features: &FeatureMatrix, k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    validate(features, k, max_iter)?;
    Ok(lloyd(features, k, seed, Init::PlusPlus, max_iter))
}

/// Best of `opts.restarts` runs by inertia; the earliest run wins ties.
pub fn kmeans_best_of(features: &FeatureMatrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusterModel> {
    validate(features, k, opts.max_iter)?;
    let runs = opts.restarts.max(1);
    let mut best: Option<ClusterModel> = None;
    for r in 0..runs {
        let s = derive_seed(seed, &[Key::Str("kmeans-restart"), Key::U64(r as u64)]);
        let m = lloyd(features, k, s, opts.init, opts.max_iter);
        if best.as_ref().map_or(true, |b| m.inertia < b.inertia) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one run"))
}
