//! Representative sample selection over clustered features, and the random baseline.
//!
//! Budgets are split across clusters in proportion to cluster size using
//! largest-remainder apportionment, so per-cluster counts always sum to the
//! requested budget. Within a cluster, members closest to the centroid go first.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans_best_of, ClusterModel, KMeansOptions};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{derive_seed, rng_from, Key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Representative,
    Random,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Representative => f.write_str("representative"),
            Method::Random => f.write_str("random"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub id: String,
    pub cluster: Option<usize>,
    pub distance: Option<f64>,
    pub rank: Option<usize>,
}

/// The annotation work order for one selection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub method: Method,
    pub budget: usize,
    pub iteration: usize,
    pub chosen: Vec<Choice>,
}

impl SelectionResult {
    pub fn ids(&self) -> Vec<String> {
        self.chosen.iter().map(|c| c.id.clone()).collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    pub distance: f64,
}

/// Labeled/pool bookkeeping carried across query rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub method: Method,
    pub labeled: BTreeSet<String>,
    pub pool: BTreeSet<String>,
    /// Per-cluster members, nearest to the centroid first. Empty for random selection.
    pub rankings: Vec<Vec<RankEntry>>,
    pub cluster_sizes: Vec<usize>,
    pub iteration: usize,
    /// Root seed for random queries.
    pub seed: u64,
}

impl SelectionState {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn check_batch(&self, batch: usize) -> Result<()> {
        if batch > self.pool.len() {
            return Err(Error::Budget(format!(
                "batch {batch} exceeds remaining pool of {}",
                self.pool.len()
            )));
        }
        Ok(())
    }

    fn commit(&mut self, chosen: &[Choice]) {
        for c in chosen {
            let moved = self.pool.remove(&c.id);
            debug_assert!(moved, "{} selected twice", c.id);
            self.labeled.insert(c.id.clone());
        }
        self.iteration += 1;
    }

    /// Next query round: continue down the frozen cluster rankings (or draw
    /// uniformly for the random baseline). Moves the chosen ids to the labeled set.
    pub fn select_next(&mut self, batch: usize) -> Result<SelectionResult> {
        self.check_batch(batch)?;
        let next = self.iteration + 1;
        let chosen = match self.method {
            Method::Random => {
                let pool: Vec<String> = self.pool.iter().cloned().collect();
                let seed = derive_seed(self.seed, &[Key::Str("random-query"), Key::U64(next as u64)]);
                select_random(&pool, batch, seed)?
                    .into_iter()
                    .map(|id| Choice {
                        id,
                        cluster: None,
                        distance: None,
                        rank: None,
                    })
                    .collect()
            }
            Method::Representative => {
                let remaining: Vec<Vec<(usize, &RankEntry)>> = self
                    .rankings
                    .iter()
                    .map(|r| {
                        r.iter()
                            .enumerate()
                            .filter(|(_, e)| self.pool.contains(&e.id))
                            .collect()
                    })
                    .collect();
                let counts: Vec<usize> = remaining.iter().map(Vec::len).collect();
                let quotas = allocate(&counts, batch)?;
                let mut chosen = Vec::with_capacity(batch);
                for (cluster, (members, q)) in remaining.iter().zip(quotas).enumerate() {
                    for &(rank, e) in members.iter().take(q) {
                        chosen.push(Choice {
                            id: e.id.clone(),
                            cluster: Some(cluster),
                            distance: Some(e.distance),
                            rank: Some(rank),
                        });
                    }
                }
                chosen
            }
        };
        self.commit(&chosen);
        Ok(SelectionResult {
            method: self.method,
            budget: batch,
            iteration: self.iteration,
            chosen,
        })
    }

    /// Re-cluster the remaining pool and replace the rankings with pool-only ones.
    pub fn recluster(&mut self, features: &FeatureMatrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<()> {
        if self.method != Method::Representative {
            return Ok(());
        }
        let pool: Vec<&String> = self.pool.iter().collect();
        let sub = features.subset(&pool)?;
        let k = k.min(sub.len());
        if k == 0 {
            return Ok(());
        }
        let model = kmeans_best_of(&sub, k, seed, opts)?;
        self.rankings = rank_representatives(&sub, &model)?;
        self.cluster_sizes = model.cluster_sizes();
        Ok(())
    }
}

/// Largest-remainder apportionment of `budget` over clusters of the given sizes.
///
/// Each cluster first gets `floor(budget * size / total)`; the leftover goes one
/// at a time to the largest fractional remainders (ties to the lowest index),
/// skipping clusters that are already full.
pub fn allocate(sizes: &[usize], budget: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if budget > total {
        return Err(Error::Budget(format!(
            "budget {budget} exceeds {total} available samples"
        )));
    }
    if budget == 0 {
        return Ok(vec![0; sizes.len()]);
    }
    let (b, t) = (budget as u128, total as u128);
    let mut counts: Vec<usize> = sizes.iter().map(|&s| (b * s as u128 / t) as usize).collect();
    let rems: Vec<u128> = sizes.iter().map(|&s| b * s as u128 % t).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&i, &j| rems[j].cmp(&rems[i]).then(i.cmp(&j)));
    let mut left = budget - counts.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &i in &order {
            if left == 0 {
                break;
            }
            if counts[i] < sizes[i] {
                counts[i] += 1;
                left -= 1;
            }
        }
        assert!(left < before, "capacity checked above");
    }
    Ok(counts)
}

/// Per cluster, the members ordered by distance to their centroid (ties by id).
pub fn rank_representatives(features: &FeatureMatrix, model: &ClusterModel) -> Result<Vec<Vec<RankEntry>>> {
    if model.ids != features.ids() {
        return Err(Error::Data("cluster model was fitted on different samples".into()));
    }
    let mut rankings: Vec<Vec<RankEntry>> = vec![Vec::new(); model.k];
    for (i, id) in features.ids().iter().enumerate() {
        rankings[model.assignment[i]].push(RankEntry {
            id: id.clone(),
            distance: model.distances[i],
        });
    }
    for r in &mut rankings {
        r.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
    }
    Ok(rankings)
}

/// Uniform sample without replacement from the id-sorted pool.
pub fn select_random<S: AsRef<str>>(pool: &[S], n: usize, seed: u64) -> Result<Vec<String>> {
    if n > pool.len() {
        return Err(Error::Budget(format!("cannot draw {n} from a pool of {}", pool.len())));
    }
    let mut sorted: Vec<&str> = pool.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    let mut rng = rng_from(seed);
    Ok(rand::seq::index::sample(&mut rng, sorted.len(), n)
        .into_iter()
        .map(|i| sorted[i].to_string())
        .collect())
}

#[derive(Debug, Clone)]
pub struct InitialSelection {
    pub result: SelectionResult,
    pub state: SelectionState,
    pub clusters: Option<ClusterModel>,
}

/// Cluster the features, apportion `budget` across clusters, and take the
/// top-ranked members of each.
pub fn select_initial(
    features: &FeatureMatrix,
    k: usize,
    budget: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<InitialSelection> {
    if budget > features.len() {
        return Err(Error::Budget(format!(
            "budget {budget} exceeds {} samples",
            features.len()
        )));
    }
    let clusters = kmeans_best_of(features, k, seed, opts)?;
    let rankings = rank_representatives(features, &clusters)?;
    let sizes = clusters.cluster_sizes();
    let quotas = allocate(&sizes, budget)?;
    let mut chosen = Vec::with_capacity(budget);
    for (cluster, (members, q)) in rankings.iter().zip(quotas).enumerate() {
        for (rank, e) in members.iter().take(q).enumerate() {
            chosen.push(Choice {
                id: e.id.clone(),
                cluster: Some(cluster),
                distance: Some(e.distance),
                rank: Some(rank),
            });
        }
    }
    let labeled: BTreeSet<String> = chosen.iter().map(|c| c.id.clone()).collect();
    let pool = features
        .ids()
        .iter()
        .filter(|id| !labeled.contains(*id))
        .cloned()
        .collect();
    let state = SelectionState {
        method: Method::Representative,
        labeled,
        pool,
        rankings,
        cluster_sizes: sizes,
        iteration: 0,
        seed,
    };
    Ok(InitialSelection {
        result: SelectionResult {
            method: Method::Representative,
            budget,
            iteration: 0,
            chosen,
        },
        state,
        clusters: Some(clusters),
    })
}

/// Random-baseline counterpart of [`select_initial`].
pub fn select_initial_random<S: AsRef<str>>(ids: &[S], budget: usize, seed: u64) -> Result<InitialSelection> {
    let picked = select_random(ids, budget, derive_seed(seed, &[Key::Str("random-query"), Key::U64(0)]))?;
    let labeled: BTreeSet<String> = picked.iter().cloned().collect();
    let pool = ids
        .iter()
        .map(|s| s.as_ref().to_string())
        .filter(|id| !labeled.contains(id))
        .collect();
    Ok(InitialSelection {
        result: SelectionResult {
            method: Method::Random,
            budget,
            iteration: 0,
            chosen: picked
                .into_iter()
                .map(|id| Choice {
                    id,
                    cluster: None,
                    distance: None,
                    rank: None,
                })
                .collect(),
        },
        state: SelectionState {
            method: Method::Random,
            labeled,
            pool,
            rankings: Vec::new(),
            cluster_sizes: Vec::new(),
            iteration: 0,
            seed,
        },
        clusters: None,
    })
}
