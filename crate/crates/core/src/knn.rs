//! Exact brute-force Euclidean k-nearest-neighbor search over sparse user
//! vectors.
//!
//! Every query scores all indexed users. Dot products against the target
//! come from an item-to-user posting list, and squared distances from
//! `|a|² + |b|² - 2a·b` with precomputed norms. The candidates at or near
//! the k-th distance are then re-scored with a direct sparse merge so that
//! the reported distances and the ordering (distance, then user id) do not
//! depend on cancellation error in the identity.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::corpus::ItemIdx;
use crate::error::{Error, Result};
use crate::vectors::SparseVector;

/// Slack added to the k-th screening distance when collecting candidates
/// for exact re-scoring. Covers the rounding error of the norm identity.
const SCREEN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position of the neighbor in the index (users are sorted by id).
    pub position: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub position: usize,
    /// Ascending distance, ties by user id. Never contains the target.
    pub neighbors: Vec<Neighbor>,
}

pub struct KnnIndex {
    user_ids: Vec<String>,
    vectors: Vec<SparseVector>,
    norms: Vec<f64>,
    postings: Vec<Vec<(u32, f64)>>,
    dim: usize,
}

impl KnnIndex {
    /// Builds an index over `(user_id, vector)` pairs. Input order does not
    /// matter; users are stored sorted by id.
    pub fn build(mut users: Vec<(String, SparseVector)>) -> Result<Self> {
        let dim = match users.first() {
            Some((_, v)) => v.dim(),
            None => return Err(Error::EmptyIndex),
        };
        if let Some((_, v)) = users.iter().find(|(_, v)| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        users.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = users.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateUser(w[0].0.clone()));
        }
        if users.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig("too many users for the index".into()));
        }

        let mut postings: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];
        for (pos, (_, v)) in users.iter().enumerate() {
            for &(item, value) in v.entries() {
                postings[item as usize].push((pos as u32, value));
            }
        }
        let (user_ids, vectors): (Vec<_>, Vec<_>) = users.into_iter().unzip();
        let norms = vectors.iter().map(SparseVector::norm_sq).collect();
        Ok(Self {
            user_ids,
            vectors,
            norms,
            postings,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, user_id: &str) -> Option<usize> {
        self.user_ids.binary_search_by(|u| u.as_str().cmp(user_id)).ok()
    }

    pub fn user_id(&self, position: usize) -> &str {
        &self.user_ids[position]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn vector(&self, position: usize) -> &SparseVector {
        &self.vectors[position]
    }

    /// Items with a non-empty posting list, i.e. held by some user.
    pub fn posting(&self, item: ItemIdx) -> &[(u32, f64)] {
        &self.postings[item as usize]
    }

    pub fn query(&self, target: &str, k: usize) -> Result<NeighborSet> {
        let position = self
            .position(target)
            .ok_or_else(|| Error::UnknownUser(target.to_owned()))?;
        self.query_position(position, k)
    }

    pub fn query_position(&self, position: usize, k: usize) -> Result<NeighborSet> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if position >= self.len() {
            return Err(Error::UnknownUser(format!("#{position}")));
        }
        let mut scratch = Scratch::new(self.len());
        Ok(self.query_with(position, k, &mut scratch))
    }

    /// Queries every indexed user, in position order, in parallel.
    pub fn batch_query(&self, k: usize) -> Result<Vec<NeighborSet>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        Ok((0..self.len())
            .into_par_iter()
            .map_init(|| Scratch::new(self.len()), |scratch, pos| self.query_with(pos, k, scratch))
            .collect())
    }

    fn query_with(&self, target: usize, k: usize, scratch: &mut Scratch) -> NeighborSet {
        let n = self.len();
        let query = &self.vectors[target];
        let dots = &mut scratch.dots;
        for &(item, value) in query.entries() {
            for &(user, other) in &self.postings[item as usize] {
                dots[user as usize] += value * other;
            }
        }
        let target_norm = self.norms[target];
        let candidates = &mut scratch.candidates;
        candidates.clear();
        candidates.extend((0..n).filter(|&u| u != target).map(|u| {
            let d2 = (target_norm + self.norms[u] - 2.0 * dots[u]).max(0.0);
            (d2, u as u32)
        }));
        for &(item, _) in query.entries() {
            for &(user, _) in &self.postings[item as usize] {
                dots[user as usize] = 0.0;
            }
        }

        let k = k.min(candidates.len());
        if k == 0 {
            return NeighborSet {
                position: target,
                neighbors: Vec::new(),
            };
        }
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, cmp_candidate);
            let cutoff = candidates[k - 1].0;
            let limit = cutoff + SCREEN_SLACK * (1.0 + cutoff);
            let mut end = k;
            for i in k..candidates.len() {
                if candidates[i].0 <= limit {
                    candidates.swap(end, i);
                    end += 1;
                }
            }
            candidates.truncate(end);
        }

        let mut exact: Vec<(f64, u32)> = candidates
            .iter()
            .map(|&(_, u)| (query.squared_distance(&self.vectors[u as usize]), u))
            .collect();
        exact.sort_unstable_by(cmp_candidate);
        exact.truncate(k);
        NeighborSet {
            position: target,
            neighbors: exact
                .into_iter()
                .map(|(d2, u)| Neighbor {
                    position: u as usize,
                    distance: d2.sqrt(),
                })
                .collect(),
        }
    }
}

fn cmp_candidate(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

struct Scratch {
    dots: Vec<f64>,
    candidates: Vec<(f64, u32)>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            dots: vec![0.0; n],
            candidates: Vec::with_capacity(n),
        }
    }
}
