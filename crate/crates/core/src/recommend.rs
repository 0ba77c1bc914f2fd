//! Next-basket recommenders: personal top frequency and TIFU-KNN.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIdx, SplitCorpus, UserRecord};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::vectors::{decayed_user_vector, pif_vector, DecayParams, SparseVector};

pub const TOP_PERSONAL_TAG: &str = "top-personal";
pub const TIFU_KNN_TAG: &str = "tifuknn";

/// Full TIFU-KNN configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Number of nearest neighbors.
    pub k: usize,
    #[serde(flatten)]
    pub decay: DecayParams,
    /// Weight of the user's own vector against the neighbor mean.
    pub alpha: f64,
    /// Number of items recommended.
    #[serde(default = "default_basket_size")]
    pub basket_size: usize,
}

fn default_basket_size() -> usize {
    20
}

/// Dataset names with shipped hyperparameter presets.
pub const PRESETS: [&str; 6] = ["instacart", "dunnhumby", "tafeng", "valuedshopper", "tmall", "taobao"];

impl HyperParams {
    pub fn new(k: usize, r_b: f64, r_g: f64, m: usize, alpha: f64) -> Self {
        Self {
            k,
            decay: DecayParams { r_b, r_g, m },
            alpha,
            basket_size: default_basket_size(),
        }
    }

    /// Tuned settings per dataset. Lists are 20 items long so that every
    /// metric cutoff up to 20 can be scored.
    pub fn preset(name: &str) -> Result<Self> {
        let hp = match name.to_ascii_lowercase().as_str() {
            "instacart" => Self::new(900, 0.9, 0.7, 3, 0.9),
            "dunnhumby" => Self::new(900, 0.9, 0.6, 3, 0.2),
            "tafeng" => Self::new(300, 0.9, 0.7, 7, 0.7),
            "valuedshopper" => Self::new(300, 1.0, 0.6, 7, 0.7),
            "tmall" => Self::new(100, 0.6, 0.8, 18, 0.7),
            "taobao" => Self::new(300, 0.6, 0.8, 10, 0.1),
            _ => return Err(Error::UnknownPreset(name.to_owned())),
        };
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        self.decay.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1]; got {}", self.alpha)));
        }
        if self.basket_size == 0 {
            return Err(Error::InvalidConfig("basket size must be at least 1".into()));
        }
        Ok(())
    }
}

/// How to fill a list when fewer than `s` items have a positive score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Append globally popular items not already listed.
    #[default]
    Popularity,
    /// Return the short list.
    Disabled,
}

/// All items ranked by the number of history baskets containing them,
/// descending, ties by ascending index. Items never bought come last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Popularity {
    ranked: Vec<ItemIdx>,
    counts: Vec<u64>,
}

impl Popularity {
    pub fn from_histories(corpus: &SplitCorpus) -> Self {
        let mut counts = vec![0u64; corpus.n_items()];
        for user in &corpus.users {
            for basket in &user.history {
                for &item in basket.items() {
                    counts[item as usize] += 1;
                }
            }
        }
        let mut ranked: Vec<ItemIdx> = (0..counts.len() as ItemIdx).collect();
        ranked.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
        Self { ranked, counts }
    }

    pub fn ranked(&self) -> &[ItemIdx] {
        &self.ranked
    }

    pub fn count(&self, item: ItemIdx) -> u64 {
        self.counts[item as usize]
    }
}

/// Sparse item scores `P`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionScores {
    pub entries: Vec<(ItemIdx, f64)>,
}

impl PredictionScores {
    pub fn get(&self, item: ItemIdx) -> f64 {
        self.entries
            .binary_search_by_key(&item, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }
}

impl From<&SparseVector> for PredictionScores {
    fn from(v: &SparseVector) -> Self {
        Self {
            entries: v.entries().to_vec(),
        }
    }
}

/// Ranked recommendation for one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionList {
    pub user_id: String,
    pub items: Vec<ItemIdx>,
    pub model: String,
}

/// The `s` highest-scoring items, ties by ascending index. Only positive
/// scores compete; remaining slots are filled according to `padding`.
pub fn select_top_s(scores: &PredictionScores, s: usize, popularity: &Popularity, padding: Padding) -> Vec<ItemIdx> {
    let mut ranked: Vec<(ItemIdx, f64)> = scores.entries.iter().copied().filter(|&(_, v)| v > 0.0).collect();
    let by_score = |a: &(ItemIdx, f64), b: &(ItemIdx, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if ranked.len() > s && s > 0 {
        ranked.select_nth_unstable_by(s - 1, by_score);
        ranked.truncate(s);
    }
    ranked.sort_unstable_by(by_score);
    ranked.truncate(s);
    let mut items: Vec<ItemIdx> = ranked.into_iter().map(|(i, _)| i).collect();

    if items.len() < s && padding == Padding::Popularity {
        let chosen: HashSet<ItemIdx> = items.iter().copied().collect();
        let missing = s - items.len();
        items.extend(
            popularity
                .ranked()
                .iter()
                .copied()
                .filter(|i| !chosen.contains(i))
                .take(missing),
        );
    }
    items
}

/// Personal top frequency: the user's most frequently bought items.
pub fn top_personal(user: &UserRecord, s: usize, dim: usize, popularity: &Popularity, padding: Padding) -> PredictionList {
    let counts = pif_vector(&user.history, dim);
    PredictionList {
        user_id: user.user_id.clone(),
        items: select_top_s(&PredictionScores::from(&counts), s, popularity, padding),
        model: TOP_PERSONAL_TAG.to_owned(),
    }
}

pub fn top_personal_all(corpus: &SplitCorpus, s: usize, padding: Padding) -> Vec<PredictionList> {
    let popularity = Popularity::from_histories(corpus);
    corpus
        .users
        .par_iter()
        .map(|u| top_personal(u, s, corpus.n_items(), &popularity, padding))
        .collect()
}

/// `P = alpha * u_t + (1 - alpha) * mean(neighbors)`. With no neighbors the
/// neighbor mean is the zero vector.
pub fn fuse(target: &SparseVector, neighbors: &[&SparseVector], alpha: f64) -> PredictionScores {
    let mut scratch = FuseScratch::new(target.dim());
    fuse_with(target, neighbors.iter().copied(), neighbors.len(), alpha, &mut scratch)
}

struct FuseScratch {
    sums: Vec<f64>,
    own: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<ItemIdx>,
}

impl FuseScratch {
    fn new(dim: usize) -> Self {
        Self {
            sums: vec![0.0; dim],
            own: vec![0.0; dim],
            seen: vec![false; dim],
            touched: Vec::new(),
        }
    }
}

fn fuse_with<'a, I>(target: &SparseVector, neighbors: I, count: usize, alpha: f64, s: &mut FuseScratch) -> PredictionScores
where
    I: IntoIterator<Item = &'a SparseVector>,
{
    if alpha == 1.0 {
        return PredictionScores::from(target);
    }
    let touch = |item: ItemIdx, s: &mut FuseScratch| {
        if !s.seen[item as usize] {
            s.seen[item as usize] = true;
            s.touched.push(item);
        }
    };
    for &(item, value) in target.entries() {
        s.own[item as usize] = value;
        touch(item, s);
    }
    for neighbor in neighbors {
        for &(item, value) in neighbor.entries() {
            s.sums[item as usize] += value;
            touch(item, s);
        }
    }
    s.touched.sort_unstable();
    let mut entries = Vec::with_capacity(s.touched.len());
    for &item in &s.touched {
        let i = item as usize;
        let mean = if count == 0 { 0.0 } else { s.sums[i] / count as f64 };
        let score = alpha * s.own[i] + (1.0 - alpha) * mean;
        if score != 0.0 {
            entries.push((item, score));
        }
        s.sums[i] = 0.0;
        s.own[i] = 0.0;
        s.seen[i] = false;
    }
    s.touched.clear();
    PredictionScores { entries }
}

/// TIFU-KNN over one split corpus: decayed user vectors, a kNN index over
/// them, and prediction by fusing each user's vector with the mean of its
/// neighbors' vectors.
pub struct TifuKnn {
    hp: HyperParams,
    index: KnnIndex,
    popularity: Popularity,
    user_ids: Vec<String>,
}

impl TifuKnn {
    pub fn fit(corpus: &SplitCorpus, hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        let vectors = user_vectors(corpus, &hp.decay)?;
        let index = KnnIndex::build(vectors)?;
        Ok(Self {
            hp,
            index,
            popularity: Popularity::from_histories(corpus),
            user_ids: corpus.users.iter().map(|u| u.user_id.clone()).collect(),
        })
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hp
    }

    pub fn index(&self) -> &KnnIndex {
        &self.index
    }

    pub fn popularity(&self) -> &Popularity {
        &self.popularity
    }

    pub fn predict_scores(&self, user_id: &str) -> Result<PredictionScores> {
        let position = self
            .index
            .position(user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_owned()))?;
        let mut scratch = FuseScratch::new(self.index.dim());
        Ok(self.scores_at(position, &mut scratch))
    }

    fn scores_at(&self, position: usize, scratch: &mut FuseScratch) -> PredictionScores {
        let target = self.index.vector(position);
        if self.hp.alpha == 1.0 {
            return PredictionScores::from(target);
        }
        let neighbors = self
            .index
            .query_position(position, self.hp.k)
            .expect("position and k validated")
            .neighbors;
        fuse_with(
            target,
            neighbors.iter().map(|n| self.index.vector(n.position)),
            neighbors.len(),
            self.hp.alpha,
            scratch,
        )
    }

    /// One list per user, in corpus order.
    pub fn recommend_all(&self, padding: Padding) -> Vec<PredictionList> {
        (0..self.user_ids.len())
            .into_par_iter()
            .map_init(
                || FuseScratch::new(self.index.dim()),
                |scratch, pos| {
                    let scores = self.scores_at(pos, scratch);
                    PredictionList {
                        user_id: self.user_ids[pos].clone(),
                        items: select_top_s(&scores, self.hp.basket_size, &self.popularity, padding),
                        model: TIFU_KNN_TAG.to_owned(),
                    }
                },
            )
            .collect()
    }
}

/// Decayed history vectors for every user, in corpus order.
pub fn user_vectors(corpus: &SplitCorpus, decay: &DecayParams) -> Result<Vec<(String, SparseVector)>> {
    decay.validate()?;
    corpus
        .users
        .par_iter()
        .map(|u| Ok((u.user_id.clone(), decayed_user_vector(&u.history, decay, corpus.n_items())?)))
        .collect()
}

pub fn write_predictions_ndjson<W: Write>(mut writer: W, predictions: &[PredictionList]) -> Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut writer, p).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a predictions file, rejecting malformed lines, duplicate items
/// within a list and, when `n_items` is given, out-of-range items.
pub fn read_predictions_ndjson<R: BufRead>(reader: R, n_items: Option<usize>) -> Result<Vec<PredictionList>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine { line: i + 1, message };
        let p: PredictionList = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let mut seen = HashSet::with_capacity(p.items.len());
        if let Some(dup) = p.items.iter().find(|&&item| !seen.insert(item)) {
            return Err(malformed(format!("item {dup} listed twice")));
        }
        if let Some(n) = n_items {
            if let Some(bad) = p.items.iter().find(|&&item| item as usize >= n) {
                return Err(malformed(format!("item {bad} out of range for {n} items")));
            }
        }
        out.push(p);
    }
    Ok(out)
}
