//! Per-user traits (average basket size, share of popular items, share of
//! novel test items) and Recall@10 broken down by trait bins.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ItemIdx, SplitCorpus};
use crate::error::{Error, Result};

/// Fraction of the vocabulary counted as popular.
pub const POPULAR_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTrait {
    pub user_id: String,
    pub avg_basket_size: f64,
    /// Mean over history baskets of the percentage of popular items.
    pub popular_share: f64,
    /// Percentage of test items never bought in the history.
    pub novelty_share: f64,
}

/// The `ceil(0.2 * n_items)` items contained in the most history baskets,
/// ties by ascending index.
pub fn popular_items(corpus: &SplitCorpus) -> HashSet<ItemIdx> {
    let n_items = corpus.n_items();
    let mut counts = vec![0u64; n_items];
    for user in &corpus.users {
        for basket in &user.history {
            for &item in basket.items() {
                counts[item as usize] += 1;
            }
        }
    }
    let mut ranked: Vec<ItemIdx> = (0..n_items as ItemIdx).collect();
    ranked.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    let n_popular = (POPULAR_FRACTION * n_items as f64).ceil() as usize;
    ranked.into_iter().take(n_popular).collect()
}

pub fn compute_traits(corpus: &SplitCorpus) -> Vec<UserTrait> {
    let popular = popular_items(corpus);
    corpus
        .users
        .iter()
        .map(|user| {
            let n = user.history.len() as f64;
            let avg_basket_size = user.history.iter().map(|b| b.size() as f64).sum::<f64>() / n;
            let popular_share = user
                .history
                .iter()
                .map(|b| {
                    let hits = b.items().iter().filter(|i| popular.contains(i)).count();
                    100.0 * hits as f64 / b.size() as f64
                })
                .sum::<f64>()
                / n;
            let seen: HashSet<ItemIdx> = user.history.iter().flat_map(|b| b.items().iter().copied()).collect();
            let novel = user.test_basket.items().iter().filter(|i| !seen.contains(i)).count();
            UserTrait {
                user_id: user.user_id.clone(),
                avg_basket_size,
                popular_share,
                novelty_share: 100.0 * novel as f64 / user.test_basket.size() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    BasketSize,
    Popularity,
    Novelty,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::BasketSize, Axis::Popularity, Axis::Novelty];

    pub fn name(self) -> &'static str {
        match self {
            Axis::BasketSize => "basket_size",
            Axis::Popularity => "popularity",
            Axis::Novelty => "novelty",
        }
    }

    fn value(self, t: &UserTrait) -> f64 {
        match self {
            Axis::BasketSize => t.avg_basket_size,
            Axis::Popularity => t.popular_share,
            Axis::Novelty => t.novelty_share,
        }
    }

    /// Basket size: unit bins `[1,2)` .. `[49,50)` then `50+`. Percentages:
    /// deciles `[0,10)` .. `[80,90)` then the closed `[90,100]`.
    fn labels(self) -> Vec<String> {
        match self {
            Axis::BasketSize => (1..50)
                .map(|lo| format!("[{lo},{})", lo + 1))
                .chain(std::iter::once("50+".to_owned()))
                .collect(),
            Axis::Popularity | Axis::Novelty => (0..10)
                .map(|d| {
                    if d == 9 {
                        "[90,100]".to_owned()
                    } else {
                        format!("[{},{})", d * 10, d * 10 + 10)
                    }
                })
                .collect(),
        }
    }

    fn bin(self, value: f64) -> usize {
        match self {
            Axis::BasketSize => (value.floor().max(1.0) as usize).min(50) - 1,
            Axis::Popularity | Axis::Novelty => ((value / 10.0).floor().max(0.0) as usize).min(9),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "basket_size" => Ok(Axis::BasketSize),
            "popularity" | "item_popularity" => Ok(Axis::Popularity),
            "novelty" => Ok(Axis::Novelty),
            _ => Err(Error::UnknownAxis(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub label: String,
    /// Mean Recall@10 of the bin's users; `None` for an empty bin.
    pub recall_at_10: Option<f64>,
    pub user_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessBins {
    pub axis: Axis,
    pub bins: Vec<Bin>,
}

impl FairnessBins {
    pub fn total_users(&self) -> usize {
        self.bins.iter().map(|b| b.user_count).sum()
    }

    /// Count-weighted mean of the bin recalls.
    pub fn weighted_recall(&self) -> f64 {
        let total = self.total_users();
        if total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter_map(|b| b.recall_at_10.map(|r| r * b.user_count as f64))
            .sum::<f64>()
            / total as f64
    }

    /// `bin_label,recall_at_10,user_count`; empty bins leave the recall blank.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bin_label", "recall_at_10", "user_count"])?;
        for bin in &self.bins {
            let recall = bin.recall_at_10.map(|r| r.to_string()).unwrap_or_default();
            wtr.write_record([bin.label.as_str(), recall.as_str(), &bin.user_count.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Bins users along `axis` and averages their Recall@10 per bin.
pub fn bin_and_report(traits: &[UserTrait], recalls: &HashMap<String, f64>, axis: Axis) -> Result<FairnessBins> {
    let labels = axis.labels();
    let mut sums = vec![0.0; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    for t in traits {
        let recall = *recalls
            .get(&t.user_id)
            .ok_or_else(|| Error::UnknownUser(t.user_id.clone()))?;
        let bin = axis.bin(axis.value(t));
        sums[bin] += recall;
        counts[bin] += 1;
    }
    let bins = labels
        .into_iter()
        .zip(sums.into_iter().zip(counts))
        .map(|(label, (sum, count))| Bin {
            label,
            recall_at_10: (count > 0).then(|| sum / count as f64),
            user_count: count,
        })
        .collect();
    Ok(FairnessBins { axis, bins })
}

/// Binning along every axis, keyed by axis name.
pub fn full_report(traits: &[UserTrait], recalls: &HashMap<String, f64>) -> Result<Vec<FairnessBins>> {
    Axis::ALL.iter().map(|&axis| bin_and_report(traits, recalls, axis)).collect()
}
