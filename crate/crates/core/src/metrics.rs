//! Ranking metrics for next-basket predictions: Recall@K, NDCG@K, MRR@K and
//! PHR@K (personalized hit ratio).
//!
//! Relevance is binary: an item is relevant when it is in the user's truth
//! basket. NDCG normalizes by the ideal DCG over `min(K, |truth|)` hits.
//! Reciprocal rank is zero when no relevant item appears in the top K.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Basket, ItemIdx, SplitCorpus};
use crate::error::{Error, Result};
use crate::recommend::PredictionList;

pub const DEFAULT_KS: [usize; 2] = [10, 20];
pub const DEFAULT_MRR_K: usize = 10;

fn top_k(pred: &[ItemIdx], k: usize) -> &[ItemIdx] {
    &pred[..pred.len().min(k)]
}

fn hits(pred: &[ItemIdx], truth: &Basket, k: usize) -> usize {
    top_k(pred, k).iter().filter(|&&i| truth.contains(i)).count()
}

pub fn recall_at_k(pred: &[ItemIdx], truth: &Basket, k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    Ok(hits(pred, truth, k) as f64 / truth.size() as f64)
}

pub fn ndcg_at_k(pred: &[ItemIdx], truth: &Basket, k: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    let dcg: f64 = top_k(pred, k)
        .iter()
        .enumerate()
        .filter(|(_, &i)| truth.contains(i))
        .map(|(rank, _)| discount(rank))
        .sum();
    let idcg: f64 = (0..k.min(truth.size())).map(discount).sum();
    Ok(dcg / idcg)
}

/// `1 / log2(rank + 2)` for a zero-based rank.
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// Reciprocal of the one-based rank of the first relevant item in the top
/// K, or 0.
pub fn reciprocal_rank(pred: &[ItemIdx], truth: &Basket, k: usize) -> f64 {
    top_k(pred, k)
        .iter()
        .position(|&i| truth.contains(i))
        .map_or(0.0, |rank| 1.0 / (rank + 1) as f64)
}

pub fn hit_at_k(pred: &[ItemIdx], truth: &Basket, k: usize) -> bool {
    top_k(pred, k).iter().any(|&i| truth.contains(i))
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// MRR@K over `(prediction, truth)` pairs.
pub fn mrr_at_k(pairs: &[(&[ItemIdx], &Basket)], k: usize) -> f64 {
    mean(pairs.iter().map(|(p, t)| reciprocal_rank(p, t, k)))
}

/// PHR@K over `(prediction, truth)` pairs.
pub fn phr_at_k(pairs: &[(&[ItemIdx], &Basket)], k: usize) -> f64 {
    mean(pairs.iter().map(|(p, t)| if hit_at_k(p, t, k) { 1.0 } else { 0.0 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user_id: String,
    /// Indexed like [`MetricsReport::ks`].
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub hit: Vec<bool>,
    /// Reciprocal rank at [`MetricsReport::mrr_k`].
    pub rr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_users: usize,
    pub ks: Vec<usize>,
    pub mrr_k: usize,
    /// Mean values keyed as `recall@10`, `ndcg@20`, `mrr@10`, `phr@10`, ...
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub per_user: Vec<UserMetrics>,
}

impl MetricsReport {
    pub fn get(&self, name: &str, k: usize) -> Option<f64> {
        self.metrics.get(&format!("{name}@{k}")).copied()
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.get("recall", k)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text table, one metric per row.
    pub fn to_table(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "metric", "value");
        for (name, value) in &self.metrics {
            let _ = writeln!(out, "{name:<width$}  {value:>8.4}");
        }
        let _ = writeln!(out, "{:<width$}  {:>8}", "users", self.n_users);
        out
    }

    /// Per-user breakdown: `user_id,recall_at_<k>..,ndcg_at_<k>..,rr_at_<mrr_k>,hit_at_<k>..`.
    pub fn write_per_user_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_owned()];
        header.extend(self.ks.iter().map(|k| format!("recall_at_{k}")));
        header.extend(self.ks.iter().map(|k| format!("ndcg_at_{k}")));
        header.push(format!("rr_at_{}", self.mrr_k));
        header.extend(self.ks.iter().map(|k| format!("hit_at_{k}")));
        wtr.write_record(&header)?;
        for u in &self.per_user {
            let mut row = vec![u.user_id.clone()];
            row.extend(u.recall.iter().map(f64::to_string));
            row.extend(u.ndcg.iter().map(f64::to_string));
            row.push(u.rr.to_string());
            row.extend(u.hit.iter().map(|&h| u8::from(h).to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Reads one numeric column of a per-user CSV, keyed by `user_id`.
pub fn read_per_user_column<R: Read>(reader: R, column: &str) -> Result<HashMap<String, f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let user_col = find("user_id")?;
    let value_col = find(column)?;
    let mut out = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let user = record.get(user_col).unwrap_or_default().to_owned();
        let raw = record.get(value_col).unwrap_or_default();
        let value: f64 = raw.parse().map_err(|_| Error::MalformedRow {
            row,
            message: format!("`{raw}` is not a number"),
        })?;
        if out.insert(user.clone(), value).is_some() {
            return Err(Error::DuplicateUser(user));
        }
    }
    Ok(out)
}

/// Scores predictions against arbitrary truth baskets. Each truth user must
/// have exactly one prediction and every prediction must belong to a truth
/// user. Means are summed in user-id order.
pub fn evaluate_against(
    predictions: &[PredictionList],
    truths: &[(&str, &Basket)],
    ks: &[usize],
    mrr_k: usize,
) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) || mrr_k == 0 {
        return Err(Error::InvalidConfig("metric cutoffs must be positive".into()));
    }
    if truths.is_empty() {
        return Err(Error::InvalidConfig("no users to evaluate".into()));
    }
    let mut by_user: HashMap<&str, &PredictionList> = HashMap::with_capacity(predictions.len());
    let mut duplicate = Vec::new();
    for p in predictions {
        if by_user.insert(p.user_id.as_str(), p).is_some() {
            duplicate.push(p.user_id.clone());
        }
    }
    let truth_users: HashMap<&str, &Basket> = truths.iter().copied().collect();
    let mut missing: Vec<String> = truths
        .iter()
        .filter(|(u, _)| !by_user.contains_key(u))
        .map(|(u, _)| u.to_string())
        .collect();
    let mut unknown: Vec<String> = by_user
        .keys()
        .filter(|u| !truth_users.contains_key(*u))
        .map(|u| u.to_string())
        .collect();
    if !(missing.is_empty() && duplicate.is_empty() && unknown.is_empty()) {
        missing.sort();
        duplicate.sort();
        duplicate.dedup();
        unknown.sort();
        return Err(Error::PredictionCoverage {
            missing,
            duplicate,
            unknown,
        });
    }

    let mut ordered: Vec<(&str, &Basket)> = truths.to_vec();
    ordered.sort_by(|a, b| a.0.cmp(b.0));
    let per_user = ordered
        .iter()
        .map(|&(user, truth)| {
            let pred = &by_user[user].items;
            Ok(UserMetrics {
                user_id: user.to_owned(),
                recall: ks.iter().map(|&k| recall_at_k(pred, truth, k)).collect::<Result<_>>()?,
                ndcg: ks.iter().map(|&k| ndcg_at_k(pred, truth, k)).collect::<Result<_>>()?,
                hit: ks.iter().map(|&k| hit_at_k(pred, truth, k)).collect(),
                rr: reciprocal_rank(pred, truth, mrr_k),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = BTreeMap::new();
    for (slot, &k) in ks.iter().enumerate() {
        metrics.insert(format!("recall@{k}"), mean(per_user.iter().map(|u| u.recall[slot])));
        metrics.insert(format!("ndcg@{k}"), mean(per_user.iter().map(|u| u.ndcg[slot])));
        metrics.insert(
            format!("phr@{k}"),
            mean(per_user.iter().map(|u| if u.hit[slot] { 1.0 } else { 0.0 })),
        );
    }
    metrics.insert(format!("mrr@{mrr_k}"), mean(per_user.iter().map(|u| u.rr)));
    Ok(MetricsReport {
        n_users: per_user.len(),
        ks: ks.to_vec(),
        mrr_k,
        metrics,
        per_user,
    })
}

/// Scores predictions against the corpus test baskets.
pub fn evaluate(predictions: &[PredictionList], corpus: &SplitCorpus, ks: &[usize], mrr_k: usize) -> Result<MetricsReport> {
    let truths: Vec<(&str, &Basket)> = corpus
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), &u.test_basket))
        .collect();
    evaluate_against(predictions, &truths, ks, mrr_k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basket(items: &[u32]) -> Basket {
        Basket::new(items.to_vec())
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&[5, 1, 2], &basket(&[1, 2]), 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[5, 6], &basket(&[1, 2]), 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&[1, 2, 3, 4], &basket(&[2, 9, 4]), 3).unwrap(), 1.0 / 3.0);
        assert!(matches!(recall_at_k(&[1], &basket(&[]), 3), Err(Error::EmptyTruth)));
    }

    #[test]
    fn ndcg_cases() {
        let perfect: Vec<u32> = (0..10).collect();
        assert!((ndcg_at_k(&perfect, &basket(&(0..15).collect::<Vec<_>>()), 10).unwrap() - 1.0).abs() < 1e-15);
        let second = ndcg_at_k(&[7, 3], &basket(&[3]), 10).unwrap();
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((second - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2], &basket(&[3]), 10).unwrap(), 0.0);
        assert!(ndcg_at_k(&[1], &basket(&[]), 3).is_err());
    }

    #[test]
    fn mrr_cases() {
        let t1 = basket(&[1]);
        let t2 = basket(&[4]);
        let a = [1u32, 2, 3];
        let b = [9u32, 8, 7, 4];
        assert_eq!(mrr_at_k(&[(&a[..], &t1)], 10), 1.0);
        assert_eq!(mrr_at_k(&[(&a[..], &t1), (&b[..], &t2)], 10), 0.625);
        assert_eq!(mrr_at_k(&[(&b[..], &t1)], 10), 0.0);
        // Rank 4 falls outside a cutoff of 3.
        assert_eq!(mrr_at_k(&[(&b[..], &t2)], 3), 0.0);
    }

    #[test]
    fn phr_cases() {
        let truth = basket(&[1]);
        let hit = [1u32];
        let miss = [2u32];
        let pairs = [(&hit[..], &truth), (&hit[..], &truth), (&hit[..], &truth), (&miss[..], &truth)];
        assert_eq!(phr_at_k(&pairs, 10), 0.75);
        assert_eq!(phr_at_k(&pairs[..3], 10), 1.0);
    }

    fn preds(user: &str, items: &[u32]) -> PredictionList {
        PredictionList {
            user_id: user.into(),
            items: items.to_vec(),
            model: "test".into(),
        }
    }

    #[test]
    fn coverage_errors_list_users() {
        let t = basket(&[1]);
        let truths = [("a", &t), ("b", &t)];
        let err = evaluate_against(&[preds("a", &[1]), preds("a", &[1]), preds("z", &[1])], &truths, &[10], 10).unwrap_err();
        match err {
            Error::PredictionCoverage {
                missing,
                duplicate,
                unknown,
            } => {
                assert_eq!(missing, ["b"]);
                assert_eq!(duplicate, ["a"]);
                assert_eq!(unknown, ["z"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn self_prediction_scores_one() {
        let t1 = basket(&[1, 2]);
        let t2 = basket(&[3]);
        let truths = [("a", &t1), ("b", &t2)];
        let report = evaluate_against(&[preds("b", &[3, 9]), preds("a", &[2, 1, 7])], &truths, &DEFAULT_KS, DEFAULT_MRR_K).unwrap();
        for (name, value) in &report.metrics {
            assert_eq!(*value, 1.0, "{name}");
        }
        assert_eq!(report.n_users, 2);
        assert_eq!(report.per_user[0].user_id, "a");
        let mut csv = Vec::new();
        report.write_per_user_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("user_id,recall_at_10,recall_at_20,ndcg_at_10,ndcg_at_20,rr_at_10,hit_at_10,hit_at_20\n"));
        let recalls = read_per_user_column(text.as_bytes(), "recall_at_10").unwrap();
        assert_eq!(recalls["b"], 1.0);
        assert!(report.to_table().contains("recall@10"));
    }

    fn case() -> impl Strategy<Value = (Vec<u32>, Basket)> {
        (
            prop::collection::vec(0u32..40, 0..30).prop_map(|mut v| {
                let mut seen = std::collections::HashSet::new();
                v.retain(|x| seen.insert(*x));
                v
            }),
            prop::collection::btree_set(0u32..40, 1..15).prop_map(|s| Basket::new(s.into_iter().collect())),
        )
    }

    proptest! {
        #[test]
        fn metric_orderings((pred, truth) in case(), k in 1usize..25, extra in 0usize..10) {
            let r = recall_at_k(&pred, &truth, k).unwrap();
            let hit = if hit_at_k(&pred, &truth, k) { 1.0 } else { 0.0 };
            prop_assert!(r <= hit);
            prop_assert!(reciprocal_rank(&pred, &truth, k) <= hit);
            let k2 = k + extra;
            prop_assert!(recall_at_k(&pred, &truth, k2).unwrap() >= r);
            prop_assert!(hit_at_k(&pred, &truth, k2) as u8 as f64 >= hit);
            prop_assert!(reciprocal_rank(&pred, &truth, k2) >= reciprocal_rank(&pred, &truth, k));
            let n = ndcg_at_k(&pred, &truth, k).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        }

        #[test]
        fn relabeling_invariant((pred, truth) in case(), k in 1usize..25, shift in 1u32..40) {
            let f = |i: u32| (i * 7 + shift) % 40;
            let pred2: Vec<u32> = pred.iter().map(|&i| f(i)).collect();
            let truth2: Basket = truth.items().iter().map(|&i| f(i)).collect();
            prop_assert_eq!(recall_at_k(&pred, &truth, k).unwrap(), recall_at_k(&pred2, &truth2, k).unwrap());
            prop_assert_eq!(ndcg_at_k(&pred, &truth, k).unwrap(), ndcg_at_k(&pred2, &truth2, k).unwrap());
            prop_assert_eq!(reciprocal_rank(&pred, &truth, k), reciprocal_rank(&pred2, &truth2, k));
        }

        #[test]
        fn ideal_prefix_scores_one(truth in prop::collection::btree_set(0u32..40, 1..15), k in 1usize..25, tail in prop::collection::vec(40u32..60, 0..5)) {
            let truth = Basket::new(truth.into_iter().collect());
            let mut pred: Vec<u32> = truth.items().to_vec();
            pred.extend(tail);
            prop_assert!((ndcg_at_k(&pred, &truth, k).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
