//! Cross-checks of each pipeline stage against independent brute-force
//! implementations.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use nbr::corpus::synth::{generate_synthetic, SynthConfig};
use nbr::corpus::{corpus_stats, ingest, preprocess, split, split_stats, Basket, FilterConfig, Transaction};
use nbr::fairness::compute_traits;
use nbr::knn::KnnIndex;
use nbr::metrics::{evaluate_against, recall_at_k};
use nbr::recommend::{top_personal_all, Padding, PredictionList};
use nbr::tuning::{make_validation_split, random_search, validation_recall, SearchSpace};
use nbr::vectors::SparseVector;
use nbr::recommend::HyperParams;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synth_rows(seed: u64, n_users: usize) -> Vec<Transaction> {
    generate_synthetic(&SynthConfig {
        seed,
        n_users,
        n_items: 60,
        baskets_per_user: (1, 8),
        basket_size: (1, 6),
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn ingest_matches_group_by_oracle() {
    let mut rows = synth_rows(5, 40);
    rows.truncate(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    rows.shuffle(&mut rng);

    // Oracle: collect (user, order, basket) keys and their item sets with a
    // flat scan, then sort keys.
    let mut keys: Vec<(String, i64, String)> = rows
        .iter()
        .map(|r| (r.user_id.clone(), r.basket_order, r.basket_id.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let raw = ingest(rows.clone()).unwrap();
    let mut flat = Vec::new();
    for (user, baskets) in &raw.users {
        for b in baskets {
            flat.push((user.clone(), b.order, b.basket_id.clone(), b.items.clone()));
        }
    }
    assert_eq!(flat.len(), keys.len());
    for ((user, order, basket, items), key) in flat.iter().zip(&keys) {
        assert_eq!((user, order, basket), (&key.0, &key.1, &key.2));
        let expected: BTreeSet<String> = rows
            .iter()
            .filter(|r| &r.user_id == user && &r.basket_id == basket)
            .map(|r| r.item_id.clone())
            .collect();
        assert_eq!(items, &expected);
    }

    let mut sorted = rows;
    sorted.sort_by(|a, b| (&a.user_id, a.basket_order, &a.item_id).cmp(&(&b.user_id, b.basket_order, &b.item_id)));
    assert_eq!(ingest(sorted).unwrap(), raw);
}

#[test]
fn passthrough_filters_keep_everything() {
    let raw = ingest(synth_rows(1, 30)).unwrap();
    let corpus = preprocess(&raw, &FilterConfig::passthrough()).unwrap();
    assert_eq!(corpus.to_raw().n_baskets(), raw.n_baskets());
    for (user, (id, baskets)) in corpus.users.iter().zip(&raw.users) {
        assert_eq!(&user.user_id, id);
        let mapped: Vec<BTreeSet<String>> = user
            .baskets
            .iter()
            .map(|b| b.items().iter().map(|&i| corpus.vocab.item_id(i).unwrap().to_owned()).collect())
            .collect();
        let original: Vec<BTreeSet<String>> = baskets.iter().map(|b| b.items.clone()).collect();
        assert_eq!(mapped, original);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixpoint_filters_hold_on_rescan(seed in 0u64..1000, min_users in 1usize..6, min_baskets in 1usize..5, min_size in 1usize..3) {
        let raw = ingest(synth_rows(seed, 30)).unwrap();
        let cfg = FilterConfig { min_baskets, min_item_users: min_users, min_basket_size: min_size, until_stable: true };
        let Ok(corpus) = preprocess(&raw, &cfg) else { return Ok(()); };
        let mut buyers: HashMap<u32, HashSet<&str>> = HashMap::new();
        for user in &corpus.users {
            prop_assert!(user.baskets.len() >= min_baskets);
            for b in &user.baskets {
                prop_assert!(b.size() >= min_size);
                for &i in b.items() {
                    prop_assert!((i as usize) < corpus.n_items());
                    buyers.entry(i).or_default().insert(&user.user_id);
                }
            }
        }
        prop_assert_eq!(buyers.len(), corpus.n_items());
        prop_assert!(buyers.values().all(|u| u.len() >= min_users));
        prop_assert_eq!(preprocess(&corpus.to_raw(), &cfg).unwrap(), corpus);
    }

    #[test]
    fn single_pass_user_threshold_and_split(seed in 0u64..1000, min_users in 1usize..6) {
        let raw = ingest(synth_rows(seed, 30)).unwrap();
        let cfg = FilterConfig { min_baskets: 3, min_item_users: min_users, min_basket_size: 1, until_stable: false };
        let Ok(corpus) = preprocess(&raw, &cfg) else { return Ok(()); };
        prop_assert!(corpus.users.iter().all(|u| u.baskets.len() >= 3));
        let held = split(&corpus).unwrap();
        for (before, after) in corpus.users.iter().zip(&held.users) {
            prop_assert_eq!(after.history.len() + 1, before.baskets.len());
            prop_assert_eq!(&after.test_basket, before.baskets.last().unwrap());
        }
    }
}

#[test]
fn stats_match_recount() {
    let raw = ingest(synth_rows(3, 200)).unwrap();
    let corpus = preprocess(&raw, &FilterConfig::passthrough()).unwrap();
    let stats = corpus_stats(&corpus);
    let sizes: Vec<usize> = raw.users.values().flatten().map(|b| b.items.len()).collect();
    let items: HashSet<&String> = raw.users.values().flatten().flat_map(|b| &b.items).collect();
    assert_eq!(stats.users, raw.users.len());
    assert_eq!(stats.items, items.len());
    assert_eq!(stats.baskets, sizes.len());
    assert_eq!(stats.min_basket_size, *sizes.iter().min().unwrap());
    assert_eq!(stats.max_basket_size, *sizes.iter().max().unwrap());
    let avg = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    assert!((stats.avg_basket_size - avg).abs() < 1e-12);
    assert!((stats.baskets_per_user - sizes.len() as f64 / raw.users.len() as f64).abs() < 1e-12);

    let multi = FilterConfig {
        min_baskets: 2,
        ..FilterConfig::passthrough()
    };
    let corpus = preprocess(&raw, &multi).unwrap();
    assert_eq!(split_stats(&split(&corpus).unwrap()), corpus_stats(&corpus));
}

fn random_vectors(seed: u64, n: usize, dim: usize) -> Vec<(String, SparseVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|u| {
            let nnz = rng.gen_range(0..12);
            let mut entries: BTreeMap<u32, f64> = BTreeMap::new();
            for _ in 0..nnz {
                entries.insert(rng.gen_range(0..dim as u32), rng.gen_range(0.01..1.0));
            }
            (
                format!("user{u:04}"),
                SparseVector::from_entries(dim, entries.into_iter().collect()).unwrap(),
            )
        })
        .collect()
}

fn dense_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn knn_distances_match_dense_matrix() {
    let users = random_vectors(17, 500, 80);
    let dense: Vec<Vec<f64>> = users.iter().map(|(_, v)| v.to_dense()).collect();
    let index = KnnIndex::build(users.clone()).unwrap();
    for set in index.batch_query(499).unwrap() {
        assert_eq!(set.neighbors.len(), 499);
        for n in &set.neighbors {
            let expected = dense_distance(&dense[set.position], &dense[n.position]);
            assert!((n.distance - expected).abs() < 1e-9);
        }
    }
    // Rebuilding gives the same answers.
    let again = KnnIndex::build(users).unwrap();
    assert_eq!(index.batch_query(7).unwrap(), again.batch_query(7).unwrap());
}

#[test]
fn knn_top_100_matches_full_sort() {
    let users = random_vectors(23, 1000, 150);
    let dense: Vec<Vec<f64>> = users.iter().map(|(_, v)| v.to_dense()).collect();
    let index = KnnIndex::build(users).unwrap();
    for target in (0..1000).step_by(37) {
        let mut all: Vec<(f64, usize)> = (0..1000)
            .filter(|&u| u != target)
            .map(|u| (dense_distance(&dense[target], &dense[u]), u))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = all.iter().take(100).map(|&(_, u)| u).collect();
        let got: Vec<usize> = index
            .query_position(target, 100)
            .unwrap()
            .neighbors
            .iter()
            .map(|n| n.position)
            .collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn top_personal_matches_count_and_sort() {
    let corpus = common::small_split(4, 200);
    let lists = top_personal_all(&corpus, 10, Padding::Popularity);
    let mut global: HashMap<u32, usize> = HashMap::new();
    for u in &corpus.users {
        for b in &u.history {
            for &i in b.items() {
                *global.entry(i).or_default() += 1;
            }
        }
    }
    let mut by_popularity: Vec<u32> = (0..corpus.n_items() as u32).collect();
    by_popularity.sort_by_key(|i| (std::cmp::Reverse(global.get(i).copied().unwrap_or(0)), *i));

    for (user, list) in corpus.users.iter().zip(&lists) {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for b in &user.history {
            for &i in b.items() {
                *counts.entry(i).or_default() += 1;
            }
        }
        let mut own: Vec<(u32, usize)> = counts.into_iter().collect();
        own.sort_by_key(|&(i, c)| (std::cmp::Reverse(c), i));
        let mut expected: Vec<u32> = own.iter().take(10).map(|&(i, _)| i).collect();
        for &i in &by_popularity {
            if expected.len() == 10 {
                break;
            }
            if !expected.contains(&i) {
                expected.push(i);
            }
        }
        assert_eq!(list.user_id, user.user_id);
        assert_eq!(list.items, expected);
    }
}

#[test]
fn traits_match_set_arithmetic() {
    let corpus = common::small_split(8, 50);
    let traits = compute_traits(&corpus);
    let mut counts = vec![0usize; corpus.n_items()];
    for u in &corpus.users {
        for b in &u.history {
            for &i in b.items() {
                counts[i as usize] += 1;
            }
        }
    }
    let mut ranked: Vec<usize> = (0..counts.len()).collect();
    ranked.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), i));
    let n_popular = corpus.n_items().div_ceil(5);
    let popular: BTreeSet<u32> = ranked[..n_popular].iter().map(|&i| i as u32).collect();

    for (user, t) in corpus.users.iter().zip(&traits) {
        let history: Vec<BTreeSet<u32>> = user.history.iter().map(|b| b.items().iter().copied().collect()).collect();
        let seen: BTreeSet<u32> = history.iter().flatten().copied().collect();
        let test: BTreeSet<u32> = user.test_basket.items().iter().copied().collect();
        let avg = history.iter().map(BTreeSet::len).sum::<usize>() as f64 / history.len() as f64;
        let pop = history
            .iter()
            .map(|b| 100.0 * b.intersection(&popular).count() as f64 / b.len() as f64)
            .sum::<f64>()
            / history.len() as f64;
        let novelty = 100.0 * test.difference(&seen).count() as f64 / test.len() as f64;
        assert!((t.avg_basket_size - avg).abs() < 1e-12);
        assert!((t.popular_share - pop).abs() < 1e-9);
        assert!((t.novelty_share - novelty).abs() < 1e-12);
    }
}

#[test]
fn validation_recall_matches_direct_scoring() {
    let corpus = common::small_split(13, 150);
    let split = make_validation_split(&corpus).unwrap();
    // TIFU-KNN with alpha = 1 and no decay ranks exactly like top personal.
    let hp = HyperParams {
        basket_size: 10,
        ..HyperParams::new(5, 1.0, 1.0, 1, 1.0)
    };
    let via_tuner = validation_recall(&split, hp).unwrap();

    let lists = top_personal_all(&split.corpus, 10, Padding::Popularity);
    let direct: f64 = split
        .corpus
        .users
        .iter()
        .zip(&lists)
        .map(|(u, l)| recall_at_k(&l.items, &u.test_basket, 10).unwrap())
        .sum::<f64>()
        / lists.len() as f64;
    assert!((via_tuner - direct).abs() < 1e-12);

    let truths: Vec<(&str, &Basket)> = split
        .corpus
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), &u.test_basket))
        .collect();
    let report = evaluate_against(&lists, &truths, &[10], 10).unwrap();
    assert!((report.recall(10).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn tuning_never_reads_test_baskets() {
    let corpus = common::small_split(21, 120);
    let mut scrambled = corpus.clone();
    for u in &mut scrambled.users {
        u.test_basket = Basket::new(vec![0]);
    }
    let space = SearchSpace {
        k: vec![5, 20],
        m: vec![1, 2, 3],
        ..SearchSpace::default()
    };
    let a = random_search(&make_validation_split(&corpus).unwrap(), &space, 6, 3, 10).unwrap();
    let b = random_search(&make_validation_split(&scrambled).unwrap(), &space, 6, 3, 10).unwrap();
    let strip = |o: &nbr::tuning::TuningOutcome| -> Vec<(HyperParams, f64)> {
        o.trials.iter().map(|t| (t.hp, t.recall_at_10)).collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn tuning_edge_cases() {
    let corpus = common::small_split(2, 80);
    let split = make_validation_split(&corpus).unwrap();
    let single = random_search(&split, &SearchSpace::default(), 1, 11, 10).unwrap();
    assert_eq!(single.trials.len(), 1);
    assert_eq!(single.best, single.trials[0]);

    let point = HyperParams {
        basket_size: 10,
        ..HyperParams::new(10, 0.7, 0.4, 2, 0.6)
    };
    let collapsed = random_search(&split, &SearchSpace::point(&point), 4, 0, 10).unwrap();
    assert_eq!(collapsed.best.hp, point);
    let max = collapsed.trials.iter().map(|t| t.recall_at_10).fold(f64::MIN, f64::max);
    assert_eq!(collapsed.best.recall_at_10, max);
    assert_eq!(collapsed.best.trial, 0);
}

#[test]
fn random_predictions_scored_per_user() {
    // Top-level sanity for evaluate on a corpus: predictions equal to the
    // truth, padded with other items, score perfect recall and hit ratio.
    let corpus = common::small_split(6, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lists: Vec<PredictionList> = corpus
        .users
        .iter()
        .map(|u| {
            let mut items = u.test_basket.items().to_vec();
            for i in common::random_list(&mut rng, corpus.n_items(), 30) {
                if items.len() < 20 && !items.contains(&i) {
                    items.push(i);
                }
            }
            PredictionList {
                user_id: u.user_id.clone(),
                items,
                model: "oracle".into(),
            }
        })
        .collect();
    let report = nbr::metrics::evaluate(&lists, &corpus, &[10, 20], 10).unwrap();
    assert_eq!(report.get("phr", 10), Some(1.0));
    assert_eq!(report.get("mrr", 10), Some(1.0));
    // Test baskets hold at most 8 items, so they fit in the top 10.
    assert_eq!(report.recall(10), Some(1.0));
}
