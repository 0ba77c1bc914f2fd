#![allow(dead_code)]

use nbr::corpus::synth::{generate_synthetic, SynthConfig};
use nbr::corpus::{ingest, preprocess, split, FilterConfig, SplitCorpus};
use rand::Rng;

pub fn synthetic_split(config: &SynthConfig, filter: &FilterConfig) -> SplitCorpus {
    let rows = generate_synthetic(config).expect("valid synth config");
    let raw = ingest(rows).expect("ingest");
    split(&preprocess(&raw, filter).expect("preprocess")).expect("split")
}

/// Small corpus with every user keeping at least three baskets.
pub fn small_split(seed: u64, n_users: usize) -> SplitCorpus {
    let config = SynthConfig {
        seed,
        n_users,
        n_items: 400,
        baskets_per_user: (3, 10),
        basket_size: (1, 8),
        ..SynthConfig::default()
    };
    let filter = FilterConfig {
        min_baskets: 3,
        min_item_users: 1,
        min_basket_size: 1,
        until_stable: false,
    };
    synthetic_split(&config, &filter)
}

/// Random distinct item lists of length `len` over `n_items`.
pub fn random_list<R: Rng>(rng: &mut R, n_items: usize, len: usize) -> Vec<u32> {
    let mut items = Vec::with_capacity(len);
    while items.len() < len.min(n_items) {
        let item = rng.gen_range(0..n_items as u32);
        if !items.contains(&item) {
            items.push(item);
        }
    }
    items
}
