//! Seeded synthetic transaction logs with skewed item popularity and
//! per-user repeat purchases.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Transaction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    /// Inclusive range of baskets per user.
    pub baskets_per_user: (usize, usize),
    /// Inclusive range of distinct items per basket.
    pub basket_size: (usize, usize),
    /// Zipf exponent of global item popularity; 0 is uniform.
    pub popularity_skew: f64,
    /// Probability that a basket slot is drawn from the user's own pool
    /// rather than from global popularity.
    pub repeat_ratio: f64,
    /// Number of items in each user's personal pool.
    pub pool_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_users: 1000,
            n_items: 2000,
            baskets_per_user: (3, 12),
            basket_size: (1, 12),
            popularity_skew: 1.0,
            repeat_ratio: 0.6,
            pool_size: 24,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_owned()))
            }
        };
        check(self.n_users > 0, "n_users must be positive")?;
        check(self.n_items > 0, "n_items must be positive")?;
        check(
            self.baskets_per_user.0 >= 1 && self.baskets_per_user.0 <= self.baskets_per_user.1,
            "baskets_per_user range must be non-empty and start at 1 or more",
        )?;
        check(
            self.basket_size.0 >= 1 && self.basket_size.0 <= self.basket_size.1,
            "basket_size range must be non-empty and start at 1 or more",
        )?;
        check(
            self.basket_size.1 <= self.n_items,
            "basket_size cannot exceed n_items",
        )?;
        check(
            self.popularity_skew.is_finite() && self.popularity_skew >= 0.0,
            "popularity_skew must be a non-negative number",
        )?;
        check(
            (0.0..=1.0).contains(&self.repeat_ratio),
            "repeat_ratio must lie in [0, 1]",
        )?;
        Ok(())
    }
}

fn range(bounds: (usize, usize)) -> RangeInclusive<usize> {
    bounds.0..=bounds.1
}

/// Generates a transaction stream, ordered by user, basket and item. Item 0
/// is the most popular under positive skew. The same config always yields
/// the same rows.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Transaction>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights: Vec<f64> = (0..config.n_items)
        .map(|rank| 1.0 / ((rank + 1) as f64).powf(config.popularity_skew))
        .collect();
    let global = WeightedIndex::new(&weights).expect("positive weights");

    let user_width = digits(config.n_users);
    let item_width = digits(config.n_items);
    let mut rows = Vec::new();
    for u in 0..config.n_users {
        let user_id = format!("u{u:0user_width$}");
        let pool: Vec<usize> = if config.pool_size == 0 {
            Vec::new()
        } else {
            let target = config.pool_size.min(config.n_items);
            draw_distinct(&mut rng, target, |r| global.sample(r), config.n_items)
                .into_iter()
                .collect()
        };
        let n_baskets = rng.gen_range(range(config.baskets_per_user));
        let basket_width = digits(n_baskets);
        for b in 0..n_baskets {
            let size = rng.gen_range(range(config.basket_size));
            let items = draw_distinct(
                &mut rng,
                size,
                |r| {
                    if !pool.is_empty() && r.gen_bool(config.repeat_ratio) {
                        pool[r.gen_range(0..pool.len())]
                    } else {
                        global.sample(r)
                    }
                },
                config.n_items,
            );
            for item in items {
                rows.push(Transaction {
                    user_id: user_id.clone(),
                    basket_id: format!("b{b:0basket_width$}"),
                    basket_order: b as i64,
                    item_id: format!("i{item:0item_width$}"),
                });
            }
        }
    }
    Ok(rows)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// Draws `size` distinct items; falls back to the lowest unused indices if
/// rejection sampling stalls on a heavily skewed distribution.
fn draw_distinct<R, F>(rng: &mut R, size: usize, mut draw: F, n_items: usize) -> BTreeSet<usize>
where
    R: Rng,
    F: FnMut(&mut R) -> usize,
{
    let mut items = BTreeSet::new();
    let mut attempts = 0;
    while items.len() < size && attempts < 50 * size {
        items.insert(draw(rng));
        attempts += 1;
    }
    let mut next = 0;
    while items.len() < size && next < n_items {
        items.insert(next);
        next += 1;
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, ingest, preprocess, FilterConfig};
    use std::collections::HashMap;

    #[test]
    fn same_seed_same_rows() {
        let cfg = SynthConfig {
            seed: 7,
            n_users: 50,
            ..SynthConfig::default()
        };
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_synthetic(&other).unwrap(), generate_synthetic(&cfg).unwrap());
    }

    #[test]
    fn fixed_basket_count() {
        let cfg = SynthConfig {
            n_users: 100,
            baskets_per_user: (5, 5),
            ..SynthConfig::default()
        };
        let raw = ingest(generate_synthetic(&cfg).unwrap()).unwrap();
        assert_eq!(raw.n_baskets(), 500);
    }

    #[test]
    fn uniform_when_unskewed() {
        let cfg = SynthConfig {
            seed: 3,
            n_users: 2000,
            n_items: 100,
            basket_size: (1, 5),
            popularity_skew: 0.0,
            ..SynthConfig::default()
        };
        let rows = generate_synthetic(&cfg).unwrap();
        let mut counts: HashMap<&str, f64> = HashMap::new();
        for r in &rows {
            *counts.entry(r.item_id.as_str()).or_default() += 1.0;
        }
        assert_eq!(counts.len(), 100);
        let expected = rows.len() as f64 / 100.0;
        let chi2: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
        // Personal pools cluster draws, so allow generous overdispersion
        // relative to the 99 degrees of freedom.
        assert!(chi2 < 5.0 * 99.0, "chi2 = {chi2}");

        let skewed = generate_synthetic(&SynthConfig {
            popularity_skew: 1.2,
            ..cfg
        })
        .unwrap();
        let head = skewed.iter().filter(|r| r.item_id == "i00").count() as f64;
        assert!(head > 5.0 * expected);
    }

    #[test]
    fn average_shape_matches_parameters() {
        let cfg = SynthConfig {
            seed: 11,
            n_users: 20_000,
            n_items: 3000,
            baskets_per_user: (4, 10),
            basket_size: (2, 10),
            ..SynthConfig::default()
        };
        let raw = ingest(generate_synthetic(&cfg).unwrap()).unwrap();
        let corpus = preprocess(&raw, &FilterConfig::passthrough()).unwrap();
        let stats = corpus_stats(&corpus);
        assert!((stats.baskets_per_user / 7.0 - 1.0).abs() < 0.01, "{stats:?}");
        assert!((stats.avg_basket_size / 6.0 - 1.0).abs() < 0.01, "{stats:?}");
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = SynthConfig {
            basket_size: (4, 2),
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
