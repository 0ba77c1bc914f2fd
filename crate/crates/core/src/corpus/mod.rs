//! Transaction ingestion, preprocessing filters and the leave-last-basket-out split.

pub mod io;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense item index into the corpus vocabulary.
pub type ItemIdx = u32;

/// One purchased item of one basket.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub user_id: String,
    pub basket_id: String,
    /// Chronological position of the basket, taken from a timestamp or an
    /// explicit order column.
    pub basket_order: i64,
    pub item_id: String,
}

/// A basket before vocabulary indexing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBasket {
    pub basket_id: String,
    pub order: i64,
    pub items: BTreeSet<String>,
}

/// Per-user basket timelines, oldest basket first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub users: BTreeMap<String, Vec<RawBasket>>,
}

impl RawCorpus {
    pub fn n_baskets(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }
}

/// Groups transactions into baskets and sorts each user's baskets
/// chronologically. Baskets sharing an order value are ordered by basket id.
pub fn ingest<I>(rows: I) -> Result<RawCorpus>
where
    I: IntoIterator<Item = Transaction>,
{
    let mut users: BTreeMap<String, BTreeMap<String, (i64, BTreeSet<String>)>> = BTreeMap::new();
    for row in rows {
        let baskets = users.entry(row.user_id.clone()).or_default();
        match baskets.get_mut(&row.basket_id) {
            Some((order, items)) => {
                if *order != row.basket_order {
                    return Err(Error::ConflictingOrder {
                        user_id: row.user_id,
                        basket_id: row.basket_id,
                        first: *order,
                        second: row.basket_order,
                    });
                }
                items.insert(row.item_id);
            }
            None => {
                let mut items = BTreeSet::new();
                items.insert(row.item_id);
                baskets.insert(row.basket_id, (row.basket_order, items));
            }
        }
    }

    let users = users
        .into_iter()
        .map(|(user_id, baskets)| {
            let mut timeline: Vec<RawBasket> = baskets
                .into_iter()
                .map(|(basket_id, (order, items))| RawBasket {
                    basket_id,
                    order,
                    items,
                })
                .collect();
            timeline.sort_by(|a, b| a.order.cmp(&b.order).then_with(|| a.basket_id.cmp(&b.basket_id)));
            (user_id, timeline)
        })
        .collect();
    Ok(RawCorpus { users })
}

/// Bijection between opaque item ids and dense indices `[0, n_items)`.
/// Indices follow lexicographic item-id order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemVocab {
    ids: Vec<String>,
    index: HashMap<String, ItemIdx>,
}

impl ItemVocab {
    pub fn from_ids<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let ids: BTreeSet<String> = ids.into_iter().collect();
        let ids: Vec<String> = ids.into_iter().collect();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as ItemIdx))
            .collect();
        Self { ids, index }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, item_id: &str) -> Option<ItemIdx> {
        self.index.get(item_id).copied()
    }

    pub fn item_id(&self, index: ItemIdx) -> Option<&str> {
        self.ids.get(index as usize).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// A set of item indices, stored sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Basket {
    items: Vec<ItemIdx>,
}

impl Basket {
    pub fn new(mut items: Vec<ItemIdx>) -> Self {
        items.sort_unstable();
        items.dedup();
        Self { items }
    }

    pub fn items(&self) -> &[ItemIdx] {
        &self.items
    }

    pub fn size(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemIdx) -> bool {
        self.items.binary_search(&item).is_ok()
    }
}

impl FromIterator<ItemIdx> for Basket {
    fn from_iter<T: IntoIterator<Item = ItemIdx>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserBaskets {
    pub user_id: String,
    pub baskets: Vec<Basket>,
}

/// Filtered, vocabulary-indexed corpus before the history/test split.
/// Users are sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasketCorpus {
    pub vocab: ItemVocab,
    pub users: Vec<UserBaskets>,
}

impl BasketCorpus {
    pub fn n_items(&self) -> usize {
        self.vocab.len()
    }

    /// Maps the corpus back to raw ids, keeping basket order. Basket ids are
    /// synthesized from positions.
    pub fn to_raw(&self) -> RawCorpus {
        let users = self
            .users
            .iter()
            .map(|user| {
                let baskets = user
                    .baskets
                    .iter()
                    .enumerate()
                    .map(|(pos, basket)| RawBasket {
                        basket_id: format!("{pos:08}"),
                        order: pos as i64,
                        items: basket
                            .items()
                            .iter()
                            .map(|&i| self.vocab.item_id(i).expect("index in vocab").to_owned())
                            .collect(),
                    })
                    .collect();
                (user.user_id.clone(), baskets)
            })
            .collect();
        RawCorpus { users }
    }
}

/// A user's history baskets (oldest first) and held-out test basket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user_id: String,
    pub history: Vec<Basket>,
    pub test_basket: Basket,
}

/// Corpus after the leave-last-basket-out split. Users are sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitCorpus {
    pub vocab: ItemVocab,
    pub users: Vec<UserRecord>,
}

impl SplitCorpus {
    pub fn n_items(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, user_id: &str) -> Option<&UserRecord> {
        self.users
            .binary_search_by(|u| u.user_id.as_str().cmp(user_id))
            .ok()
            .map(|pos| &self.users[pos])
    }
}

/// Thresholds applied by [`preprocess`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Users with fewer remaining baskets are dropped.
    pub min_baskets: usize,
    /// Items bought by fewer distinct users are dropped.
    pub min_item_users: usize,
    /// Baskets with fewer remaining items are dropped.
    pub min_basket_size: usize,
    /// Repeat the filter cascade until nothing changes. Off by default: the
    /// cascade runs exactly once.
    #[serde(default)]
    pub until_stable: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_baskets: 3,
            min_item_users: 5,
            min_basket_size: 1,
            until_stable: false,
        }
    }
}

impl FilterConfig {
    /// Thresholds used for the public grocery and e-commerce datasets.
    pub fn for_dataset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name.to_ascii_lowercase().as_str() {
            "dunnhumby" => Ok(Self {
                min_item_users: 40,
                ..base
            }),
            "tmall" => Ok(Self {
                min_basket_size: 4,
                ..base
            }),
            "instacart" | "tafeng" | "valuedshopper" | "taobao" => Ok(base),
            _ => Err(Error::UnknownPreset(name.to_owned())),
        }
    }

    /// Thresholds that remove nothing.
    pub fn passthrough() -> Self {
        Self {
            min_baskets: 1,
            min_item_users: 1,
            min_basket_size: 1,
            until_stable: false,
        }
    }
}

/// Applies the item filter, then the basket-size filter, then the user
/// basket-count filter, and rebuilds a dense vocabulary over the items that
/// remain.
pub fn preprocess(raw: &RawCorpus, config: &FilterConfig) -> Result<BasketCorpus> {
    if config.min_baskets == 0 {
        return Err(Error::InvalidConfig("min_baskets must be at least 1".into()));
    }
    let mut current = filter_once(raw, config);
    if config.until_stable {
        loop {
            let next = filter_once(&current, config);
            if next == current {
                break;
            }
            current = next;
        }
    }
    if current.users.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let vocab = ItemVocab::from_ids(
        current
            .users
            .values()
            .flat_map(|baskets| baskets.iter().flat_map(|b| b.items.iter().cloned())),
    );
    let users = current
        .users
        .into_iter()
        .map(|(user_id, baskets)| UserBaskets {
            user_id,
            baskets: baskets
                .iter()
                .map(|b| {
                    b.items
                        .iter()
                        .map(|id| vocab.index(id).expect("surviving item in vocab"))
                        .collect()
                })
                .collect(),
        })
        .collect();
    Ok(BasketCorpus { vocab, users })
}

fn filter_once(raw: &RawCorpus, config: &FilterConfig) -> RawCorpus {
    let mut buyers: HashMap<&str, HashSet<&str>> = HashMap::new();
    for (user_id, baskets) in &raw.users {
        for basket in baskets {
            for item in &basket.items {
                buyers.entry(item.as_str()).or_default().insert(user_id.as_str());
            }
        }
    }
    let kept_items: HashSet<&str> = buyers
        .into_iter()
        .filter(|(_, users)| users.len() >= config.min_item_users)
        .map(|(item, _)| item)
        .collect();

    let min_size = config.min_basket_size.max(1);
    let users = raw
        .users
        .iter()
        .filter_map(|(user_id, baskets)| {
            let baskets: Vec<RawBasket> = baskets
                .iter()
                .filter_map(|b| {
                    let items: BTreeSet<String> = b
                        .items
                        .iter()
                        .filter(|i| kept_items.contains(i.as_str()))
                        .cloned()
                        .collect();
                    (items.len() >= min_size).then(|| RawBasket {
                        basket_id: b.basket_id.clone(),
                        order: b.order,
                        items,
                    })
                })
                .collect();
            (baskets.len() >= config.min_baskets).then(|| (user_id.clone(), baskets))
        })
        .collect();
    RawCorpus { users }
}

/// Holds out each user's chronologically last basket as the test basket.
pub fn split(corpus: &BasketCorpus) -> Result<SplitCorpus> {
    let users = corpus
        .users
        .iter()
        .map(|user| {
            if user.baskets.len() < 2 {
                return Err(Error::TooFewBaskets {
                    user_id: user.user_id.clone(),
                    baskets: user.baskets.len(),
                    required: 2,
                });
            }
            let (test, history) = user.baskets.split_last().expect("non-empty");
            Ok(UserRecord {
                user_id: user.user_id.clone(),
                history: history.to_vec(),
                test_basket: test.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitCorpus {
        vocab: corpus.vocab.clone(),
        users,
    })
}

/// Dataset statistics in the layout of the usual dataset summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub baskets: usize,
    pub avg_basket_size: f64,
    pub baskets_per_user: f64,
    pub min_basket_size: usize,
    pub max_basket_size: usize,
}

impl CorpusStats {
    fn from_baskets<'a, U, B>(n_items: usize, users: U) -> Self
    where
        U: IntoIterator<Item = B>,
        B: IntoIterator<Item = &'a Basket>,
    {
        let mut n_users = 0usize;
        let mut n_baskets = 0usize;
        let mut total_items = 0usize;
        let mut min_size = usize::MAX;
        let mut max_size = 0usize;
        for baskets in users {
            n_users += 1;
            for basket in baskets {
                n_baskets += 1;
                total_items += basket.size();
                min_size = min_size.min(basket.size());
                max_size = max_size.max(basket.size());
            }
        }
        Self {
            users: n_users,
            items: n_items,
            baskets: n_baskets,
            avg_basket_size: ratio(total_items, n_baskets),
            baskets_per_user: ratio(n_baskets, n_users),
            min_basket_size: if n_baskets == 0 { 0 } else { min_size },
            max_basket_size: max_size,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn corpus_stats(corpus: &BasketCorpus) -> CorpusStats {
    CorpusStats::from_baskets(corpus.n_items(), corpus.users.iter().map(|u| u.baskets.iter()))
}

/// Statistics over a split corpus; test baskets are counted alongside history.
pub fn split_stats(corpus: &SplitCorpus) -> CorpusStats {
    CorpusStats::from_baskets(
        corpus.n_items(),
        corpus
            .users
            .iter()
            .map(|u| u.history.iter().chain(std::iter::once(&u.test_basket))),
    )
}
