//! Personalized item frequency vectors and hierarchically time-decayed user
//! vectors.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Basket, ItemIdx};
use crate::error::{Error, Result};

/// Sparse non-negative vector; entries sorted by index, zeros omitted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(ItemIdx, f64)>,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds a vector from `(index, value)` pairs. Zero values are dropped.
    pub fn from_entries(dim: usize, mut entries: Vec<(ItemIdx, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidConfig("duplicate vector index".into()));
        }
        if let Some(&(i, _)) = entries.iter().find(|&&(i, _)| i as usize >= dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: i as usize + 1,
            });
        }
        if entries.iter().any(|&(_, v)| !v.is_finite() || v < 0.0) {
            return Err(Error::InvalidConfig("vector values must be finite and non-negative".into()));
        }
        entries.retain(|&(_, v)| v != 0.0);
        Ok(Self { dim, entries })
    }

    fn from_map(dim: usize, map: BTreeMap<ItemIdx, f64>) -> Self {
        Self {
            dim,
            entries: map.into_iter().filter(|&(_, v)| v != 0.0).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(ItemIdx, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: ItemIdx) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut sum = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    sum += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        sum
    }

    /// Squared Euclidean distance, summed over the union of supports in
    /// ascending index order.
    pub fn squared_distance(&self, other: &Self) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j) = (0, 0);
        let mut sum = 0.0;
        loop {
            let d = match (a.get(i), b.get(j)) {
                (None, None) => break,
                (Some(&(ia, x)), Some(&(ib, y))) if ia == ib => {
                    i += 1;
                    j += 1;
                    x - y
                }
                (Some(&(ia, x)), Some(&(ib, _))) if ia < ib => {
                    i += 1;
                    x
                }
                (Some(&(_, x)), None) => {
                    i += 1;
                    x
                }
                (_, Some(&(_, y))) => {
                    j += 1;
                    -y
                }
            };
            sum += d * d;
        }
        sum
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            dense[i as usize] = v;
        }
        dense
    }
}

/// Hierarchical decay configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    /// Within-group decay rate, in (0, 1].
    pub r_b: f64,
    /// Group decay rate, in (0, 1].
    pub r_g: f64,
    /// Number of groups, at least 1.
    pub m: usize,
}

impl DecayParams {
    /// Decay disabled; the decayed vector is the frequency vector divided by
    /// the history length.
    pub const NONE: DecayParams = DecayParams {
        r_b: 1.0,
        r_g: 1.0,
        m: 1,
    };

    pub fn validate(&self) -> Result<()> {
        let unit = |r: f64| r > 0.0 && r <= 1.0;
        if !unit(self.r_b) || !unit(self.r_g) {
            return Err(Error::InvalidConfig(format!(
                "decay rates must lie in (0, 1]; got r_b={}, r_g={}",
                self.r_b, self.r_g
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("group count m must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counts, for every item, the history baskets containing it.
pub fn pif_vector(history: &[Basket], dim: usize) -> SparseVector {
    let mut counts = BTreeMap::new();
    for basket in history {
        for &item in basket.items() {
            *counts.entry(item).or_insert(0.0) += 1.0;
        }
    }
    SparseVector::from_map(dim, counts)
}

/// Splits `len` positions into contiguous groups of `ceil(len / min(m, len))`
/// filled from the most recent end, so only the oldest group can be short.
/// Returns half-open ranges, oldest group first.
pub fn decay_groups(len: usize, m: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let groups = m.clamp(1, len);
    let size = len.div_ceil(groups);
    let mut out = Vec::new();
    let mut end = len;
    while end > 0 {
        let start = end.saturating_sub(size);
        out.push(start..end);
        end = start;
    }
    out.reverse();
    out
}

/// Time-decayed user vector.
///
/// Within a group of `n` baskets (oldest first, positions `p = 1..n`) a
/// basket weighs `r_b^(n - p)` and the weighted multi-hot sum is divided by
/// `n`. Group `j` of `G` (oldest first) then weighs `r_g^(G - j)` and the
/// weighted group sum is divided by `G`.
pub fn decayed_user_vector(history: &[Basket], params: &DecayParams, dim: usize) -> Result<SparseVector> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    params.validate()?;
    let groups = decay_groups(history.len(), params.m);
    let n_groups = groups.len();
    let mut user: BTreeMap<ItemIdx, f64> = BTreeMap::new();
    let mut group_sum: BTreeMap<ItemIdx, f64> = BTreeMap::new();
    for (j, range) in groups.into_iter().enumerate() {
        let group = &history[range];
        let n = group.len();
        group_sum.clear();
        for (p, basket) in group.iter().enumerate() {
            let weight = params.r_b.powi((n - 1 - p) as i32);
            for &item in basket.items() {
                *group_sum.entry(item).or_insert(0.0) += weight;
            }
        }
        let group_weight = params.r_g.powi((n_groups - 1 - j) as i32);
        for (&item, &sum) in &group_sum {
            *user.entry(item).or_insert(0.0) += group_weight * (sum / n as f64);
        }
    }
    for value in user.values_mut() {
        *value /= n_groups as f64;
    }
    Ok(SparseVector::from_map(dim, user))
}

#[derive(Serialize, Deserialize)]
struct VectorLine {
    user_id: String,
    dim: usize,
    entries: Vec<(ItemIdx, f64)>,
}

/// One JSON object per user: `{"user_id", "dim", "entries": [[index, value], ...]}`.
/// Values are written in shortest round-trip form, so reading a line back
/// reproduces the vector bit for bit.
pub fn write_vectors_ndjson<'a, W, I>(mut writer: W, vectors: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a SparseVector)>,
{
    for (user_id, vector) in vectors {
        let line = VectorLine {
            user_id: user_id.to_owned(),
            dim: vector.dim,
            entries: vector.entries.clone(),
        };
        serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_vectors_ndjson<R: BufRead>(reader: R) -> Result<Vec<(String, SparseVector)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine { line: i + 1, message };
        let parsed: VectorLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let vector =
            SparseVector::from_entries(parsed.dim, parsed.entries).map_err(|e| malformed(e.to_string()))?;
        out.push((parsed.user_id, vector));
    }
    Ok(out)
}
